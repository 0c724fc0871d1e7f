#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

#include "pauc/errors.hpp"

namespace pauc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Counter-based deterministic RNG. A stream is identified by (seed, stream_id)
// and is reproducible independently of every other stream, so call sites can
// own private streams without coordinating draw order across modules.
// Substreams derive fresh independent streams from a tag (epoch index, pair
// index) which lets a run re-derive mid-training streams without replaying
// earlier draws.
class RngStream {
 public:
  RngStream(uint64_t seed, uint64_t stream_id);

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller. Caches the spare deviate.
  double normal();
  double normal(double mean, double stddev);
  // Unbiased integer in [0, n). Rejection sampled; n must be > 0.
  uint64_t uniform_int(uint64_t n);

  RngStream substream(uint64_t tag) const;

  // Fisher-Yates. Identical element order for identical stream state.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }

 private:
  uint64_t seed_ = 0;
  uint64_t stream_id_ = 0;
  uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Convenience: the first u64 drawn from substream `tag` of (seed, stream_id).
// Used to seed nested components (per-epoch clustering, per-run training).
uint64_t derive_seed(uint64_t seed, uint64_t stream_id, uint64_t tag);

// Row-wise L2 normalization. Throws ZeroRowError if any row norm < 1e-12.
Matrix l2_normalize_rows(const Eigen::Ref<const Matrix>& m);

// a * b^T. Throws DimMismatchError unless a.cols() == b.cols().
Matrix gram(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b);

// log(sum(exp(v))) with max shift.
double logsumexp(const Eigen::Ref<const Vector>& v);

bool all_finite(const Eigen::Ref<const Matrix>& m);

// Central finite differences, entry by entry: (f(x+h*e) - f(x-h*e)) / (2h).
// h must be positive. Throws NonFiniteEvaluationError if f returns a
// non-finite value at any probe point.
Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h);

// Relative gradient error max_i |a_i - f_i| / max(|a_i| + |f_i|, 1e-6).
double grad_rel_error(const Eigen::Ref<const Matrix>& analytic,
                      const Eigen::Ref<const Matrix>& finite);

}  // namespace pauc
