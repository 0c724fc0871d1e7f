#include "pauc/numcore.hpp"

#include <cmath>
#include <numbers>

namespace pauc {

namespace {

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

uint64_t splitmix64(uint64_t x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

uint64_t mix2(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a + kGolden) ^ (b + 0x94d049bb133111ebull));
}

}  // namespace

RngStream::RngStream(uint64_t seed, uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), state_(mix2(seed, stream_id)) {}

uint64_t RngStream::next_u64() {
  state_ += kGolden;
  return splitmix64(state_);
}

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], keeping the log argument positive.
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

double RngStream::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

uint64_t RngStream::uniform_int(uint64_t n) {
  if (n == 0) throw Error("uniform_int: n must be > 0");
  uint64_t threshold = (0 - n) % n;
  for (;;) {
    uint64_t r = next_u64();
    if (r >= threshold) return r % n;
  }
}

RngStream RngStream::substream(uint64_t tag) const {
  return RngStream(mix2(seed_, stream_id_), tag);
}

uint64_t derive_seed(uint64_t seed, uint64_t stream_id, uint64_t tag) {
  return RngStream(seed, stream_id).substream(tag).next_u64();
}

Matrix l2_normalize_rows(const Eigen::Ref<const Matrix>& m) {
  Matrix out(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    double n = m.row(i).norm();
    if (n < 1e-12) {
      throw ZeroRowError("l2_normalize_rows: row " + std::to_string(i) +
                         " has norm below 1e-12");
    }
    out.row(i) = m.row(i) / n;
  }
  return out;
}

Matrix gram(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& b) {
  if (a.cols() != b.cols()) {
    throw DimMismatchError("gram: column counts differ (" +
                           std::to_string(a.cols()) + " vs " +
                           std::to_string(b.cols()) + ")");
  }
  return a * b.transpose();
}

double logsumexp(const Eigen::Ref<const Vector>& v) {
  if (v.size() == 0) throw Error("logsumexp: empty input");
  double m = v.maxCoeff();
  return m + std::log((v.array() - m).exp().sum());
}

bool all_finite(const Eigen::Ref<const Matrix>& m) {
  return m.allFinite();
}

Matrix finite_diff_grad(const std::function<double(const Matrix&)>& f,
                        const Matrix& x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: h must be > 0");
  Matrix grad(x.rows(), x.cols());
  Matrix probe = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      probe(i, j) = x(i, j) + h;
      double fp = f(probe);
      probe(i, j) = x(i, j) - h;
      double fm = f(probe);
      probe(i, j) = x(i, j);
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw NonFiniteEvaluationError("finite_diff_grad: non-finite value at entry (" +
                                       std::to_string(i) + ", " + std::to_string(j) + ")");
      }
      grad(i, j) = (fp - fm) / (2.0 * h);
    }
  }
  return grad;
}

double grad_rel_error(const Eigen::Ref<const Matrix>& analytic,
                      const Eigen::Ref<const Matrix>& finite) {
  if (analytic.rows() != finite.rows() || analytic.cols() != finite.cols()) {
    throw ShapeMismatchError("grad_rel_error: shape mismatch");
  }
  double worst = 0.0;
  for (Eigen::Index j = 0; j < analytic.cols(); ++j) {
    for (Eigen::Index i = 0; i < analytic.rows(); ++i) {
      double a = analytic(i, j);
      double f = finite(i, j);
      double rel = std::abs(a - f) / std::max(std::abs(a) + std::abs(f), 1e-6);
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace pauc
