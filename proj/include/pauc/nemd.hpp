#pragma once

#include <vector>

#include "pauc/numcore.hpp"
#include "pauc/protoclust.hpp"

namespace pauc {

struct TransportProblem {
  Matrix source;         // np x d point cloud
  Matrix target;         // nq x d point cloud
  Vector source_weights; // positive, sums to 1
  Vector target_weights;
  Matrix cost;           // np x nq Euclidean distances
};

// Uniform-weight problem between two point clouds.
TransportProblem make_problem(const Eigen::Ref<const Matrix>& a,
                              const Eigen::Ref<const Matrix>& b);

// Member clouds of two prototypes at one level, each subsampled to at most
// `subsample` points. Throws EmptyPrototypeError when a prototype owns no
// samples.
TransportProblem build_problem(const PrototypeSet& protos,
                               const Eigen::Ref<const Matrix>& embeddings, int level,
                               int proto_p, int proto_q, int subsample, RngStream& rng);

struct SinkhornOptions {
  double eps = 0.01;
  int max_iters = 1000;
  double tol = 1e-9;  // worst marginal violation
};

struct TransportResult {
  Matrix plan;
  double cost = 0.0;
  int iterations = 0;
  double marginal_error = 0.0;
  bool converged = false;
  double eps_final = 0.0;
};

// Entropic regularized transport, log-domain dual iterations, numerically
// safe for small eps. Optional dual vectors warm-start the iteration and
// carry the final potentials back to the caller.
TransportResult sinkhorn(const TransportProblem& pb, const SinkhornOptions& opt);
TransportResult sinkhorn(const TransportProblem& pb, const SinkhornOptions& opt,
                         Vector& f, Vector& g);

struct AnnealOptions {
  double start_scale = 0.1;   // eps starts at start_scale * median cost
  double factor = 0.5;        // eps multiplier per level
  double floor_scale = 1e-3;  // anneal down to floor_scale * median cost
  int level_iters = 500;
  double tol = 1e-9;
};

// Runs sinkhorn over a decreasing eps ladder, warm-starting each level with
// the previous duals. Tight approximations of the unregularized cost come
// out of the last level.
TransportResult sinkhorn_annealed(const TransportProblem& pb, const AnnealOptions& opt);

// Exact transport cost for uniform weights and equal cloud sizes, solved by
// optimal assignment. Reference oracle for sinkhorn; rejects instances with
// more than 64 points per side via UnsupportedInstanceError.
double exact_emd(const TransportProblem& pb);

struct NemdStats {
  double mean = 0.0;
  double stddev = 0.0;
  int pairs_evaluated = 0;
  double eps_final = 0.0;
  double converged_fraction = 0.0;
};

// Collapse metric at one granularity level: mean transport cost between the
// member clouds of prototype pairs. All pairs of non-empty prototypes are
// evaluated when they fit pair_budget, otherwise a random subset of distinct
// pairs. Lower values mean prototype member clouds sit closer together.
NemdStats nemd_stats(const PrototypeSet& protos,
                     const Eigen::Ref<const Matrix>& embeddings, int level,
                     const AnnealOptions& opt, int pair_budget, int subsample,
                     RngStream& rng);

double nemd_score(const PrototypeSet& protos,
                  const Eigen::Ref<const Matrix>& embeddings, int level,
                  const AnnealOptions& opt, int pair_budget, int subsample,
                  RngStream& rng);

}  // namespace pauc
