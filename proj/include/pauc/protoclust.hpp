#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pauc/numcore.hpp"

namespace pauc {

struct ClusterSpec {
  std::vector<int> granularities;  // distinct cluster counts, coarse to fine
  int max_iters = 100;
  uint64_t seed = 0;
};

struct KmeansResult {
  Matrix centroids;                 // k x d
  std::vector<int32_t> assignments; // one per input row
  double inertia = 0.0;
  int iterations = 0;
};

// Lloyd iterations with kmeans++ seeding and squared Euclidean objective.
// Results are invariant to input row permutation: points are processed in a
// canonical lexicographic order internally and assignments mapped back.
// Empty clusters are reseeded from the point farthest to its own centroid.
// Ties in nearest-centroid break toward the lowest centroid index.
// Requires 1 <= k <= rows; throws TooFewPointsError otherwise.
KmeansResult kmeans(const Eigen::Ref<const Matrix>& points, int k, uint64_t seed,
                    int max_iters = 100);

// Concentration indicator: sum of member distances to the centroid divided
// by Z * ln(Z + 10), Z = member count. Throws EmptyPrototypeError when
// members is empty.
double concentration(const Eigen::Ref<const Matrix>& members,
                     const Eigen::Ref<const Vector>& centroid);

struct PrototypeLevel {
  int k = 0;
  Matrix centroids;                 // k x d, unit rows
  std::vector<int32_t> assignments; // n, cluster id per sample
  Vector phi;                       // k concentration temperatures
};

struct PrototypeSet {
  std::vector<PrototypeLevel> levels;

  int num_levels() const { return static_cast<int>(levels.size()); }
  int num_samples() const {
    return levels.empty() ? 0 : static_cast<int>(levels.front().assignments.size());
  }
  int dim() const { return levels.empty() ? 0 : static_cast<int>(levels.front().centroids.cols()); }
};

// Clusters unit-norm embeddings at every granularity. Centroids are row
// normalized; phi values are linearly rescaled per level so their mean is
// phi_target, then clamped to [phi_target/3, 3*phi_target]. Granularities
// must be distinct, each in [2, rows].
PrototypeSet spawn_prototypes(const Eigen::Ref<const Matrix>& embeddings,
                              const ClusterSpec& spec, double phi_target);

// Prototype file "PPRT" v1, little-endian: u8 version, u32 level count, then
// per level u32 k, u32 d, k*d f32 centroids row-major, u32 n, n u32
// assignments, k f32 phi.
void save_prototypes(const PrototypeSet& set, const std::string& path);
PrototypeSet load_prototypes(const std::string& path);

}  // namespace pauc
