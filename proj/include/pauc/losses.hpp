#pragma once

#include <vector>

#include "pauc/numcore.hpp"
#include "pauc/protoclust.hpp"

namespace pauc {

struct LossConfig {
  double tau = 0.2;       // instance and prototype softmax temperature target
  int r = 1024;           // negative prototypes per anchor and level
  double alpha = 1.0;     // prototype alignment weight
  double beta = 1.0;      // prototype uniformity weight
  double gamma = 1.0;     // prototype correlation weight
  double s = 2.0;         // alignment exponent
  double t = 2.0;         // uniformity kernel sharpness
  int pair_budget = 256;  // sampled prototype pairs per term
  bool soft_centroids = true;
};

// Instance discrimination over (anchor, positive) rows plus r negatives per
// anchor stacked as consecutive row blocks of `negatives`. The positive
// similarity appears in the softmax denominator. All rows must be unit norm
// within 1e-4 or NonUnitNormError is thrown. Loss is summed over anchors.
struct InfoNceResult {
  double loss = 0.0;
  Matrix grad_anchors;
  Matrix grad_positives;
};
InfoNceResult info_nce(const Eigen::Ref<const Matrix>& anchors,
                       const Eigen::Ref<const Matrix>& positives,
                       const Eigen::Ref<const Matrix>& negatives, double tau);

// Prototype discrimination term, averaged over granularity levels and summed
// over anchors. Logits are dot(anchor, centroid) / phi(centroid). Per level
// the candidate set is the assigned prototype plus min(r, k-1) negatives
// sampled without replacement; prototypes and phi are treated as constants,
// so only anchors receive gradients. anchor_ids index into the prototype
// set's assignment vectors.
struct ProtoNceResult {
  double loss = 0.0;
  Matrix grad_anchors;
};
ProtoNceResult proto_nce_term(const Eigen::Ref<const Matrix>& anchors,
                              const std::vector<int32_t>& anchor_ids,
                              const PrototypeSet& protos, int r, RngStream& rng);

// A cross-granularity positive pair: two prototypes that co-own a sample.
struct PositivePair {
  int level_a = 0, proto_a = 0;
  int level_b = 0, proto_b = 0;
};

// An unordered prototype pair within one granularity level.
struct LevelPair {
  int level = 0;
  int proto_a = 0, proto_b = 0;
};

struct PrototypePairs {
  std::vector<PositivePair> positives;
  std::vector<LevelPair> within;
};

// Positive pairs are induced by samples: sample i at levels (m, m') yields
// the pair of its two assigned prototypes. Within pairs are unordered
// distinct prototype pairs per level. Each family is enumerated exhaustively
// when its total count fits the budget and sampled with replacement
// otherwise. Samples carrying a dropped (-1) assignment are skipped.
// Throws SingleGranularityError when positives are requested with fewer
// than two levels.
PrototypePairs sample_pairs(const PrototypeSet& protos, int budget, RngStream& rng,
                            bool want_positives);

// Pair losses over per-level centroid matrices. Gradients come back as one
// matrix per level, shaped like the input centroids. Empty pair lists give
// loss 0 with zero gradients.
struct CentroidLossResult {
  double loss = 0.0;
  std::vector<Matrix> grad_centroids;
};

// Mean of ||c_a - c_b||^s over positive pairs.
CentroidLossResult p_align(const std::vector<Matrix>& centroids,
                           const std::vector<PositivePair>& pairs, double s);

// Mean of exp(-t ||c_a - c_b||^2) over within-level pairs.
CentroidLossResult p_uniform(const std::vector<Matrix>& centroids,
                             const std::vector<LevelPair>& pairs, double t);

// Mean of -KL(softmax(c_a) || softmax(c_b)) over within-level pairs.
// Maximized at equal distributions, so minimizing drives paired prototype
// profiles apart.
CentroidLossResult p_corr(const std::vector<Matrix>& centroids,
                          const std::vector<LevelPair>& pairs);

// Batch-local prototypes for the differentiable pair losses: per level,
// the clusters present in the batch with centroid = normalized sum of the
// member anchor rows. Clusters whose member sum is numerically zero are
// dropped and their members marked unassigned (-1).
struct SoftPrototypes {
  PrototypeSet set;  // assignments are batch-local cluster ids
  std::vector<std::vector<std::vector<int>>> members;  // level -> cluster -> batch rows
  std::vector<Vector> sum_norms;                       // pre-normalization norms
};

SoftPrototypes build_soft_prototypes(const Eigen::Ref<const Matrix>& anchors,
                                     const std::vector<int32_t>& anchor_ids,
                                     const PrototypeSet& global);

// Chain rule through centroid = u / |u|, u = sum of member rows: each member
// receives (g - c (c.g)) / |u| for its cluster's centroid gradient g.
void add_soft_centroid_grad(const SoftPrototypes& soft,
                            const std::vector<Matrix>& grad_centroids,
                            Matrix& grad_anchors);

// Weighted combination of all terms. Component fields hold the unweighted
// values. protos == nullptr (warm-up) computes instance discrimination only
// and reports the prototype components as exact zeros. Components with zero
// weight are skipped entirely, not multiplied by zero, so a run with all
// pair weights zero follows the identical arithmetic path as the baseline.
// In soft centroid mode the pair terms differentiate through batch-local
// centroids into the anchors; otherwise they are evaluated on the fixed
// global centroids and contribute value only.
struct TotalLossResult {
  double total = 0.0;
  double info_nce = 0.0;
  double proto_nce = 0.0;
  double align = 0.0;
  double uniform = 0.0;
  double corr = 0.0;
  Matrix grad_anchors;
  Matrix grad_positives;
};

TotalLossResult total_loss(const Eigen::Ref<const Matrix>& anchors,
                           const Eigen::Ref<const Matrix>& positives,
                           const Eigen::Ref<const Matrix>& negatives,
                           const std::vector<int32_t>& anchor_ids,
                           const PrototypeSet* protos, const LossConfig& cfg,
                           RngStream& pair_rng, RngStream& neg_rng);

}  // namespace pauc
