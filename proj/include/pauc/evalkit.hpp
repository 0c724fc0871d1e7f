#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "pauc/blobgen.hpp"
#include "pauc/trainkit.hpp"

namespace pauc {

struct ProbeOptions {
  // Full-batch GD underfits badly at 500 iterations on 2-d unit-norm
  // features; first-loss is exactly ln(C) so convergence is observable.
  int iters = 2000;
  double lr = 0.5;
  bool cosine_decay = true;
};

struct ProbeResult {
  double top1 = 0.0;
  std::vector<double> per_class;   // test accuracy per class id
  std::vector<double> loss_trace;  // training cross-entropy per iteration
  int train_count = 0;
  int test_count = 0;
};

// Multinomial logistic regression on frozen embeddings, full-batch gradient
// descent from zero init, seeded 80/20 split. Throws DegenerateSplitError
// when a class is missing from the training split.
ProbeResult linear_probe(const Eigen::Ref<const Matrix>& embeddings,
                         const std::vector<int32_t>& labels, uint64_t split_seed,
                         const ProbeOptions& opt = {});

struct VizExport {
  Matrix points;                // n x 2 unit circle embeddings
  std::vector<int32_t> labels;  // empty when the dataset is unlabeled
  Matrix centroids;             // 0 x 2 when no prototypes are available
};

// Momentum-encoder embeddings of the dataset plus (optionally) the centroids
// of the coarsest prototype level. Only 2-d embedding spaces are supported;
// anything else throws UnsupportedDimError.
VizExport project_unit_circle(const TrainState& state, const LabeledDataset& ds,
                              const PrototypeSet* protos = nullptr);

// CSV with the exact header "x,y,label,is_centroid". Centroid rows carry
// label -1 and is_centroid 1. Byte-deterministic for identical inputs.
void write_viz_csv(const VizExport& viz, const std::string& path);

// Self-contained SVG scatter of the same export.
void write_viz_svg(const VizExport& viz, const std::string& path);

// Full evaluation of a trained state: momentum embeddings, fresh prototypes
// at the configured granularities, collapse metric per granularity, linear
// probe, and a unit circle export written to out_dir/viz.csv. Returns the
// report that is also written to out_dir/report.json.
nlohmann::json evaluate_run(const TrainState& state, const LabeledDataset& ds,
                            const TrainConfig& cfg, const std::string& out_dir);

}  // namespace pauc
