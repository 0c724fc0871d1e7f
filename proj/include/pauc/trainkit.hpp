#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pauc/blobgen.hpp"
#include "pauc/encoder.hpp"
#include "pauc/losses.hpp"
#include "pauc/protoclust.hpp"

namespace pauc {

// Named RNG sub-streams. Every stochastic component owns one, derived per
// epoch where needed, so any epoch boundary can be reproduced exactly
// without replaying earlier draws.
namespace streams {
inline constexpr uint64_t kInit = 1;
inline constexpr uint64_t kShuffle = 2;
inline constexpr uint64_t kAugment = 3;
inline constexpr uint64_t kProtoNeg = 4;
inline constexpr uint64_t kPairs = 5;
inline constexpr uint64_t kCluster = 6;
inline constexpr uint64_t kNemdLog = 7;
inline constexpr uint64_t kEvalCluster = 8;
inline constexpr uint64_t kEvalNemd = 9;
inline constexpr uint64_t kProbe = 10;
inline constexpr uint64_t kData = 11;
inline constexpr uint64_t kRunSeed = 12;
}  // namespace streams

struct TrainConfig {
  int epochs = 60;
  int warmup_epochs = 6;
  int batch_size = 256;
  double lr = 0.03;
  std::vector<int> lr_milestones = {36, 48};
  double lr_gamma = 0.1;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double ema_coeff = 0.99;
  std::string mode = "pauc";  // "pauc" or "pcl-baseline"
  uint64_t seed = 1;
  std::vector<int> hidden = {64, 64};
  int embed_dim = 2;
  LossConfig loss;
  std::vector<int> cluster_k;  // empty: {C, 2C, 4C} from dataset labels
  int cluster_max_iters = 25;
  AugmentConfig aug;
  int log_nemd_every = 10;
  int log_nemd_pairs = 32;
  int log_nemd_subsample = 32;
  int eval_nemd_pairs = 256;
  int eval_nemd_subsample = 64;
  int probe_iters = 2000;
  double probe_lr = 0.5;
};

struct SweepPlan {
  std::vector<int> classes = {10, 20, 30, 40, 50};
  std::vector<uint64_t> seeds = {1, 2, 3};
  std::vector<std::string> modes = {"pcl-baseline", "pauc"};
  int jobs = 2;
  int samples_per_class = 1000;
  double cluster_std = 1.0;
  int input_dim = 3;
};

// Everything the command line tool can configure, addressed by flat
// dotted keys ("loss.alpha", "data.classes", "sweep.seeds").
struct ToolConfig {
  TrainConfig train;
  BlobSpec data;
  SweepPlan sweep;
};

// Applies "key = value". Unknown keys and malformed values raise ConfigError.
void apply_override(ToolConfig& cfg, const std::string& key, const std::string& value);

// Flat "key = value" per line; blank lines and '#' comments are ignored.
ToolConfig parse_config_text(const std::string& text, ToolConfig base = {});
ToolConfig load_config_file(const std::string& path, ToolConfig base = {});

// Serializes every known key, sorted, one per line. parse_config_text of the
// output reproduces the config.
std::string config_to_text(const ToolConfig& cfg);

void validate_config(const TrainConfig& cfg);

// Step schedule: lr * lr_gamma^(number of milestones <= epoch).
double lr_at(int epoch, const TrainConfig& cfg);

// Baseline mode trains with the pair-loss weights pinned to zero, which
// skips those terms entirely and leaves the arithmetic path identical.
LossConfig effective_loss_config(const TrainConfig& cfg);

std::vector<int> default_granularities(int num_classes);

// Resolves the configured granularities (or the {C, 2C, 4C} default from the
// dataset labels) into a ClusterSpec seeded for one specific refresh.
ClusterSpec cluster_spec_for(const TrainConfig& cfg, const LabeledDataset& ds,
                             uint64_t spec_seed);

struct TrainState {
  MlpParams online;
  MomentumEncoder momentum;
  OptimizerState opt;
  int epoch = 0;
  uint64_t seed = 0;
  PrototypeSet protos;  // from the latest refresh
  bool has_protos = false;
};

// Fixed per-column standardization fitted on the raw dataset features.
// Blob centers span tens of units while the encoder's tanh units saturate
// past |x| ~ 2, so raw coordinates freeze training at init; this affine
// stage is deterministic given the dataset and is recomputed wherever
// features meet the encoder, keeping checkpoints free of extra tensors.
struct InputScaler {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd inv_std;
};

InputScaler fit_input_scaler(const Eigen::Ref<const Matrix>& features);
Matrix apply_input_scaler(const InputScaler& sc, const Eigen::Ref<const Matrix>& features);

// forward() on features standardized with their own column moments; the
// single entry point for turning a dataset into embeddings outside the
// training loop (evaluation, clustering refresh tools, visualization).
Matrix embed_features(const MlpParams& params, const Eigen::Ref<const Matrix>& features);

TrainState init_train_state(const TrainConfig& cfg, int input_dim);

using EpochCallback = std::function<void(int epoch, const std::string& metric_line)>;

// Runs epochs [state.epoch, cfg.epochs). Each epoch refreshes prototypes
// from the momentum encoder (after warm-up), sweeps shuffled batches with
// two stochastic views, and appends one JSON metric line. Identical
// (config, dataset, state) produce bit-identical trajectories, and resuming
// from a saved state matches an uninterrupted run exactly.
void pretrain(TrainState& state, const LabeledDataset& ds, const TrainConfig& cfg,
              std::vector<std::string>& metric_lines, const EpochCallback& cb = {});

// Exact-resume state "PSTA" v1 keeps f64 tensors (encoder, momentum encoder,
// optimizer buffers) plus the epoch counter and seed. The f32 checkpoint
// format is for interchange; this one makes resume bit-exact.
void save_state(const TrainState& st, const std::string& path);
TrainState load_state(const std::string& path, const TrainConfig& cfg);

}  // namespace pauc
