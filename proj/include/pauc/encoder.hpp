#pragma once

#include <string>
#include <vector>

#include "pauc/numcore.hpp"

namespace pauc {

// Fully connected encoder with tanh hidden activations and a linear output
// layer whose rows are L2 normalized, so embeddings live on the unit sphere.
struct MlpParams {
  std::vector<Matrix> weights;  // layer i maps dims[i] -> dims[i+1]
  std::vector<Vector> biases;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return static_cast<int>(weights.front().rows()); }
  int embed_dim() const { return static_cast<int>(weights.back().cols()); }
  std::vector<int> dims() const;
};

// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)], weights row-major then
// bias, layer by layer. layer_dims must list at least input and output.
MlpParams init_mlp(const std::vector<int>& layer_dims, RngStream& rng);

struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // layer_inputs[i] feeds layer i
  Matrix raw_out;                    // pre-normalization output
  Vector raw_norms;
  Matrix embeddings;
  bool normalized = true;
};

// Returns embeddings (unit rows unless normalize_output is false). Passing a
// cache records the activations needed by backward. Throws ZeroRowError when
// a pre-normalization row norm falls below 1e-12.
Matrix forward(const MlpParams& params, const Eigen::Ref<const Matrix>& x,
               ForwardCache* cache = nullptr, bool normalize_output = true);

struct MlpGrads {
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
};

// Backpropagates grad_embeddings through the cached forward pass, including
// the row-normalization Jacobian when the cache was built normalized.
MlpGrads backward(const MlpParams& params, const ForwardCache& cache,
                  const Eigen::Ref<const Matrix>& grad_embeddings);

struct OptimizerState {
  std::vector<Matrix> weight_buf;
  std::vector<Vector> bias_buf;
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 1e-4;
};

OptimizerState init_optimizer(const MlpParams& params, double lr, double momentum,
                              double weight_decay);

// buffer <- momentum * buffer + grad + weight_decay * param
// param  <- param - lr * buffer
void sgd_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state);

struct MomentumEncoder {
  MlpParams params;
  double ema_coeff = 0.99;
};

// target <- ema_coeff * target + (1 - ema_coeff) * online, per tensor.
// Throws ShapeMismatchError if architectures differ.
void ema_update(const MlpParams& online, MomentumEncoder& target);

// Checkpoint format "PCKP" v1: three sections (online params, momentum
// params, optimizer momentum buffers), each a u32 layer count followed per
// layer by u32 rows, u32 cols, f32 weights row-major, u32 bias length,
// f32 biases. Weights are stored as f32; exact-resume state uses the
// separate f64 format in trainkit.
struct Checkpoint {
  MlpParams online;
  MlpParams momentum;
  MlpGrads opt_buffers;  // same shapes as params
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace pauc
