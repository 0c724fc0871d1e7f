#include "pauc/encoder.hpp"

#include <cmath>

#include "binio.hpp"

namespace pauc {

std::vector<int> MlpParams::dims() const {
  std::vector<int> d;
  d.push_back(input_dim());
  for (const auto& w : weights) d.push_back(static_cast<int>(w.cols()));
  return d;
}

MlpParams init_mlp(const std::vector<int>& layer_dims, RngStream& rng) {
  if (layer_dims.size() < 2) throw ConfigError("init_mlp: need at least input and output dims");
  for (int d : layer_dims) {
    if (d < 1) throw ConfigError("init_mlp: layer dims must be positive");
  }
  MlpParams p;
  for (size_t l = 0; l + 1 < layer_dims.size(); ++l) {
    int fan_in = layer_dims[l];
    int fan_out = layer_dims[l + 1];
    double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    Matrix w(fan_in, fan_out);
    for (int i = 0; i < fan_in; ++i) {
      for (int j = 0; j < fan_out; ++j) {
        w(i, j) = rng.uniform(-bound, bound);
      }
    }
    Vector b(fan_out);
    for (int j = 0; j < fan_out; ++j) b(j) = rng.uniform(-bound, bound);
    p.weights.push_back(std::move(w));
    p.biases.push_back(std::move(b));
  }
  return p;
}

Matrix forward(const MlpParams& params, const Eigen::Ref<const Matrix>& x,
               ForwardCache* cache, bool normalize_output) {
  if (x.cols() != params.input_dim()) {
    throw DimMismatchError("forward: input has " + std::to_string(x.cols()) +
                           " cols, encoder expects " + std::to_string(params.input_dim()));
  }
  if (cache) {
    cache->layer_inputs.clear();
    cache->normalized = normalize_output;
  }
  Matrix cur = x;
  int last = params.num_layers() - 1;
  for (int l = 0; l <= last; ++l) {
    if (cache) cache->layer_inputs.push_back(cur);
    Matrix pre = (cur * params.weights[static_cast<size_t>(l)]).rowwise() +
                 params.biases[static_cast<size_t>(l)].transpose();
    if (l < last) {
      cur = pre.array().tanh();
    } else {
      cur = std::move(pre);
    }
  }
  if (!normalize_output) {
    if (cache) {
      cache->raw_out = cur;
      cache->raw_norms.resize(0);
      cache->embeddings = cur;
    }
    return cur;
  }
  Vector norms = cur.rowwise().norm();
  for (Eigen::Index i = 0; i < norms.size(); ++i) {
    if (norms(i) < 1e-12) {
      throw ZeroRowError("forward: embedding row " + std::to_string(i) +
                         " has norm below 1e-12");
    }
  }
  Matrix emb = cur.array().colwise() / norms.array();
  if (cache) {
    cache->raw_out = std::move(cur);
    cache->raw_norms = std::move(norms);
    cache->embeddings = emb;
  }
  return emb;
}

MlpGrads backward(const MlpParams& params, const ForwardCache& cache,
                  const Eigen::Ref<const Matrix>& grad_embeddings) {
  int layers = params.num_layers();
  if (static_cast<int>(cache.layer_inputs.size()) != layers) {
    throw ShapeMismatchError("backward: cache does not match encoder");
  }
  if (grad_embeddings.rows() != cache.embeddings.rows() ||
      grad_embeddings.cols() != cache.embeddings.cols()) {
    throw ShapeMismatchError("backward: gradient shape mismatch");
  }

  Matrix delta;
  if (cache.normalized) {
    // d/dz of z/|z| applied to row gradient g: (g - v (v.g)) / |z|, v = z/|z|.
    delta.resize(grad_embeddings.rows(), grad_embeddings.cols());
    for (Eigen::Index i = 0; i < delta.rows(); ++i) {
      const auto v = cache.embeddings.row(i);
      const auto g = grad_embeddings.row(i);
      delta.row(i) = (g - v * v.dot(g)) / cache.raw_norms(i);
    }
  } else {
    delta = grad_embeddings;
  }

  MlpGrads grads;
  grads.weights.resize(static_cast<size_t>(layers));
  grads.biases.resize(static_cast<size_t>(layers));
  for (int l = layers - 1; l >= 0; --l) {
    const Matrix& in = cache.layer_inputs[static_cast<size_t>(l)];
    grads.weights[static_cast<size_t>(l)] = in.transpose() * delta;
    grads.biases[static_cast<size_t>(l)] = delta.colwise().sum();
    if (l > 0) {
      Matrix prev = delta * params.weights[static_cast<size_t>(l)].transpose();
      // layer_inputs[l] holds tanh(pre) of layer l-1; tanh' = 1 - tanh^2.
      delta = prev.array() * (1.0 - in.array().square());
    }
  }
  return grads;
}

OptimizerState init_optimizer(const MlpParams& params, double lr, double momentum,
                              double weight_decay) {
  OptimizerState s;
  s.lr = lr;
  s.momentum = momentum;
  s.weight_decay = weight_decay;
  for (const auto& w : params.weights) s.weight_buf.push_back(Matrix::Zero(w.rows(), w.cols()));
  for (const auto& b : params.biases) s.bias_buf.push_back(Vector::Zero(b.size()));
  return s;
}

void sgd_step(MlpParams& params, const MlpGrads& grads, OptimizerState& state) {
  size_t layers = params.weights.size();
  if (grads.weights.size() != layers || state.weight_buf.size() != layers) {
    throw ShapeMismatchError("sgd_step: layer count mismatch");
  }
  for (size_t l = 0; l < layers; ++l) {
    state.weight_buf[l] = state.momentum * state.weight_buf[l] + grads.weights[l] +
                          state.weight_decay * params.weights[l];
    params.weights[l] -= state.lr * state.weight_buf[l];
    state.bias_buf[l] = state.momentum * state.bias_buf[l] + grads.biases[l] +
                        state.weight_decay * params.biases[l];
    params.biases[l] -= state.lr * state.bias_buf[l];
  }
}

void ema_update(const MlpParams& online, MomentumEncoder& target) {
  if (online.weights.size() != target.params.weights.size()) {
    throw ShapeMismatchError("ema_update: layer count mismatch");
  }
  double c = target.ema_coeff;
  for (size_t l = 0; l < online.weights.size(); ++l) {
    if (online.weights[l].rows() != target.params.weights[l].rows() ||
        online.weights[l].cols() != target.params.weights[l].cols()) {
      throw ShapeMismatchError("ema_update: weight shape mismatch at layer " + std::to_string(l));
    }
    target.params.weights[l] = c * target.params.weights[l] + (1.0 - c) * online.weights[l];
    target.params.biases[l] = c * target.params.biases[l] + (1.0 - c) * online.biases[l];
  }
}

namespace {

void write_section(binio::Writer& w, const std::vector<Matrix>& weights,
                   const std::vector<Vector>& biases) {
  w.u32(static_cast<uint32_t>(weights.size()));
  for (size_t l = 0; l < weights.size(); ++l) {
    w.u32(static_cast<uint32_t>(weights[l].rows()));
    w.u32(static_cast<uint32_t>(weights[l].cols()));
    for (Eigen::Index i = 0; i < weights[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < weights[l].cols(); ++j) {
        w.f32(static_cast<float>(weights[l](i, j)));
      }
    }
    w.u32(static_cast<uint32_t>(biases[l].size()));
    for (Eigen::Index j = 0; j < biases[l].size(); ++j) {
      w.f32(static_cast<float>(biases[l](j)));
    }
  }
}

void read_section(binio::Reader& r, std::vector<Matrix>& weights,
                  std::vector<Vector>& biases) {
  uint32_t layers = r.u32();
  if (layers == 0 || layers > 64) {
    throw FormatError(r.path() + ": implausible layer count " + std::to_string(layers));
  }
  weights.clear();
  biases.clear();
  for (uint32_t l = 0; l < layers; ++l) {
    uint64_t rows = r.u32();
    uint64_t cols = r.u32();
    r.checked_count(rows, cols);
    Matrix w(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (uint64_t i = 0; i < rows; ++i) {
      for (uint64_t j = 0; j < cols; ++j) {
        w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f32();
      }
    }
    uint32_t blen = r.u32();
    if (blen != cols) throw FormatError(r.path() + ": bias length does not match layer width");
    Vector b(static_cast<Eigen::Index>(blen));
    for (uint32_t j = 0; j < blen; ++j) b(j) = r.f32();
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  binio::Writer w(path);
  w.magic("PCKP");
  w.u8(1);
  write_section(w, ck.online.weights, ck.online.biases);
  write_section(w, ck.momentum.weights, ck.momentum.biases);
  write_section(w, ck.opt_buffers.weights, ck.opt_buffers.biases);
  w.close();
}

Checkpoint load_checkpoint(const std::string& path) {
  binio::Reader r(path);
  r.expect_magic("PCKP");
  uint8_t version = r.u8();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  read_section(r, ck.online.weights, ck.online.biases);
  read_section(r, ck.momentum.weights, ck.momentum.biases);
  read_section(r, ck.opt_buffers.weights, ck.opt_buffers.biases);
  r.expect_eof();
  return ck;
}

}  // namespace pauc
