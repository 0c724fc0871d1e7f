#include "pauc/trainkit.hpp"

#include "pauc/nemd.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

#include "binio.hpp"

namespace pauc {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    int out = std::stoi(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected integer, got '" + v + "'");
  }
}

uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    uint64_t out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected unsigned integer, got '" + v + "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ConfigError(key + ": expected boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> parts;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) parts.push_back(item);
  }
  return parts;
}

std::vector<int> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<int> out;
  for (const auto& p : split_list(v)) out.push_back(parse_int(key, p));
  if (out.empty()) throw ConfigError(key + ": expected a comma separated list");
  return out;
}

std::vector<uint64_t> parse_u64_list(const std::string& key, const std::string& v) {
  std::vector<uint64_t> out;
  for (const auto& p : split_list(v)) out.push_back(parse_u64(key, p));
  if (out.empty()) throw ConfigError(key + ": expected a comma separated list");
  return out;
}

std::string check_mode(const std::string& key, const std::string& v) {
  if (v != "pauc" && v != "pcl-baseline") {
    throw ConfigError(key + ": mode must be 'pauc' or 'pcl-baseline', got '" + v + "'");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

template <typename T>
std::string join_list(const std::vector<T>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(v[i]);
  }
  return out;
}

std::string join_str_list(const std::vector<std::string>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ",";
    out += v[i];
  }
  return out;
}

}  // namespace

void apply_override(ToolConfig& cfg, const std::string& key, const std::string& value) {
  TrainConfig& t = cfg.train;
  if (key == "epochs") t.epochs = parse_int(key, value);
  else if (key == "warmup_epochs") t.warmup_epochs = parse_int(key, value);
  else if (key == "batch_size") t.batch_size = parse_int(key, value);
  else if (key == "lr") t.lr = parse_double(key, value);
  else if (key == "lr_milestones") t.lr_milestones = parse_int_list(key, value);
  else if (key == "lr_gamma") t.lr_gamma = parse_double(key, value);
  else if (key == "momentum") t.momentum = parse_double(key, value);
  else if (key == "weight_decay") t.weight_decay = parse_double(key, value);
  else if (key == "ema_coeff") t.ema_coeff = parse_double(key, value);
  else if (key == "mode") t.mode = check_mode(key, value);
  else if (key == "seed") t.seed = parse_u64(key, value);
  else if (key == "arch.hidden") t.hidden = parse_int_list(key, value);
  else if (key == "arch.embed_dim") t.embed_dim = parse_int(key, value);
  else if (key == "loss.tau") t.loss.tau = parse_double(key, value);
  else if (key == "loss.r") t.loss.r = parse_int(key, value);
  else if (key == "loss.alpha") t.loss.alpha = parse_double(key, value);
  else if (key == "loss.beta") t.loss.beta = parse_double(key, value);
  else if (key == "loss.gamma") t.loss.gamma = parse_double(key, value);
  else if (key == "loss.s") t.loss.s = parse_double(key, value);
  else if (key == "loss.t") t.loss.t = parse_double(key, value);
  else if (key == "loss.pair_budget") t.loss.pair_budget = parse_int(key, value);
  else if (key == "loss.soft_centroids") t.loss.soft_centroids = parse_bool(key, value);
  else if (key == "cluster.k") {
    if (value == "auto") t.cluster_k.clear();
    else t.cluster_k = parse_int_list(key, value);
  } else if (key == "cluster.max_iters") t.cluster_max_iters = parse_int(key, value);
  else if (key == "aug.noise_std") t.aug.noise_std = parse_double(key, value);
  else if (key == "aug.scale_min") t.aug.scale_min = parse_double(key, value);
  else if (key == "aug.scale_max") t.aug.scale_max = parse_double(key, value);
  else if (key == "log.nemd_every") t.log_nemd_every = parse_int(key, value);
  else if (key == "log.nemd_pairs") t.log_nemd_pairs = parse_int(key, value);
  else if (key == "log.nemd_subsample") t.log_nemd_subsample = parse_int(key, value);
  else if (key == "eval.nemd_pairs") t.eval_nemd_pairs = parse_int(key, value);
  else if (key == "eval.nemd_subsample") t.eval_nemd_subsample = parse_int(key, value);
  else if (key == "eval.probe_iters") t.probe_iters = parse_int(key, value);
  else if (key == "eval.probe_lr") t.probe_lr = parse_double(key, value);
  else if (key == "data.classes") cfg.data.num_classes = parse_int(key, value);
  else if (key == "data.samples_per_class") cfg.data.samples_per_class = parse_int(key, value);
  else if (key == "data.dim") cfg.data.input_dim = parse_int(key, value);
  else if (key == "data.cluster_std") cfg.data.cluster_std = parse_double(key, value);
  else if (key == "data.center_min") cfg.data.center_min = parse_double(key, value);
  else if (key == "data.center_max") cfg.data.center_max = parse_double(key, value);
  else if (key == "data.seed") cfg.data.seed = parse_u64(key, value);
  else if (key == "sweep.classes") cfg.sweep.classes = parse_int_list(key, value);
  else if (key == "sweep.seeds") cfg.sweep.seeds = parse_u64_list(key, value);
  else if (key == "sweep.modes") {
    std::vector<std::string> modes = split_list(value);
    if (modes.empty()) throw ConfigError(key + ": expected a comma separated list");
    for (const auto& m : modes) check_mode(key, m);
    cfg.sweep.modes = modes;
  } else if (key == "sweep.jobs") cfg.sweep.jobs = parse_int(key, value);
  else if (key == "sweep.samples_per_class") cfg.sweep.samples_per_class = parse_int(key, value);
  else if (key == "sweep.cluster_std") cfg.sweep.cluster_std = parse_double(key, value);
  else if (key == "sweep.input_dim") cfg.sweep.input_dim = parse_int(key, value);
  else throw ConfigError("unknown config key '" + key + "'");
}

ToolConfig parse_config_text(const std::string& text, ToolConfig base) {
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    }
    apply_override(base, key, value);
  }
  return base;
}

ToolConfig load_config_file(const std::string& path, ToolConfig base) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), std::move(base));
}

std::string config_to_text(const ToolConfig& cfg) {
  const TrainConfig& t = cfg.train;
  std::vector<std::string> lines = {
      "arch.embed_dim = " + std::to_string(t.embed_dim),
      "arch.hidden = " + join_list(t.hidden),
      "aug.noise_std = " + fmt_double(t.aug.noise_std),
      "aug.scale_max = " + fmt_double(t.aug.scale_max),
      "aug.scale_min = " + fmt_double(t.aug.scale_min),
      "batch_size = " + std::to_string(t.batch_size),
      "cluster.k = " + (t.cluster_k.empty() ? std::string("auto") : join_list(t.cluster_k)),
      "cluster.max_iters = " + std::to_string(t.cluster_max_iters),
      "data.center_max = " + fmt_double(cfg.data.center_max),
      "data.center_min = " + fmt_double(cfg.data.center_min),
      "data.classes = " + std::to_string(cfg.data.num_classes),
      "data.cluster_std = " + fmt_double(cfg.data.cluster_std),
      "data.dim = " + std::to_string(cfg.data.input_dim),
      "data.samples_per_class = " + std::to_string(cfg.data.samples_per_class),
      "data.seed = " + std::to_string(cfg.data.seed),
      "ema_coeff = " + fmt_double(t.ema_coeff),
      "epochs = " + std::to_string(t.epochs),
      "eval.nemd_pairs = " + std::to_string(t.eval_nemd_pairs),
      "eval.nemd_subsample = " + std::to_string(t.eval_nemd_subsample),
      "eval.probe_iters = " + std::to_string(t.probe_iters),
      "eval.probe_lr = " + fmt_double(t.probe_lr),
      "log.nemd_every = " + std::to_string(t.log_nemd_every),
      "log.nemd_pairs = " + std::to_string(t.log_nemd_pairs),
      "log.nemd_subsample = " + std::to_string(t.log_nemd_subsample),
      "loss.alpha = " + fmt_double(t.loss.alpha),
      "loss.beta = " + fmt_double(t.loss.beta),
      "loss.gamma = " + fmt_double(t.loss.gamma),
      "loss.pair_budget = " + std::to_string(t.loss.pair_budget),
      "loss.r = " + std::to_string(t.loss.r),
      "loss.s = " + fmt_double(t.loss.s),
      "loss.soft_centroids = " + std::string(t.loss.soft_centroids ? "true" : "false"),
      "loss.t = " + fmt_double(t.loss.t),
      "loss.tau = " + fmt_double(t.loss.tau),
      "lr = " + fmt_double(t.lr),
      "lr_gamma = " + fmt_double(t.lr_gamma),
      "lr_milestones = " + join_list(t.lr_milestones),
      "mode = " + t.mode,
      "momentum = " + fmt_double(t.momentum),
      "seed = " + std::to_string(t.seed),
      "sweep.classes = " + join_list(cfg.sweep.classes),
      "sweep.cluster_std = " + fmt_double(cfg.sweep.cluster_std),
      "sweep.input_dim = " + std::to_string(cfg.sweep.input_dim),
      "sweep.jobs = " + std::to_string(cfg.sweep.jobs),
      "sweep.modes = " + join_str_list(cfg.sweep.modes),
      "sweep.samples_per_class = " + std::to_string(cfg.sweep.samples_per_class),
      "sweep.seeds = " + join_list(cfg.sweep.seeds),
      "warmup_epochs = " + std::to_string(t.warmup_epochs),
      "weight_decay = " + fmt_double(t.weight_decay),
  };
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) {
    out += l;
    out += "\n";
  }
  return out;
}

void validate_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
  if (cfg.warmup_epochs >= cfg.epochs) throw ConfigError("warmup_epochs must be < epochs");
  if (cfg.batch_size < 2) throw ConfigError("batch_size must be >= 2");
  if (!(cfg.lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(cfg.lr_gamma > 0.0)) throw ConfigError("lr_gamma must be > 0");
  if (cfg.momentum < 0.0 || cfg.momentum >= 1.0) throw ConfigError("momentum must be in [0, 1)");
  if (cfg.weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
  if (cfg.ema_coeff < 0.0 || cfg.ema_coeff >= 1.0) throw ConfigError("ema_coeff must be in [0, 1)");
  int prev = 0;
  for (int m : cfg.lr_milestones) {
    if (m <= prev) throw ConfigError("lr_milestones must be strictly increasing and > 0");
    if (m >= cfg.epochs) throw ConfigError("lr_milestones must be < epochs");
    prev = m;
  }
  check_mode("mode", cfg.mode);
  if (cfg.embed_dim < 1) throw ConfigError("arch.embed_dim must be >= 1");
  for (int h : cfg.hidden) {
    if (h < 1) throw ConfigError("arch.hidden entries must be >= 1");
  }
  if (!(cfg.loss.tau > 0.0)) throw ConfigError("loss.tau must be > 0");
  if (cfg.loss.r < 1) throw ConfigError("loss.r must be >= 1");
  if (cfg.loss.alpha < 0.0 || cfg.loss.beta < 0.0 || cfg.loss.gamma < 0.0) {
    throw ConfigError("loss weights must be >= 0");
  }
  if (!(cfg.loss.s >= 1.0)) throw ConfigError("loss.s must be >= 1");
  if (!(cfg.loss.t > 0.0)) throw ConfigError("loss.t must be > 0");
  if (cfg.loss.pair_budget < 1) throw ConfigError("loss.pair_budget must be >= 1");
  if (cfg.cluster_max_iters < 1) throw ConfigError("cluster.max_iters must be >= 1");
  std::set<int> uniq(cfg.cluster_k.begin(), cfg.cluster_k.end());
  if (uniq.size() != cfg.cluster_k.size()) throw ConfigError("cluster.k must be distinct");
  for (int k : cfg.cluster_k) {
    if (k < 2) throw ConfigError("cluster.k entries must be >= 2");
  }
  if (cfg.aug.noise_std < 0.0) throw ConfigError("aug.noise_std must be >= 0");
  if (!(cfg.aug.scale_min <= cfg.aug.scale_max)) throw ConfigError("aug scale range is empty");
  if (cfg.log_nemd_every < 1) throw ConfigError("log.nemd_every must be >= 1");
  if (cfg.log_nemd_pairs < 1) throw ConfigError("log.nemd_pairs must be >= 1");
  if (cfg.log_nemd_subsample < 1) throw ConfigError("log.nemd_subsample must be >= 1");
  if (cfg.eval_nemd_pairs < 1) throw ConfigError("eval.nemd_pairs must be >= 1");
  if (cfg.eval_nemd_subsample < 1) throw ConfigError("eval.nemd_subsample must be >= 1");
  if (cfg.probe_iters < 1) throw ConfigError("eval.probe_iters must be >= 1");
  if (!(cfg.probe_lr > 0.0)) throw ConfigError("eval.probe_lr must be > 0");
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("lr_at: epoch must be >= 0");
  double lr = cfg.lr;
  for (int m : cfg.lr_milestones) {
    if (m <= epoch) lr *= cfg.lr_gamma;
  }
  return lr;
}

LossConfig effective_loss_config(const TrainConfig& cfg) {
  LossConfig lcfg = cfg.loss;
  if (cfg.mode == "pcl-baseline") {
    lcfg.alpha = 0.0;
    lcfg.beta = 0.0;
    lcfg.gamma = 0.0;
  }
  return lcfg;
}

std::vector<int> default_granularities(int num_classes) {
  if (num_classes < 2) throw ConfigError("default granularities need at least 2 classes");
  return {num_classes, 2 * num_classes, 4 * num_classes};
}

ClusterSpec cluster_spec_for(const TrainConfig& cfg, const LabeledDataset& ds,
                             uint64_t spec_seed) {
  ClusterSpec spec;
  if (!cfg.cluster_k.empty()) {
    spec.granularities = cfg.cluster_k;
  } else {
    if (ds.labels.empty()) {
      throw ConfigError("cluster.k must be set for unlabeled data (no class count to derive it)");
    }
    spec.granularities = default_granularities(ds.num_classes());
  }
  spec.max_iters = cfg.cluster_max_iters;
  spec.seed = spec_seed;
  return spec;
}

TrainState init_train_state(const TrainConfig& cfg, int input_dim) {
  validate_config(cfg);
  if (input_dim < 1) throw ConfigError("init_train_state: input_dim must be >= 1");
  std::vector<int> dims;
  dims.push_back(input_dim);
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(cfg.embed_dim);

  TrainState st;
  RngStream rng(cfg.seed, streams::kInit);
  st.online = init_mlp(dims, rng);
  st.momentum.params = st.online;
  st.momentum.ema_coeff = cfg.ema_coeff;
  st.opt = init_optimizer(st.online, cfg.lr, cfg.momentum, cfg.weight_decay);
  st.seed = cfg.seed;
  return st;
}

InputScaler fit_input_scaler(const Eigen::Ref<const Matrix>& features) {
  if (features.rows() == 0) throw ConfigError("fit_input_scaler: empty feature matrix");
  InputScaler sc;
  sc.mean = features.colwise().mean();
  Eigen::RowVectorXd var =
      (features.rowwise() - sc.mean).array().square().colwise().mean();
  sc.inv_std = var.array().sqrt().max(1e-12).inverse();
  return sc;
}

Matrix apply_input_scaler(const InputScaler& sc, const Eigen::Ref<const Matrix>& features) {
  if (features.cols() != sc.mean.cols()) {
    throw DimMismatchError("apply_input_scaler: column count mismatch");
  }
  return ((features.rowwise() - sc.mean).array().rowwise() * sc.inv_std.array()).matrix();
}

Matrix embed_features(const MlpParams& params, const Eigen::Ref<const Matrix>& features) {
  return forward(params, apply_input_scaler(fit_input_scaler(features), features));
}

void pretrain(TrainState& state, const LabeledDataset& ds, const TrainConfig& cfg,
              std::vector<std::string>& metric_lines, const EpochCallback& cb) {
  validate_config(cfg);
  Eigen::Index n = ds.features.rows();
  if (n < 2) throw ConfigError("pretrain: need at least 2 samples");
  if (ds.features.cols() != state.online.input_dim()) {
    throw DimMismatchError("pretrain: dataset dim does not match encoder input");
  }
  LossConfig lcfg = effective_loss_config(cfg);
  InputScaler scaler = fit_input_scaler(ds.features);

  Matrix refresh_emb;
  for (int epoch = state.epoch; epoch < cfg.epochs; ++epoch) {
    state.opt.lr = lr_at(epoch, cfg);
    state.opt.momentum = cfg.momentum;
    state.opt.weight_decay = cfg.weight_decay;

    bool protos_active = epoch >= cfg.warmup_epochs;
    if (protos_active) {
      refresh_emb = forward(state.momentum.params, apply_input_scaler(scaler, ds.features));
      ClusterSpec cspec =
          cluster_spec_for(cfg, ds, derive_seed(cfg.seed, streams::kCluster, static_cast<uint64_t>(epoch)));
      state.protos = spawn_prototypes(refresh_emb, cspec, lcfg.tau);
      state.has_protos = true;
    }

    std::vector<int> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    RngStream shuffle_rng = RngStream(cfg.seed, streams::kShuffle).substream(static_cast<uint64_t>(epoch));
    shuffle_rng.shuffle(perm);
    RngStream aug_rng = RngStream(cfg.seed, streams::kAugment).substream(static_cast<uint64_t>(epoch));
    RngStream neg_rng = RngStream(cfg.seed, streams::kProtoNeg).substream(static_cast<uint64_t>(epoch));
    RngStream pair_rng = RngStream(cfg.seed, streams::kPairs).substream(static_cast<uint64_t>(epoch));

    double info_sum = 0.0, proto_sum = 0.0;
    double align_sum = 0.0, uniform_sum = 0.0, corr_sum = 0.0;
    Eigen::Index n_done = 0;

    for (Eigen::Index start = 0; start < n; start += cfg.batch_size) {
      Eigen::Index nb = std::min<Eigen::Index>(cfg.batch_size, n - start);
      if (nb < 2) break;  // a lone trailing sample has no in-batch negatives

      Matrix x(nb, ds.features.cols());
      std::vector<int32_t> ids(static_cast<size_t>(nb));
      for (Eigen::Index i = 0; i < nb; ++i) {
        int src = perm[static_cast<size_t>(start + i)];
        x.row(i) = ds.features.row(src);
        ids[static_cast<size_t>(i)] = src;
      }

      // Views are made in raw feature space so noise_std keeps its meaning
      // relative to cluster_std; standardization is the encoder's problem.
      auto [v1, v2] = make_views(x, cfg.aug, aug_rng);
      ForwardCache cache;
      Matrix anchors = forward(state.online, apply_input_scaler(scaler, v1), &cache);
      Matrix positives = forward(state.momentum.params, apply_input_scaler(scaler, v2));

      Matrix negatives((nb - 1) * nb, positives.cols());
      Eigen::Index row = 0;
      for (Eigen::Index i = 0; i < nb; ++i) {
        for (Eigen::Index j = 0; j < nb; ++j) {
          if (j == i) continue;
          negatives.row(row++) = positives.row(j);
        }
      }

      TotalLossResult res =
          total_loss(anchors, positives, negatives, ids,
                     protos_active ? &state.protos : nullptr, lcfg, pair_rng, neg_rng);

      // Sum-convention losses, mean-scaled updates: one scale on the anchor
      // gradient keeps step size independent of batch size.
      Matrix scaled = res.grad_anchors / static_cast<double>(nb);
      MlpGrads grads = backward(state.online, cache, scaled);
      sgd_step(state.online, grads, state.opt);
      ema_update(state.online, state.momentum);

      info_sum += res.info_nce;
      proto_sum += res.proto_nce;
      align_sum += res.align * static_cast<double>(nb);
      uniform_sum += res.uniform * static_cast<double>(nb);
      corr_sum += res.corr * static_cast<double>(nb);
      n_done += nb;
    }

    double inv = n_done > 0 ? 1.0 / static_cast<double>(n_done) : 0.0;
    double info_mean = info_sum * inv;
    double proto_mean = proto_sum * inv;
    double align_mean = align_sum * inv;
    double uniform_mean = uniform_sum * inv;
    double corr_mean = corr_sum * inv;
    double total_mean = info_mean + proto_mean;
    if (lcfg.alpha != 0.0) total_mean += lcfg.alpha * align_mean;
    if (lcfg.beta != 0.0) total_mean += lcfg.beta * uniform_mean;
    if (lcfg.gamma != 0.0) total_mean += lcfg.gamma * corr_mean;

    nlohmann::json line;
    line["epoch"] = epoch;
    line["lr"] = state.opt.lr;
    line["info_nce"] = info_mean;
    line["proto_nce"] = proto_mean;
    line["align"] = align_mean;
    line["uniform"] = uniform_mean;
    line["corr"] = corr_mean;
    line["total"] = total_mean;
    line["nemd"] = nullptr;

    bool log_nemd = protos_active && ((epoch + 1) % cfg.log_nemd_every == 0 ||
                                      epoch == cfg.epochs - 1);
    if (log_nemd) {
      nlohmann::json nd;
      RngStream nemd_rng = RngStream(cfg.seed, streams::kNemdLog).substream(static_cast<uint64_t>(epoch));
      for (int m = 0; m < state.protos.num_levels(); ++m) {
        RngStream r = nemd_rng.substream(static_cast<uint64_t>(m));
        NemdStats stats = nemd_stats(state.protos, refresh_emb, m, AnnealOptions{},
                                     cfg.log_nemd_pairs, cfg.log_nemd_subsample, r);
        nd[std::to_string(state.protos.levels[static_cast<size_t>(m)].k)] = stats.mean;
      }
      line["nemd"] = nd;
    }

    std::string serialized = line.dump();
    metric_lines.push_back(serialized);
    if (cb) cb(epoch, serialized);
    state.epoch = epoch + 1;
  }
}

namespace {

void write_section64(binio::Writer& w, const std::vector<Matrix>& weights,
                     const std::vector<Vector>& biases) {
  w.u32(static_cast<uint32_t>(weights.size()));
  for (size_t l = 0; l < weights.size(); ++l) {
    w.u32(static_cast<uint32_t>(weights[l].rows()));
    w.u32(static_cast<uint32_t>(weights[l].cols()));
    for (Eigen::Index i = 0; i < weights[l].rows(); ++i) {
      for (Eigen::Index j = 0; j < weights[l].cols(); ++j) w.f64(weights[l](i, j));
    }
    w.u32(static_cast<uint32_t>(biases[l].size()));
    for (Eigen::Index j = 0; j < biases[l].size(); ++j) w.f64(biases[l](j));
  }
}

void read_section64(binio::Reader& r, std::vector<Matrix>& weights,
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
        w(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = r.f64();
      }
    }
    uint32_t blen = r.u32();
    if (blen != cols) throw FormatError(r.path() + ": bias length does not match layer width");
    Vector b(static_cast<Eigen::Index>(blen));
    for (uint32_t j = 0; j < blen; ++j) b(j) = r.f64();
    weights.push_back(std::move(w));
    biases.push_back(std::move(b));
  }
}

}  // namespace

void save_state(const TrainState& st, const std::string& path) {
  binio::Writer w(path);
  w.magic("PSTA");
  w.u8(1);
  w.u64(st.seed);
  w.u32(static_cast<uint32_t>(st.epoch));
  write_section64(w, st.online.weights, st.online.biases);
  write_section64(w, st.momentum.params.weights, st.momentum.params.biases);
  write_section64(w, st.opt.weight_buf, st.opt.bias_buf);
  w.close();
}

TrainState load_state(const std::string& path, const TrainConfig& cfg) {
  binio::Reader r(path);
  r.expect_magic("PSTA");
  uint8_t version = r.u8();
  if (version != 1) throw FormatError(path + ": unsupported version " + std::to_string(version));
  TrainState st;
  st.seed = r.u64();
  st.epoch = static_cast<int>(r.u32());
  read_section64(r, st.online.weights, st.online.biases);
  read_section64(r, st.momentum.params.weights, st.momentum.params.biases);
  read_section64(r, st.opt.weight_buf, st.opt.bias_buf);
  r.expect_eof();

  // The stored architecture must agree with the config it resumes under.
  std::vector<int> expect;
  for (int h : cfg.hidden) expect.push_back(h);
  expect.push_back(cfg.embed_dim);
  std::vector<int> dims = st.online.dims();
  if (dims.size() != expect.size() + 1 ||
      !std::equal(expect.begin(), expect.end(), dims.begin() + 1)) {
    throw FormatError(path + ": stored architecture does not match the config");
  }
  st.momentum.ema_coeff = cfg.ema_coeff;
  st.opt.lr = cfg.lr;
  st.opt.momentum = cfg.momentum;
  st.opt.weight_decay = cfg.weight_decay;
  return st;
}

}  // namespace pauc
