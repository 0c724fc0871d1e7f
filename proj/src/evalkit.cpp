#include "pauc/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>

#include "pauc/nemd.hpp"

namespace pauc {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

ProbeResult linear_probe(const Eigen::Ref<const Matrix>& embeddings,
                         const std::vector<int32_t>& labels, uint64_t split_seed,
                         const ProbeOptions& opt) {
  Eigen::Index n = embeddings.rows();
  if (labels.size() != static_cast<size_t>(n)) {
    throw ShapeMismatchError("linear_probe: one label per row required");
  }
  if (n < 2) throw TooFewPointsError("linear_probe: need at least 2 samples");
  if (opt.iters < 1) throw ConfigError("linear_probe: iters must be >= 1");
  if (!(opt.lr > 0.0)) throw ConfigError("linear_probe: lr must be > 0");
  int num_classes = 0;
  for (int32_t l : labels) {
    if (l < 0) throw ConfigError("linear_probe: labels must be >= 0");
    num_classes = std::max(num_classes, static_cast<int>(l) + 1);
  }

  std::vector<int> perm(static_cast<size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  RngStream rng(split_seed, streams::kProbe);
  rng.shuffle(perm);
  Eigen::Index n_train = (n * 4) / 5;
  if (n_train < 1 || n_train == n) throw DegenerateSplitError("linear_probe: split has an empty side");

  std::vector<char> in_train(static_cast<size_t>(num_classes), 0);
  for (Eigen::Index i = 0; i < n_train; ++i) {
    in_train[static_cast<size_t>(labels[static_cast<size_t>(perm[static_cast<size_t>(i)])])] = 1;
  }
  for (int c = 0; c < num_classes; ++c) {
    if (!in_train[static_cast<size_t>(c)]) {
      throw DegenerateSplitError("linear_probe: class " + std::to_string(c) +
                                 " missing from the training split");
    }
  }

  Matrix xtr(n_train, embeddings.cols());
  std::vector<int32_t> ytr(static_cast<size_t>(n_train));
  for (Eigen::Index i = 0; i < n_train; ++i) {
    int src = perm[static_cast<size_t>(i)];
    xtr.row(i) = embeddings.row(src);
    ytr[static_cast<size_t>(i)] = labels[static_cast<size_t>(src)];
  }

  Matrix w = Matrix::Zero(embeddings.cols(), num_classes);
  Vector b = Vector::Zero(num_classes);
  ProbeResult out;
  out.train_count = static_cast<int>(n_train);
  out.test_count = static_cast<int>(n - n_train);
  out.loss_trace.reserve(static_cast<size_t>(opt.iters));

  double inv_tr = 1.0 / static_cast<double>(n_train);
  for (int it = 0; it < opt.iters; ++it) {
    Matrix logits = (xtr * w).rowwise() + b.transpose();
    Vector row_max = logits.rowwise().maxCoeff();
    Matrix p = (logits.colwise() - row_max).array().exp();
    Vector denom = p.rowwise().sum();
    p.array().colwise() /= denom.array();

    double loss = 0.0;
    for (Eigen::Index i = 0; i < n_train; ++i) {
      loss -= std::log(std::max(p(i, ytr[static_cast<size_t>(i)]), 1e-300));
    }
    out.loss_trace.push_back(loss * inv_tr);

    for (Eigen::Index i = 0; i < n_train; ++i) p(i, ytr[static_cast<size_t>(i)]) -= 1.0;
    p *= inv_tr;
    double lr = opt.cosine_decay
                    ? opt.lr * 0.5 *
                          (1.0 + std::cos(std::numbers::pi * static_cast<double>(it) /
                                          static_cast<double>(opt.iters)))
                    : opt.lr;
    w -= lr * (xtr.transpose() * p);
    b -= lr * p.colwise().sum().transpose();
  }

  std::vector<int> correct(static_cast<size_t>(num_classes), 0);
  std::vector<int> count(static_cast<size_t>(num_classes), 0);
  int hits = 0;
  for (Eigen::Index i = n_train; i < n; ++i) {
    int src = perm[static_cast<size_t>(i)];
    Vector logit = (embeddings.row(src) * w).transpose() + b;
    Eigen::Index pred;
    logit.maxCoeff(&pred);
    int truth = labels[static_cast<size_t>(src)];
    count[static_cast<size_t>(truth)]++;
    if (static_cast<int>(pred) == truth) {
      correct[static_cast<size_t>(truth)]++;
      hits++;
    }
  }
  out.top1 = static_cast<double>(hits) / static_cast<double>(out.test_count);
  out.per_class.resize(static_cast<size_t>(num_classes), 0.0);
  for (int c = 0; c < num_classes; ++c) {
    if (count[static_cast<size_t>(c)] > 0) {
      out.per_class[static_cast<size_t>(c)] =
          static_cast<double>(correct[static_cast<size_t>(c)]) / count[static_cast<size_t>(c)];
    }
  }
  return out;
}

VizExport project_unit_circle(const TrainState& state, const LabeledDataset& ds,
                              const PrototypeSet* protos) {
  if (state.online.embed_dim() != 2) {
    throw UnsupportedDimError("project_unit_circle: embedding dim must be 2, got " +
                              std::to_string(state.online.embed_dim()));
  }
  VizExport viz;
  viz.points = embed_features(state.momentum.params, ds.features);
  viz.labels = ds.labels;
  if (protos != nullptr && protos->num_levels() > 0) {
    // Coarsest level reads best on the circle.
    int coarsest = 0;
    for (int m = 1; m < protos->num_levels(); ++m) {
      if (protos->levels[static_cast<size_t>(m)].k <
          protos->levels[static_cast<size_t>(coarsest)].k) {
        coarsest = m;
      }
    }
    viz.centroids = protos->levels[static_cast<size_t>(coarsest)].centroids;
  } else {
    viz.centroids.resize(0, 2);
  }
  return viz;
}

void write_viz_csv(const VizExport& viz, const std::string& path) {
  if (!viz.labels.empty() && viz.labels.size() != static_cast<size_t>(viz.points.rows())) {
    throw ShapeMismatchError("write_viz_csv: label count mismatch");
  }
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "x,y,label,is_centroid\n";
  for (Eigen::Index i = 0; i < viz.points.rows(); ++i) {
    int label = viz.labels.empty() ? -1 : viz.labels[static_cast<size_t>(i)];
    out << fmt17(viz.points(i, 0)) << "," << fmt17(viz.points(i, 1)) << "," << label
        << ",0\n";
  }
  for (Eigen::Index i = 0; i < viz.centroids.rows(); ++i) {
    out << fmt17(viz.centroids(i, 0)) << "," << fmt17(viz.centroids(i, 1)) << ",-1,1\n";
  }
  out.close();
  if (!out) throw IoError("short write: " + path);
}

void write_viz_svg(const VizExport& viz, const std::string& path) {
  const int size = 600;
  const double half = size / 2.0;
  const double radius = half * 0.9;
  auto sx = [&](double x) { return half + radius * x; };
  auto sy = [&](double y) { return half - radius * y; };

  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << size << "\" height=\""
      << size << "\" viewBox=\"0 0 " << size << " " << size << "\">\n";
  out << "<rect width=\"" << size << "\" height=\"" << size << "\" fill=\"white\"/>\n";
  out << "<circle cx=\"" << half << "\" cy=\"" << half << "\" r=\"" << radius
      << "\" fill=\"none\" stroke=\"#cccccc\"/>\n";
  for (Eigen::Index i = 0; i < viz.points.rows(); ++i) {
    int label = viz.labels.empty() ? 0 : viz.labels[static_cast<size_t>(i)];
    int hue = (label * 47) % 360;
    out << "<circle cx=\"" << fmt17(sx(viz.points(i, 0))) << "\" cy=\""
        << fmt17(sy(viz.points(i, 1))) << "\" r=\"2\" fill=\"hsl(" << hue
        << ",70%,50%)\" fill-opacity=\"0.5\"/>\n";
  }
  for (Eigen::Index i = 0; i < viz.centroids.rows(); ++i) {
    out << "<circle cx=\"" << fmt17(sx(viz.centroids(i, 0))) << "\" cy=\""
        << fmt17(sy(viz.centroids(i, 1))) << "\" r=\"5\" fill=\"black\"/>\n";
  }
  out << "</svg>\n";
  out.close();
  if (!out) throw IoError("short write: " + path);
}

nlohmann::json evaluate_run(const TrainState& state, const LabeledDataset& ds,
                            const TrainConfig& cfg, const std::string& out_dir) {
  validate_config(cfg);
  if (ds.labels.empty()) throw ConfigError("evaluate_run: labeled dataset required");
  std::filesystem::create_directories(out_dir);

  Matrix emb = embed_features(state.momentum.params, ds.features);

  ClusterSpec cspec = cluster_spec_for(cfg, ds, derive_seed(cfg.seed, streams::kEvalCluster, 0));
  PrototypeSet protos = spawn_prototypes(emb, cspec, effective_loss_config(cfg).tau);

  nlohmann::json nemd_means;
  nlohmann::json nemd_detail;
  for (int m = 0; m < protos.num_levels(); ++m) {
    RngStream rng = RngStream(cfg.seed, streams::kEvalNemd).substream(static_cast<uint64_t>(m));
    NemdStats stats = nemd_stats(protos, emb, m, AnnealOptions{}, cfg.eval_nemd_pairs,
                                 cfg.eval_nemd_subsample, rng);
    std::string key = std::to_string(protos.levels[static_cast<size_t>(m)].k);
    nemd_means[key] = stats.mean;
    nemd_detail[key] = {{"mean", stats.mean},
                        {"stddev", stats.stddev},
                        {"pairs", stats.pairs_evaluated},
                        {"converged_fraction", stats.converged_fraction}};
  }

  ProbeOptions popt;
  popt.iters = cfg.probe_iters;
  popt.lr = cfg.probe_lr;
  ProbeResult probe =
      linear_probe(emb, ds.labels, derive_seed(cfg.seed, streams::kProbe, 0), popt);

  VizExport viz = project_unit_circle(state, ds, &protos);
  std::string viz_path = (std::filesystem::path(out_dir) / "viz.csv").string();
  write_viz_csv(viz, viz_path);

  nlohmann::json report;
  report["mode"] = cfg.mode;
  report["classes"] = ds.num_classes();
  report["granularities"] = cspec.granularities;
  report["nemd"] = nemd_means;
  report["nemd_detail"] = nemd_detail;
  report["probe_top1"] = probe.top1;
  report["probe_train_count"] = probe.train_count;
  report["probe_test_count"] = probe.test_count;
  report["seed"] = cfg.seed;
  report["viz_csv"] = "viz.csv";

  std::ofstream out(std::filesystem::path(out_dir) / "report.json");
  if (!out) throw IoError("cannot open for writing: " + out_dir + "/report.json");
  out << report.dump(2) << "\n";
  out.close();
  if (!out) throw IoError("short write: " + out_dir + "/report.json");
  return report;
}

}  // namespace pauc
