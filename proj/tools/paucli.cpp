// Command line front end: data generation, pretraining, evaluation and the
// full comparison sweep. Exit codes: 1 configuration error, 2 file error,
// 3 runtime failure.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "pauc/blobgen.hpp"
#include "pauc/encoder.hpp"
#include "pauc/evalkit.hpp"
#include "pauc/nemd.hpp"
#include "pauc/protoclust.hpp"
#include "pauc/sweep.hpp"
#include "pauc/trainkit.hpp"

namespace fs = std::filesystem;
using namespace pauc;

namespace {

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> overrides;
  std::string out;
  uint64_t seed = 0;
  bool seed_given = false;
};

void add_common(CLI::App* sub, CommonOpts& o) {
  sub->add_option("--config", o.config_path, "flat key = value config file");
  sub->add_option("--override", o.overrides, "config override key=value (repeatable)");
  auto* seed_opt = sub->add_option("--seed", o.seed, "seed override");
  sub->parse_complete_callback([&o, seed_opt]() { o.seed_given = seed_opt->count() > 0; });
}

ToolConfig build_config(const CommonOpts& o) {
  ToolConfig cfg;
  if (!o.config_path.empty()) cfg = load_config_file(o.config_path, cfg);
  for (const auto& ov : o.overrides) {
    size_t eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--override expects key=value, got '" + ov + "'");
    }
    std::string key = ov.substr(0, eq);
    std::string value = ov.substr(eq + 1);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    while (!value.empty() && (value.front() == ' ' || value.front() == '\t')) value.erase(0, 1);
    apply_override(cfg, key, value);
  }
  if (o.seed_given) {
    cfg.train.seed = o.seed;
    cfg.data.seed = o.seed;
  }
  return cfg;
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  out.close();
  if (!out) throw IoError("short write: " + path);
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

int run_gen_data(const CommonOpts& o) {
  ToolConfig cfg = build_config(o);
  if (o.out.empty()) throw ConfigError("gen-data: --out FILE is required");
  LabeledDataset ds = generate_blobs(cfg.data);
  fs::path out(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  save_dataset(ds, o.out);
  std::cout << "wrote " << o.out << " (" << ds.features.rows() << " x "
            << ds.features.cols() << ", " << ds.num_classes() << " classes)\n";
  return 0;
}

int run_pretrain(const CommonOpts& o, const std::string& data_path,
                 const std::string& resume_path) {
  ToolConfig cfg = build_config(o);
  if (data_path.empty()) throw ConfigError("pretrain: --data FILE is required");
  if (o.out.empty()) throw ConfigError("pretrain: --out DIR is required");
  LabeledDataset ds = load_dataset(data_path);
  fs::create_directories(o.out);

  TrainState state = resume_path.empty()
                         ? init_train_state(cfg.train, static_cast<int>(ds.features.cols()))
                         : load_state(resume_path, cfg.train);
  std::vector<std::string> lines;
  pretrain(state, ds, cfg.train, lines, [&](int epoch, const std::string& line) {
    std::cout << "epoch " << epoch << ": " << line << "\n";
  });

  std::string metrics;
  for (const auto& l : lines) {
    metrics += l;
    metrics += "\n";
  }
  // On resume only the new epochs are appended.
  std::ofstream mout(fs::path(o.out) / "metrics.jsonl",
                     resume_path.empty() ? std::ios::trunc : std::ios::app);
  if (!mout) throw IoError("cannot open metrics.jsonl for writing");
  mout << metrics;
  mout.close();
  if (!mout) throw IoError("short write: metrics.jsonl");

  save_state(state, (fs::path(o.out) / "state.paucst").string());
  Checkpoint ck;
  ck.online = state.online;
  ck.momentum = state.momentum.params;
  ck.opt_buffers.weights = state.opt.weight_buf;
  ck.opt_buffers.biases = state.opt.bias_buf;
  save_checkpoint(ck, (fs::path(o.out) / "checkpoint.pauck").string());
  if (state.has_protos) {
    save_prototypes(state.protos, (fs::path(o.out) / "protos.paucps").string());
  }
  write_text_file((fs::path(o.out) / "run_config.txt").string(), config_to_text(cfg));
  std::cout << "trained " << state.epoch << " epochs -> " << o.out << "\n";
  return 0;
}

int run_nemd(const CommonOpts& o, const std::string& data_path,
             const std::string& checkpoint_path, const std::string& protos_path) {
  ToolConfig cfg = build_config(o);
  if (data_path.empty()) throw ConfigError("nemd: --data FILE is required");
  if (checkpoint_path.empty()) throw ConfigError("nemd: --checkpoint FILE is required");
  LabeledDataset ds = load_dataset(data_path);
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Matrix emb = embed_features(ck.momentum, ds.features);

  PrototypeSet protos;
  if (!protos_path.empty()) {
    protos = load_prototypes(protos_path);
    if (protos.num_samples() != static_cast<int>(ds.features.rows())) {
      throw FormatError("nemd: prototype assignments do not match the dataset size");
    }
  } else {
    ClusterSpec cspec = cluster_spec_for(cfg.train, ds,
                                         derive_seed(cfg.train.seed, streams::kEvalCluster, 0));
    protos = spawn_prototypes(emb, cspec, effective_loss_config(cfg.train).tau);
  }

  nlohmann::json result;
  for (int m = 0; m < protos.num_levels(); ++m) {
    RngStream rng = RngStream(cfg.train.seed, streams::kEvalNemd).substream(static_cast<uint64_t>(m));
    NemdStats stats = nemd_stats(protos, emb, m, AnnealOptions{}, cfg.train.eval_nemd_pairs,
                                 cfg.train.eval_nemd_subsample, rng);
    int k = protos.levels[static_cast<size_t>(m)].k;
    result[std::to_string(k)] = {{"mean", stats.mean},
                                 {"stddev", stats.stddev},
                                 {"pairs", stats.pairs_evaluated},
                                 {"converged_fraction", stats.converged_fraction}};
    std::cout << "k=" << k << " nemd=" << stats.mean << "\n";
  }
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    write_json_file((fs::path(o.out) / "nemd.json").string(), result);
  }
  return 0;
}

int run_probe(const CommonOpts& o, const std::string& data_path,
              const std::string& checkpoint_path) {
  ToolConfig cfg = build_config(o);
  if (data_path.empty()) throw ConfigError("probe: --data FILE is required");
  if (checkpoint_path.empty()) throw ConfigError("probe: --checkpoint FILE is required");
  LabeledDataset ds = load_dataset(data_path);
  if (ds.labels.empty()) throw ConfigError("probe: labeled dataset required");
  Checkpoint ck = load_checkpoint(checkpoint_path);
  Matrix emb = embed_features(ck.momentum, ds.features);

  ProbeOptions popt;
  popt.iters = cfg.train.probe_iters;
  popt.lr = cfg.train.probe_lr;
  ProbeResult probe =
      linear_probe(emb, ds.labels, derive_seed(cfg.train.seed, streams::kProbe, 0), popt);
  std::cout << "probe top1 = " << probe.top1 << " (" << probe.train_count << " train / "
            << probe.test_count << " test)\n";
  if (!o.out.empty()) {
    fs::create_directories(o.out);
    nlohmann::json j;
    j["top1"] = probe.top1;
    j["per_class"] = probe.per_class;
    j["train_count"] = probe.train_count;
    j["test_count"] = probe.test_count;
    write_json_file((fs::path(o.out) / "probe.json").string(), j);
  }
  return 0;
}

int run_export_viz(const CommonOpts& o, const std::string& data_path,
                   const std::string& checkpoint_path, const std::string& protos_path,
                   bool svg) {
  if (data_path.empty()) throw ConfigError("export-viz: --data FILE is required");
  if (checkpoint_path.empty()) throw ConfigError("export-viz: --checkpoint FILE is required");
  if (o.out.empty()) throw ConfigError("export-viz: --out DIR is required");
  LabeledDataset ds = load_dataset(data_path);
  Checkpoint ck = load_checkpoint(checkpoint_path);

  TrainState state;
  state.online = ck.online;
  state.momentum.params = ck.momentum;

  PrototypeSet protos;
  bool have_protos = !protos_path.empty();
  if (have_protos) protos = load_prototypes(protos_path);

  VizExport viz = project_unit_circle(state, ds, have_protos ? &protos : nullptr);
  fs::create_directories(o.out);
  std::string csv = (fs::path(o.out) / "viz.csv").string();
  write_viz_csv(viz, csv);
  std::cout << "wrote " << csv << "\n";
  if (svg) {
    std::string svg_path = (fs::path(o.out) / "viz.svg").string();
    write_viz_svg(viz, svg_path);
    std::cout << "wrote " << svg_path << "\n";
  }
  return 0;
}

int run_sweep_cmd(const CommonOpts& o) {
  ToolConfig cfg = build_config(o);
  if (o.out.empty()) throw ConfigError("sweep: --out DIR is required");
  nlohmann::json cmp = run_sweep(cfg, o.out, /*verbose=*/true);
  if (cmp.contains("settings_pauc_lower_median")) {
    std::cout << "pauc lower median nemd in " << cmp["settings_pauc_lower_median"]
              << "/" << cmp["settings_total"] << " settings\n";
  }
  std::cout << "wrote " << (fs::path(o.out) / "comparison.json").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contrastive pretraining toolkit with prototype anchored objectives"};
  app.require_subcommand(1);

  CommonOpts gen_opts;
  auto* gen = app.add_subcommand("gen-data", "generate a Gaussian blob dataset");
  add_common(gen, gen_opts);
  gen->add_option("--out", gen_opts.out, "output dataset file");

  CommonOpts pre_opts;
  std::string pre_data, pre_resume;
  auto* pre = app.add_subcommand("pretrain", "run contrastive pretraining");
  add_common(pre, pre_opts);
  pre->add_option("--data", pre_data, "input dataset file");
  pre->add_option("--resume", pre_resume, "resume from a state.paucst file");
  pre->add_option("--out", pre_opts.out, "output run directory");

  CommonOpts nemd_opts;
  std::string nemd_data, nemd_ck, nemd_protos;
  auto* nemd = app.add_subcommand("nemd", "collapse metric of a checkpoint");
  add_common(nemd, nemd_opts);
  nemd->add_option("--data", nemd_data, "input dataset file");
  nemd->add_option("--checkpoint", nemd_ck, "checkpoint.pauck file");
  nemd->add_option("--protos", nemd_protos, "optional prototypes file");
  nemd->add_option("--out", nemd_opts.out, "optional output directory");

  CommonOpts probe_opts;
  std::string probe_data, probe_ck;
  auto* probe = app.add_subcommand("probe", "linear probe of a checkpoint");
  add_common(probe, probe_opts);
  probe->add_option("--data", probe_data, "input dataset file");
  probe->add_option("--checkpoint", probe_ck, "checkpoint.pauck file");
  probe->add_option("--out", probe_opts.out, "optional output directory");

  CommonOpts viz_opts;
  std::string viz_data, viz_ck, viz_protos;
  bool viz_svg = false;
  auto* viz = app.add_subcommand("export-viz", "unit circle embedding export");
  add_common(viz, viz_opts);
  viz->add_option("--data", viz_data, "input dataset file");
  viz->add_option("--checkpoint", viz_ck, "checkpoint.pauck file");
  viz->add_option("--protos", viz_protos, "optional prototypes file");
  viz->add_option("--out", viz_opts.out, "output directory");
  viz->add_flag("--svg", viz_svg, "also write an SVG scatter");

  CommonOpts sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "full mode comparison matrix");
  add_common(sweep, sweep_opts);
  sweep->add_option("--out", sweep_opts.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gen->parsed()) return run_gen_data(gen_opts);
    if (pre->parsed()) return run_pretrain(pre_opts, pre_data, pre_resume);
    if (nemd->parsed()) return run_nemd(nemd_opts, nemd_data, nemd_ck, nemd_protos);
    if (probe->parsed()) return run_probe(probe_opts, probe_data, probe_ck);
    if (viz->parsed()) return run_export_viz(viz_opts, viz_data, viz_ck, viz_protos, viz_svg);
    if (sweep->parsed()) return run_sweep_cmd(sweep_opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
