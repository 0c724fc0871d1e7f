#include "pauc/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <thread>

#include "pauc/evalkit.hpp"

namespace pauc {

namespace {

namespace fs = std::filesystem;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << text;
  out.close();
  if (!out) throw IoError("short write: " + path);
}

double median(std::vector<double> v) {
  if (v.empty()) throw Error("median: empty input");
  std::sort(v.begin(), v.end());
  size_t mid = v.size() / 2;
  if (v.size() % 2 == 1) return v[mid];
  return 0.5 * (v[mid - 1] + v[mid]);
}

}  // namespace

nlohmann::json run_single(const TrainConfig& cfg, const LabeledDataset& ds,
                          const std::string& out_dir) {
  fs::create_directories(out_dir);
  TrainState state = init_train_state(cfg, static_cast<int>(ds.features.cols()));
  std::vector<std::string> lines;
  pretrain(state, ds, cfg, lines);

  std::string metrics;
  for (const auto& l : lines) {
    metrics += l;
    metrics += "\n";
  }
  write_text((fs::path(out_dir) / "metrics.jsonl").string(), metrics);

  save_state(state, (fs::path(out_dir) / "state.paucst").string());
  Checkpoint ck;
  ck.online = state.online;
  ck.momentum = state.momentum.params;
  ck.opt_buffers.weights = state.opt.weight_buf;
  ck.opt_buffers.biases = state.opt.bias_buf;
  save_checkpoint(ck, (fs::path(out_dir) / "checkpoint.pauck").string());
  if (state.has_protos) {
    save_prototypes(state.protos, (fs::path(out_dir) / "protos.paucps").string());
  }
  return evaluate_run(state, ds, cfg, out_dir);
}

nlohmann::json run_sweep(const ToolConfig& cfg, const std::string& out_dir, bool verbose) {
  const SweepPlan& plan = cfg.sweep;
  if (plan.classes.empty()) throw ConfigError("sweep.classes must not be empty");
  if (plan.seeds.empty()) throw ConfigError("sweep.seeds must not be empty");
  if (plan.modes.empty()) throw ConfigError("sweep.modes must not be empty");
  if (plan.jobs < 1) throw ConfigError("sweep.jobs must be >= 1");
  if (plan.samples_per_class < 1) throw ConfigError("sweep.samples_per_class must be >= 1");
  for (int c : plan.classes) {
    if (c < 2) throw ConfigError("sweep.classes entries must be >= 2");
  }

  fs::create_directories(out_dir);
  fs::create_directories(fs::path(out_dir) / "datasets");
  write_text((fs::path(out_dir) / "sweep_config.txt").string(), config_to_text(cfg));

  // Datasets are independent of mode: both modes of a cell train on the
  // exact same samples.
  std::map<std::pair<int, uint64_t>, LabeledDataset> datasets;
  for (uint64_t s : plan.seeds) {
    for (int c : plan.classes) {
      BlobSpec spec = cfg.data;
      spec.num_classes = c;
      spec.samples_per_class = plan.samples_per_class;
      spec.input_dim = plan.input_dim;
      spec.cluster_std = plan.cluster_std;
      spec.seed = derive_seed(s, streams::kData, static_cast<uint64_t>(c));
      LabeledDataset ds = generate_blobs(spec);
      std::string name = "C" + std::to_string(c) + "_seed" + std::to_string(s) + ".paucds";
      save_dataset(ds, (fs::path(out_dir) / "datasets" / name).string());
      datasets.emplace(std::make_pair(c, s), std::move(ds));
    }
  }

  struct Job {
    std::string mode;
    int classes = 0;
    uint64_t seed = 0;
    std::string dir;
  };
  std::vector<Job> jobs;
  for (const auto& mode : plan.modes) {
    for (int c : plan.classes) {
      for (uint64_t s : plan.seeds) {
        Job j;
        j.mode = mode;
        j.classes = c;
        j.seed = s;
        j.dir = (fs::path(out_dir) / (mode + "_C" + std::to_string(c) + "_seed" +
                                      std::to_string(s)))
                    .string();
        jobs.push_back(std::move(j));
      }
    }
  }

  std::vector<nlohmann::json> reports(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());
  std::atomic<size_t> next{0};
  std::atomic<size_t> done{0};
  std::mutex io_mutex;

  auto worker = [&]() {
    for (;;) {
      size_t idx = next.fetch_add(1);
      if (idx >= jobs.size()) return;
      const Job& job = jobs[idx];
      try {
        TrainConfig tc = cfg.train;
        tc.mode = job.mode;
        tc.seed = derive_seed(job.seed, streams::kRunSeed, static_cast<uint64_t>(job.classes));
        tc.cluster_k.clear();  // granularities track the cell's class count
        reports[idx] = run_single(tc, datasets.at({job.classes, job.seed}), job.dir);
      } catch (...) {
        failures[idx] = std::current_exception();
      }
      size_t finished = done.fetch_add(1) + 1;
      if (verbose) {
        std::lock_guard<std::mutex> lock(io_mutex);
        std::cout << "[" << finished << "/" << jobs.size() << "] " << job.dir
                  << (failures[idx] ? " FAILED" : "") << "\n"
                  << std::flush;
      }
    }
  };

  int width = std::min<int>(plan.jobs, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int t = 0; t < width; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  for (size_t i = 0; i < jobs.size(); ++i) {
    if (failures[i]) std::rethrow_exception(failures[i]);
  }

  nlohmann::json comparison;
  comparison["classes"] = plan.classes;
  comparison["modes"] = plan.modes;
  nlohmann::json seeds_json = nlohmann::json::array();
  for (uint64_t s : plan.seeds) seeds_json.push_back(s);
  comparison["seeds"] = seeds_json;

  nlohmann::json runs = nlohmann::json::array();
  for (size_t i = 0; i < jobs.size(); ++i) {
    nlohmann::json r;
    r["mode"] = jobs[i].mode;
    r["classes"] = jobs[i].classes;
    r["seed"] = jobs[i].seed;
    r["dir"] = fs::path(jobs[i].dir).filename().string();
    r["nemd_at_classes"] = reports[i]["nemd"][std::to_string(jobs[i].classes)];
    r["probe_top1"] = reports[i]["probe_top1"];
    runs.push_back(std::move(r));
  }
  comparison["runs"] = runs;

  bool both = std::count(plan.modes.begin(), plan.modes.end(), "pauc") &&
              std::count(plan.modes.begin(), plan.modes.end(), "pcl-baseline");
  if (both) {
    auto report_of = [&](const std::string& mode, int c, uint64_t s) -> const nlohmann::json& {
      for (size_t i = 0; i < jobs.size(); ++i) {
        if (jobs[i].mode == mode && jobs[i].classes == c && jobs[i].seed == s) {
          return reports[i];
        }
      }
      throw Error("run_sweep: missing report");
    };

    nlohmann::json by_classes;
    std::map<uint64_t, int> per_seed_wins;
    int settings_pauc_lower_median = 0;
    for (int c : plan.classes) {
      std::string ck = std::to_string(c);
      nlohmann::json cell;
      std::vector<double> nemd_pauc, nemd_pcl, probe_pauc, probe_pcl;
      nlohmann::json per_seed;
      for (uint64_t s : plan.seeds) {
        double np = report_of("pauc", c, s)["nemd"][ck].get<double>();
        double nb = report_of("pcl-baseline", c, s)["nemd"][ck].get<double>();
        nemd_pauc.push_back(np);
        nemd_pcl.push_back(nb);
        probe_pauc.push_back(report_of("pauc", c, s)["probe_top1"].get<double>());
        probe_pcl.push_back(report_of("pcl-baseline", c, s)["probe_top1"].get<double>());
        bool lower = np < nb;
        per_seed[std::to_string(s)] = {{"nemd_pauc", np},
                                       {"nemd_pcl", nb},
                                       {"pauc_lower", lower}};
        per_seed_wins.try_emplace(s, 0);
        if (lower) per_seed_wins[s]++;
      }
      cell["per_seed"] = per_seed;
      cell["median_nemd_pauc"] = median(nemd_pauc);
      cell["median_nemd_pcl"] = median(nemd_pcl);
      cell["pauc_lower_median"] = median(nemd_pauc) < median(nemd_pcl);
      cell["median_probe_pauc"] = median(probe_pauc);
      cell["median_probe_pcl"] = median(probe_pcl);
      if (cell["pauc_lower_median"].get<bool>()) settings_pauc_lower_median++;
      by_classes[ck] = cell;
    }
    comparison["by_classes"] = by_classes;

    nlohmann::json wins;
    for (uint64_t s : plan.seeds) {
      wins[std::to_string(s)] = per_seed_wins.count(s) ? per_seed_wins[s] : 0;
    }
    comparison["per_seed_wins"] = wins;
    comparison["settings_total"] = static_cast<int>(plan.classes.size());
    comparison["settings_pauc_lower_median"] = settings_pauc_lower_median;
  }

  write_text((fs::path(out_dir) / "comparison.json").string(), comparison.dump(2) + "\n");
  return comparison;
}

}  // namespace pauc
