#pragma once

#include <string>

#include "json.hpp"

#include "pauc/trainkit.hpp"

namespace pauc {

// One full pretrain plus evaluation into out_dir. Writes metrics.jsonl,
// checkpoint.pauck, state.paucst, protos.paucps (when prototypes exist),
// viz.csv and report.json. Returns the report.
nlohmann::json run_single(const TrainConfig& cfg, const LabeledDataset& ds,
                          const std::string& out_dir);

// Comparison matrix over sweep.classes x sweep.seeds x sweep.modes. One
// dataset per (classes, seed) cell is generated up front and shared by all
// modes, so mode comparisons see identical data. Runs execute on a bounded
// pool of sweep.jobs threads; run directories are named
// <mode>_C<classes>_seed<seed>. Writes out_dir/comparison.json and returns
// it. Identical configs produce byte-identical logs and reports.
nlohmann::json run_sweep(const ToolConfig& cfg, const std::string& out_dir, bool verbose);

}  // namespace pauc
