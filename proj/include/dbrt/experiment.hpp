#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dbrt/config.hpp"
#include "dbrt/eval.hpp"
#include "dbrt/io.hpp"

namespace dbrt::exp {

namespace fs = std::filesystem;

// Final output directory: $DBRT_OUT_ROOT/<out_dir> when the env var is set.
fs::path resolve_out_dir(const ExperimentConfig& cfg);

json metrics_to_json(const eval::MetricsReport& r, bool include_ranks = false);

// Subcommand entry points. Each writes into its own output directory
// (config.json always included) and returns that directory.
fs::path cmd_gen_data(const ExperimentConfig& cfg);

struct TrainOptions {
  std::string stage = "both";  // stage1 | stage2 | both
  fs::path dataset_dir;
  fs::path stage1_model_dir;  // required for stage == stage2
  bool no_debias = false;     // stage-2 continuation baseline
  fs::path resume_dir;        // optional checkpoint to resume from
};
fs::path cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts);

struct EvalOptions {
  fs::path dataset_dir;
  fs::path model_dir;
  bool no_debias = false;
  bool include_ranks = true;
};
fs::path cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opts);

fs::path cmd_oracle_sweep(const ExperimentConfig& cfg,
                          const fs::path& dataset_dir,
                          const fs::path& model_dir);

fs::path cmd_text_match_eval(const ExperimentConfig& cfg,
                             const fs::path& dataset_dir,
                             const fs::path& model_dir);

struct AblateOptions {
  fs::path dataset_dir;
  fs::path stage1_model_dir;  // trained fresh when empty
  std::vector<int> sizes = {16, 64, 128};
  bool visible_only = false;
  double vis_threshold = 0.5;
};
fs::path cmd_ablate_dict(const ExperimentConfig& cfg,
                         const AblateOptions& opts);

fs::path cmd_zero_shot_eval(const ExperimentConfig& cfg,
                            const fs::path& dataset_dir,
                            const fs::path& model_dir);

fs::path cmd_sweep_lambda(const ExperimentConfig& cfg,
                          const fs::path& dataset_dir,
                          const fs::path& stage1_model_dir,
                          const std::vector<double>& lambdas);

fs::path cmd_report(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                    const fs::path& model_dir);

}  // namespace dbrt::exp
