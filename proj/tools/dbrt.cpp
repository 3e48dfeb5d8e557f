#include <cstdio>
#include <exception>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dbrt/experiment.hpp"

namespace {

using dbrt::ExperimentConfig;
using dbrt::json;

struct CommonArgs {
  std::string config_file;
  std::string out_dir;
  std::vector<std::string> overrides;
  long long seed = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("-c,--config", args.config_file, "experiment config (JSON)")
      ->check(CLI::ExistingFile);
  cmd->add_option("-o,--out", args.out_dir, "output directory");
  cmd->add_option("--set", args.overrides,
                  "dotted config override, e.g. train.lambda_cls=0.01");
  cmd->add_option("--seed", args.seed, "dataset seed override");
}

ExperimentConfig resolve_config(const CommonArgs& args) {
  json doc = json::object();
  if (!args.config_file.empty()) {
    std::ifstream in(args.config_file);
    try {
      doc = json::parse(in);
    } catch (const json::parse_error& e) {
      throw dbrt::ConfigError(std::string("cannot parse config: ") + e.what());
    }
  }
  for (const auto& ov : args.overrides) dbrt::apply_override(doc, ov);
  if (args.seed >= 0) doc["seed"] = args.seed;
  if (!args.out_dir.empty()) doc["out_dir"] = args.out_dir;
  return ExperimentConfig::from_json(doc);
}

std::vector<double> parse_double_list(const std::string& csv) {
  std::vector<double> out;
  size_t begin = 0;
  while (begin <= csv.size()) {
    const size_t comma = csv.find(',', begin);
    const std::string tok = csv.substr(begin, comma - begin);
    if (!tok.empty()) out.push_back(std::stod(tok));
    if (comma == std::string::npos) break;
    begin = comma + 1;
  }
  return out;
}

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  for (double v : parse_double_list(csv)) out.push_back(static_cast<int>(v));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"dbrt: a desk-scale laboratory for dictionary-based debiasing "
               "of cross-modal recipe retrieval"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string dataset_dir, model_dir, stage = "both";
  std::string accuracies, sizes, lambdas;
  bool no_debias = false, visible_only = false;
  double vis_threshold = 0.5;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  add_common(gen, args);

  auto* tr = app.add_subcommand("train", "train stage1/stage2/both");
  add_common(tr, args);
  tr->add_option("--data", dataset_dir, "dataset directory")->required();
  tr->add_option("--stage", stage, "stage1 | stage2 | both");
  tr->add_option("--model", model_dir, "stage-1 model (for --stage stage2)");
  tr->add_flag("--no-debias", no_debias,
               "stage-2 continuation without the debias module");

  auto* ev = app.add_subcommand("eval", "retrieval metrics on the test split");
  add_common(ev, args);
  ev->add_option("--data", dataset_dir, "dataset directory")->required();
  ev->add_option("--model", model_dir, "model directory")->required();
  ev->add_flag("--no-debias", no_debias, "score with raw e_I even if debiased");

  auto* osw = app.add_subcommand("oracle-sweep",
                                 "simulated-classifier accuracy sweep");
  add_common(osw, args);
  osw->add_option("--data", dataset_dir, "dataset directory")->required();
  osw->add_option("--model", model_dir, "stage-2 model directory")->required();
  osw->add_option("--accuracies", accuracies, "comma list, e.g. 0.2,0.6,1.0");

  auto* tm = app.add_subcommand("text-match-eval",
                                "ingredient-overlap ranking baseline");
  add_common(tm, args);
  tm->add_option("--data", dataset_dir, "dataset directory")->required();
  tm->add_option("--model", model_dir, "model directory (dictionary source)")
      ->required();
  tm->add_option("--accuracies", accuracies, "comma list of accuracies");

  auto* ab = app.add_subcommand("ablate-dict", "dictionary size ablation");
  add_common(ab, args);
  ab->add_option("--data", dataset_dir, "dataset directory")->required();
  ab->add_option("--model", model_dir, "stage-1 model (trained if omitted)");
  ab->add_option("--sizes", sizes, "comma list of dictionary sizes");
  ab->add_flag("--visible-only", visible_only,
               "exclude low-visibility ingredients from the dictionary");
  ab->add_option("--vis-threshold", vis_threshold,
                 "base-visibility cutoff for --visible-only");

  auto* zs = app.add_subcommand("zero-shot-eval",
                                "retrieval restricted to held-out categories");
  add_common(zs, args);
  zs->add_option("--data", dataset_dir, "dataset directory")->required();
  zs->add_option("--model", model_dir, "stage-2 model directory")->required();

  auto* sl = app.add_subcommand("sweep-lambda",
                                "classification-weight sweep for stage 2");
  add_common(sl, args);
  sl->add_option("--data", dataset_dir, "dataset directory")->required();
  sl->add_option("--model", model_dir, "stage-1 model (trained if omitted)");
  sl->add_option("--lambdas", lambdas, "comma list, e.g. 1e-2,1e-3,1e-4");

  auto* rp = app.add_subcommand("report", "per-query rank-delta tables");
  add_common(rp, args);
  rp->add_option("--data", dataset_dir, "dataset directory")->required();
  rp->add_option("--model", model_dir, "stage-2 model directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig cfg = resolve_config(args);
    if (!accuracies.empty()) cfg.oracle.accuracies = parse_double_list(accuracies);
    cfg.validate();

    if (gen->parsed()) {
      dbrt::exp::cmd_gen_data(cfg);
    } else if (tr->parsed()) {
      dbrt::exp::TrainOptions opts;
      opts.stage = stage;
      opts.dataset_dir = dataset_dir;
      opts.stage1_model_dir = model_dir;
      opts.no_debias = no_debias;
      dbrt::exp::cmd_train(cfg, opts);
    } else if (ev->parsed()) {
      dbrt::exp::EvalOptions opts;
      opts.dataset_dir = dataset_dir;
      opts.model_dir = model_dir;
      opts.no_debias = no_debias;
      dbrt::exp::cmd_eval(cfg, opts);
    } else if (osw->parsed()) {
      dbrt::exp::cmd_oracle_sweep(cfg, dataset_dir, model_dir);
    } else if (tm->parsed()) {
      dbrt::exp::cmd_text_match_eval(cfg, dataset_dir, model_dir);
    } else if (ab->parsed()) {
      dbrt::exp::AblateOptions opts;
      opts.dataset_dir = dataset_dir;
      opts.stage1_model_dir = model_dir;
      if (!sizes.empty()) opts.sizes = parse_int_list(sizes);
      opts.visible_only = visible_only;
      opts.vis_threshold = vis_threshold;
      dbrt::exp::cmd_ablate_dict(cfg, opts);
    } else if (zs->parsed()) {
      dbrt::exp::cmd_zero_shot_eval(cfg, dataset_dir, model_dir);
    } else if (sl->parsed()) {
      std::vector<double> ls = lambdas.empty()
                                   ? std::vector<double>{1e-2, 1e-3, 1e-4}
                                   : parse_double_list(lambdas);
      dbrt::exp::cmd_sweep_lambda(cfg, dataset_dir, model_dir, ls);
    } else if (rp->parsed()) {
      dbrt::exp::cmd_report(cfg, dataset_dir, model_dir);
    }
  } catch (const dbrt::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
