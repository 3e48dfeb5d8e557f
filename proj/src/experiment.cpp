#include "dbrt/experiment.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>

#include "dbrt/rng.hpp"

namespace dbrt::exp {

fs::path resolve_out_dir(const ExperimentConfig& cfg) {
  if (const char* root = std::getenv("DBRT_OUT_ROOT"))
    return fs::path(root) / cfg.out_dir;
  return fs::path(cfg.out_dir);
}

json metrics_to_json(const eval::MetricsReport& r, bool include_ranks) {
  json j;
  j["record"] = "metrics";
  j["direction"] = r.direction;
  j["method"] = r.method;
  if (r.accuracy >= 0.0) j["accuracy"] = r.accuracy;
  j["pool_size"] = r.pool_size;
  j["trials"] = r.trials;
  j["medR"] = r.medr;
  json recall = json::object();
  for (size_t i = 0; i < r.ks.size(); ++i)
    recall[std::to_string(r.ks[i])] = r.recall[i];
  j["recall"] = recall;
  if (r.has_classifier)
    j["classifier"] = {{"precision", r.cls_precision},
                       {"recall", r.cls_recall},
                       {"f1", r.cls_f1}};
  if (include_ranks) j["trial_ranks"] = r.trial_ranks;
  return j;
}

namespace {

void print_report_line(const eval::MetricsReport& r) {
  std::string acc = r.accuracy >= 0.0 ? [&] {
    char b[16];
    std::snprintf(b, sizeof b, "%.2f", r.accuracy);
    return std::string(b);
  }() : std::string("   -");
  std::printf("%-16s %-18s acc=%s  medR=%7.2f", r.method.c_str(),
              r.direction.c_str(), acc.c_str(), r.medr);
  for (size_t i = 0; i < r.ks.size(); ++i)
    std::printf("  R@%d=%.4f", r.ks[i], r.recall[i]);
  if (r.has_classifier)
    std::printf("  P=%.3f R=%.3f F1=%.3f", r.cls_precision, r.cls_recall,
                r.cls_f1);
  std::printf("\n");
}

class JsonlWriter {
 public:
  explicit JsonlWriter(const fs::path& file) : out_(file, std::ios::trunc) {
    if (!out_)
      throw MissingArtifactError("cannot open for write: " + file.string());
  }
  void write(const json& j) { out_ << j.dump() << "\n"; }

 private:
  std::ofstream out_;
};

void write_config(const fs::path& dir, const ExperimentConfig& cfg) {
  fs::create_directories(dir);
  io::save_json(dir / "config.json", cfg.to_json());
}

void write_history(const fs::path& file,
                   const std::vector<train::EpochRecord>& history) {
  JsonlWriter out(file);
  for (const auto& h : history) {
    json j{{"record", "epoch"},
           {"stage", h.stage},
           {"epoch", h.epoch},
           {"train_loss", h.train_loss},
           {"train_triplet", h.train_triplet},
           {"train_cls", h.train_cls},
           {"val_medR", h.val_medr},
           {"val_r1", h.val_r1}};
    if (h.stage == 2) {
      j["mean_selected"] = h.mean_selected;
      j["cls_precision"] = h.cls_precision;
      j["cls_recall"] = h.cls_recall;
      j["cls_f1"] = h.cls_f1;
    }
    out.write(j);
  }
}

eval::EvalParams eval_params(const ExperimentConfig& cfg) {
  eval::EvalParams p;
  p.pool_size = cfg.eval.pool_size;
  p.trials = cfg.eval.trials;
  p.ks = cfg.eval.ks;
  p.seed = cfg.eval.seed;
  return p;
}

Model load_model_or_throw(const fs::path& dir) {
  if (dir.empty())
    throw MissingArtifactError("a --model directory is required");
  return io::load_model(dir).model;
}

// Recall@1 as a percentage string for tables.
std::string pct(double x) {
  char b[16];
  std::snprintf(b, sizeof b, "%.1f", 100.0 * x);
  return b;
}

}  // namespace

fs::path cmd_gen_data(const ExperimentConfig& cfg) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = world::make_dataset(cfg.world, cfg.seed);
  io::save_dataset(out / "dataset", ds);
  std::printf("dataset: %zu recipes, %zu images, %zu held-out categories -> %s\n",
              ds.recipes.size(), ds.images.size(),
              ds.held_out_categories.size(),
              (out / "dataset").string().c_str());
  return out;
}

fs::path cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(opts.dataset_dir);

  const auto hook = [&](int stage, int epoch, const Model& m, train::Adam& adam) {
    char name[64];
    std::snprintf(name, sizeof name, "stage%d_epoch%03d", stage, epoch);
    io::save_model(out / "checkpoints" / name, const_cast<Model&>(m),
                   cfg.to_json(), stage, epoch, &adam);
  };

  std::vector<train::EpochRecord> history;
  Model stage1_model;
  if (opts.stage == "stage1" || opts.stage == "both") {
    auto s1 = train::train_stage1(ds, cfg.train, hook);
    history = s1.history;
    stage1_model = std::move(s1.model);
    io::save_model(out / "model_stage1", stage1_model, cfg.to_json(), 1,
                   cfg.train.epochs_stage1 - 1);
  } else {
    stage1_model = load_model_or_throw(opts.stage1_model_dir);
  }

  if (opts.stage == "stage2" || opts.stage == "both") {
    auto s2 = train::train_stage2(ds, stage1_model, cfg.train,
                                  !opts.no_debias, hook);
    for (const auto& h : s2.history) history.push_back(h);
    io::save_model(out / "model", s2.model, cfg.to_json(), 2,
                   cfg.train.epochs_stage2 - 1);
  }
  write_history(out / "history.jsonl", history);
  for (const auto& h : history)
    std::printf("stage %d epoch %3d  loss=%.4f  val medR=%.1f  val R@1=%.4f\n",
                h.stage, h.epoch, h.train_loss, h.val_medr, h.val_r1);
  return out;
}

fs::path cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opts) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(opts.dataset_dir);
  Model model = load_model_or_throw(opts.model_dir);

  const bool debias_on = model.has_debias && !opts.no_debias;
  auto pool = eval::embed_pool(model, ds, world::Split::Test,
                               cfg.train.threshold,
                               debias_on ? eval::EmbedMode::Debias
                                         : eval::EmbedMode::Raw);
  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});

  const auto params = eval_params(cfg);
  for (const auto& direction : cfg.eval.directions) {
    eval::MetricsReport r =
        direction == "image-to-recipe"
            ? eval::sampled_eval(pool.images, pool.recipes, params, direction)
            : eval::sampled_eval(pool.recipes, pool.images, params, direction);
    r.method = debias_on ? "debias" : "baseline";
    reports.write(metrics_to_json(r, opts.include_ranks));
    print_report_line(r);
  }
  return out;
}

fs::path cmd_oracle_sweep(const ExperimentConfig& cfg,
                          const fs::path& dataset_dir,
                          const fs::path& model_dir) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(dataset_dir);
  Model model = load_model_or_throw(model_dir);
  if (!model.has_debias)
    throw MissingArtifactError("oracle-sweep needs a stage-2 model with a dictionary");

  auto pool = eval::embed_pool(model, ds, world::Split::Test,
                               cfg.train.threshold, eval::EmbedMode::Raw);
  eval::OracleSweepConfig oc;
  oc.accuracies = cfg.oracle.accuracies;
  oc.n_seeds = cfg.oracle.seeds;
  oc.seed = cfg.oracle.seed;
  oc.recall_only = cfg.oracle.recall_only;

  auto rows = eval::oracle_sweep(pool, model.dict, oc, eval_params(cfg));

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  std::ofstream csv(out / "sweep.csv", std::ios::trunc);
  csv << "accuracy,medR,R@1,R@5,R@10,method\n";
  for (const auto& row : rows) {
    reports.write(metrics_to_json(row.report));
    char acc[16] = "";
    if (row.accuracy >= 0.0)
      std::snprintf(acc, sizeof acc, "%.3f", row.accuracy);
    char line[160];
    std::snprintf(line, sizeof line, "%s,%.4f,%.4f,%.4f,%.4f,%s", acc,
                  row.report.medr, row.report.recall_at(1),
                  row.report.recall_at(5), row.report.recall_at(10),
                  row.method.c_str());
    csv << line << "\n";
    print_report_line(row.report);
  }
  return out;
}

fs::path cmd_text_match_eval(const ExperimentConfig& cfg,
                             const fs::path& dataset_dir,
                             const fs::path& model_dir) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(dataset_dir);
  Model model = load_model_or_throw(model_dir);
  if (!model.has_debias)
    throw MissingArtifactError("text-match-eval needs a model with a dictionary");

  auto pool = eval::embed_pool(model, ds, world::Split::Test,
                               cfg.train.threshold, eval::EmbedMode::Raw);
  eval::OracleSweepConfig oc;
  oc.accuracies = cfg.oracle.accuracies;
  oc.n_seeds = cfg.oracle.seeds;
  oc.seed = cfg.oracle.seed;
  oc.recall_only = cfg.oracle.recall_only;
  auto rows = eval::oracle_sweep(pool, model.dict, oc, eval_params(cfg));

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  for (const auto& row : rows) {
    if (row.method != "text-match") continue;
    reports.write(metrics_to_json(row.report));
    print_report_line(row.report);
  }
  return out;
}

fs::path cmd_ablate_dict(const ExperimentConfig& cfg,
                         const AblateOptions& opts) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(opts.dataset_dir);

  Model stage1;
  if (opts.stage1_model_dir.empty()) {
    stage1 = train::train_stage1(ds, cfg.train).model;
    io::save_model(out / "model_stage1", stage1, cfg.to_json(), 1,
                   cfg.train.epochs_stage1 - 1);
  } else {
    stage1 = load_model_or_throw(opts.stage1_model_dir);
  }

  std::vector<world::Recipe> train_recipes;
  for (int r : ds.train_ids)
    train_recipes.push_back(ds.recipes[static_cast<size_t>(r)]);

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  std::ofstream csv(out / "ablate_dict.csv", std::ios::trunc);
  csv << "size,visible_only,precision,recall,f1,R@1,medR\n";
  std::printf("%-8s %-12s %-10s %-8s %-8s %-8s %s\n", "size", "visible_only",
              "precision", "recall", "f1", "R@1", "medR");

  for (int k : opts.sizes) {
    debias::IngredientDictionary dict =
        opts.visible_only
            ? debias::build_dictionary_filtered(stage1.recipe, train_recipes,
                                                k, ds.vocab,
                                                opts.vis_threshold)
            : debias::build_dictionary(stage1.recipe, train_recipes, k);
    auto trained = train::train_stage2(ds, stage1, cfg.train, true, nullptr,
                                       &dict);
    char name[32];
    std::snprintf(name, sizeof name, "model_k%d", k);
    io::save_model(out / name, trained.model, cfg.to_json(), 2,
                   cfg.train.epochs_stage2 - 1);

    auto pool = eval::embed_pool(trained.model, ds, world::Split::Test,
                                 cfg.train.threshold, eval::EmbedMode::Debias);
    auto r = eval::sampled_eval(pool.images, pool.recipes, eval_params(cfg),
                                "image-to-recipe");
    const auto& last = trained.history.back();
    r.method = "debias";
    r.has_classifier = true;
    r.cls_precision = last.cls_precision;
    r.cls_recall = last.cls_recall;
    r.cls_f1 = last.cls_f1;

    json j = metrics_to_json(r);
    j["dict_size"] = k;
    j["visible_only"] = opts.visible_only;
    reports.write(j);
    char line[160];
    std::snprintf(line, sizeof line, "%d,%d,%.4f,%.4f,%.4f,%.4f,%.2f", k,
                  opts.visible_only ? 1 : 0, last.cls_precision,
                  last.cls_recall, last.cls_f1, r.recall_at(1), r.medr);
    csv << line << "\n";
    std::printf("%-8d %-12d %-10s %-8s %-8s %-8s %.2f\n", k,
                opts.visible_only ? 1 : 0, pct(last.cls_precision).c_str(),
                pct(last.cls_recall).c_str(), pct(last.cls_f1).c_str(),
                pct(r.recall_at(1)).c_str(), r.medr);
  }
  return out;
}

fs::path cmd_zero_shot_eval(const ExperimentConfig& cfg,
                            const fs::path& dataset_dir,
                            const fs::path& model_dir) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(dataset_dir);
  if (ds.held_out_categories.empty())
    throw InvalidParameter(
        "zero-shot-eval: dataset has no held-out categories "
        "(set world.holdout_fraction > 0)");
  Model model = load_model_or_throw(model_dir);
  if (!model.has_debias)
    throw MissingArtifactError("zero-shot-eval needs a stage-2 model");

  auto raw = eval::embed_pool(model, ds, world::Split::Test,
                              cfg.train.threshold, eval::EmbedMode::Raw);
  auto deb = eval::embed_pool(model, ds, world::Split::Test,
                              cfg.train.threshold, eval::EmbedMode::Debias);

  const auto params = eval_params(cfg);
  auto base = eval::sampled_eval(raw.images, raw.recipes, params,
                                 "image-to-recipe", &raw.held_out);
  base.method = "baseline-zeroshot";
  auto with = eval::sampled_eval(deb.images, deb.recipes, params,
                                 "image-to-recipe", &deb.held_out);
  with.method = "debias-zeroshot";

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  reports.write(metrics_to_json(base));
  reports.write(metrics_to_json(with));
  print_report_line(base);
  print_report_line(with);
  return out;
}

fs::path cmd_sweep_lambda(const ExperimentConfig& cfg,
                          const fs::path& dataset_dir,
                          const fs::path& stage1_model_dir,
                          const std::vector<double>& lambdas) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(dataset_dir);

  Model stage1;
  if (stage1_model_dir.empty()) {
    stage1 = train::train_stage1(ds, cfg.train).model;
    io::save_model(out / "model_stage1", stage1, cfg.to_json(), 1,
                   cfg.train.epochs_stage1 - 1);
  } else {
    stage1 = load_model_or_throw(stage1_model_dir);
  }

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  std::ofstream csv(out / "sweep_lambda.csv", std::ios::trunc);
  csv << "lambda_cls,R@1,medR,f1\n";
  std::printf("%-12s %-8s %-8s %s\n", "lambda_cls", "R@1", "medR", "f1");

  for (double lam : lambdas) {
    train::TrainConfig tc = cfg.train;
    tc.lambda_cls = lam;
    auto trained = train::train_stage2(ds, stage1, tc, true);
    auto pool = eval::embed_pool(trained.model, ds, world::Split::Test,
                                 tc.threshold, eval::EmbedMode::Debias);
    auto r = eval::sampled_eval(pool.images, pool.recipes, eval_params(cfg),
                                "image-to-recipe");
    r.method = "debias";
    const auto& last = trained.history.back();
    json j = metrics_to_json(r);
    j["lambda_cls"] = lam;
    j["cls_f1"] = last.cls_f1;
    reports.write(j);
    char line[120];
    std::snprintf(line, sizeof line, "%g,%.4f,%.2f,%.4f", lam, r.recall_at(1),
                  r.medr, last.cls_f1);
    csv << line << "\n";
    std::printf("%-12g %-8s %-8.2f %.3f\n", lam, pct(r.recall_at(1)).c_str(),
                r.medr, last.cls_f1);
  }
  return out;
}

fs::path cmd_report(const ExperimentConfig& cfg, const fs::path& dataset_dir,
                    const fs::path& model_dir) {
  const fs::path out = resolve_out_dir(cfg);
  write_config(out, cfg);
  auto ds = io::load_dataset(dataset_dir);
  Model model = load_model_or_throw(model_dir);
  if (!model.has_debias)
    throw MissingArtifactError("report needs a stage-2 model");

  auto raw = eval::embed_pool(model, ds, world::Split::Test,
                              cfg.train.threshold, eval::EmbedMode::Raw);
  auto deb = eval::embed_pool(model, ds, world::Split::Test,
                              cfg.train.threshold, eval::EmbedMode::Debias);

  // Rank-delta table over a fixed pool: the first pool_size test items.
  const int n = static_cast<int>(raw.recipe_ids.size());
  const int pool_n = std::min(cfg.eval.pool_size, n);
  Mat rawQ = raw.images.topRows(pool_n);
  Mat rawC = raw.recipes.topRows(pool_n);
  Mat debQ = deb.images.topRows(pool_n);
  auto b0 = eval::pool_ranks(rawQ, rawC);
  auto w0 = eval::pool_ranks(debQ, rawC);

  std::ofstream csv(out / "rank_delta.csv", std::ios::trunc);
  csv << "query,recipe_id,baseline_rank,debiased_rank,delta\n";
  long improved = 0, worsened = 0;
  for (size_t q = 0; q < b0.size(); ++q) {
    const int delta = b0[q] - w0[q];
    if (delta > 0) ++improved;
    if (delta < 0) ++worsened;
    csv << q << "," << raw.recipe_ids[q] << "," << b0[q] << "," << w0[q] << ","
        << delta << "\n";
  }
  auto base = eval::compute_metrics({b0}, cfg.eval.ks);
  auto with = eval::compute_metrics({w0}, cfg.eval.ks);
  std::printf("rank-delta over %zu queries: improved=%ld worsened=%ld "
              "(baseline medR=%.1f, debiased medR=%.1f)\n",
              b0.size(), improved, worsened, base.medr, with.medr);

  JsonlWriter reports(out / "reports.jsonl");
  reports.write(json{{"record", "config"}, {"config", cfg.to_json()}});
  base.method = "baseline";
  base.direction = "image-to-recipe";
  with.method = "debias";
  with.direction = "image-to-recipe";
  reports.write(metrics_to_json(base));
  reports.write(metrics_to_json(with));
  return out;
}

}  // namespace dbrt::exp
