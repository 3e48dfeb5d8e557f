#include "dbrt/config.hpp"

#include <set>

namespace dbrt {

namespace {

// Tracks which keys were consumed; anything left over is a hard error.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

  template <typename T>
  void get(const char* key, T& out) {
    known_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("bad value for " + path_ + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    known_.insert(key);
    if (!j_.contains(key)) return nullptr;
    if (!j_.at(key).is_object())
      throw ConfigError("expected object at " + path_ + key);
    return &j_.at(key);
  }

  void finish() {
    for (const auto& [k, v] : j_.items())
      if (!known_.count(k))
        throw ConfigError("unknown config key: " + path_ + k);
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> known_;
};

void parse_world(const json& j, world::WorldConfig& c) {
  Section s(j, "world.");
  s.get("vocab_size", c.vocab_size);
  s.get("d_app", c.d_app);
  s.get("zipf_s", c.zipf_s);
  s.get("vis_lo", c.vis_lo);
  s.get("vis_hi", c.vis_hi);
  s.get("min_ingredients", c.min_ingredients);
  s.get("max_ingredients", c.max_ingredients);
  s.get("n_actions", c.n_actions);
  s.get("regions", c.regions);
  s.get("d_region", c.d_region);
  s.get("noise_scale", c.noise_scale);
  s.get("subset_prob", c.subset_prob);
  s.get("style", c.style);
  s.get("prominence_boost", c.prominence_boost);
  s.get("dict_id_range", c.dict_id_range);
  s.get("unique_dict_sets", c.unique_dict_sets);
  s.get("train_recipes", c.train_recipes);
  s.get("val_recipes", c.val_recipes);
  s.get("test_recipes", c.test_recipes);
  s.get("image_multiplicity", c.image_multiplicity);
  s.get("holdout_fraction", c.holdout_fraction);
  s.finish();
}

void parse_train(const json& j, train::TrainConfig& c) {
  Section s(j, "train.");
  s.get("d_joint", c.d_joint);
  s.get("d_section", c.d_section);
  s.get("d_hidden", c.d_hidden);
  s.get("attn_heads", c.attn_heads);
  s.get("cls_layers", c.cls_layers);
  s.get("cls_heads", c.cls_heads);
  s.get("lr_stage1", c.lr_stage1);
  s.get("lr_stage2", c.lr_stage2);
  s.get("batch_size", c.batch_size);
  s.get("epochs_stage1", c.epochs_stage1);
  s.get("epochs_stage2", c.epochs_stage2);
  s.get("margin", c.margin);
  s.get("lambda_cls", c.lambda_cls);
  s.get("gamma_pos", c.gamma_pos);
  s.get("gamma_neg", c.gamma_neg);
  s.get("dictionary_size", c.dictionary_size);
  s.get("threshold", c.threshold);
  s.get("adam_beta1", c.adam_beta1);
  s.get("adam_beta2", c.adam_beta2);
  s.get("adam_eps", c.adam_eps);
  s.get("seed", c.seed);
  s.get("val_pool", c.val_pool);
  s.finish();
}

void parse_eval(const json& j, EvalConfig& c) {
  Section s(j, "eval.");
  s.get("pool_size", c.pool_size);
  s.get("trials", c.trials);
  s.get("ks", c.ks);
  s.get("directions", c.directions);
  s.get("seed", c.seed);
  s.finish();
}

void parse_oracle(const json& j, OracleConfig& c) {
  Section s(j, "oracle.");
  s.get("accuracies", c.accuracies);
  s.get("seeds", c.seeds);
  s.get("seed", c.seed);
  s.get("recall_only", c.recall_only);
  s.finish();
}

}  // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config root must be a JSON object");
  ExperimentConfig cfg;
  Section s(j, "");
  s.get("seed", cfg.seed);
  s.get("out_dir", cfg.out_dir);
  if (const json* w = s.child("world")) parse_world(*w, cfg.world);
  if (const json* t = s.child("train")) parse_train(*t, cfg.train);
  if (const json* e = s.child("eval")) parse_eval(*e, cfg.eval);
  if (const json* o = s.child("oracle")) parse_oracle(*o, cfg.oracle);
  s.finish();
  cfg.validate();
  return cfg;
}

json ExperimentConfig::to_json() const {
  json j;
  j["seed"] = seed;
  j["out_dir"] = out_dir;
  j["world"] = {{"vocab_size", world.vocab_size},
                {"d_app", world.d_app},
                {"zipf_s", world.zipf_s},
                {"vis_lo", world.vis_lo},
                {"vis_hi", world.vis_hi},
                {"min_ingredients", world.min_ingredients},
                {"max_ingredients", world.max_ingredients},
                {"n_actions", world.n_actions},
                {"regions", world.regions},
                {"d_region", world.d_region},
                {"noise_scale", world.noise_scale},
                {"subset_prob", world.subset_prob},
                {"style", world.style},
                {"prominence_boost", world.prominence_boost},
                {"dict_id_range", world.dict_id_range},
                {"unique_dict_sets", world.unique_dict_sets},
                {"train_recipes", world.train_recipes},
                {"val_recipes", world.val_recipes},
                {"test_recipes", world.test_recipes},
                {"image_multiplicity", world.image_multiplicity},
                {"holdout_fraction", world.holdout_fraction}};
  j["train"] = {{"d_joint", train.d_joint},
                {"d_section", train.d_section},
                {"d_hidden", train.d_hidden},
                {"attn_heads", train.attn_heads},
                {"cls_layers", train.cls_layers},
                {"cls_heads", train.cls_heads},
                {"lr_stage1", train.lr_stage1},
                {"lr_stage2", train.lr_stage2},
                {"batch_size", train.batch_size},
                {"epochs_stage1", train.epochs_stage1},
                {"epochs_stage2", train.epochs_stage2},
                {"margin", train.margin},
                {"lambda_cls", train.lambda_cls},
                {"gamma_pos", train.gamma_pos},
                {"gamma_neg", train.gamma_neg},
                {"dictionary_size", train.dictionary_size},
                {"threshold", train.threshold},
                {"adam_beta1", train.adam_beta1},
                {"adam_beta2", train.adam_beta2},
                {"adam_eps", train.adam_eps},
                {"seed", train.seed},
                {"val_pool", train.val_pool}};
  j["eval"] = {{"pool_size", eval.pool_size},
               {"trials", eval.trials},
               {"ks", eval.ks},
               {"directions", eval.directions},
               {"seed", eval.seed}};
  j["oracle"] = {{"accuracies", oracle.accuracies},
                 {"seeds", oracle.seeds},
                 {"seed", oracle.seed},
                 {"recall_only", oracle.recall_only}};
  return j;
}

void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& msg) { throw ConfigError(msg); };
  if (world.vocab_size < 8) fail("world.vocab_size: must be >= 8");
  if (world.d_app < 4) fail("world.d_app: must be >= 4");
  if (world.zipf_s <= 0) fail("world.zipf_s: must be positive");
  if (world.min_ingredients < 3 || world.max_ingredients > 10 ||
      world.min_ingredients > world.max_ingredients)
    fail("world.min_ingredients/max_ingredients: range must lie in [3,10]");
  if (world.max_ingredients > world.vocab_size)
    fail("world.max_ingredients: exceeds vocabulary size");
  if (world.style != "orthogonal" && world.style != "identity")
    fail("world.style: must be 'orthogonal' or 'identity'");
  if (world.style == "orthogonal" && world.d_region < world.d_app)
    fail("world.d_region: must be >= world.d_app for the orthogonal style");
  if (world.holdout_fraction < 0 || world.holdout_fraction >= 1)
    fail("world.holdout_fraction: must lie in [0,1)");
  if (world.dict_id_range < 1 || world.dict_id_range > world.vocab_size)
    fail("world.dict_id_range: must lie in [1, vocab_size]");
  if (world.image_multiplicity < 1) fail("world.image_multiplicity: must be >= 1");
  if (train.dictionary_size > world.vocab_size)
    fail("train.dictionary_size: exceeds world.vocab_size");
  if (train.d_hidden % train.attn_heads != 0)
    fail("train.d_hidden: must be divisible by train.attn_heads");
  if (train.d_hidden % train.cls_heads != 0)
    fail("train.d_hidden: must be divisible by train.cls_heads");
  try {
    train.validate();
  } catch (const InvalidParameter& e) {
    fail(e.what());
  }
  if (eval.pool_size < 1) fail("eval.pool_size: must be >= 1");
  if (eval.pool_size > world.test_recipes * world.image_multiplicity)
    fail("eval.pool_size: exceeds the test pool");
  if (eval.trials < 1) fail("eval.trials: must be >= 1");
  if (eval.ks.empty()) fail("eval.ks: must not be empty");
  for (const auto& d : eval.directions)
    if (d != "image-to-recipe" && d != "recipe-to-image")
      fail("eval.directions: must be 'image-to-recipe' or 'recipe-to-image'");
  for (double a : oracle.accuracies)
    if (a < 0 || a > 1) fail("oracle.accuracies: values must lie in [0,1]");
  if (oracle.seeds < 1) fail("oracle.seeds: must be >= 1");
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override must look like section.key=value: " +
                      assignment);
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);

  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;  // unquoted strings
  }

  json* node = &doc;
  size_t begin = 0;
  while (true) {
    const size_t dot = path.find('.', begin);
    const std::string key = path.substr(begin, dot - begin);
    if (key.empty()) throw ConfigError("bad override path: " + path);
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    begin = dot + 1;
  }
}

}  // namespace dbrt
