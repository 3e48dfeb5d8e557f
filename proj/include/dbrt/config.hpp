#pragma once

#include <string>
#include <vector>

#include "json.hpp"

#include "dbrt/train.hpp"
#include "dbrt/world.hpp"

namespace dbrt {

using json = nlohmann::json;

struct EvalConfig {
  int pool_size = 1000;
  int trials = 10;
  std::vector<int> ks = {1, 5, 10};
  std::vector<std::string> directions = {"image-to-recipe", "recipe-to-image"};
  uint64_t seed = 99;
};

struct OracleConfig {
  std::vector<double> accuracies = {0.2, 0.4, 0.6, 0.8, 1.0};
  int seeds = 5;
  uint64_t seed = 1234;
  bool recall_only = false;
};

// The full experiment description. Every field has a default; parsing rejects
// unknown keys with the offending path so config typos fail loudly.
struct ExperimentConfig {
  uint64_t seed = 42;  // dataset generation seed
  std::string out_dir = "runs/default";
  world::WorldConfig world;
  train::TrainConfig train;
  EvalConfig eval;
  OracleConfig oracle;

  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  void validate() const;
};

// Apply a dotted-path override such as "train.lambda_cls=0.01" onto a raw
// JSON document (values parsed as JSON when possible, else as strings).
void apply_override(json& doc, const std::string& assignment);

}  // namespace dbrt
