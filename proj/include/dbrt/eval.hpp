#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dbrt/debias.hpp"
#include "dbrt/model.hpp"
#include "dbrt/world.hpp"

namespace dbrt::eval {

// Rank of the truth candidate under descending dot-product score with the
// pessimistic tie rule: tied candidates count against the truth.
int rank_candidates(const Vec& query, const Mat& candidates, int truth_index);
int rank_from_scores(const Vec& scores, int truth_index);

struct MetricsReport {
  std::string direction = "image-to-recipe";
  std::string method = "model";
  double accuracy = -1.0;  // oracle accuracy; -1 when not applicable
  int pool_size = 0;
  int trials = 0;
  double medr = 0.0;  // mean over trials of per-trial medians
  std::vector<int> ks;
  std::vector<double> recall;  // aligned with ks
  bool has_classifier = false;
  double cls_precision = 0.0, cls_recall = 0.0, cls_f1 = 0.0;
  std::vector<std::vector<int>> trial_ranks;  // per-trial rank lists

  double recall_at(int k) const;
};

MetricsReport compute_metrics(const std::vector<std::vector<int>>& ranks_per_trial,
                              const std::vector<int>& ks);

struct EvalParams {
  int pool_size = 1000;
  int trials = 10;
  std::vector<int> ks = {1, 5, 10};
  uint64_t seed = 99;
};

// Paired test-pool embeddings plus the per-item metadata the oracle and
// text-match baselines need.
struct PoolEmbeddings {
  Mat images;    // N x d, raw e_I
  Mat recipes;   // N x d, e_R
  std::vector<int> recipe_ids;                // dataset recipe index per item
  std::vector<std::vector<int>> truth_sets;   // dictionary indices per item
  std::vector<uint8_t> held_out;              // category held out of training
};

enum class EmbedMode { Raw, Debias };

PoolEmbeddings embed_pool(const Model& m, const world::PairedDataset& ds,
                          world::Split split, double threshold,
                          EmbedMode mode);

// Per-trial sampling of pool_size pairs without replacement (per-trial seed
// streams), ranking every query of one modality against the sampled
// candidates of the other. `query_filter`, when given, restricts which
// sampled queries contribute ranks (e.g. held-out categories only).
MetricsReport sampled_eval(const Mat& query_side, const Mat& candidate_side,
                           const EvalParams& params,
                           const std::string& direction,
                           const std::vector<uint8_t>* query_filter = nullptr);

// Ranks of every query against all candidates (truth = same row index),
// without sampling. Used for the identity-fallback check and rank-delta
// reports.
std::vector<int> pool_ranks(const Mat& queries, const Mat& candidates);

// Substitution-noise oracle: each truth ingredient is kept with probability
// `accuracy`, otherwise replaced by a distinct random dictionary entry not in
// the truth set; the surviving set gets uniform probabilities.
debias::IngredientDistribution simulate_oracle_predictions(
    const std::vector<int>& truth_set, double accuracy, int dict_size,
    Rng& rng);

struct SweepRow {
  std::string method;      // "debias-oracle", "baseline", "text-match"
  double accuracy = -1.0;  // -1 for the baseline row
  MetricsReport report;    // seed-averaged
};

struct OracleSweepConfig {
  std::vector<double> accuracies = {0.2, 0.4, 0.6, 0.8, 1.0};
  int n_seeds = 5;
  uint64_t seed = 1234;
  bool recall_only = false;  // drop-without-substitution variant
};

// For every accuracy: replace the classifier output with the simulated
// predictor, rebuild the debiased embeddings, and evaluate; plus the
// accuracy-independent no-debias baseline row and a text-match row per
// accuracy. Reports are averaged over the oracle seeds.
std::vector<SweepRow> oracle_sweep(const PoolEmbeddings& pool,
                                   const debias::IngredientDictionary& dict,
                                   const OracleSweepConfig& cfg,
                                   const EvalParams& params,
                                   const std::string& direction = "image-to-recipe");

// Overlap-count ranking: score(candidate) = |predicted ∩ candidate set|.
int text_match_rank(const std::vector<int>& predicted,
                    const std::vector<std::vector<int>>& candidate_sets,
                    int truth_index);

struct ClassifierMetrics {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Micro-averaged over all (sample, label) decisions at the threshold.
ClassifierMetrics classifier_metrics(const std::vector<Vec>& probs,
                                     const std::vector<Vec>& targets,
                                     double threshold);

}  // namespace dbrt::eval
