#include "dbrt/eval.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include "dbrt/rng.hpp"

namespace dbrt::eval {

int rank_from_scores(const Vec& scores, int truth_index) {
  if (truth_index < 0 || truth_index >= scores.size())
    throw InvalidParameter("rank: truth index out of range");
  const double st = scores[truth_index];
  int rank = 1;
  for (Eigen::Index j = 0; j < scores.size(); ++j)
    if (j != truth_index && scores[j] >= st) ++rank;
  return rank;
}

int rank_candidates(const Vec& query, const Mat& candidates, int truth_index) {
  if (candidates.cols() != query.size())
    throw ShapeError("rank_candidates: dimension mismatch");
  Vec scores = candidates * query;
  return rank_from_scores(scores, truth_index);
}

double MetricsReport::recall_at(int k) const {
  for (size_t i = 0; i < ks.size(); ++i)
    if (ks[i] == k) return recall[i];
  throw InvalidParameter("recall_at: k not reported");
}

namespace {

double median_of(std::vector<int> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  if (n % 2 == 1) return static_cast<double>(v[n / 2]);
  return 0.5 * (static_cast<double>(v[n / 2 - 1]) + static_cast<double>(v[n / 2]));
}

}  // namespace

MetricsReport compute_metrics(
    const std::vector<std::vector<int>>& ranks_per_trial,
    const std::vector<int>& ks) {
  if (ranks_per_trial.empty())
    throw InvalidParameter("compute_metrics: no trials");
  for (const auto& t : ranks_per_trial)
    if (t.empty()) throw InvalidParameter("compute_metrics: empty trial");

  MetricsReport r;
  r.trials = static_cast<int>(ranks_per_trial.size());
  r.pool_size = static_cast<int>(ranks_per_trial.front().size());
  r.ks = ks;
  r.recall.assign(ks.size(), 0.0);

  double med_sum = 0.0;
  for (const auto& trial : ranks_per_trial) {
    med_sum += median_of(trial);
    for (size_t i = 0; i < ks.size(); ++i) {
      long hits = 0;
      for (int rank : trial)
        if (rank <= ks[i]) ++hits;
      r.recall[i] += static_cast<double>(hits) / static_cast<double>(trial.size());
    }
  }
  r.medr = med_sum / static_cast<double>(r.trials);
  for (auto& v : r.recall) v /= static_cast<double>(r.trials);
  r.trial_ranks = ranks_per_trial;
  return r;
}

PoolEmbeddings embed_pool(const Model& m, const world::PairedDataset& ds,
                          world::Split split, double threshold,
                          EmbedMode mode) {
  const auto items = ds.items(split);
  const int n = static_cast<int>(items.size());
  const int d = m.image.d_joint;

  PoolEmbeddings pool;
  pool.images.resize(n, d);
  pool.recipes.resize(n, d);
  pool.recipe_ids.reserve(items.size());
  pool.truth_sets.reserve(items.size());
  pool.held_out.reserve(items.size());

  std::unordered_set<int64_t> held(ds.held_out_categories.begin(),
                                   ds.held_out_categories.end());
  for (int i = 0; i < n; ++i) {
    const auto& [r_idx, img_idx] = items[static_cast<size_t>(i)];
    const auto& recipe = ds.recipes[static_cast<size_t>(r_idx)];
    const auto& image = ds.images[static_cast<size_t>(img_idx)];
    auto encI = enc::encode_image(m.image, image);
    Vec e = encI.e;
    if (mode == EmbedMode::Debias) {
      Vec p = debias::predict_ingredients(m.classifier, encI.region_codes);
      auto dist = debias::select_and_normalize(p, threshold);
      e = debias::debias_embedding(encI.e, m.dict, dist);
    }
    pool.images.row(i) = e.transpose();
    pool.recipes.row(i) = enc::encode_recipe(m.recipe, recipe).transpose();
    pool.recipe_ids.push_back(r_idx);
    pool.truth_sets.push_back(
        m.dict.size() > 0 ? debias::dictionary_ingredients(m.dict, recipe)
                          : std::vector<int>{});
    pool.held_out.push_back(held.count(recipe.category_id) ? 1 : 0);
  }
  return pool;
}

namespace {

// Per-trial sampled indices without replacement; each trial has its own
// derived stream, so results do not depend on how many trials run.
std::vector<int> trial_sample(int pool_n, int take, uint64_t seed, int trial) {
  std::vector<int> idx(static_cast<size_t>(pool_n));
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(seed, "trial", static_cast<uint64_t>(trial)));
  for (int i = 0; i < take; ++i) {
    const int j = i + static_cast<int>(rng.below(
                          static_cast<uint64_t>(pool_n - i)));
    std::swap(idx[static_cast<size_t>(i)], idx[static_cast<size_t>(j)]);
  }
  idx.resize(static_cast<size_t>(take));
  return idx;
}

std::vector<int> ranks_of_pool(const Mat& queries, const Mat& candidates,
                               const std::vector<uint8_t>* filter) {
  Mat S = queries * candidates.transpose();
  std::vector<int> ranks;
  ranks.reserve(static_cast<size_t>(queries.rows()));
  for (Eigen::Index q = 0; q < S.rows(); ++q) {
    if (filter && !(*filter)[static_cast<size_t>(q)]) continue;
    const double st = S(q, q);
    int rank = 1;
    for (Eigen::Index j = 0; j < S.cols(); ++j)
      if (j != q && S(q, j) >= st) ++rank;
    ranks.push_back(rank);
  }
  return ranks;
}

}  // namespace

std::vector<int> pool_ranks(const Mat& queries, const Mat& candidates) {
  return ranks_of_pool(queries, candidates, nullptr);
}

MetricsReport sampled_eval(const Mat& query_side, const Mat& candidate_side,
                           const EvalParams& params,
                           const std::string& direction,
                           const std::vector<uint8_t>* query_filter) {
  const int pool_n = static_cast<int>(query_side.rows());
  if (params.pool_size > pool_n)
    throw InvalidParameter("sampled_eval: pool larger than the test set");
  if (params.trials < 1)
    throw InvalidParameter("sampled_eval: need at least one trial");

  std::vector<std::vector<int>> per_trial;
  per_trial.reserve(static_cast<size_t>(params.trials));
  for (int t = 0; t < params.trials; ++t) {
    const auto idx = trial_sample(pool_n, params.pool_size, params.seed, t);
    Mat Q(params.pool_size, query_side.cols());
    Mat C(params.pool_size, candidate_side.cols());
    std::vector<uint8_t> f;
    for (int i = 0; i < params.pool_size; ++i) {
      Q.row(i) = query_side.row(idx[static_cast<size_t>(i)]);
      C.row(i) = candidate_side.row(idx[static_cast<size_t>(i)]);
      if (query_filter)
        f.push_back((*query_filter)[static_cast<size_t>(
            idx[static_cast<size_t>(i)])]);
    }
    auto ranks = ranks_of_pool(Q, C, query_filter ? &f : nullptr);
    if (ranks.empty())
      throw InvalidParameter("sampled_eval: a trial has no eligible queries");
    per_trial.push_back(std::move(ranks));
  }
  MetricsReport r = compute_metrics(per_trial, params.ks);
  r.direction = direction;
  r.pool_size = params.pool_size;
  return r;
}

debias::IngredientDistribution simulate_oracle_predictions(
    const std::vector<int>& truth_set, double accuracy, int dict_size,
    Rng& rng) {
  if (truth_set.empty())
    throw InvalidParameter("simulate_oracle_predictions: empty truth set");
  if (accuracy < 0.0 || accuracy > 1.0)
    throw InvalidParameter("simulate_oracle_predictions: accuracy not in [0,1]");

  std::vector<int> sorted = truth_set;
  std::sort(sorted.begin(), sorted.end());
  std::unordered_set<int> excluded(sorted.begin(), sorted.end());

  std::vector<int> predicted;
  predicted.reserve(sorted.size());
  for (int g : sorted) {
    if (rng.u01() < accuracy) {
      predicted.push_back(g);
      continue;
    }
    // substitute: uniform over dictionary entries outside truth ∪ chosen
    const int available = dict_size - static_cast<int>(excluded.size());
    if (available <= 0) {
      predicted.push_back(g);  // dictionary exhausted; keep the original
      continue;
    }
    int pick = static_cast<int>(rng.below(static_cast<uint64_t>(available)));
    int sub = -1;
    for (int k = 0; k < dict_size; ++k) {
      if (excluded.count(k)) continue;
      if (pick-- == 0) {
        sub = k;
        break;
      }
    }
    predicted.push_back(sub);
    excluded.insert(sub);
  }
  std::sort(predicted.begin(), predicted.end());
  debias::IngredientDistribution dist;
  const double w = 1.0 / static_cast<double>(predicted.size());
  for (int k : predicted) dist.entries.emplace_back(k, w);
  return dist;
}

int text_match_rank(const std::vector<int>& predicted,
                    const std::vector<std::vector<int>>& candidate_sets,
                    int truth_index) {
  if (truth_index < 0 ||
      truth_index >= static_cast<int>(candidate_sets.size()))
    throw InvalidParameter("text_match_rank: truth index out of range");
  std::unordered_set<int> pred(predicted.begin(), predicted.end());
  Vec scores(static_cast<Eigen::Index>(candidate_sets.size()));
  for (size_t c = 0; c < candidate_sets.size(); ++c) {
    int overlap = 0;
    for (int id : candidate_sets[c])
      if (pred.count(id)) ++overlap;
    scores[static_cast<Eigen::Index>(c)] = static_cast<double>(overlap);
  }
  return rank_from_scores(scores, truth_index);
}

namespace {

MetricsReport average_reports(const std::vector<MetricsReport>& reports) {
  MetricsReport out = reports.front();
  for (size_t i = 1; i < reports.size(); ++i) {
    out.medr += reports[i].medr;
    for (size_t k = 0; k < out.recall.size(); ++k)
      out.recall[k] += reports[i].recall[k];
  }
  const double n = static_cast<double>(reports.size());
  out.medr /= n;
  for (auto& v : out.recall) v /= n;
  out.trial_ranks.clear();  // mixed-seed rank lists are not comparable
  return out;
}

// Simulated predicted sets for every pool item under one oracle seed.
std::vector<std::vector<int>> simulate_sets(const PoolEmbeddings& pool,
                                            double accuracy, int dict_size,
                                            uint64_t seed, bool recall_only) {
  std::vector<std::vector<int>> sets(pool.truth_sets.size());
  for (size_t q = 0; q < pool.truth_sets.size(); ++q) {
    Rng rng(derive_seed(seed, "oracle", static_cast<uint64_t>(q)));
    const auto& truth = pool.truth_sets[q];
    if (truth.empty()) continue;  // no dictionary coverage: falls back to e_I
    if (recall_only) {
      for (int g : truth)
        if (rng.u01() < accuracy) sets[q].push_back(g);
    } else {
      auto dist = simulate_oracle_predictions(truth, accuracy, dict_size, rng);
      for (const auto& [k, w] : dist.entries) sets[q].push_back(k);
    }
  }
  return sets;
}

Mat debias_images(const PoolEmbeddings& pool,
                  const debias::IngredientDictionary& dict,
                  const std::vector<std::vector<int>>& sets) {
  Mat out = pool.images;
  for (size_t q = 0; q < sets.size(); ++q) {
    if (sets[q].empty()) continue;
    const double w = 1.0 / static_cast<double>(sets[q].size());
    for (int k : sets[q])
      out.row(static_cast<Eigen::Index>(q)) += w * dict.embeddings.row(k);
  }
  return out;
}

MetricsReport text_match_eval(const PoolEmbeddings& pool,
                              const std::vector<std::vector<int>>& sets,
                              const EvalParams& params) {
  std::vector<std::vector<int>> per_trial;
  const int pool_n = static_cast<int>(pool.truth_sets.size());
  for (int t = 0; t < params.trials; ++t) {
    const auto idx = trial_sample(pool_n, params.pool_size, params.seed, t);
    std::vector<std::vector<int>> cand_sets;
    cand_sets.reserve(idx.size());
    for (int i : idx) cand_sets.push_back(pool.truth_sets[static_cast<size_t>(i)]);
    std::vector<int> ranks;
    ranks.reserve(idx.size());
    for (size_t q = 0; q < idx.size(); ++q)
      ranks.push_back(text_match_rank(sets[static_cast<size_t>(idx[q])],
                                      cand_sets, static_cast<int>(q)));
    per_trial.push_back(std::move(ranks));
  }
  MetricsReport r = compute_metrics(per_trial, params.ks);
  r.pool_size = params.pool_size;
  return r;
}

}  // namespace

std::vector<SweepRow> oracle_sweep(const PoolEmbeddings& pool,
                                   const debias::IngredientDictionary& dict,
                                   const OracleSweepConfig& cfg,
                                   const EvalParams& params,
                                   const std::string& direction) {
  for (double a : cfg.accuracies)
    if (a < 0.0 || a > 1.0)
      throw InvalidParameter("oracle_sweep: accuracies must lie in [0,1]");

  std::vector<SweepRow> rows;
  for (double a : cfg.accuracies) {
    std::vector<MetricsReport> deb, txt;
    for (int s = 0; s < cfg.n_seeds; ++s) {
      const uint64_t seed_s = derive_seed(cfg.seed, "oracle-seed",
                                          static_cast<uint64_t>(s));
      auto sets = simulate_sets(pool, a, dict.size(), seed_s, cfg.recall_only);
      Mat imgs = debias_images(pool, dict, sets);
      MetricsReport r = sampled_eval(imgs, pool.recipes, params, direction);
      r.method = "debias-oracle";
      r.accuracy = a;
      deb.push_back(std::move(r));

      MetricsReport tm = text_match_eval(pool, sets, params);
      tm.method = "text-match";
      tm.direction = direction;
      tm.accuracy = a;
      txt.push_back(std::move(tm));
    }
    rows.push_back({"debias-oracle", a, average_reports(deb)});
    rows.push_back({"text-match", a, average_reports(txt)});
  }

  MetricsReport base = sampled_eval(pool.images, pool.recipes, params, direction);
  base.method = "baseline";
  rows.push_back({"baseline", -1.0, std::move(base)});
  return rows;
}

ClassifierMetrics classifier_metrics(const std::vector<Vec>& probs,
                                     const std::vector<Vec>& targets,
                                     double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidParameter("classifier_metrics: threshold must be in (0,1)");
  long tp = 0, fp = 0, fn = 0;
  for (size_t i = 0; i < probs.size(); ++i) {
    for (Eigen::Index k = 0; k < probs[i].size(); ++k) {
      const bool pred = probs[i][k] > threshold;
      const bool pos = targets[i][k] > 0.5;
      if (pred && pos) ++tp;
      else if (pred && !pos) ++fp;
      else if (!pred && pos) ++fn;
    }
  }
  ClassifierMetrics m;
  m.precision = (tp + fp) == 0 ? 0.0
                               : static_cast<double>(tp) /
                                     static_cast<double>(tp + fp);
  m.recall = (tp + fn) == 0 ? 0.0
                            : static_cast<double>(tp) /
                                  static_cast<double>(tp + fn);
  m.f1 = (m.precision + m.recall) == 0.0
             ? 0.0
             : 2.0 * m.precision * m.recall / (m.precision + m.recall);
  return m;
}

}  // namespace dbrt::eval
