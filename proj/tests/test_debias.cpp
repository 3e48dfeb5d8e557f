#include "doctest.h"

#include <map>

#include "dbrt/debias.hpp"
#include "dbrt/rng.hpp"
#include "dbrt/world.hpp"
#include "test_util.hpp"

using namespace dbrt;
using namespace dbrt::debias;

namespace {

world::Recipe recipe_with(std::vector<int> ids) {
  world::Recipe r;
  r.ingredient_ids = std::move(ids);
  r.prominence = Vec::Constant(
      static_cast<Eigen::Index>(r.ingredient_ids.size()),
      1.0 / static_cast<double>(r.ingredient_ids.size()));
  r.title_tokens = {r.ingredient_ids[0]};
  r.instruction_tokens = {{0, r.ingredient_ids[0]}};
  return r;
}

ClassifierParams random_classifier(uint64_t seed, int K = 5, int hidden = 4,
                                   int heads = 2, int layers = 2) {
  ClassifierParams c(K, hidden, heads, layers);
  Rng rng(seed);
  c.init(rng);
  return c;
}

Mat random_codes(int T, int hidden, uint64_t seed) {
  Mat m(T, hidden);
  Rng rng(seed);
  for (int r = 0; r < T; ++r)
    for (int c = 0; c < hidden; ++c) m(r, c) = rng.normal();
  return m;
}

}  // namespace

TEST_CASE("ingredient_instance_stats: arithmetic mean of instances") {
  // identity self map plus identity context map: instance = own row + recipe
  // mean; embeddings engineered so ingredient 0 sees [1,3] and [3,5].
  enc::RecipeEncoderParams p(4, 2, 2, 2);
  p.ing_self = Mat::Identity(2, 2);
  p.ing_ctx = Mat::Identity(2, 2);
  p.ing_table.row(0) << 1.0, 1.0;
  p.ing_table.row(1) << -1.0, 3.0;
  p.ing_table.row(2) << 3.0, 7.0;
  p.cat_proj.setZero();
  p.cat_proj(2, 0) = 1.0;  // middle block = identity
  p.cat_proj(3, 1) = 1.0;

  auto recipeA = recipe_with({0, 1});
  auto recipeB = recipe_with({0, 2});
  auto stats = ingredient_instance_stats(p, {recipeA, recipeB});

  Vec instA = enc::encode_ingredient_instance(p, 0, recipeA);
  Vec instB = enc::encode_ingredient_instance(p, 0, recipeB);
  CHECK((instA - Vec{{1.0, 3.0}}).norm() <= 1e-12);
  CHECK((instB - Vec{{3.0, 5.0}}).norm() <= 1e-12);
  CHECK(stats.at(0).first == 2);
  CHECK((stats.at(0).second - Vec{{2.0, 4.0}}).norm() <= 1e-12);

  auto dict = build_dictionary(p, {recipeA, recipeB}, 3);
  // ingredient 0 occurs twice, others once: it ranks first
  CHECK(dict.ids[0] == 0);
  Vec expected = Vec{{2.0, 4.0}} / Vec{{2.0, 4.0}}.norm();
  CHECK((dict.embeddings.row(0).transpose() - expected).norm() <= 1e-9);
}

TEST_CASE("build_dictionary: full retention and frequency oracle") {
  auto ds = world::make_dataset(
      []() {
        world::WorldConfig c;
        c.vocab_size = 30;
        c.d_app = 8;
        c.d_region = 8;
        c.dict_id_range = 30;
        c.train_recipes = 120;
        c.val_recipes = 20;
        c.test_recipes = 30;
        return c;
      }(),
      21);
  enc::RecipeEncoderParams p(30, 12, 6, 8);
  Rng rng(5);
  p.init(rng);

  std::vector<world::Recipe> train;
  for (int i : ds.train_ids) train.push_back(ds.recipes[static_cast<size_t>(i)]);

  // independent counting pass
  std::map<int, int64_t> counts;
  for (const auto& r : train)
    for (int id : r.ingredient_ids) ++counts[id];
  std::vector<std::pair<int64_t, int>> by_freq;
  for (auto& [id, c] : counts) by_freq.emplace_back(c, id);
  std::sort(by_freq.begin(), by_freq.end(), [](auto& a, auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  const int distinct = static_cast<int>(counts.size());
  auto full = build_dictionary(p, train, distinct);
  CHECK(full.size() == distinct);  // K = all distinct: nothing excluded

  auto top = build_dictionary(p, train, 10);
  for (int k = 0; k < 10; ++k) {
    CHECK(top.ids[static_cast<size_t>(k)] == by_freq[static_cast<size_t>(k)].second);
    CHECK(top.freq[static_cast<size_t>(k)] == by_freq[static_cast<size_t>(k)].first);
  }
  for (int k = 1; k < 10; ++k)
    CHECK(top.freq[static_cast<size_t>(k)] <= top.freq[static_cast<size_t>(k - 1)]);

  CHECK_THROWS_AS(build_dictionary(p, train, distinct + 1), InvalidParameter);

  // rebuilding is bit-identical
  auto again = build_dictionary(p, train, 10);
  CHECK(testutil::bits_equal(again.embeddings, top.embeddings));
  CHECK(again.ids == top.ids);
}

TEST_CASE("predict_ingredients: zero score head gives 0.5 everywhere") {
  auto c = random_classifier(3);
  c.score_w.setZero();
  c.score_b.setZero();
  auto codes = random_codes(3, 4, 8);
  Vec p = predict_ingredients(c, codes);
  for (int k = 0; k < p.size(); ++k) CHECK(p[k] == 0.5);
}

TEST_CASE("predict_ingredients: determinism and shape checking") {
  auto c = random_classifier(4);
  auto codes = random_codes(3, 4, 9);
  Vec a = predict_ingredients(c, codes);
  Vec b = predict_ingredients(c, codes);
  CHECK(testutil::bits_equal(a, b));
  CHECK(a.minCoeff() > 0.0);
  CHECK(a.maxCoeff() < 1.0);
  CHECK_THROWS_AS(predict_ingredients(c, random_codes(3, 5, 9)), ShapeError);
}

TEST_CASE("predict_ingredients: query gradients match finite differences") {
  auto c = random_classifier(6);
  auto codes = random_codes(3, 4, 10);
  ClassifierTrace trace;
  Vec p = predict_ingredients(c, codes, &trace);

  const int k = 2;
  Vec d_scores = Vec::Zero(c.k_labels);
  d_scores[k] = p[k] * (1.0 - p[k]);  // d p_k / d s_k
  ClassifierParams grads = ClassifierParams::zeros_like(c);
  Mat d_codes = Mat::Zero(3, 4);
  classifier_backward(c, codes, trace, d_scores, grads, d_codes);

  Rng rng(55);
  const double step = 1e-4;
  Mat u(c.queries.rows(), c.queries.cols());
  for (Eigen::Index j = 0; j < u.size(); ++j) u.data()[j] = rng.normal();
  u /= u.norm();
  double analytic = (grads.queries.array() * u.array()).sum();

  Mat saved = c.queries;
  c.queries = saved + step * u;
  const double fp = predict_ingredients(c, codes)[k];
  c.queries = saved - step * u;
  const double fm = predict_ingredients(c, codes)[k];
  c.queries = saved;
  const double numeric = (fp - fm) / (2 * step);
  CHECK(std::abs(analytic - numeric) /
            std::max({std::abs(analytic), std::abs(numeric), 1e-3}) <=
        1e-4);
}

TEST_CASE("select_and_normalize: worked example and edge cases") {
  Vec p(3);
  p << 0.9, 0.6, 0.4;
  auto dist = select_and_normalize(p, 0.5);
  REQUIRE(dist.size() == 2);
  CHECK(dist.entries[0].first == 0);
  CHECK(dist.entries[0].second == 0.9 / 1.5);  // = 0.6 exactly
  CHECK(dist.entries[1].first == 1);
  CHECK(dist.entries[1].second == 0.6 / 1.5);
  CHECK(dist.entries[1].second == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(dist.entries[0].second + dist.entries[1].second ==
        doctest::Approx(1.0).epsilon(1e-6));

  Vec low = Vec::Constant(4, 0.5);
  CHECK(select_and_normalize(low, 0.5).empty());

  Vec one(3);
  one << 0.2, 0.8, 0.1;
  auto single = select_and_normalize(one, 0.5);
  REQUIRE(single.size() == 1);
  CHECK(single.entries[0].first == 1);
  CHECK(single.entries[0].second == 1.0);

  CHECK_THROWS_AS(select_and_normalize(p, 0.0), InvalidParameter);
}

TEST_CASE("debias_embedding: worked examples") {
  IngredientDictionary dict;
  dict.ids = {7, 8};
  dict.freq = {2, 1};
  dict.embeddings.resize(2, 2);
  dict.embeddings.row(0) << 0.0, 2.0;
  dict.embeddings.row(1) << 2.0, 0.0;
  dict.rebuild_index();

  Vec e(2);
  e << 1.0, 0.0;
  IngredientDistribution single;
  single.entries = {{0, 1.0}};
  Vec til = debias_embedding(e, dict, single);
  CHECK((til - Vec{{1.0, 2.0}}).norm() <= 1e-12);

  IngredientDistribution empty;
  Vec same = debias_embedding(e, dict, empty);
  CHECK(testutil::bits_equal(same, e));

  IngredientDictionary dict2;
  dict2.ids = {1, 2};
  dict2.freq = {1, 1};
  dict2.embeddings.resize(2, 2);
  dict2.embeddings.row(0) << 2.0, 0.0;
  dict2.embeddings.row(1) << 0.0, 4.0;
  dict2.rebuild_index();
  IngredientDistribution half;
  half.entries = {{0, 0.5}, {1, 0.5}};
  Vec mixed = debias_embedding(Vec::Zero(2), dict2, half);
  CHECK((mixed - Vec{{1.0, 2.0}}).norm() <= 1e-12);

  IngredientDistribution bad;
  bad.entries = {{5, 1.0}};
  CHECK_THROWS_AS(debias_embedding(e, dict, bad), InvalidParameter);
}

TEST_CASE("debiased_similarity: linearity split and two-path agreement") {
  Vec e_r(2), e_i(2), expectation(2);
  e_r << 1.0, 1.0;
  e_i << 2.0, 0.0;
  expectation << 0.0, 3.0;
  CHECK(debiased_similarity(e_r, e_i + expectation) == doctest::Approx(5.0));
  CHECK(debiased_similarity(e_r, e_i) == doctest::Approx(2.0));

  Rng rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    const int d = 8, K = 6;
    Vec er(d), ei(d);
    for (int i = 0; i < d; ++i) {
      er[i] = rng.normal();
      ei[i] = rng.normal();
    }
    Mat dict(K, d);
    for (int i = 0; i < K * d; ++i) dict.data()[i] = rng.normal();
    Vec p(K);
    double sum = 0;
    for (int i = 0; i < K; ++i) {
      p[i] = rng.u01();
      sum += p[i];
    }
    p /= sum;

    Vec til = ei;
    for (int k = 0; k < K; ++k) til += p[k] * dict.row(k).transpose();
    double joint = er.dot(til);
    double split = er.dot(ei);
    for (int k = 0; k < K; ++k) split += p[k] * er.dot(dict.row(k).transpose());
    CHECK(std::abs(joint - split) <= 1e-9);
  }

  Vec wrong(3);
  CHECK_THROWS_AS(debiased_similarity(e_r, wrong), ShapeError);
}

TEST_CASE("multilabel targets and dictionary ingredient lookup") {
  IngredientDictionary dict;
  dict.ids = {4, 9, 2};
  dict.freq = {5, 3, 2};
  dict.embeddings = Mat::Zero(3, 2);
  dict.rebuild_index();

  auto r = recipe_with({9, 11, 4});
  auto idx = dictionary_ingredients(dict, r);
  CHECK(idx == std::vector<int>{0, 1});
  Vec y = multilabel_target(dict, r);
  CHECK(y[0] == 1.0);
  CHECK(y[1] == 1.0);
  CHECK(y[2] == 0.0);
}
