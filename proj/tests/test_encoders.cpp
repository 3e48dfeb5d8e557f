#include "doctest.h"

#include <algorithm>

#include "dbrt/encoders.hpp"
#include "dbrt/rng.hpp"
#include "test_util.hpp"

using namespace dbrt;
using namespace dbrt::enc;

namespace {

world::FoodImage random_image(int T, int d_region, uint64_t seed) {
  world::FoodImage img;
  Rng rng(seed);
  img.region_features.resize(T, d_region);
  for (int t = 0; t < T; ++t)
    for (int c = 0; c < d_region; ++c) img.region_features(t, c) = rng.normal();
  img.pooled_feature = img.region_features.colwise().mean().transpose();
  return img;
}

world::Recipe random_recipe(int V, int A, uint64_t seed) {
  Rng rng(seed);
  world::Recipe r;
  const int count = 3 + static_cast<int>(rng.below(4));
  std::vector<int> pool(static_cast<size_t>(V));
  for (int i = 0; i < V; ++i) pool[static_cast<size_t>(i)] = i;
  for (int i = 0; i < count; ++i)
    std::swap(pool[static_cast<size_t>(i)],
              pool[static_cast<size_t>(i + rng.below(static_cast<uint64_t>(V - i)))]);
  pool.resize(static_cast<size_t>(count));
  r.ingredient_ids = pool;
  r.prominence.resize(count);
  double s = 0;
  for (int i = 0; i < count; ++i) {
    r.prominence[i] = rng.expo() + 0.01;
    s += r.prominence[i];
  }
  r.prominence /= s;
  r.title_tokens = {r.ingredient_ids[0], r.ingredient_ids[1]};
  for (int i = 0; i < count; ++i)
    r.instruction_tokens.emplace_back(
        static_cast<int>(rng.below(static_cast<uint64_t>(A))),
        r.ingredient_ids[static_cast<size_t>(i)]);
  return r;
}

ImageEncoderParams random_image_encoder(uint64_t seed, int d_region = 6,
                                        int hidden = 4, int d_joint = 5,
                                        int heads = 2) {
  ImageEncoderParams p(d_region, hidden, d_joint, heads);
  Rng rng(seed);
  p.init(rng);
  return p;
}

RecipeEncoderParams random_recipe_encoder(uint64_t seed, int V = 12, int A = 4,
                                          int ds = 4, int d_joint = 5) {
  RecipeEncoderParams p(V, A, ds, d_joint);
  Rng rng(seed);
  p.init(rng);
  return p;
}

}  // namespace

TEST_CASE("encode_image: zero weights with an output bias") {
  ImageEncoderParams p(6, 4, 5, 2);
  p.b_out << 1.0, 2.0, 0.0, -1.0, 0.5;
  auto img = random_image(3, 6, 1);
  auto enc = encode_image(p, img);
  Vec expected = p.b_out / p.b_out.norm();
  CHECK((enc.e - expected).norm() <= 1e-12);
}

TEST_CASE("encode_image: determinism, unit norm, finiteness") {
  auto p = random_image_encoder(3);
  auto img = random_image(4, 6, 2);
  auto a = encode_image(p, img);
  auto b = encode_image(p, img);
  CHECK(testutil::bits_equal(a.e, b.e));
  CHECK(testutil::bits_equal(a.region_codes, b.region_codes));
  CHECK(a.e.norm() == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(a.e.allFinite());
  CHECK(a.region_codes.rows() == 4);
  CHECK(a.region_codes.cols() == 4);
}

TEST_CASE("encode_image: shape mismatch") {
  auto p = random_image_encoder(3);
  auto img = random_image(4, 5, 2);  // wrong region width
  CHECK_THROWS_AS(encode_image(p, img), ShapeError);
}

TEST_CASE("encode_recipe: ingredient order invariance") {
  auto p = random_recipe_encoder(4);
  auto r = random_recipe(12, 4, 9);
  Vec e1 = encode_recipe(p, r);
  world::Recipe shuffled = r;
  std::reverse(shuffled.ingredient_ids.begin(), shuffled.ingredient_ids.end());
  shuffled.prominence.reverseInPlace();
  Vec e2 = encode_recipe(p, shuffled);
  CHECK((e1 - e2).norm() <= 1e-9);
}

TEST_CASE("encode_recipe: two-path concatenation check") {
  auto p = random_recipe_encoder(5);
  auto r = random_recipe(12, 4, 10);

  // independent section computation
  Vec title_mean = Vec::Zero(p.d_section);
  for (int id : r.title_tokens) title_mean += p.title_table.row(id).transpose();
  title_mean /= static_cast<double>(r.title_tokens.size());
  Vec title = p.title_proj.transpose() * title_mean + p.title_bias;

  Vec ctx = Vec::Zero(p.d_section);
  for (int id : r.ingredient_ids) ctx += p.ing_table.row(id).transpose();
  ctx /= static_cast<double>(r.ingredient_ids.size());
  Vec ing = p.ing_self.transpose() * ctx + p.ing_ctx.transpose() * ctx + p.ing_bias;

  Vec instr_mean = Vec::Zero(p.d_section);
  for (auto [a, g] : r.instruction_tokens)
    instr_mean +=
        p.act_table.row(a).transpose() + p.instr_table.row(g).transpose();
  instr_mean /= static_cast<double>(r.instruction_tokens.size());
  Vec instr = p.instr_proj.transpose() * instr_mean + p.instr_bias;

  Vec concat(3 * p.d_section);
  concat << title, ing, instr;
  Vec u = p.cat_proj.transpose() * concat + p.cat_bias;
  Vec expected = u / u.norm();

  CHECK((encode_recipe(p, r) - expected).norm() <= 1e-6);
}

TEST_CASE("encode_recipe: unknown token ids are rejected") {
  auto p = random_recipe_encoder(6);
  auto r = random_recipe(12, 4, 11);
  world::Recipe bad = r;
  bad.title_tokens[0] = 99;
  CHECK_THROWS_AS(encode_recipe(p, bad), InvalidParameter);
  world::Recipe bad2 = r;
  bad2.instruction_tokens[0].first = 17;
  CHECK_THROWS_AS(encode_recipe(p, bad2), InvalidParameter);
}

TEST_CASE("encode_ingredient_instance: determinism and degenerate map") {
  auto p = random_recipe_encoder(7);
  auto r = random_recipe(12, 4, 12);
  const int id = r.ingredient_ids[0];
  Vec a = encode_ingredient_instance(p, id, r);
  Vec b = encode_ingredient_instance(p, id, r);
  CHECK(testutil::bits_equal(a, b));

  // identity section map: instance equals the id-embedding row
  RecipeEncoderParams ident(12, 4, 4, 5);
  Rng rng(77);
  ident.init(rng);
  ident.ing_self = Mat::Identity(4, 4);
  ident.ing_ctx.setZero();
  ident.ing_bias.setZero();
  Vec inst = encode_ingredient_instance(ident, id, r);
  CHECK((inst - ident.ing_table.row(id).transpose()).norm() <= 1e-12);

  // context mixing: same ingredient in different recipes differs
  world::Recipe r2 = random_recipe(12, 4, 13);
  if (std::find(r2.ingredient_ids.begin(), r2.ingredient_ids.end(), id) ==
      r2.ingredient_ids.end())
    r2.ingredient_ids[0] = id;
  Vec other = encode_ingredient_instance(p, id, r2);
  CHECK((a - other).norm() > 1e-8);

  CHECK_THROWS_AS(encode_ingredient_instance(p, 11 == id ? 10 : 11,
                                             world::Recipe{r}),
                  InvalidParameter);
}

namespace {

// Directional derivative of one output coordinate vs central differences.
void check_image_encoder_fd(uint64_t seed) {
  auto p = random_image_encoder(seed);
  auto img = random_image(3, 6, seed + 1);
  enc::ImageTrace trace;
  encode_image(p, img, &trace);

  Rng rng(seed + 2);
  const int coord = static_cast<int>(rng.below(5));
  Vec d_e = Vec::Zero(5);
  d_e[coord] = 1.0;
  ImageEncoderParams grads = ImageEncoderParams::zeros_like(p);
  encode_image_backward(p, img, trace, d_e, nullptr, grads);

  auto prefs = p.refs();
  auto grefs = grads.refs();
  const double step = 1e-4;
  for (size_t t = 0; t < prefs.size(); ++t) {
    Vec u(prefs[t].size());
    for (long i = 0; i < u.size(); ++i) u[i] = rng.normal();
    u /= u.norm();
    double analytic = 0;
    for (long i = 0; i < u.size(); ++i) analytic += grefs[t].data[i] * u[i];

    std::vector<double> saved(prefs[t].data, prefs[t].data + prefs[t].size());
    for (long i = 0; i < u.size(); ++i) prefs[t].data[i] += step * u[i];
    const double fp = encode_image(p, img).e[coord];
    for (long i = 0; i < u.size(); ++i)
      prefs[t].data[i] = saved[static_cast<size_t>(i)] - step * u[i];
    const double fm = encode_image(p, img).e[coord];
    std::copy(saved.begin(), saved.end(), prefs[t].data);

    const double numeric = (fp - fm) / (2 * step);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    INFO(prefs[t].name);
    CHECK(rel <= 1e-4);
  }
}

void check_recipe_encoder_fd(uint64_t seed) {
  auto p = random_recipe_encoder(seed);
  auto r = random_recipe(12, 4, seed + 1);
  enc::RecipeTrace trace;
  encode_recipe(p, r, &trace);

  Rng rng(seed + 2);
  const int coord = static_cast<int>(rng.below(5));
  Vec d_e = Vec::Zero(5);
  d_e[coord] = 1.0;
  RecipeEncoderParams grads = RecipeEncoderParams::zeros_like(p);
  encode_recipe_backward(p, r, trace, d_e, grads);

  auto prefs = p.refs();
  auto grefs = grads.refs();
  const double step = 1e-4;
  for (size_t t = 0; t < prefs.size(); ++t) {
    Vec u(prefs[t].size());
    for (long i = 0; i < u.size(); ++i) u[i] = rng.normal();
    u /= u.norm();
    double analytic = 0;
    for (long i = 0; i < u.size(); ++i) analytic += grefs[t].data[i] * u[i];

    std::vector<double> saved(prefs[t].data, prefs[t].data + prefs[t].size());
    for (long i = 0; i < u.size(); ++i) prefs[t].data[i] += step * u[i];
    const double fp = encode_recipe(p, r)[coord];
    for (long i = 0; i < u.size(); ++i)
      prefs[t].data[i] = saved[static_cast<size_t>(i)] - step * u[i];
    const double fm = encode_recipe(p, r)[coord];
    std::copy(saved.begin(), saved.end(), prefs[t].data);

    const double numeric = (fp - fm) / (2 * step);
    const double rel = std::abs(analytic - numeric) /
                       std::max({std::abs(analytic), std::abs(numeric), 1e-3});
    INFO(prefs[t].name);
    CHECK(rel <= 1e-4);
  }
}

}  // namespace

TEST_CASE("encoder gradients match finite differences") {
  for (uint64_t seed : {101, 202, 303}) {
    check_image_encoder_fd(seed);
    check_recipe_encoder_fd(seed);
  }
}
