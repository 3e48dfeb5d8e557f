#include "dbrt/world.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include "dbrt/rng.hpp"

namespace dbrt::world {

int Recipe::prominence_rank(int k) const {
  std::vector<int> order(ingredient_ids.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (prominence[a] != prominence[b]) return prominence[a] > prominence[b];
    return ingredient_ids[a] < ingredient_ids[b];
  });
  return order[static_cast<size_t>(k)];
}

const std::vector<int>& PairedDataset::split_ids(Split s) const {
  switch (s) {
    case Split::Train: return train_ids;
    case Split::Val: return val_ids;
    default: return test_ids;
  }
}

std::vector<std::pair<int, int>> PairedDataset::items(Split s) const {
  std::vector<std::pair<int, int>> out;
  const int m = multiplicity();
  for (int r : split_ids(s))
    for (int j = 0; j < m; ++j) out.emplace_back(r, r * m + j);
  return out;
}

int64_t category_of(int a, int b) {
  const int64_t lo = std::min(a, b);
  const int64_t hi = std::max(a, b);
  return (lo << 20) | hi;
}

bool category_held_out(int64_t category, uint64_t seed, double fraction) {
  if (fraction <= 0.0) return false;
  const uint64_t h = hash_combine(derive_seed(seed, "holdout"),
                                  static_cast<uint64_t>(category));
  return static_cast<double>(h >> 11) * 0x1.0p-53 < fraction;
}

IngredientVocab gen_vocab(int V, int d_app, double zipf_s, uint64_t seed,
                          double vis_lo, double vis_hi) {
  if (V < 8) throw InvalidParameter("gen_vocab: vocab size must be >= 8");
  if (d_app < 4) throw InvalidParameter("gen_vocab: d_app must be >= 4");
  if (zipf_s <= 0.0)
    throw InvalidParameter("gen_vocab: zipf exponent must be positive");
  if (vis_lo > vis_hi)
    throw InvalidParameter("gen_vocab: vis_lo must not exceed vis_hi");

  IngredientVocab vocab;
  vocab.size = V;
  vocab.d_app = d_app;
  vocab.popularity.resize(V);
  vocab.appearance.resize(V, d_app);
  vocab.base_visibility.resize(V);

  for (int i = 0; i < V; ++i) {
    vocab.popularity[i] = std::pow(static_cast<double>(i + 1), -zipf_s);
    Rng rng(derive_seed(seed, "vocab", static_cast<uint64_t>(i)));
    Vec a(d_app);
    for (int k = 0; k < d_app; ++k) a[k] = rng.normal();
    vocab.appearance.row(i) = a.transpose() / a.norm();
    const double v = rng.uniform(vis_lo, vis_hi);
    vocab.base_visibility[i] = std::clamp(v, 0.05, 1.0);
  }
  return vocab;
}

namespace {

// Weighted sampling without replacement by CDF walk over the remaining mass.
std::vector<int> sample_distinct_weighted(const Vec& weights, int count,
                                          Rng& rng) {
  const int n = static_cast<int>(weights.size());
  std::vector<double> w(weights.data(), weights.data() + n);
  double total = 0.0;
  for (double x : w) total += x;
  std::vector<int> picked;
  picked.reserve(static_cast<size_t>(count));
  for (int c = 0; c < count; ++c) {
    double u = rng.u01() * total;
    int chosen = -1;
    for (int i = 0; i < n; ++i) {
      if (w[i] <= 0.0) continue;
      u -= w[i];
      if (u < 0.0) {
        chosen = i;
        break;
      }
    }
    if (chosen < 0) {  // numerical slack: take the last positive entry
      for (int i = n - 1; i >= 0; --i)
        if (w[i] > 0.0) {
          chosen = i;
          break;
        }
    }
    picked.push_back(chosen);
    total -= w[chosen];
    w[chosen] = 0.0;
  }
  return picked;
}

}  // namespace

Recipe gen_recipe(const IngredientVocab& vocab, int recipe_id,
                  const RecipeGenParams& params, uint64_t seed) {
  if (params.min_ingredients < 3 || params.max_ingredients > 10 ||
      params.min_ingredients > params.max_ingredients)
    throw InvalidParameter("gen_recipe: ingredient count range must lie in [3,10]");
  if (params.max_ingredients > vocab.size)
    throw InvalidParameter("gen_recipe: requested count exceeds vocabulary");

  Rng rng(derive_seed(seed, "recipe", static_cast<uint64_t>(recipe_id)));

  Recipe recipe;
  recipe.id = recipe_id;
  const int lo = params.min_ingredients;
  const int hi = params.max_ingredients;
  const int count = lo + static_cast<int>(rng.below(
                             static_cast<uint64_t>(hi - lo + 1)));

  recipe.ingredient_ids = sample_distinct_weighted(vocab.popularity, count, rng);

  // Dirichlet(1,..,1) prominence via normalized exponentials.
  recipe.prominence.resize(count);
  double sum = 0.0;
  for (int i = 0; i < count; ++i) {
    recipe.prominence[i] = rng.expo() + 1e-9;
    sum += recipe.prominence[i];
  }
  recipe.prominence /= sum;

  const int top0 = recipe.prominence_rank(0);
  const int top1 = recipe.prominence_rank(1);
  recipe.category_id =
      category_of(recipe.ingredient_ids[top0], recipe.ingredient_ids[top1]);
  recipe.title_tokens = {recipe.ingredient_ids[top0],
                         recipe.ingredient_ids[top1]};

  recipe.instruction_tokens.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const int action =
        static_cast<int>(rng.below(static_cast<uint64_t>(params.n_actions)));
    recipe.instruction_tokens.emplace_back(action, recipe.ingredient_ids[i]);
  }
  return recipe;
}

FoodImage render_image(const Recipe& recipe, const IngredientVocab& vocab,
                       const RenderParams& params, uint64_t style_seed) {
  const int n = static_cast<int>(recipe.ingredient_ids.size());
  if (n == 0) throw InvalidParameter("render_image: recipe has no ingredients");
  for (int id : recipe.ingredient_ids)
    if (id < 0 || id >= vocab.size)
      throw InvalidParameter("render_image: ingredient id outside vocabulary");
  if (!params.identity_style && params.d_region < vocab.d_app)
    throw InvalidParameter("render_image: d_region must be >= d_app");

  Rng rng(derive_seed(style_seed, "render", static_cast<uint64_t>(recipe.id)));

  FoodImage img;
  img.recipe_id = recipe.id;
  img.visible_mask.assign(static_cast<size_t>(n), 0);
  const int major = recipe.prominence_rank(0);
  for (int i = 0; i < n; ++i) {
    const double base = vocab.base_visibility[recipe.ingredient_ids[i]];
    const double prob =
        std::min(1.0, base + params.prominence_boost * recipe.prominence[i]);
    img.visible_mask[static_cast<size_t>(i)] = rng.u01() < prob ? 1 : 0;
  }
  img.visible_mask[static_cast<size_t>(major)] = 1;  // major always visible

  std::vector<int> visible;
  for (int i = 0; i < n; ++i)
    if (img.visible_mask[static_cast<size_t>(i)]) visible.push_back(i);

  // Per-image style map: orthogonal-like mixing (QR of a Gaussian draw),
  // or identity for controlled tests.
  Mat style;
  if (params.identity_style) {
    style = Mat::Identity(params.d_region, vocab.d_app);
  } else {
    Mat g(params.d_region, vocab.d_app);
    for (int r = 0; r < g.rows(); ++r)
      for (int c = 0; c < g.cols(); ++c) g(r, c) = rng.normal();
    Eigen::HouseholderQR<Mat> qr(g);
    style = Mat(qr.householderQ()) .leftCols(vocab.d_app);
  }

  img.region_features.resize(params.regions, params.d_region);
  int most_prominent_visible = visible[0];
  for (int i : visible)
    if (recipe.prominence[i] > recipe.prominence[most_prominent_visible])
      most_prominent_visible = i;

  for (int t = 0; t < params.regions; ++t) {
    Vec u = Vec::Zero(vocab.d_app);
    bool any = false;
    for (int i : visible) {
      if (rng.u01() < params.subset_prob) {
        u += recipe.prominence[i] *
             vocab.appearance.row(recipe.ingredient_ids[i]).transpose();
        any = true;
      }
    }
    if (!any) {
      const int i = most_prominent_visible;
      u = recipe.prominence[i] *
          vocab.appearance.row(recipe.ingredient_ids[i]).transpose();
    }
    Vec region = style * u;
    if (params.noise_scale > 0.0)
      for (int k = 0; k < region.size(); ++k)
        region[k] += params.noise_scale * rng.normal();
    img.region_features.row(t) = region.transpose();
  }
  img.pooled_feature = img.region_features.colwise().mean().transpose();
  return img;
}

PairedDataset make_dataset(const WorldConfig& config, uint64_t seed) {
  if (config.train_recipes <= 0 || config.val_recipes <= 0 ||
      config.test_recipes <= 0)
    throw InvalidParameter("make_dataset: split sizes must be positive");
  if (config.holdout_fraction < 0.0 || config.holdout_fraction >= 1.0)
    throw InvalidParameter("make_dataset: holdout fraction must lie in [0,1)");
  if (config.image_multiplicity < 1)
    throw InvalidParameter("make_dataset: image multiplicity must be >= 1");
  if (config.dict_id_range < 1 || config.dict_id_range > config.vocab_size)
    throw InvalidParameter("make_dataset: dict_id_range must lie in [1, V]");

  PairedDataset ds;
  ds.config = config;
  ds.seed = seed;
  ds.vocab = gen_vocab(config.vocab_size, config.d_app, config.zipf_s,
                       derive_seed(seed, "world-vocab"), config.vis_lo,
                       config.vis_hi);

  RecipeGenParams rp{config.min_ingredients, config.max_ingredients,
                     config.n_actions};
  const int n_total =
      config.train_recipes + config.val_recipes + config.test_recipes;

  // Rejection-resampling: every recipe keeps at least one dictionary-eligible
  // ingredient; optionally the eligible set must be globally unique.
  std::set<std::vector<int>> seen_sets;
  std::vector<Recipe> accepted;
  accepted.reserve(static_cast<size_t>(n_total));
  uint64_t attempt = 0;
  const uint64_t max_attempts = static_cast<uint64_t>(n_total) * 1000ULL;
  while (static_cast<int>(accepted.size()) < n_total) {
    if (attempt >= max_attempts)
      throw InvalidParameter(
          "make_dataset: rejection sampling exhausted; relax unique_dict_sets "
          "or widen dict_id_range");
    Recipe r = gen_recipe(ds.vocab, static_cast<int>(attempt), rp,
                          derive_seed(seed, "recipes"));
    ++attempt;
    std::vector<int> eligible;
    for (int id : r.ingredient_ids)
      if (id < config.dict_id_range) eligible.push_back(id);
    if (eligible.empty()) continue;
    if (config.unique_dict_sets) {
      std::sort(eligible.begin(), eligible.end());
      if (!seen_sets.insert(eligible).second) continue;
    }
    r.id = static_cast<int>(accepted.size());
    accepted.push_back(std::move(r));
  }

  // Held-out categories go to test only; the remaining test slots and the
  // train/val splits are filled from the in-distribution recipes in order.
  std::vector<int> holdout_idx, seen_idx;
  std::unordered_set<int64_t> holdout_cats;
  for (int i = 0; i < n_total; ++i) {
    if (category_held_out(accepted[static_cast<size_t>(i)].category_id, seed,
                          config.holdout_fraction)) {
      holdout_idx.push_back(i);
      holdout_cats.insert(accepted[static_cast<size_t>(i)].category_id);
    } else {
      seen_idx.push_back(i);
    }
  }
  if (static_cast<int>(holdout_idx.size()) > config.test_recipes)
    throw InvalidParameter(
        "make_dataset: held-out recipes exceed the test split; lower "
        "holdout_fraction or enlarge test_recipes");
  if (static_cast<int>(seen_idx.size()) <
      config.train_recipes + config.val_recipes)
    throw InvalidParameter(
        "make_dataset: not enough in-distribution recipes for train/val");

  // Reindex so recipes are stored in split order: train, val, test.
  std::vector<int> order;
  order.reserve(static_cast<size_t>(n_total));
  for (int i = 0; i < config.train_recipes; ++i)
    order.push_back(seen_idx[static_cast<size_t>(i)]);
  for (int i = 0; i < config.val_recipes; ++i)
    order.push_back(seen_idx[static_cast<size_t>(config.train_recipes + i)]);
  for (int i : holdout_idx) order.push_back(i);
  const int seen_used = config.train_recipes + config.val_recipes;
  const int test_fill = config.test_recipes - static_cast<int>(holdout_idx.size());
  for (int i = 0; i < test_fill; ++i)
    order.push_back(seen_idx[static_cast<size_t>(seen_used + i)]);

  ds.recipes.reserve(static_cast<size_t>(n_total));
  for (int pos = 0; pos < n_total; ++pos) {
    Recipe r = std::move(accepted[static_cast<size_t>(order[static_cast<size_t>(pos)])]);
    r.id = pos;
    ds.recipes.push_back(std::move(r));
  }
  for (int i = 0; i < config.train_recipes; ++i) ds.train_ids.push_back(i);
  for (int i = 0; i < config.val_recipes; ++i)
    ds.val_ids.push_back(config.train_recipes + i);
  for (int i = 0; i < config.test_recipes; ++i)
    ds.test_ids.push_back(config.train_recipes + config.val_recipes + i);

  ds.held_out_categories.assign(holdout_cats.begin(), holdout_cats.end());
  std::sort(ds.held_out_categories.begin(), ds.held_out_categories.end());

  RenderParams render{config.regions,    config.d_region,
                      config.noise_scale, config.subset_prob,
                      config.style == "identity", config.prominence_boost};
  ds.images.reserve(ds.recipes.size() *
                    static_cast<size_t>(config.image_multiplicity));
  int image_id = 0;
  for (const Recipe& r : ds.recipes) {
    for (int j = 0; j < config.image_multiplicity; ++j) {
      FoodImage img = render_image(
          r, ds.vocab, render,
          derive_seed(seed, "image", static_cast<uint64_t>(r.id),
                      static_cast<uint64_t>(j)));
      img.id = image_id++;
      ds.images.push_back(std::move(img));
    }
  }
  return ds;
}

}  // namespace dbrt::world
