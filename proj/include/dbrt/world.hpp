#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dbrt/common.hpp"

namespace dbrt::world {

// The synthetic causal world: ingredients cause recipes, and (together with
// the recipe's prominence structure) cause images. Prominent ingredients are
// rendered more reliably than minor ones, which is the bias under study.

struct IngredientVocab {
  int size = 0;
  int d_app = 0;
  Vec popularity;       // V, strictly positive, non-increasing in id
  Mat appearance;       // V x d_app, unit L2 rows
  Vec base_visibility;  // V, each in [0.05, 1.0]
};

struct Recipe {
  int id = 0;
  int64_t category_id = 0;
  std::vector<int> title_tokens;            // ingredient ids
  std::vector<int> ingredient_ids;          // 3..10 distinct ids
  Vec prominence;                           // aligned, positive, sums to 1
  std::vector<std::pair<int, int>> instruction_tokens;  // (action, ingredient)

  // Index (into ingredient_ids) of the k-th most prominent ingredient.
  int prominence_rank(int k) const;
};

struct FoodImage {
  int id = 0;
  int recipe_id = 0;
  Mat region_features;  // T x d_region
  Vec pooled_feature;   // d_region, mean of region rows
  std::vector<uint8_t> visible_mask;  // aligned with recipe.ingredient_ids
};

enum class Split { Train, Val, Test };

struct WorldConfig {
  int vocab_size = 128;
  int d_app = 16;
  double zipf_s = 1.1;
  double vis_lo = 0.05;
  double vis_hi = 1.0;
  int min_ingredients = 3;
  int max_ingredients = 10;
  int n_actions = 12;
  int regions = 6;
  int d_region = 16;
  double noise_scale = 0.1;
  double subset_prob = 0.6;
  std::string style = "orthogonal";  // or "identity"
  double prominence_boost = 0.5;
  int dict_id_range = 64;       // every recipe keeps >=1 ingredient below this
  bool unique_dict_sets = false;  // reject duplicate eligible-ingredient sets
  int train_recipes = 5000;
  int val_recipes = 500;
  int test_recipes = 1000;
  int image_multiplicity = 1;
  double holdout_fraction = 0.0;
};

struct RecipeGenParams {
  int min_ingredients = 3;
  int max_ingredients = 10;
  int n_actions = 12;
};

struct RenderParams {
  int regions = 6;
  int d_region = 16;
  double noise_scale = 0.1;
  double subset_prob = 0.6;
  bool identity_style = false;
  double prominence_boost = 0.5;
};

struct PairedDataset {
  WorldConfig config;
  uint64_t seed = 0;
  IngredientVocab vocab;
  std::vector<Recipe> recipes;
  std::vector<FoodImage> images;  // recipe i owns images [i*M, (i+1)*M)
  std::vector<int> train_ids, val_ids, test_ids;  // recipe indices
  std::vector<int64_t> held_out_categories;

  int multiplicity() const { return config.image_multiplicity; }
  const std::vector<int>& split_ids(Split s) const;
  // All (recipe_idx, image_idx) pairs of a split, in stored order.
  std::vector<std::pair<int, int>> items(Split s) const;
};

// Category id is an order-independent pairing of the two most prominent
// ingredient ids; injective for ids < 2^20.
int64_t category_of(int a, int b);

// Hash-based holdout: category membership is decided without enumerating the
// category set first, so assignment is independent of generation order.
bool category_held_out(int64_t category, uint64_t seed, double fraction);

IngredientVocab gen_vocab(int V, int d_app, double zipf_s, uint64_t seed,
                          double vis_lo = 0.05, double vis_hi = 1.0);

Recipe gen_recipe(const IngredientVocab& vocab, int recipe_id,
                  const RecipeGenParams& params, uint64_t seed);

FoodImage render_image(const Recipe& recipe, const IngredientVocab& vocab,
                       const RenderParams& params, uint64_t style_seed);

PairedDataset make_dataset(const WorldConfig& config, uint64_t seed);

}  // namespace dbrt::world
