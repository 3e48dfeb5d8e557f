#pragma once

#include <cstdint>
#include <map>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dbrt/common.hpp"
#include "dbrt/encoders.hpp"
#include "dbrt/world.hpp"

namespace dbrt::debias {

// Static storage of the K most frequent ingredients' mean embeddings in the
// joint space. Entries become ordinary parameters during stage-2 training.
struct IngredientDictionary {
  std::vector<int> ids;        // K ingredient ids, descending corpus frequency
  std::vector<int64_t> freq;   // matching occurrence counts
  Mat embeddings;              // K x d_joint

  int size() const { return static_cast<int>(ids.size()); }
  // dict index for an ingredient id, or -1.
  int index_of(int ingredient_id) const;
  void rebuild_index();

 private:
  std::unordered_map<int, int> index_;
};

// Per-ingredient occurrence count and mean instance embedding over a corpus;
// also the independent frequency oracle used by tests.
std::map<int, std::pair<int64_t, Vec>> ingredient_instance_stats(
    const enc::RecipeEncoderParams& encoder,
    const std::vector<world::Recipe>& recipes);

IngredientDictionary build_dictionary(const enc::RecipeEncoderParams& encoder,
                                      const std::vector<world::Recipe>& recipes,
                                      int K);

// Same, but restricted to ingredients whose base visibility is at least
// min_visibility (the "visible only" dictionary ablation).
IngredientDictionary build_dictionary_filtered(
    const enc::RecipeEncoderParams& encoder,
    const std::vector<world::Recipe>& recipes, int K,
    const world::IngredientVocab& vocab, double min_visibility);

// Multi-label ingredient classifier: learnable label queries cross-attend
// over the image region codes through L decoder layers; a per-query linear
// head scores each dictionary entry.
struct ClassifierParams {
  int k_labels = 0, hidden = 0, heads = 0, layers = 0;
  Mat queries;                        // K x hidden
  std::vector<enc::AttnParams> attn;  // L layers
  Mat score_w;                        // K x hidden
  Vec score_b;                        // K

  ClassifierParams() = default;
  ClassifierParams(int k_labels, int hidden, int heads, int layers);
  static ClassifierParams zeros_like(const ClassifierParams& other);
  void init(Rng& rng);
  void set_zero();
  std::vector<TensorRef> refs();
  long param_count() const;
};

struct ClassifierTrace {
  std::vector<Mat> Y;          // layers+1 states, K x hidden
  std::vector<enc::AttnTrace> attn;
  Vec scores;                  // K, pre-sigmoid
  Vec p;                       // K, sigmoid(scores)
};

Vec predict_ingredients(const ClassifierParams& c, const Mat& region_codes,
                        ClassifierTrace* trace = nullptr);

// Backward from pre-sigmoid score gradients; accumulates into grads and
// d_region_codes.
void classifier_backward(const ClassifierParams& c, const Mat& region_codes,
                         const ClassifierTrace& trace, const Vec& d_scores,
                         ClassifierParams& grads, Mat& d_region_codes);

// Sparse normalized probabilities over dictionary indices.
struct IngredientDistribution {
  std::vector<std::pair<int, double>> entries;  // (dict index, prob), sorted

  bool empty() const { return entries.empty(); }
  int size() const { return static_cast<int>(entries.size()); }
};

// Keep entries with p > threshold and renormalize to sum 1; an empty result
// is allowed and means "no adjustment".
IngredientDistribution select_and_normalize(const Vec& p, double threshold);

// e~ = e + sum_k dist[k] * dict.embeddings[k]; empty dist returns e exactly.
Vec debias_embedding(const Vec& e_image, const IngredientDictionary& dict,
                     const IngredientDistribution& dist);

double debiased_similarity(const Vec& e_recipe, const Vec& e_image_debiased);

// Dictionary indices of the recipe's ingredients (ascending).
std::vector<int> dictionary_ingredients(const IngredientDictionary& dict,
                                        const world::Recipe& recipe);

// Dense K-vector multi-label target: y_k = 1 iff dictionary ingredient k is
// in the recipe.
Vec multilabel_target(const IngredientDictionary& dict,
                      const world::Recipe& recipe);

}  // namespace dbrt::debias
