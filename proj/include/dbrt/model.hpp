#pragma once

#include <vector>

#include "dbrt/common.hpp"
#include "dbrt/debias.hpp"
#include "dbrt/encoders.hpp"

namespace dbrt {

// The composed retrieval system. Stage 1 uses only the two encoders; stage 2
// adds the classifier and the dictionary (whose entries are trained).
struct Model {
  enc::ImageEncoderParams image;
  enc::RecipeEncoderParams recipe;
  debias::ClassifierParams classifier;
  debias::IngredientDictionary dict;
  bool has_debias = false;

  // Parameter tensors in a fixed order; includes classifier and dictionary
  // only when the debias stage is active.
  std::vector<TensorRef> refs();
  long param_count() const;
};

struct ModelGrads {
  enc::ImageEncoderParams image;
  enc::RecipeEncoderParams recipe;
  debias::ClassifierParams classifier;
  Mat dict;  // K x d_joint
  bool has_debias = false;

  static ModelGrads zeros_like(const Model& m);
  void set_zero();
  std::vector<TensorRef> refs();
};

}  // namespace dbrt
