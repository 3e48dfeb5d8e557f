#include "dbrt/model.hpp"

#include <algorithm>

namespace dbrt {

std::vector<TensorRef> Model::refs() {
  std::vector<TensorRef> out = image.refs();
  for (auto& r : recipe.refs()) out.push_back(r);
  if (has_debias) {
    for (auto& r : classifier.refs()) out.push_back(r);
    out.push_back(tensor_ref("dictionary.embeddings", dict.embeddings));
  }
  return out;
}

long Model::param_count() const {
  return total_size(const_cast<Model*>(this)->refs());
}

ModelGrads ModelGrads::zeros_like(const Model& m) {
  ModelGrads g;
  g.image = enc::ImageEncoderParams::zeros_like(m.image);
  g.recipe = enc::RecipeEncoderParams::zeros_like(m.recipe);
  g.has_debias = m.has_debias;
  if (m.has_debias) {
    g.classifier = debias::ClassifierParams::zeros_like(m.classifier);
    g.dict = Mat::Zero(m.dict.embeddings.rows(), m.dict.embeddings.cols());
  }
  return g;
}

void ModelGrads::set_zero() {
  for (auto& r : refs()) std::fill(r.data, r.data + r.size(), 0.0);
}

std::vector<TensorRef> ModelGrads::refs() {
  std::vector<TensorRef> out = image.refs();
  for (auto& r : recipe.refs()) out.push_back(r);
  if (has_debias) {
    for (auto& r : classifier.refs()) out.push_back(r);
    out.push_back(tensor_ref("dictionary.embeddings", dict));
  }
  return out;
}

}  // namespace dbrt
