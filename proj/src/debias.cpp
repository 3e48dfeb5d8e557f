#include "dbrt/debias.hpp"

#include <algorithm>
#include <cmath>

namespace dbrt::debias {

int IngredientDictionary::index_of(int ingredient_id) const {
  auto it = index_.find(ingredient_id);
  return it == index_.end() ? -1 : it->second;
}

void IngredientDictionary::rebuild_index() {
  index_.clear();
  for (int i = 0; i < size(); ++i) index_[ids[static_cast<size_t>(i)]] = i;
}

std::map<int, std::pair<int64_t, Vec>> ingredient_instance_stats(
    const enc::RecipeEncoderParams& encoder,
    const std::vector<world::Recipe>& recipes) {
  std::map<int, std::pair<int64_t, Vec>> stats;
  for (const auto& recipe : recipes) {
    for (int id : recipe.ingredient_ids) {
      Vec inst = enc::encode_ingredient_instance(encoder, id, recipe);
      auto [it, fresh] =
          stats.try_emplace(id, 0, Vec::Zero(encoder.d_section));
      it->second.first += 1;
      it->second.second += inst;
    }
  }
  for (auto& [id, cm] : stats) cm.second /= static_cast<double>(cm.first);
  return stats;
}

namespace {

IngredientDictionary dictionary_from_stats(
    const enc::RecipeEncoderParams& encoder,
    const std::map<int, std::pair<int64_t, Vec>>& stats, int K) {
  if (static_cast<int>(stats.size()) < K)
    throw InvalidParameter(
        "build_dictionary: fewer distinct ingredients than requested size");

  std::vector<std::pair<int64_t, int>> by_freq;  // (count, id)
  by_freq.reserve(stats.size());
  for (const auto& [id, cm] : stats) by_freq.emplace_back(cm.first, id);
  std::sort(by_freq.begin(), by_freq.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });

  IngredientDictionary dict;
  dict.ids.reserve(static_cast<size_t>(K));
  dict.freq.reserve(static_cast<size_t>(K));
  dict.embeddings.resize(K, encoder.d_joint);
  for (int k = 0; k < K; ++k) {
    const auto& [count, id] = by_freq[static_cast<size_t>(k)];
    dict.ids.push_back(id);
    dict.freq.push_back(count);
    Vec proj = encoder.project_ingredient(stats.at(id).second);
    const double n = proj.norm();
    if (n > 0.0) proj /= n;
    dict.embeddings.row(k) = proj.transpose();
  }
  dict.rebuild_index();
  return dict;
}

}  // namespace

IngredientDictionary build_dictionary(const enc::RecipeEncoderParams& encoder,
                                      const std::vector<world::Recipe>& recipes,
                                      int K) {
  return dictionary_from_stats(encoder,
                               ingredient_instance_stats(encoder, recipes), K);
}

IngredientDictionary build_dictionary_filtered(
    const enc::RecipeEncoderParams& encoder,
    const std::vector<world::Recipe>& recipes, int K,
    const world::IngredientVocab& vocab, double min_visibility) {
  auto stats = ingredient_instance_stats(encoder, recipes);
  for (auto it = stats.begin(); it != stats.end();) {
    if (vocab.base_visibility[it->first] < min_visibility)
      it = stats.erase(it);
    else
      ++it;
  }
  return dictionary_from_stats(encoder, stats, K);
}

ClassifierParams::ClassifierParams(int k_labels_, int hidden_, int heads_,
                                   int layers_) {
  k_labels = k_labels_;
  hidden = hidden_;
  heads = heads_;
  layers = layers_;
  if (hidden % heads != 0)
    throw InvalidParameter("classifier: hidden must be divisible by heads");
  queries = Mat::Zero(k_labels, hidden);
  attn.resize(static_cast<size_t>(layers));
  for (auto& a : attn) {
    a.Wq = Mat::Zero(hidden, hidden);
    a.Wk = Mat::Zero(hidden, hidden);
    a.Wv = Mat::Zero(hidden, hidden);
    a.Wo = Mat::Zero(hidden, hidden);
  }
  score_w = Mat::Zero(k_labels, hidden);
  score_b = Vec::Zero(k_labels);
}

ClassifierParams ClassifierParams::zeros_like(const ClassifierParams& other) {
  return ClassifierParams(other.k_labels, other.hidden, other.heads,
                          other.layers);
}

void ClassifierParams::init(Rng& rng) {
  const double qa = std::sqrt(6.0 / static_cast<double>(k_labels + hidden));
  for (Eigen::Index c = 0; c < queries.cols(); ++c)
    for (Eigen::Index r = 0; r < queries.rows(); ++r)
      queries(r, c) = rng.uniform(-qa, qa);
  for (auto& a : attn) a.init(hidden, rng);
  const double sa = std::sqrt(6.0 / static_cast<double>(hidden + 1));
  for (Eigen::Index c = 0; c < score_w.cols(); ++c)
    for (Eigen::Index r = 0; r < score_w.rows(); ++r)
      score_w(r, c) = rng.uniform(-sa, sa);
  // Prior bias: start near p ~ 0.1 so the long-tailed targets do not flood
  // the selection path with half-on labels at initialization.
  score_b.setConstant(std::log(0.1 / 0.9));
}

void ClassifierParams::set_zero() {
  for (auto& r : refs()) std::fill(r.data, r.data + r.size(), 0.0);
}

std::vector<TensorRef> ClassifierParams::refs() {
  std::vector<TensorRef> out = {tensor_ref("classifier.queries", queries)};
  for (int l = 0; l < layers; ++l)
    for (auto& r : attn[static_cast<size_t>(l)].refs(
             "classifier.layer" + std::to_string(l)))
      out.push_back(r);
  out.push_back(tensor_ref("classifier.score_w", score_w));
  out.push_back(tensor_ref("classifier.score_b", score_b));
  return out;
}

long ClassifierParams::param_count() const {
  return total_size(const_cast<ClassifierParams*>(this)->refs());
}

Vec predict_ingredients(const ClassifierParams& c, const Mat& region_codes,
                        ClassifierTrace* trace) {
  if (region_codes.cols() != c.hidden)
    throw ShapeError("predict_ingredients: region code width mismatch");

  ClassifierTrace local;
  ClassifierTrace* tr = trace ? trace : &local;
  tr->Y.assign(1, c.queries);
  tr->attn.assign(static_cast<size_t>(c.layers), enc::AttnTrace{});
  for (int l = 0; l < c.layers; ++l) {
    const Mat& y = tr->Y.back();
    Mat out = enc::attention_forward(c.attn[static_cast<size_t>(l)], c.heads,
                                     y, region_codes,
                                     &tr->attn[static_cast<size_t>(l)]);
    tr->Y.push_back(y + out);
  }
  const Mat& yl = tr->Y.back();
  Vec scores(c.k_labels);
  for (int k = 0; k < c.k_labels; ++k)
    scores[k] = c.score_w.row(k).dot(yl.row(k)) + c.score_b[k];
  Vec p = scores.unaryExpr([](double s) { return 1.0 / (1.0 + std::exp(-s)); });
  tr->scores = std::move(scores);
  tr->p = p;
  return p;
}

void classifier_backward(const ClassifierParams& c, const Mat& region_codes,
                         const ClassifierTrace& trace, const Vec& d_scores,
                         ClassifierParams& grads, Mat& d_region_codes) {
  const Mat& yl = trace.Y.back();
  Mat dY = Mat::Zero(c.k_labels, c.hidden);
  for (int k = 0; k < c.k_labels; ++k) {
    grads.score_w.row(k) += d_scores[k] * yl.row(k);
    grads.score_b[k] += d_scores[k];
    dY.row(k) += d_scores[k] * c.score_w.row(k);
  }
  for (int l = c.layers - 1; l >= 0; --l) {
    Mat dY_in = dY;  // residual branch
    enc::attention_backward(c.attn[static_cast<size_t>(l)], c.heads,
                            trace.Y[static_cast<size_t>(l)], region_codes,
                            trace.attn[static_cast<size_t>(l)], dY,
                            grads.attn[static_cast<size_t>(l)], &dY_in,
                            &d_region_codes);
    dY = std::move(dY_in);
  }
  grads.queries += dY;
}

IngredientDistribution select_and_normalize(const Vec& p, double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidParameter("select_and_normalize: threshold must be in (0,1)");
  IngredientDistribution dist;
  double sum = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] > threshold) {
      dist.entries.emplace_back(static_cast<int>(k), p[k]);
      sum += p[k];
    }
  }
  for (auto& [idx, w] : dist.entries) w /= sum;
  return dist;
}

Vec debias_embedding(const Vec& e_image, const IngredientDictionary& dict,
                     const IngredientDistribution& dist) {
  if (dist.empty()) return e_image;
  Vec e = e_image;
  for (const auto& [idx, w] : dist.entries) {
    if (idx < 0 || idx >= dict.size())
      throw InvalidParameter("debias_embedding: dictionary index out of range");
    e += w * dict.embeddings.row(idx).transpose();
  }
  return e;
}

double debiased_similarity(const Vec& e_recipe, const Vec& e_image_debiased) {
  if (e_recipe.size() != e_image_debiased.size())
    throw ShapeError("debiased_similarity: dimension mismatch");
  return e_recipe.dot(e_image_debiased);
}

std::vector<int> dictionary_ingredients(const IngredientDictionary& dict,
                                        const world::Recipe& recipe) {
  std::vector<int> out;
  for (int id : recipe.ingredient_ids) {
    const int idx = dict.index_of(id);
    if (idx >= 0) out.push_back(idx);
  }
  std::sort(out.begin(), out.end());
  return out;
}

Vec multilabel_target(const IngredientDictionary& dict,
                      const world::Recipe& recipe) {
  Vec y = Vec::Zero(dict.size());
  for (int idx : dictionary_ingredients(dict, recipe)) y[idx] = 1.0;
  return y;
}

}  // namespace dbrt::debias
