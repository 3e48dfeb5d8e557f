#pragma once

#include <vector>

#include "dbrt/common.hpp"
#include "dbrt/rng.hpp"
#include "dbrt/world.hpp"

namespace dbrt::enc {

// Multi-head scaled dot-product attention, shared by the image encoder
// (self-attention over regions) and the ingredient classifier
// (cross-attention of label queries over region codes).
struct AttnParams {
  Mat Wq, Wk, Wv, Wo;  // each hidden x hidden

  void init(int hidden, Rng& rng);
  std::vector<TensorRef> refs(const std::string& prefix);
  std::vector<TensorRef> refs(const std::string& prefix) const;
};

struct AttnTrace {
  Mat Q, K, V;             // nq x h, nkv x h
  std::vector<Mat> A;      // per head, nq x nkv softmax rows
  Mat Ocat;                // nq x h, concatenated head outputs
};

// out = concat_heads(softmax(Q_a K_a^T / sqrt(h/H)) V_a) Wo.
// The caller owns the residual connection.
Mat attention_forward(const AttnParams& p, int heads, const Mat& Xq,
                      const Mat& Xkv, AttnTrace* trace = nullptr);

// Accumulates into grads and, when non-null, into dXq/dXkv. For
// self-attention pass the same matrix for both destinations.
void attention_backward(const AttnParams& p, int heads, const Mat& Xq,
                        const Mat& Xkv, const AttnTrace& trace,
                        const Mat& d_out, AttnParams& grads, Mat* dXq,
                        Mat* dXkv);

struct ImageEncoderParams {
  int d_region = 0, hidden = 0, d_joint = 0, heads = 0;
  Mat W_in;   // d_region x hidden
  Vec b_in;   // hidden
  AttnParams attn;
  Mat W_out;  // hidden x d_joint
  Vec b_out;  // d_joint

  ImageEncoderParams() = default;
  ImageEncoderParams(int d_region, int hidden, int d_joint, int heads);
  static ImageEncoderParams zeros_like(const ImageEncoderParams& other);
  void init(Rng& rng);
  void set_zero();
  std::vector<TensorRef> refs();
  long param_count() const;
};

struct ImageTrace {
  Mat Z0, Z1;     // T x hidden (input projection, post-attention codes)
  AttnTrace attn;
  Vec pooled;     // hidden
  Vec u;          // d_joint, pre-normalization
  double norm = 0.0;
  Vec e;          // d_joint, unit
};

struct ImageEncoding {
  Vec e;            // e_I, unit norm
  Mat region_codes; // T x hidden, input to the classifier
};

ImageEncoding encode_image(const ImageEncoderParams& p,
                           const world::FoodImage& image,
                           ImageTrace* trace = nullptr);

// d_e is the gradient on the unit-normalized output; d_region_codes (optional)
// arrives from the classifier's cross-attention path.
void encode_image_backward(const ImageEncoderParams& p,
                           const world::FoodImage& image,
                           const ImageTrace& trace, const Vec& d_e,
                           const Mat* d_region_codes,
                           ImageEncoderParams& grads);

struct RecipeEncoderParams {
  int vocab_size = 0, n_actions = 0, d_section = 0, d_joint = 0;
  Mat title_table;   // V x ds
  Mat title_proj;    // ds x ds
  Vec title_bias;    // ds
  Mat ing_table;     // V x ds
  Mat ing_self;      // ds x ds, applied to the instance's own embedding
  Mat ing_ctx;       // ds x ds, applied to the recipe-mean context
  Vec ing_bias;      // ds
  Mat act_table;     // A x ds
  Mat instr_table;   // V x ds
  Mat instr_proj;    // ds x ds
  Vec instr_bias;    // ds
  Mat cat_proj;      // 3ds x d_joint
  Vec cat_bias;      // d_joint

  RecipeEncoderParams() = default;
  RecipeEncoderParams(int vocab_size, int n_actions, int d_section,
                      int d_joint);
  static RecipeEncoderParams zeros_like(const RecipeEncoderParams& other);
  void init(Rng& rng);
  void set_zero();
  std::vector<TensorRef> refs();
  long param_count() const;

  // Joint-space projection of an ingredient-section vector: the middle block
  // of cat_proj, bias-free. Used when building the ingredient dictionary.
  Vec project_ingredient(const Vec& section_vec) const;
};

struct RecipeTrace {
  Vec title_mean, ing_ctx_mean, instr_mean;  // ds each
  Vec title_vec, ing_vec, instr_vec;         // ds each, section outputs
  Vec concat;                                // 3ds
  Vec u;                                     // d_joint, pre-normalization
  double norm = 0.0;
  Vec e;                                     // d_joint, unit
};

Vec encode_recipe(const RecipeEncoderParams& p, const world::Recipe& recipe,
                  RecipeTrace* trace = nullptr);

void encode_recipe_backward(const RecipeEncoderParams& p,
                            const world::Recipe& recipe,
                            const RecipeTrace& trace, const Vec& d_e,
                            RecipeEncoderParams& grads);

// Ingredient-section embedding of one ingredient instance in its recipe,
// before section pooling. Dictionary construction only.
Vec encode_ingredient_instance(const RecipeEncoderParams& p, int ingredient_id,
                               const world::Recipe& recipe);

}  // namespace dbrt::enc
