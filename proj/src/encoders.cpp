#include "dbrt/encoders.hpp"

#include <algorithm>
#include <cmath>

namespace dbrt::enc {

namespace {

void xavier(Mat& m, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-a, a);
}

void table_init(Mat& m, Rng& rng, double scale = 0.3) {
  for (Eigen::Index c = 0; c < m.cols(); ++c)
    for (Eigen::Index r = 0; r < m.rows(); ++r) m(r, c) = scale * rng.normal();
}

// Gradient of y = u / ||u|| given upstream d_y.
Vec normalize_backward(const Vec& e, double norm, const Vec& d_y) {
  return (d_y - d_y.dot(e) * e) / norm;
}

void check_token(int id, int limit, const char* what) {
  if (id < 0 || id >= limit)
    throw InvalidParameter(std::string("unknown token id in ") + what);
}

}  // namespace

void AttnParams::init(int hidden, Rng& rng) {
  Wq.resize(hidden, hidden);
  Wk.resize(hidden, hidden);
  Wv.resize(hidden, hidden);
  Wo.resize(hidden, hidden);
  xavier(Wq, rng);
  xavier(Wk, rng);
  xavier(Wv, rng);
  xavier(Wo, rng);
}

std::vector<TensorRef> AttnParams::refs(const std::string& prefix) {
  return {tensor_ref(prefix + ".Wq", Wq), tensor_ref(prefix + ".Wk", Wk),
          tensor_ref(prefix + ".Wv", Wv), tensor_ref(prefix + ".Wo", Wo)};
}

Mat attention_forward(const AttnParams& p, int heads, const Mat& Xq,
                      const Mat& Xkv, AttnTrace* trace) {
  const Eigen::Index h = p.Wq.cols();
  if (Xq.cols() != h || Xkv.cols() != h)
    throw ShapeError("attention: input width does not match parameters");
  if (h % heads != 0)
    throw ShapeError("attention: hidden size not divisible by head count");
  const Eigen::Index hd = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat Q = Xq * p.Wq;
  Mat K = Xkv * p.Wk;
  Mat V = Xkv * p.Wv;
  Mat Ocat(Xq.rows(), h);
  std::vector<Mat> As(static_cast<size_t>(heads));
  for (int a = 0; a < heads; ++a) {
    const auto Qa = Q.middleCols(a * hd, hd);
    const auto Ka = K.middleCols(a * hd, hd);
    const auto Va = V.middleCols(a * hd, hd);
    Mat S = scale * (Qa * Ka.transpose());
    // row-wise softmax, shifted for stability
    for (Eigen::Index r = 0; r < S.rows(); ++r) {
      const double mx = S.row(r).maxCoeff();
      S.row(r) = (S.row(r).array() - mx).exp();
      S.row(r) /= S.row(r).sum();
    }
    Ocat.middleCols(a * hd, hd) = S * Va;
    As[static_cast<size_t>(a)] = std::move(S);
  }
  Mat out = Ocat * p.Wo;
  if (trace) {
    trace->Q = std::move(Q);
    trace->K = std::move(K);
    trace->V = std::move(V);
    trace->A = std::move(As);
    trace->Ocat = std::move(Ocat);
  }
  return out;
}

void attention_backward(const AttnParams& p, int heads, const Mat& Xq,
                        const Mat& Xkv, const AttnTrace& trace,
                        const Mat& d_out, AttnParams& grads, Mat* dXq,
                        Mat* dXkv) {
  const Eigen::Index h = p.Wq.cols();
  const Eigen::Index hd = h / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  grads.Wo += trace.Ocat.transpose() * d_out;
  Mat dOcat = d_out * p.Wo.transpose();

  Mat dQ = Mat::Zero(trace.Q.rows(), h);
  Mat dK = Mat::Zero(trace.K.rows(), h);
  Mat dV = Mat::Zero(trace.V.rows(), h);
  for (int a = 0; a < heads; ++a) {
    const Mat& A = trace.A[static_cast<size_t>(a)];
    const auto Ka = trace.K.middleCols(a * hd, hd);
    const auto Qa = trace.Q.middleCols(a * hd, hd);
    const auto Va = trace.V.middleCols(a * hd, hd);
    const auto dOa = dOcat.middleCols(a * hd, hd);

    dV.middleCols(a * hd, hd) = A.transpose() * dOa;
    Mat dA = dOa * Va.transpose();
    Mat dS(A.rows(), A.cols());
    for (Eigen::Index r = 0; r < A.rows(); ++r) {
      const double dot = A.row(r).dot(dA.row(r));
      dS.row(r) = (A.row(r).array() * (dA.row(r).array() - dot)).matrix();
    }
    dS *= scale;
    dQ.middleCols(a * hd, hd) = dS * Ka;
    dK.middleCols(a * hd, hd) = dS.transpose() * Qa;
  }
  grads.Wq += Xq.transpose() * dQ;
  grads.Wk += Xkv.transpose() * dK;
  grads.Wv += Xkv.transpose() * dV;
  if (dXq) *dXq += dQ * p.Wq.transpose();
  if (dXkv) *dXkv += dK * p.Wk.transpose() + dV * p.Wv.transpose();
}

ImageEncoderParams::ImageEncoderParams(int d_region_, int hidden_, int d_joint_,
                                       int heads_) {
  d_region = d_region_;
  hidden = hidden_;
  d_joint = d_joint_;
  heads = heads_;
  if (hidden % heads != 0)
    throw InvalidParameter("image encoder: hidden must be divisible by heads");
  W_in = Mat::Zero(d_region, hidden);
  b_in = Vec::Zero(hidden);
  attn.Wq = Mat::Zero(hidden, hidden);
  attn.Wk = Mat::Zero(hidden, hidden);
  attn.Wv = Mat::Zero(hidden, hidden);
  attn.Wo = Mat::Zero(hidden, hidden);
  W_out = Mat::Zero(hidden, d_joint);
  b_out = Vec::Zero(d_joint);
}

ImageEncoderParams ImageEncoderParams::zeros_like(
    const ImageEncoderParams& other) {
  return ImageEncoderParams(other.d_region, other.hidden, other.d_joint,
                            other.heads);
}

void ImageEncoderParams::init(Rng& rng) {
  xavier(W_in, rng);
  b_in.setZero();
  attn.init(hidden, rng);
  xavier(W_out, rng);
  b_out.setZero();
}

void ImageEncoderParams::set_zero() {
  for (auto& r : refs()) std::fill(r.data, r.data + r.size(), 0.0);
}

std::vector<TensorRef> ImageEncoderParams::refs() {
  std::vector<TensorRef> out = {tensor_ref("image.W_in", W_in),
                                tensor_ref("image.b_in", b_in)};
  for (auto& r : attn.refs("image.attn")) out.push_back(r);
  out.push_back(tensor_ref("image.W_out", W_out));
  out.push_back(tensor_ref("image.b_out", b_out));
  return out;
}

long ImageEncoderParams::param_count() const {
  return const_cast<ImageEncoderParams*>(this)->refs().empty()
             ? 0
             : total_size(const_cast<ImageEncoderParams*>(this)->refs());
}

ImageEncoding encode_image(const ImageEncoderParams& p,
                           const world::FoodImage& image, ImageTrace* trace) {
  if (image.region_features.cols() != p.d_region)
    throw ShapeError("encode_image: region feature width mismatch");
  const Eigen::Index T = image.region_features.rows();
  if (T < 1) throw ShapeError("encode_image: image has no regions");

  Mat Z0 = image.region_features * p.W_in;
  Z0.rowwise() += p.b_in.transpose();

  AttnTrace local;
  AttnTrace* at = trace ? &trace->attn : &local;
  Mat Z1 = Z0 + attention_forward(p.attn, p.heads, Z0, Z0, at);

  Vec pooled = Z1.colwise().mean().transpose();
  Vec u = p.W_out.transpose() * pooled + p.b_out;
  const double norm = u.norm();
  if (!(norm > 0.0))
    throw ShapeError("encode_image: zero-norm embedding cannot be normalized");
  Vec e = u / norm;

  if (trace) {
    trace->Z0 = std::move(Z0);
    trace->Z1 = Z1;
    trace->pooled = std::move(pooled);
    trace->u = std::move(u);
    trace->norm = norm;
    trace->e = e;
  }
  return ImageEncoding{std::move(e), std::move(Z1)};
}

void encode_image_backward(const ImageEncoderParams& p,
                           const world::FoodImage& image,
                           const ImageTrace& trace, const Vec& d_e,
                           const Mat* d_region_codes,
                           ImageEncoderParams& grads) {
  const Eigen::Index T = trace.Z1.rows();
  Vec d_u = normalize_backward(trace.e, trace.norm, d_e);

  grads.W_out += trace.pooled * d_u.transpose();
  grads.b_out += d_u;
  Vec d_pooled = p.W_out * d_u;

  Mat dZ1 = Mat::Zero(T, p.hidden);
  dZ1.rowwise() += (d_pooled / static_cast<double>(T)).transpose();
  if (d_region_codes) dZ1 += *d_region_codes;

  Mat dZ0 = dZ1;  // residual branch
  attention_backward(p.attn, p.heads, trace.Z0, trace.Z0, trace.attn, dZ1,
                     grads.attn, &dZ0, &dZ0);

  grads.W_in += image.region_features.transpose() * dZ0;
  grads.b_in += dZ0.colwise().sum().transpose();
}

RecipeEncoderParams::RecipeEncoderParams(int vocab_size_, int n_actions_,
                                         int d_section_, int d_joint_) {
  vocab_size = vocab_size_;
  n_actions = n_actions_;
  d_section = d_section_;
  d_joint = d_joint_;
  title_table = Mat::Zero(vocab_size, d_section);
  title_proj = Mat::Zero(d_section, d_section);
  title_bias = Vec::Zero(d_section);
  ing_table = Mat::Zero(vocab_size, d_section);
  ing_self = Mat::Zero(d_section, d_section);
  ing_ctx = Mat::Zero(d_section, d_section);
  ing_bias = Vec::Zero(d_section);
  act_table = Mat::Zero(n_actions, d_section);
  instr_table = Mat::Zero(vocab_size, d_section);
  instr_proj = Mat::Zero(d_section, d_section);
  instr_bias = Vec::Zero(d_section);
  cat_proj = Mat::Zero(3 * d_section, d_joint);
  cat_bias = Vec::Zero(d_joint);
}

RecipeEncoderParams RecipeEncoderParams::zeros_like(
    const RecipeEncoderParams& other) {
  return RecipeEncoderParams(other.vocab_size, other.n_actions,
                             other.d_section, other.d_joint);
}

void RecipeEncoderParams::init(Rng& rng) {
  table_init(title_table, rng);
  xavier(title_proj, rng);
  title_bias.setZero();
  table_init(ing_table, rng);
  xavier(ing_self, rng);
  xavier(ing_ctx, rng);
  ing_bias.setZero();
  table_init(act_table, rng);
  table_init(instr_table, rng);
  xavier(instr_proj, rng);
  instr_bias.setZero();
  xavier(cat_proj, rng);
  cat_bias.setZero();
}

void RecipeEncoderParams::set_zero() {
  for (auto& r : refs()) std::fill(r.data, r.data + r.size(), 0.0);
}

std::vector<TensorRef> RecipeEncoderParams::refs() {
  return {tensor_ref("recipe.title_table", title_table),
          tensor_ref("recipe.title_proj", title_proj),
          tensor_ref("recipe.title_bias", title_bias),
          tensor_ref("recipe.ing_table", ing_table),
          tensor_ref("recipe.ing_self", ing_self),
          tensor_ref("recipe.ing_ctx", ing_ctx),
          tensor_ref("recipe.ing_bias", ing_bias),
          tensor_ref("recipe.act_table", act_table),
          tensor_ref("recipe.instr_table", instr_table),
          tensor_ref("recipe.instr_proj", instr_proj),
          tensor_ref("recipe.instr_bias", instr_bias),
          tensor_ref("recipe.cat_proj", cat_proj),
          tensor_ref("recipe.cat_bias", cat_bias)};
}

long RecipeEncoderParams::param_count() const {
  return total_size(const_cast<RecipeEncoderParams*>(this)->refs());
}

Vec RecipeEncoderParams::project_ingredient(const Vec& section_vec) const {
  return cat_proj.middleRows(d_section, d_section).transpose() * section_vec;
}

namespace {

Vec table_mean(const Mat& table, const std::vector<int>& ids, int limit,
               const char* what) {
  Vec m = Vec::Zero(table.cols());
  for (int id : ids) {
    check_token(id, limit, what);
    m += table.row(id).transpose();
  }
  return m / static_cast<double>(ids.size());
}

}  // namespace

Vec encode_recipe(const RecipeEncoderParams& p, const world::Recipe& recipe,
                  RecipeTrace* trace) {
  if (recipe.title_tokens.empty() || recipe.ingredient_ids.empty() ||
      recipe.instruction_tokens.empty())
    throw InvalidParameter("encode_recipe: recipe has an empty section");

  Vec title_mean =
      table_mean(p.title_table, recipe.title_tokens, p.vocab_size, "title");
  Vec title_vec = p.title_proj.transpose() * title_mean + p.title_bias;

  Vec ctx =
      table_mean(p.ing_table, recipe.ingredient_ids, p.vocab_size, "ingredients");
  Vec ing_vec =
      p.ing_self.transpose() * ctx + p.ing_ctx.transpose() * ctx + p.ing_bias;

  Vec instr_mean = Vec::Zero(p.d_section);
  for (const auto& [action, ing] : recipe.instruction_tokens) {
    check_token(action, p.n_actions, "instructions");
    check_token(ing, p.vocab_size, "instructions");
    instr_mean += p.act_table.row(action).transpose();
    instr_mean += p.instr_table.row(ing).transpose();
  }
  instr_mean /= static_cast<double>(recipe.instruction_tokens.size());
  Vec instr_vec = p.instr_proj.transpose() * instr_mean + p.instr_bias;

  Vec concat(3 * p.d_section);
  concat << title_vec, ing_vec, instr_vec;
  Vec u = p.cat_proj.transpose() * concat + p.cat_bias;
  const double norm = u.norm();
  if (!(norm > 0.0))
    throw ShapeError("encode_recipe: zero-norm embedding cannot be normalized");
  Vec e = u / norm;

  if (trace) {
    trace->title_mean = std::move(title_mean);
    trace->ing_ctx_mean = std::move(ctx);
    trace->instr_mean = std::move(instr_mean);
    trace->title_vec = std::move(title_vec);
    trace->ing_vec = std::move(ing_vec);
    trace->instr_vec = std::move(instr_vec);
    trace->concat = std::move(concat);
    trace->u = std::move(u);
    trace->norm = norm;
    trace->e = e;
  }
  return e;
}

void encode_recipe_backward(const RecipeEncoderParams& p,
                            const world::Recipe& recipe,
                            const RecipeTrace& trace, const Vec& d_e,
                            RecipeEncoderParams& grads) {
  Vec d_u = normalize_backward(trace.e, trace.norm, d_e);
  grads.cat_proj += trace.concat * d_u.transpose();
  grads.cat_bias += d_u;
  Vec d_concat = p.cat_proj * d_u;

  const int ds = p.d_section;
  Vec d_title = d_concat.segment(0, ds);
  Vec d_ing = d_concat.segment(ds, ds);
  Vec d_instr = d_concat.segment(2 * ds, ds);

  grads.title_proj += trace.title_mean * d_title.transpose();
  grads.title_bias += d_title;
  Vec d_title_mean = p.title_proj * d_title;
  const double n_title = static_cast<double>(recipe.title_tokens.size());
  for (int id : recipe.title_tokens)
    grads.title_table.row(id) += (d_title_mean / n_title).transpose();

  grads.ing_self += trace.ing_ctx_mean * d_ing.transpose();
  grads.ing_ctx += trace.ing_ctx_mean * d_ing.transpose();
  grads.ing_bias += d_ing;
  Vec d_ctx = p.ing_self * d_ing + p.ing_ctx * d_ing;
  const double n_ing = static_cast<double>(recipe.ingredient_ids.size());
  for (int id : recipe.ingredient_ids)
    grads.ing_table.row(id) += (d_ctx / n_ing).transpose();

  grads.instr_proj += trace.instr_mean * d_instr.transpose();
  grads.instr_bias += d_instr;
  Vec d_instr_mean = p.instr_proj * d_instr;
  const double n_tok = static_cast<double>(recipe.instruction_tokens.size());
  for (const auto& [action, ing] : recipe.instruction_tokens) {
    grads.act_table.row(action) += (d_instr_mean / n_tok).transpose();
    grads.instr_table.row(ing) += (d_instr_mean / n_tok).transpose();
  }
}

Vec encode_ingredient_instance(const RecipeEncoderParams& p, int ingredient_id,
                               const world::Recipe& recipe) {
  const auto& ids = recipe.ingredient_ids;
  if (std::find(ids.begin(), ids.end(), ingredient_id) == ids.end())
    throw InvalidParameter(
        "encode_ingredient_instance: ingredient not in recipe");
  check_token(ingredient_id, p.vocab_size, "ingredients");
  Vec ctx = table_mean(p.ing_table, ids, p.vocab_size, "ingredients");
  return p.ing_self.transpose() * p.ing_table.row(ingredient_id).transpose() +
         p.ing_ctx.transpose() * ctx + p.ing_bias;
}

}  // namespace dbrt::enc
