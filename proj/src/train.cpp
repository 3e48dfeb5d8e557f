#include "dbrt/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "dbrt/eval.hpp"
#include "dbrt/rng.hpp"

namespace dbrt::train {

void TrainConfig::validate() const {
  if (lr_stage1 <= 0.0 || lr_stage2 <= 0.0)
    throw InvalidParameter("train config: learning rates must be positive");
  if (batch_size < 2)
    throw InvalidParameter("train config: batch size must be >= 2");
  if (lambda_cls < 0.0)
    throw InvalidParameter("train config: lambda_cls must be >= 0");
  if (epochs_stage1 < 0 || epochs_stage2 < 0)
    throw InvalidParameter("train config: epoch counts must be >= 0");
  if (dictionary_size < 1)
    throw InvalidParameter("train config: dictionary size must be >= 1");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw InvalidParameter("train config: threshold must lie in (0,1)");
}

Adam::Adam(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void Adam::attach(const std::vector<TensorRef>& params) {
  m_.clear();
  v_.clear();
  t_ = 0;
  for (const auto& p : params) {
    m_.push_back(Vec::Zero(p.size()));
    v_.push_back(Vec::Zero(p.size()));
  }
}

void Adam::step(const std::vector<TensorRef>& params,
                const std::vector<TensorRef>& grads) {
  if (params.size() != m_.size())
    throw ShapeError("adam: parameter list does not match attached state");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    double* th = params[i].data;
    const double* g = grads[i].data;
    Vec& m = m_[i];
    Vec& v = v_[i];
    const long n = static_cast<long>(params[i].size());
    for (long j = 0; j < n; ++j) {
      m[j] = b1_ * m[j] + (1.0 - b1_) * g[j];
      v[j] = b2_ * v[j] + (1.0 - b2_) * g[j] * g[j];
      th[j] -= lr_ * (m[j] / c1) / (std::sqrt(v[j] / c2) + eps_);
    }
  }
}

loss::LossBreakdown run_epoch(Model& model, const world::PairedDataset& ds,
                              const std::vector<std::pair<int, int>>& items,
                              const loss::ObjectiveOpts& opts,
                              const TrainConfig& cfg, Adam& adam, int stage,
                              int epoch) {
  std::vector<int> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(cfg.seed, "shuffle", static_cast<uint64_t>(stage),
                      static_cast<uint64_t>(epoch)));
  for (size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);

  const size_t B = static_cast<size_t>(cfg.batch_size);
  const size_t n_batches = items.size() / B;  // drop last partial batch
  if (n_batches == 0)
    throw InvalidParameter("run_epoch: fewer items than one batch");

  ModelGrads grads = ModelGrads::zeros_like(model);
  auto param_refs = model.refs();

  loss::LossBreakdown epoch_avg;
  for (size_t b = 0; b < n_batches; ++b) {
    std::vector<loss::BatchItem> batch;
    batch.reserve(B);
    for (size_t i = 0; i < B; ++i) {
      const auto& [r_idx, img_idx] = items[static_cast<size_t>(
          order[b * B + i])];
      batch.push_back({&ds.recipes[static_cast<size_t>(r_idx)],
                       &ds.images[static_cast<size_t>(img_idx)]});
    }
    auto breakdown = loss::total_loss(model, batch, opts, &grads);
    if (!std::isfinite(breakdown.total))
      throw DivergenceError("training diverged (non-finite loss) at stage " +
                            std::to_string(stage) + " epoch " +
                            std::to_string(epoch) + " batch " +
                            std::to_string(b));
    adam.step(param_refs, grads.refs());
    epoch_avg.total += breakdown.total;
    epoch_avg.triplet += breakdown.triplet;
    epoch_avg.cls += breakdown.cls;
    epoch_avg.mean_selected += breakdown.mean_selected;
  }
  const double nb = static_cast<double>(n_batches);
  epoch_avg.total /= nb;
  epoch_avg.triplet /= nb;
  epoch_avg.cls /= nb;
  epoch_avg.mean_selected /= nb;
  return epoch_avg;
}

namespace {

// Validation retrieval (single trial) and, in stage 2, classifier metrics.
EpochRecord validate_epoch(const Model& model, const world::PairedDataset& ds,
                           const TrainConfig& cfg, int stage, int epoch,
                           const loss::LossBreakdown& train_avg,
                           bool use_debias) {
  EpochRecord rec;
  rec.stage = stage;
  rec.epoch = epoch;
  rec.train_loss = train_avg.total;
  rec.train_triplet = train_avg.triplet;
  rec.train_cls = train_avg.cls;
  rec.mean_selected = train_avg.mean_selected;

  auto pool = eval::embed_pool(model, ds, world::Split::Val, cfg.threshold,
                               use_debias ? eval::EmbedMode::Debias
                                          : eval::EmbedMode::Raw);
  eval::EvalParams ep;
  ep.pool_size = std::min<int>(cfg.val_pool,
                               static_cast<int>(pool.recipe_ids.size()));
  ep.trials = 1;
  ep.seed = derive_seed(cfg.seed, "val", static_cast<uint64_t>(stage),
                        static_cast<uint64_t>(epoch));
  auto report = eval::sampled_eval(pool.images, pool.recipes, ep,
                                   "image-to-recipe");
  rec.val_medr = report.medr;
  rec.val_r1 = report.recall_at(1);

  if (use_debias) {
    std::vector<Vec> probs, targets;
    for (int r_idx : ds.val_ids) {
      const auto& recipe = ds.recipes[static_cast<size_t>(r_idx)];
      const auto& image =
          ds.images[static_cast<size_t>(r_idx * ds.multiplicity())];
      auto encI = enc::encode_image(model.image, image);
      probs.push_back(
          debias::predict_ingredients(model.classifier, encI.region_codes));
      targets.push_back(debias::multilabel_target(model.dict, recipe));
    }
    auto cm = eval::classifier_metrics(probs, targets, cfg.threshold);
    rec.cls_precision = cm.precision;
    rec.cls_recall = cm.recall;
    rec.cls_f1 = cm.f1;
  }
  return rec;
}

}  // namespace

TrainedModel train_stage1(const world::PairedDataset& ds,
                          const TrainConfig& cfg, const EpochHook& hook) {
  cfg.validate();

  TrainedModel out;
  out.config = cfg;
  Model& model = out.model;
  model.image = enc::ImageEncoderParams(ds.config.d_region, cfg.d_hidden,
                                        cfg.d_joint, cfg.attn_heads);
  model.recipe = enc::RecipeEncoderParams(ds.config.vocab_size,
                                          ds.config.n_actions, cfg.d_section,
                                          cfg.d_joint);
  {
    Rng rng(derive_seed(cfg.seed, "stage1-init"));
    model.image.init(rng);
    model.recipe.init(rng);
  }
  model.has_debias = false;

  Adam adam(cfg.lr_stage1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  adam.attach(model.refs());

  loss::ObjectiveOpts opts;
  opts.margin = cfg.margin;
  opts.use_debias = false;

  const auto items = ds.items(world::Split::Train);
  for (int e = 0; e < cfg.epochs_stage1; ++e) {
    auto avg = run_epoch(model, ds, items, opts, cfg, adam, 1, e);
    out.history.push_back(validate_epoch(model, ds, cfg, 1, e, avg, false));
    if (hook) hook(1, e, model, adam);
  }
  return out;
}

TrainedModel train_stage2(const world::PairedDataset& ds, const Model& stage1,
                          const TrainConfig& cfg, bool use_debias,
                          const EpochHook& hook,
                          const debias::IngredientDictionary* dict_override) {
  cfg.validate();

  TrainedModel out;
  out.config = cfg;
  Model& model = out.model;
  model.image = stage1.image;
  model.recipe = stage1.recipe;
  model.has_debias = use_debias;

  if (use_debias) {
    if (dict_override) {
      model.dict = *dict_override;
    } else {
      std::vector<world::Recipe> train_recipes;
      train_recipes.reserve(ds.train_ids.size());
      for (int r : ds.train_ids)
        train_recipes.push_back(ds.recipes[static_cast<size_t>(r)]);
      model.dict = debias::build_dictionary(model.recipe, train_recipes,
                                            cfg.dictionary_size);
    }
    model.classifier =
        debias::ClassifierParams(model.dict.size(), model.image.hidden,
                                 cfg.cls_heads, cfg.cls_layers);
    Rng rng(derive_seed(cfg.seed, "classifier-init"));
    model.classifier.init(rng);
  }

  Adam adam(cfg.lr_stage2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
  adam.attach(model.refs());

  loss::ObjectiveOpts opts;
  opts.margin = cfg.margin;
  opts.lambda_cls = cfg.lambda_cls;
  opts.gamma_pos = cfg.gamma_pos;
  opts.gamma_neg = cfg.gamma_neg;
  opts.threshold = cfg.threshold;
  opts.use_debias = use_debias;

  const auto items = ds.items(world::Split::Train);
  for (int e = 0; e < cfg.epochs_stage2; ++e) {
    auto avg = run_epoch(model, ds, items, opts, cfg, adam, 2, e);
    out.history.push_back(validate_epoch(model, ds, cfg, 2, e, avg, use_debias));
    if (hook) hook(2, e, model, adam);
  }
  return out;
}

}  // namespace dbrt::train
