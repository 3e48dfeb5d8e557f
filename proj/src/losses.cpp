#include "dbrt/losses.hpp"

#include <algorithm>
#include <cmath>

#include "dbrt/rng.hpp"

namespace dbrt::loss {

namespace {
constexpr double kProbClamp = 1e-7;
}

double triplet_loss_bidirectional(const Mat& img, const Mat& rec,
                                  double margin, Mat* d_img, Mat* d_rec) {
  const Eigen::Index B = img.rows();
  if (B < 2)
    throw InvalidParameter("triplet loss: batch must contain at least 2 pairs");
  if (rec.rows() != B || rec.cols() != img.cols())
    throw ShapeError("triplet loss: embedding shapes disagree");
  if (!img.allFinite() || !rec.allFinite())
    throw InvalidParameter("triplet loss: non-finite embeddings");

  Mat S = img * rec.transpose();
  Mat dS;
  if (d_img) dS = Mat::Zero(B, B);
  const double w = 1.0 / (2.0 * static_cast<double>(B));

  double total = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {  // image anchors vs recipe negatives
    Eigen::Index hard = i == 0 ? 1 : 0;
    for (Eigen::Index j = 0; j < B; ++j)
      if (j != i && S(i, j) > S(i, hard)) hard = j;
    const double h = S(i, hard) - S(i, i) + margin;
    if (h > 0.0) {
      total += w * h;
      if (d_img) {
        dS(i, hard) += w;
        dS(i, i) -= w;
      }
    }
  }
  for (Eigen::Index j = 0; j < B; ++j) {  // recipe anchors vs image negatives
    Eigen::Index hard = j == 0 ? 1 : 0;
    for (Eigen::Index i = 0; i < B; ++i)
      if (i != j && S(i, j) > S(hard, j)) hard = i;
    const double h = S(hard, j) - S(j, j) + margin;
    if (h > 0.0) {
      total += w * h;
      if (d_img) {
        dS(hard, j) += w;
        dS(j, j) -= w;
      }
    }
  }
  if (d_img) {
    *d_img = dS * rec;
    *d_rec = dS.transpose() * img;
  }
  return total;
}

namespace {

// Per-label loss term and its derivative w.r.t. the clamped probability.
double asym_term(double pc, double y, double gp, double gm, double* d_pc) {
  if (y > 0.5) {
    const double one_m = 1.0 - pc;
    const double pow_p = gp == 0.0 ? 1.0 : std::pow(one_m, gp);
    if (d_pc) {
      double t = -pow_p / pc;
      if (gp > 0.0) t += gp * std::pow(one_m, gp - 1.0) * std::log(pc);
      *d_pc = t;
    }
    return -pow_p * std::log(pc);
  }
  const double pow_m = gm == 0.0 ? 1.0 : std::pow(pc, gm);
  if (d_pc) {
    double t = pow_m / (1.0 - pc);
    if (gm > 0.0) t -= gm * std::pow(pc, gm - 1.0) * std::log(1.0 - pc);
    *d_pc = t;
  }
  return -pow_m * std::log(1.0 - pc);
}

}  // namespace

double asymmetric_loss(const Vec& p, const Vec& y, double gamma_pos,
                       double gamma_neg, Vec* d_p) {
  if (!p.allFinite() || !y.allFinite())
    throw InvalidParameter("asymmetric loss: non-finite input");
  if (p.size() != y.size())
    throw ShapeError("asymmetric loss: p and y sizes disagree");
  const Eigen::Index K = p.size();
  if (K == 0) throw InvalidParameter("asymmetric loss: empty input");

  if (d_p) *d_p = Vec::Zero(K);
  double total = 0.0;
  for (Eigen::Index k = 0; k < K; ++k) {
    const double pc = std::clamp(p[k], kProbClamp, 1.0 - kProbClamp);
    double d = 0.0;
    total += asym_term(pc, y[k], gamma_pos, gamma_neg, d_p ? &d : nullptr);
    // Clamping is a dead zone: outside the clamp range the term is constant.
    if (d_p && p[k] > kProbClamp && p[k] < 1.0 - kProbClamp)
      (*d_p)[k] = d / static_cast<double>(K);
  }
  return total / static_cast<double>(K);
}

namespace {

struct ItemState {
  enc::ImageTrace img_trace;
  enc::RecipeTrace rec_trace;
  debias::ClassifierTrace cls_trace;
  Mat region_codes;
  Vec p, y;
  std::vector<int> selected;  // dict indices with p > threshold
  double sel_sum = 0.0;       // sum of raw probabilities over selected
};

}  // namespace

LossBreakdown total_loss(const Model& m, const std::vector<BatchItem>& batch,
                         const ObjectiveOpts& opts, ModelGrads* grads) {
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  if (B < 2)
    throw InvalidParameter("total loss: batch must contain at least 2 pairs");
  if (opts.use_debias && m.dict.size() == 0)
    throw InvalidParameter("total loss: debias requested without a dictionary");

  const int d = m.image.d_joint;
  Mat imgE(B, d), recE(B, d);
  std::vector<ItemState> states;
  if (grads) states.resize(static_cast<size_t>(B));

  LossBreakdown out;
  double cls_sum = 0.0;
  long selected_sum = 0;

  for (Eigen::Index i = 0; i < B; ++i) {
    ItemState scratch;
    ItemState& st = grads ? states[static_cast<size_t>(i)] : scratch;
    const auto& item = batch[static_cast<size_t>(i)];

    auto encI = enc::encode_image(m.image, *item.image,
                                  grads ? &st.img_trace : nullptr);
    Vec eR = enc::encode_recipe(m.recipe, *item.recipe,
                                grads ? &st.rec_trace : nullptr);
    Vec eTil = encI.e;

    if (opts.use_debias) {
      st.region_codes = std::move(encI.region_codes);
      st.p = debias::predict_ingredients(m.classifier, st.region_codes,
                                         grads ? &st.cls_trace : nullptr);
      st.y = debias::multilabel_target(m.dict, *item.recipe);
      for (Eigen::Index k = 0; k < st.p.size(); ++k) {
        if (st.p[k] > opts.threshold) {
          st.selected.push_back(static_cast<int>(k));
          st.sel_sum += st.p[k];
        }
      }
      for (int k : st.selected)
        eTil += (st.p[k] / st.sel_sum) * m.dict.embeddings.row(k).transpose();
      selected_sum += static_cast<long>(st.selected.size());
      cls_sum += asymmetric_loss(st.p, st.y, opts.gamma_pos, opts.gamma_neg);
    }
    imgE.row(i) = eTil.transpose();
    recE.row(i) = eR.transpose();
  }

  Mat d_img, d_rec;
  out.triplet = triplet_loss_bidirectional(imgE, recE, opts.margin,
                                           grads ? &d_img : nullptr,
                                           grads ? &d_rec : nullptr);
  if (opts.use_debias) {
    out.cls = cls_sum / static_cast<double>(B);
    out.mean_selected =
        static_cast<double>(selected_sum) / static_cast<double>(B);
  }
  out.total = out.triplet + opts.lambda_cls * out.cls;

  if (!grads) return out;

  grads->set_zero();
  for (Eigen::Index i = 0; i < B; ++i) {
    ItemState& st = states[static_cast<size_t>(i)];
    const auto& item = batch[static_cast<size_t>(i)];
    Vec d_eTil = d_img.row(i).transpose();
    Vec d_eI = d_eTil;  // identity path of the debiased embedding

    if (opts.use_debias) {
      Vec d_scores = Vec::Zero(st.p.size());

      if (!st.selected.empty()) {
        // w_k = p_k / sum(p over selected); expectation over dictionary rows.
        double wdot = 0.0;
        std::vector<double> dw(st.selected.size());
        for (size_t s = 0; s < st.selected.size(); ++s) {
          const int k = st.selected[s];
          const double w = st.p[k] / st.sel_sum;
          grads->dict.row(k) += w * d_eTil.transpose();
          dw[s] = m.dict.embeddings.row(k).dot(d_eTil);
          wdot += w * dw[s];
        }
        for (size_t s = 0; s < st.selected.size(); ++s) {
          const int k = st.selected[s];
          const double d_pk = (dw[s] - wdot) / st.sel_sum;
          d_scores[k] += d_pk * st.p[k] * (1.0 - st.p[k]);
        }
      }

      if (opts.lambda_cls != 0.0) {
        Vec d_p;
        asymmetric_loss(st.p, st.y, opts.gamma_pos, opts.gamma_neg, &d_p);
        const double scale = opts.lambda_cls / static_cast<double>(B);
        for (Eigen::Index k = 0; k < st.p.size(); ++k)
          d_scores[k] += scale * d_p[k] * st.p[k] * (1.0 - st.p[k]);
      }

      Mat d_codes = Mat::Zero(st.region_codes.rows(), st.region_codes.cols());
      if (opts.freeze_classifier) {
        if (!d_scores.isZero(0.0)) {
          debias::ClassifierParams sink =
              debias::ClassifierParams::zeros_like(m.classifier);
          debias::classifier_backward(m.classifier, st.region_codes,
                                      st.cls_trace, d_scores, sink, d_codes);
        }
      } else {
        debias::classifier_backward(m.classifier, st.region_codes,
                                    st.cls_trace, d_scores, grads->classifier,
                                    d_codes);
      }
      const bool any_codes = !d_codes.isZero(0.0);
      enc::encode_image_backward(m.image, *item.image, st.img_trace, d_eI,
                                 any_codes ? &d_codes : nullptr, grads->image);
    } else {
      enc::encode_image_backward(m.image, *item.image, st.img_trace, d_eI,
                                 nullptr, grads->image);
    }
    enc::encode_recipe_backward(m.recipe, *item.recipe, st.rec_trace,
                                d_rec.row(i).transpose(), grads->recipe);
  }
  return out;
}

GradCheckReport check_gradients(Model& m, const std::vector<BatchItem>& batch,
                                const ObjectiveOpts& opts, double step,
                                double tolerance, uint64_t seed,
                                int probes_per_group,
                                const FaultInjection* fault) {
  if (step < 1e-6 || step > 1e-3)
    throw InvalidParameter("check_gradients: step must lie in [1e-6, 1e-3]");

  ModelGrads grads = ModelGrads::zeros_like(m);
  total_loss(m, batch, opts, &grads);

  auto param_refs = m.refs();
  auto grad_refs = grads.refs();
  if (fault) {
    for (auto& g : grad_refs)
      if (g.name == fault->group) g.data[fault->coord] += fault->delta;
  }

  GradCheckReport report;
  for (size_t t = 0; t < param_refs.size(); ++t) {
    TensorRef& pr = param_refs[t];
    const TensorRef& gr = grad_refs[t];
    const long n = static_cast<long>(pr.size());

    GradCheckEntry entry;
    entry.group = pr.name;
    for (int probe = 0; probe < probes_per_group; ++probe) {
      Rng rng(derive_seed(seed, pr.name, static_cast<uint64_t>(probe)));
      Vec u(n);
      for (long i = 0; i < n; ++i) u[i] = rng.normal();
      u /= u.norm();

      double analytic = 0.0;
      for (long i = 0; i < n; ++i) analytic += gr.data[i] * u[i];

      std::vector<double> saved(pr.data, pr.data + n);
      for (long i = 0; i < n; ++i) pr.data[i] = saved[static_cast<size_t>(i)] + step * u[i];
      const double lp = total_loss(m, batch, opts).total;
      for (long i = 0; i < n; ++i) pr.data[i] = saved[static_cast<size_t>(i)] - step * u[i];
      const double lm = total_loss(m, batch, opts).total;
      std::copy(saved.begin(), saved.end(), pr.data);

      const double numeric = (lp - lm) / (2.0 * step);
      const double rel = std::abs(analytic - numeric) /
                         std::max({std::abs(analytic), std::abs(numeric), 1e-3});
      if (rel > entry.rel_err) {
        entry.rel_err = rel;
        entry.analytic = analytic;
        entry.numeric = numeric;
      }
    }
    entry.ok = entry.rel_err <= tolerance;
    report.entries.push_back(entry);
    report.max_rel_err = std::max(report.max_rel_err, entry.rel_err);
    report.all_ok = report.all_ok && entry.ok;
  }
  return report;
}

}  // namespace dbrt::loss
