#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dbrt/model.hpp"
#include "dbrt/world.hpp"

namespace dbrt::loss {

struct BatchItem {
  const world::Recipe* recipe = nullptr;
  const world::FoodImage* image = nullptr;
};

// Bidirectional margin ranking loss with hardest in-batch negatives;
// similarity is the dot product. Returns the mean over both directions.
// Optional gradients accumulate into d_img / d_rec (B x d, preallocated or
// empty; resized and zeroed here).
double triplet_loss_bidirectional(const Mat& img, const Mat& rec,
                                  double margin, Mat* d_img = nullptr,
                                  Mat* d_rec = nullptr);

// Focal-style multi-label loss with separate positive/negative exponents,
// negated so that it is minimized; probabilities are clamped to
// [1e-7, 1-1e-7] before the logs. Optional gradient w.r.t. p.
double asymmetric_loss(const Vec& p, const Vec& y, double gamma_pos,
                       double gamma_neg, Vec* d_p = nullptr);

struct ObjectiveOpts {
  double margin = 0.3;
  double lambda_cls = 1e-3;
  double gamma_pos = 1.0;
  double gamma_neg = 1.0;
  double threshold = 0.5;
  bool use_debias = false;
  bool freeze_classifier = false;
};

struct LossBreakdown {
  double total = 0.0;
  double triplet = 0.0;
  double cls = 0.0;
  double mean_selected = 0.0;  // mean thresholded-set size per image
};

// Full composed objective: encoders -> (classifier -> selection -> debiased
// embedding) -> triplet + lambda * classification. When grads is non-null it
// is zeroed and filled with the exact gradient of `total` w.r.t. every
// parameter tensor of the model (dictionary entries included).
LossBreakdown total_loss(const Model& m, const std::vector<BatchItem>& batch,
                         const ObjectiveOpts& opts,
                         ModelGrads* grads = nullptr);

struct FaultInjection {
  std::string group;
  long coord = 0;
  double delta = 1.0;
};

struct GradCheckEntry {
  std::string group;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool all_ok = true;
};

// Compares the implemented gradient of total_loss against central finite
// differences along random unit directions, one entry per parameter tensor.
// `fault` (test hook) perturbs the analytic gradient of one tensor before
// comparison so detection can be exercised.
GradCheckReport check_gradients(Model& m, const std::vector<BatchItem>& batch,
                                const ObjectiveOpts& opts, double step,
                                double tolerance, uint64_t seed,
                                int probes_per_group = 2,
                                const FaultInjection* fault = nullptr);

}  // namespace dbrt::loss
