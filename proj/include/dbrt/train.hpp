#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dbrt/losses.hpp"
#include "dbrt/model.hpp"
#include "dbrt/world.hpp"

namespace dbrt::train {

struct TrainConfig {
  // model dimensions
  int d_joint = 32;
  int d_section = 24;
  int d_hidden = 24;
  int attn_heads = 2;
  int cls_layers = 2;
  int cls_heads = 2;
  // optimization
  double lr_stage1 = 1e-3;
  double lr_stage2 = 3e-4;
  int batch_size = 64;
  int epochs_stage1 = 15;
  int epochs_stage2 = 15;
  double margin = 0.3;
  double lambda_cls = 1e-3;
  double gamma_pos = 1.0;
  double gamma_neg = 1.0;
  int dictionary_size = 64;
  double threshold = 0.5;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 7;
  int val_pool = 500;  // per-epoch validation pool cap

  void validate() const;
};

// Adam with bias correction; one state slot per parameter tensor.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps);
  void attach(const std::vector<TensorRef>& params);
  void step(const std::vector<TensorRef>& params,
            const std::vector<TensorRef>& grads);
  long steps_taken() const { return t_; }

  // Exact-resume support.
  std::vector<Vec>& moment1() { return m_; }
  std::vector<Vec>& moment2() { return v_; }
  void set_steps(long t) { t_ = t; }

 private:
  double lr_, b1_, b2_, eps_;
  long t_ = 0;
  std::vector<Vec> m_, v_;
};

struct EpochRecord {
  int stage = 1;
  int epoch = 0;
  double train_loss = 0.0;
  double train_triplet = 0.0;
  double train_cls = 0.0;
  double val_medr = 0.0;
  double val_r1 = 0.0;
  double mean_selected = 0.0;
  double cls_precision = 0.0;
  double cls_recall = 0.0;
  double cls_f1 = 0.0;
};

struct TrainedModel {
  Model model;
  TrainConfig config;
  std::vector<EpochRecord> history;
};

// Called after every epoch with the current model; used for checkpointing.
using EpochHook =
    std::function<void(int stage, int epoch, const Model&, Adam&)>;

// Stage 1: encoders only, triplet loss on (e_I, e_R).
TrainedModel train_stage1(const world::PairedDataset& ds,
                          const TrainConfig& cfg,
                          const EpochHook& hook = nullptr);

// Stage 2: builds the dictionary from the stage-1 ingredient-section encoder,
// initializes a fresh classifier, and fine-tunes everything end to end.
// With use_debias=false this is the matched no-debias continuation baseline:
// the same loop, seeds, and learning rate, but no classifier/dictionary.
// dict_override replaces the built dictionary (ablation studies).
TrainedModel train_stage2(const world::PairedDataset& ds, const Model& stage1,
                          const TrainConfig& cfg, bool use_debias = true,
                          const EpochHook& hook = nullptr,
                          const debias::IngredientDictionary* dict_override =
                              nullptr);

// One training epoch over a prebuilt item list; exposed for resumption and
// the stage-equivalence tests. Mutates model and optimizer in place.
loss::LossBreakdown run_epoch(Model& model, const world::PairedDataset& ds,
                              const std::vector<std::pair<int, int>>& items,
                              const loss::ObjectiveOpts& opts,
                              const TrainConfig& cfg, Adam& adam, int stage,
                              int epoch);

}  // namespace dbrt::train
