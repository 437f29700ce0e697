#pragma once

#include <functional>
#include <optional>
#include <ostream>

#include "cscl.hpp"
#include "model.hpp"

namespace udair {

struct TrainSettings {
  double alpha = 1.0;  // MAE weight
  double beta = 0.2;   // CSCL weight
  double vq_codebook_weight = 1.0;
  double vq_commitment_weight = 0.25;
  double lr = 1e-4;
  double lr_floor = 1e-6;
  std::string schedule = "cosine";  // "cosine" | "constant"
  int steps = 2000;
  int samples_per_task = 2;
  int crop = 128;
  bool augment = true;
  double weight_decay = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  Variant variant = Variant::Full;
  CsclConfig cscl;
  uint64_t seed = 0;
  bool dead_code_reseed = true;
};

ag::Var mae_loss(const ag::Var& pred, const ag::Var& target);

struct LossBreakdown {
  double mae = 0.0, cscl = 0.0, codebook = 0.0, commitment = 0.0, total = 0.0;
};

// L = alpha*MAE + beta*CSCL + w_cb*codebook + w_commit*commitment. Null terms
// (ablated components) are dropped from the sum.
ag::Var total_loss(const ag::Var& pred, const ag::Var& target, const ag::Var& f_g,
                   const ag::Var& f_s, const ag::Var& z_e, const ag::Var& z_q,
                   const TrainSettings& cfg, LossBreakdown* breakdown);

// Cosine annealing from lr0 to the floor across total steps; step 0 gives lr0,
// step total gives the floor.
double cosine_lr(int step, int total_steps, double lr0, double floor);

struct StepMetrics {
  int64_t step = 0;
  double lr = 0.0;
  LossBreakdown loss;
};

class Trainer {
public:
  Trainer(Model& model, TrainSettings settings,
          std::vector<std::vector<SamplePair>> per_task_train);

  StepMetrics step();
  // Runs settings.steps steps; per-step metrics go to `sink` when provided.
  // `stop_early` (optional) can end the run once a condition holds.
  void run(const std::function<void(const StepMetrics&)>& sink = nullptr,
           const std::function<bool(const StepMetrics&)>& stop_early = nullptr);

  int64_t step_count() const { return step_; }
  const std::vector<int64_t>& epoch_code_usage() const { return code_usage_; }
  Model& model() { return model_; }

private:
  void maybe_reseed_dead_codes(const Tensor& latent_rows);

  Model& model_;
  TrainSettings settings_;
  std::vector<std::vector<SamplePair>> per_task_;
  BalancedBatchStream stream_;
  ag::AdamW opt_;
  Rng rng_;
  int64_t step_ = 0;
  int batches_into_epoch_ = 0;
  std::vector<int64_t> code_usage_;
};

}  // namespace udair
