#pragma once

#include <vector>

#include "nn.hpp"

namespace udair {

struct DamConfig {
  int dim = 96;          // must match the degradation feature channel count
  int se_reduction = 4;  // squeeze-excitation bottleneck ratio
};

// Domain Adaptation Module: expand 1x1 -> depthwise-separable 3x3 -> SE ->
// project 1x1, applied residually. The final projection is zero-initialized
// so a freshly reset module is an exact identity; it only departs from the
// source behaviour once test-time adaptation updates it.
class Dam {
public:
  Dam() = default;
  Dam(ParamStore& store, const DamConfig& cfg, Rng& rng);

  ag::Var forward(const ag::Var& f_d) const;
  const DamConfig& config() const { return cfg_; }

private:
  DamConfig cfg_;
  Conv2d expand_;   // 1x1, D -> 2D
  Conv2d dw_;       // 3x3 depthwise on 2D channels
  Conv2d pw_;       // 1x1 pointwise half of the separable conv
  Linear se1_, se2_;
  Conv2d project_;  // 1x1, 2D -> D, zero-initialized
};

// Unbiased covariance of row vectors: C = (X'X - (X'1)(1'X)/n) / (n-1).
Tensor covariance(const Tensor& rows);
ag::Var covariance_var(const ag::Var& rows);

// ||c_s - c_t||_F^2 / (4 d^2)
double coral_loss(const Tensor& c_a, const Tensor& c_b);
ag::Var coral_loss_var(const ag::Var& c_t, const Tensor& c_s);

// Per-task source-domain statistics of degradation features.
struct AnchorSet {
  struct Anchor {
    Tensor mean;   // (D)
    Tensor cov;    // (D,D)
    int64_t count = 0;
  };
  std::vector<Anchor> anchors;
  bool empty() const { return anchors.empty(); }
};

// argmax_t cosine(pooled, mean_t); ties resolve to the lowest index.
int select_anchor(const Tensor& pooled, const AnchorSet& anchors);

struct TtaConfig {
  int steps = 5;
  // initial step size for the per-step update theta' = theta - lr * grad;
  // a backtracking halving keeps each applied step non-increasing in CORAL
  double lr = 1e-4;
  bool reset_per_sample = true;
  int max_backtracks = 10;
};

struct TtaReport {
  int selected_task = -1;
  std::vector<double> coral_per_step;  // steps+1 entries, [0] = pre-adaptation
};

}  // namespace udair
