#include "adaptation.hpp"

#include <Eigen/Core>

#include <cmath>

namespace udair {

Dam::Dam(ParamStore& store, const DamConfig& cfg, Rng& rng) : cfg_(cfg) {
  int d = cfg.dim;
  int wide = 2 * d;
  if (d < 1) throw ConfigError("dam dim must be positive");
  if (wide / cfg.se_reduction < 1)
    throw ConfigError("se_reduction too large for dam dim");
  expand_ = Conv2d(store, ParamGroup::Adaptation, "dam.expand", d, wide, 1, 1, 0, rng);
  dw_ = Conv2d(store, ParamGroup::Adaptation, "dam.dw", wide, wide, 3, 1, 1, rng, wide);
  pw_ = Conv2d(store, ParamGroup::Adaptation, "dam.pw", wide, wide, 1, 1, 0, rng);
  se1_ = Linear(store, ParamGroup::Adaptation, "dam.se1", wide, wide / cfg.se_reduction, rng);
  se2_ = Linear(store, ParamGroup::Adaptation, "dam.se2", wide / cfg.se_reduction, wide, rng);
  project_ = Conv2d(store, ParamGroup::Adaptation, "dam.project", wide, d, 1, 1, 0, rng,
                    /*groups=*/1, /*zero_init=*/true);
}

ag::Var Dam::forward(const ag::Var& f_d) const {
  const auto& s = f_d->value.shape();
  if (f_d->value.rank() != 4 || s[1] != cfg_.dim)
    throw ConfigError("dam expects (N," + std::to_string(cfg_.dim) + ",h,w), got " +
                      f_d->value.shape_str());
  auto adapt = ag::gelu(pw_.forward(dw_.forward(ag::gelu(expand_.forward(f_d)))));
  auto pooled = ag::mean(adapt, {2, 3}, false);  // (N, 2D)
  auto weights = ag::sigmoid_v(se2_.forward(ag::gelu(se1_.forward(pooled))));
  int n = s[0];
  auto se = ag::mul(adapt, ag::reshape(weights, {n, 2 * cfg_.dim, 1, 1}));
  // mean-free correction: covariance alignment is translation-invariant, so
  // an unconstrained residual could drift channel means without ever being
  // penalized; centering removes that degenerate direction
  auto proj = project_.forward(se);
  auto centered = ag::sub(proj, ag::mean(proj, {2, 3}, true));
  return ag::add(f_d, centered);
}

Tensor covariance(const Tensor& rows) {
  if (rows.rank() != 2) throw ConfigError("covariance expects (n, D) rows");
  int n = rows.dim(0), d = rows.dim(1);
  if (n < 2) throw DataError("covariance needs at least 2 samples, got " + std::to_string(n));
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  Eigen::Map<const Mat> x(rows.data(), n, d);
  Eigen::RowVectorXd mu = x.colwise().mean();
  Mat centered = x.rowwise() - mu;
  Mat c = (centered.transpose() * centered) / double(n - 1);
  Tensor out({d, d});
  Eigen::Map<Mat>(out.data(), d, d) = c;
  return out;
}

ag::Var covariance_var(const ag::Var& rows) {
  const auto& s = rows->value.shape();
  if (rows->value.rank() != 2) throw ConfigError("covariance expects (n, D) rows");
  int n = s[0];
  if (n < 2) throw DataError("covariance needs at least 2 samples, got " + std::to_string(n));
  auto mu = ag::mean(rows, {0}, true);
  auto centered = ag::sub(rows, mu);
  return ag::scale(ag::matmul(ag::transpose2d(centered), centered), 1.0 / double(n - 1));
}

double coral_loss(const Tensor& c_a, const Tensor& c_b) {
  if (!c_a.same_shape(c_b) || c_a.rank() != 2 || c_a.dim(0) != c_a.dim(1))
    throw ConfigError("coral expects matching square matrices");
  int d = c_a.dim(0);
  double s = 0.0;
  for (int64_t i = 0; i < c_a.numel(); ++i) {
    double diff = c_a[i] - c_b[i];
    s += diff * diff;
  }
  return s / (4.0 * double(d) * double(d));
}

ag::Var coral_loss_var(const ag::Var& c_t, const Tensor& c_s) {
  if (!c_t->value.same_shape(c_s))
    throw ConfigError("coral shape mismatch: " + c_t->value.shape_str() + " vs " +
                      c_s.shape_str());
  int d = c_s.dim(0);
  auto diff = ag::sub(c_t, ag::constant(c_s));
  return ag::scale(ag::sum_all(ag::square(diff)), 1.0 / (4.0 * double(d) * double(d)));
}

int select_anchor(const Tensor& pooled, const AnchorSet& anchors) {
  if (anchors.empty()) throw ConfigError("empty anchor set");
  if (pooled.rank() != 1) throw ConfigError("select_anchor expects a pooled vector");
  int d = pooled.dim(0);
  double pn = 0.0;
  for (int i = 0; i < d; ++i) pn += pooled[i] * pooled[i];
  pn = std::sqrt(pn);
  if (pn < 1e-12) throw NumericError("zero pooled feature vector; cosine undefined");
  int best = -1;
  double best_sim = 0.0;
  for (size_t t = 0; t < anchors.anchors.size(); ++t) {
    const Tensor& mu = anchors.anchors[t].mean;
    if (mu.dim(0) != d) throw ConfigError("anchor dimension mismatch");
    double dot = 0.0, mn = 0.0;
    for (int i = 0; i < d; ++i) {
      dot += pooled[i] * mu[i];
      mn += mu[i] * mu[i];
    }
    mn = std::sqrt(mn);
    double sim = dot / (pn * std::max(mn, 1e-12));
    if (best < 0 || sim > best_sim) {
      best = int(t);
      best_sim = sim;
    }
  }
  return best;
}

}  // namespace udair
