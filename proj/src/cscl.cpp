#include "cscl.hpp"

#include <algorithm>
#include <numeric>

namespace udair {

CsclDenominator cscl_denominator_from_name(const std::string& s) {
  if (s == "literal") return CsclDenominator::Literal;
  if (s == "infonce") return CsclDenominator::InfoNce;
  throw ConfigError("unknown cscl denominator mode: " + s);
}

const char* cscl_denominator_name(CsclDenominator d) {
  return d == CsclDenominator::Literal ? "literal" : "infonce";
}

ag::Var group_by_task(const ag::Var& flat_features, const BatchPlan& plan) {
  const auto& s = flat_features->value.shape();
  if (flat_features->value.rank() != 2)
    throw ConfigError("group_by_task expects (batch, features)");
  if (s[0] != plan.batch_size())
    throw ConfigError("batch size " + std::to_string(s[0]) + " does not match plan " +
                      std::to_string(plan.n_tasks) + "x" +
                      std::to_string(plan.samples_per_task));
  return ag::reshape(flat_features, {plan.n_tasks, plan.samples_per_task, s[1]});
}

ag::Var shuffle_within_task(const ag::Var& grouped, Rng& rng) {
  const auto& s = grouped->value.shape();
  if (grouped->value.rank() != 3) throw ConfigError("shuffle expects (N_t, N_s, F)");
  int nt = s[0], ns = s[1], f = s[2];
  std::vector<int> perm(size_t(nt) * size_t(ns));
  for (int t = 0; t < nt; ++t) {
    std::vector<int> p(static_cast<size_t>(ns));
    std::iota(p.begin(), p.end(), 0);
    // Fisher-Yates on the task's rows
    for (int i = ns - 1; i > 0; --i) std::swap(p[size_t(i)], p[size_t(rng.below(i + 1))]);
    for (int i = 0; i < ns; ++i) perm[size_t(t * ns + i)] = t * ns + p[size_t(i)];
  }
  auto rows = ag::reshape(grouped, {nt * ns, f});
  return ag::reshape(ag::gather_rows(rows, perm), {nt, ns, f});
}

ag::Var aggregate(const ag::Var& grouped) {
  const auto& s = grouped->value.shape();
  if (grouped->value.rank() != 3) throw ConfigError("aggregate expects (N_t, N_s, F)");
  return ag::reshape(grouped, {s[0], s[1] * s[2]});
}

ag::Var cscl_loss(const ag::Var& f_g, const ag::Var& f_s, const CsclConfig& cfg) {
  const auto& sg = f_g->value.shape();
  const auto& ss = f_s->value.shape();
  if (f_g->value.rank() != 2 || sg != ss)
    throw ConfigError("cscl_loss expects matching (N_t, M) matrices");
  int nt = sg[0];
  if (nt < 2)
    throw ConfigError("cscl needs at least two tasks; no negative pairs exist otherwise");
  if (cfg.tau <= 0.0) throw ConfigError("cscl temperature must be positive");
  if (!f_g->value.all_finite() || !f_s->value.all_finite())
    throw NumericError("non-finite features in cscl_loss");

  auto gn = ag::l2_normalize_lastdim(f_g, 1e-8);
  auto sn = ag::l2_normalize_lastdim(f_s, 1e-8);
  auto sim = ag::matmul(gn, ag::transpose2d(sn));  // (N_t, N_t), sim(i,j)=cos(g_i, s_j)

  Tensor eye({nt, nt});
  Tensor off({nt, nt});
  for (int i = 0; i < nt; ++i)
    for (int j = 0; j < nt; ++j) {
      eye.at2(i, j) = i == j ? 1.0 : 0.0;
      off.at2(i, j) = i == j ? 0.0 : 1.0;
    }
  auto positives = ag::sum(ag::mul(sim, ag::constant(eye)), {1}, false);  // (N_t)
  auto expsim = ag::exp_v(ag::scale(sim, 1.0 / cfg.tau));
  ag::Var denom;
  if (cfg.denominator == CsclDenominator::Literal)
    denom = ag::sum(ag::mul(expsim, ag::constant(off)), {1}, false);
  else
    denom = ag::sum(expsim, {1}, false);
  // -(1/N) sum_i [ sim(P_i)/tau - log Z_i ]
  auto per_task = ag::sub(ag::log_v(denom), ag::scale(positives, 1.0 / cfg.tau));
  return ag::mean_all(per_task);
}

}  // namespace udair
