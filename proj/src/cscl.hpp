#pragma once

#include "autograd.hpp"
#include "common.hpp"
#include "dataset.hpp"

namespace udair {

enum class CsclDenominator {
  Literal,  // negatives only in the denominator, as the loss is written
  InfoNce,  // positive included, conventional form
};

CsclDenominator cscl_denominator_from_name(const std::string& s);
const char* cscl_denominator_name(CsclDenominator d);

struct CsclConfig {
  double tau = 0.1;
  CsclDenominator denominator = CsclDenominator::Literal;
};

// (batch, F) task-major -> (N_t, N_s, F); pure reshape.
ag::Var group_by_task(const ag::Var& flat_features, const BatchPlan& plan);

// Independently permutes each task's rows; the per-task row multiset is
// preserved. Deterministic given the rng stream.
ag::Var shuffle_within_task(const ag::Var& grouped, Rng& rng);

// (N_t, N_s, F) -> (N_t, N_s*F): per-task concatenation of sample rows.
ag::Var aggregate(const ag::Var& grouped);

// Contrastive loss over per-task aggregate rows. The positive for task i is
// (f_g[i], f_s[i]); negatives are (f_g[i], f_s[j]) for j != i. Cosine
// similarity uses a max(norm, 1e-8) guard.
ag::Var cscl_loss(const ag::Var& f_g, const ag::Var& f_s, const CsclConfig& cfg);

}  // namespace udair
