#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <cmath>

#include "fd_check.hpp"
#include "model.hpp"

using namespace udair;
using testing::fd_check;

namespace {

ModelConfig tiny_model(uint64_t seed = 0) {
  ModelConfig cfg;
  cfg.backbone.base_dim = 4;
  cfg.backbone.levels = 3;
  cfg.backbone.blocks_per_level = 1;
  cfg.backbone.block_kind = BlockKind::Conv;
  cfg.backbone.inject_dim = 8;
  cfg.daam.dim = 8;
  cfg.daam.codebook_size = 8;
  cfg.dam.dim = 8;
  cfg.init_seed = seed;
  return cfg;
}

Tensor brute_force_covariance(const Tensor& rows) {
  int n = rows.dim(0), d = rows.dim(1);
  std::vector<double> mu(size_t(d), 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) mu[size_t(j)] += rows.at2(i, j);
  for (auto& m : mu) m /= double(n);
  Tensor c({d, d});
  for (int a = 0; a < d; ++a)
    for (int b = 0; b < d; ++b) {
      double acc = 0;
      for (int i = 0; i < n; ++i)
        acc += (rows.at2(i, a) - mu[size_t(a)]) * (rows.at2(i, b) - mu[size_t(b)]);
      c.at2(a, b) = acc / double(n - 1);
    }
  return c;
}

Image random_image(int size, uint64_t seed) {
  Rng rng(seed);
  return synthesize_clean(size, size, rng);
}

}  // namespace

TEST_CASE("covariance: hand case, degenerate case, oracle equivalence") {
  Tensor two({2, 1}, {0.0, 2.0});
  CHECK(covariance(two).at2(0, 0) == doctest::Approx(2.0).epsilon(1e-15));

  Tensor constant_rows({5, 3});
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 3; ++j) constant_rows.at2(i, j) = 1.7;
  Tensor cz = covariance(constant_rows);
  for (int64_t i = 0; i < cz.numel(); ++i) CHECK(cz[i] == doctest::Approx(0.0).epsilon(1e-15));

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor rows = Tensor::randn({50, 6}, rng);
    Tensor ours = covariance(rows);
    Tensor ref = brute_force_covariance(rows);
    for (int64_t i = 0; i < ours.numel(); ++i)
      CHECK(std::fabs(ours[i] - ref[i]) <= 1e-10);

    // symmetric and PSD within 1e-8
    Eigen::MatrixXd m(6, 6);
    for (int a = 0; a < 6; ++a)
      for (int b = 0; b < 6; ++b) {
        m(a, b) = ours.at2(a, b);
        CHECK(std::fabs(ours.at2(a, b) - ours.at2(b, a)) <= 1e-12);
      }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    CHECK(es.eigenvalues().minCoeff() >= -1e-8);
  }

  CHECK_THROWS_AS(covariance(Tensor({1, 3})), DataError);
}

TEST_CASE("covariance graph version matches and differentiates") {
  Rng rng(5);
  auto rows = ag::param(Tensor::randn({7, 4}, rng));
  auto c = covariance_var(rows);
  Tensor plain = covariance(rows->value);
  for (int64_t i = 0; i < plain.numel(); ++i)
    CHECK(c->value[i] == doctest::Approx(plain[i]).epsilon(1e-12));

  Tensor anchor = brute_force_covariance(Tensor::randn({9, 4}, rng));
  auto make = [&] { return coral_loss_var(covariance_var(rows), anchor); };
  CHECK(fd_check(make, rows).max_rel_err < 1e-4);
}

TEST_CASE("coral loss: zero, hand case, symmetry") {
  Tensor a({1, 1}, {2.0});
  Tensor b({1, 1}, {0.0});
  CHECK(coral_loss(a, a) == 0.0);
  CHECK(coral_loss(a, b) == doctest::Approx(1.0).epsilon(1e-15));  // (2-0)^2 / 4
  Rng rng(7);
  Tensor x = Tensor::randn({4, 4}, rng);
  Tensor y = Tensor::randn({4, 4}, rng);
  CHECK(coral_loss(x, y) == doctest::Approx(coral_loss(y, x)).epsilon(1e-15));
  CHECK_THROWS_AS(coral_loss(x, Tensor({3, 3})), ConfigError);
}

TEST_CASE("zero-initialized dam is an exact identity") {
  ParamStore store;
  DamConfig cfg;
  cfg.dim = 8;
  Rng rng(11);
  Dam dam(store, cfg, rng);
  auto x = ag::constant(Tensor::randn({2, 8, 3, 3}, rng));
  auto y = dam.forward(x);
  for (int64_t i = 0; i < x->value.numel(); ++i) {
    double rel = std::fabs(y->value[i] - x->value[i]) /
                 std::max(std::fabs(x->value[i]), 1e-12);
    CHECK(rel <= 1e-7);
  }
}

TEST_CASE("dam gradients match finite differences for every parameter group") {
  ParamStore store;
  DamConfig cfg;
  cfg.dim = 4;
  cfg.se_reduction = 2;
  Rng rng(13);
  Dam dam(store, cfg, rng);
  // randomize everything, including the zero-initialized projection
  for (auto& v : store.vars(ParamGroup::Adaptation))
    for (auto& x : v->value.vec()) x = rng.normal(0.0, 0.3);

  auto input = ag::constant(Tensor::randn({2, 4, 3, 3}, rng, 0.5));
  Tensor target = Tensor::randn({2, 4, 3, 3}, rng, 0.5);
  auto make = [&] {
    return ag::mean_all(ag::square(ag::sub(dam.forward(input), ag::constant(target))));
  };
  for (const auto& e : store.entries()) {
    CAPTURE(e.name);
    CHECK(fd_check(make, e.var).max_rel_err < 1e-4);
  }
}

TEST_CASE("one gradient step moves the dam away from the identity") {
  ParamStore store;
  DamConfig cfg;
  cfg.dim = 8;
  Rng rng(17);
  Dam dam(store, cfg, rng);
  auto x = ag::constant(Tensor::randn({1, 8, 4, 4}, rng));
  auto before = dam.forward(x);
  // at the identity the projection still receives gradient, so one step
  // breaks the identity
  auto loss = ag::mean_all(ag::square(dam.forward(x)));
  ag::backward(loss);
  ag::sgd_step(store.vars(ParamGroup::Adaptation), 0.5);
  auto after = dam.forward(x);
  double diff = 0;
  for (int64_t i = 0; i < before->value.numel(); ++i)
    diff = std::max(diff, std::fabs(after->value[i] - before->value[i]));
  CHECK(diff > 0.0);
}

TEST_CASE("anchor selection: self match, orthogonal match, oracle, scaling") {
  AnchorSet set;
  int d = 4;
  Rng rng(19);
  for (int t = 0; t < 3; ++t) {
    AnchorSet::Anchor a;
    a.mean = Tensor({d});
    a.mean[t] = 1.0;  // unit basis vectors
    a.cov = Tensor({d, d});
    a.count = 10;
    set.anchors.push_back(std::move(a));
  }

  Tensor pooled({d});
  pooled[2] = 1.0;
  CHECK(select_anchor(pooled, set) == 2);

  Tensor mixed({d}, {0.9, 0.1, 0.0, 0.0});
  CHECK(select_anchor(mixed, set) == 0);

  // positive rescaling cannot change the argmax
  Tensor scaled = mixed;
  for (auto& v : scaled.vec()) v *= 123.0;
  CHECK(select_anchor(scaled, set) == select_anchor(mixed, set));

  // exhaustive scan oracle on random anchors/features
  for (int trial = 0; trial < 50; ++trial) {
    AnchorSet rnd;
    for (int t = 0; t < 5; ++t) {
      AnchorSet::Anchor a;
      a.mean = Tensor::randn({d}, rng);
      a.cov = Tensor({d, d});
      a.count = 2;
      rnd.anchors.push_back(std::move(a));
    }
    Tensor f = Tensor::randn({d}, rng);
    double fn = 0;
    for (int i = 0; i < d; ++i) fn += f[i] * f[i];
    fn = std::sqrt(fn);
    int best = -1;
    double best_sim = -2;
    for (int t = 0; t < 5; ++t) {
      double dot = 0, mn = 0;
      for (int i = 0; i < d; ++i) {
        dot += f[i] * rnd.anchors[size_t(t)].mean[i];
        mn += rnd.anchors[size_t(t)].mean[i] * rnd.anchors[size_t(t)].mean[i];
      }
      double sim = dot / (fn * std::sqrt(mn));
      if (sim > best_sim) {
        best_sim = sim;
        best = t;
      }
    }
    CHECK(select_anchor(f, rnd) == best);
  }

  CHECK_THROWS_AS(select_anchor(Tensor({d}), set), NumericError);
  CHECK_THROWS_AS(select_anchor(pooled, AnchorSet{}), ConfigError);
}

TEST_CASE("compute_anchors matches a by-hand mean/covariance over feature rows") {
  Model model(tiny_model(23));
  std::vector<std::vector<SamplePair>> per_task(2);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 2; ++i) {
      SamplePair p;
      p.clean = random_image(16, uint64_t(100 * t + i));
      p.degraded = p.clean;
      p.task = Task(t);
      per_task[size_t(t)].push_back(std::move(p));
    }
  AnchorSet anchors = model.compute_anchors(per_task, Variant::Full);
  REQUIRE(anchors.anchors.size() == 2);

  // independent recomputation for task 0: mean over all spatial rows,
  // covariance as the average of per-sample covariances
  std::vector<std::vector<double>> rows;
  Tensor cov_sum;
  int n_samples = 0;
  for (const auto& p : per_task[0]) {
    auto f = model.degradation_features(p.degraded, Variant::Full);
    const Tensor& m = f.map->value;
    int h = m.dim(2), w = m.dim(3), d = m.dim(1);
    Tensor sample_rows({h * w, d});
    for (int ih = 0; ih < h; ++ih)
      for (int iw = 0; iw < w; ++iw) {
        std::vector<double> row(static_cast<size_t>(d));
        for (int c = 0; c < d; ++c) {
          row[size_t(c)] = m.at4(0, c, ih, iw);
          sample_rows.at2(ih * w + iw, c) = m.at4(0, c, ih, iw);
        }
        rows.push_back(std::move(row));
      }
    Tensor c_i = brute_force_covariance(sample_rows);
    if (cov_sum.numel() == 0) cov_sum = Tensor(c_i.shape());
    for (int64_t i = 0; i < c_i.numel(); ++i) cov_sum[i] += c_i[i];
    ++n_samples;
  }
  int n = int(rows.size()), d = int(rows[0].size());
  CHECK(anchors.anchors[0].count == n);
  for (int64_t i = 0; i < cov_sum.numel(); ++i)
    CHECK(std::fabs(anchors.anchors[0].cov[i] - cov_sum[i] / n_samples) <= 1e-10);
  for (int j = 0; j < d; ++j) {
    double mu = 0;
    for (int i = 0; i < n; ++i) mu += rows[size_t(i)][size_t(j)];
    mu /= double(n);
    CHECK(anchors.anchors[0].mean[j] == doctest::Approx(mu).epsilon(1e-12));
  }
}

TEST_CASE("tta touches theta_da only and reports steps+1 coral values") {
  Model model(tiny_model(29));
  std::vector<std::vector<SamplePair>> per_task(2);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 3; ++i) {
      SamplePair p;
      p.clean = random_image(16, uint64_t(10 * t + i));
      Rng drng(uint64_t(500 + 10 * t + i));
      DegradationSpec spec;
      spec.task = t == 0 ? Task::Noise : Task::Lowlight;
      spec.params = t == 0 ? std::map<std::string, double>{{"sigma", 0.05}}
                           : std::map<std::string, double>{{"gamma", 2.0}, {"gain", 0.5}};
      p.degraded = synthesize_degradation(p.clean, spec, drng);
      p.task = Task(t);
      per_task[size_t(t)].push_back(std::move(p));
    }
  AnchorSet anchors = model.compute_anchors(per_task, Variant::Full);

  Image target_img = random_image(16, 777);
  Rng drng(888);
  DegradationSpec shifted;
  shifted.task = Task::Noise;
  shifted.params = {{"sigma", 0.15}};
  Image degraded = synthesize_degradation(target_img, shifted, drng);

  std::string before_ar =
      model.digest({ParamGroup::Restoration, ParamGroup::Awareness});
  std::string before_da = model.digest({ParamGroup::Adaptation});

  TtaConfig cfg;
  cfg.steps = 0;
  TtaReport r0 = model.tta_adapt(degraded, anchors, cfg);
  CHECK(r0.coral_per_step.size() == 1);
  CHECK(model.digest({ParamGroup::Adaptation}) == before_da);

  cfg.steps = 5;
  cfg.lr = 0.5;
  TtaReport r5 = model.tta_adapt(degraded, anchors, cfg);
  CHECK(r5.coral_per_step.size() == 6);
  CHECK(r5.selected_task >= 0);
  CHECK(model.digest({ParamGroup::Restoration, ParamGroup::Awareness}) == before_ar);
  CHECK(model.digest({ParamGroup::Adaptation}) != before_da);
  CHECK(r5.coral_per_step[5] < r5.coral_per_step[0]);

  // reset_per_sample restores the template
  model.reset_dam();
  CHECK(model.digest({ParamGroup::Adaptation}) == before_da);

  // same sample adapted twice with resets gives identical trajectories
  TtaReport ra = model.tta_adapt(degraded, anchors, cfg);
  TtaReport rb = model.tta_adapt(degraded, anchors, cfg);
  CHECK(ra.coral_per_step == rb.coral_per_step);
}

TEST_CASE("restore_with_tta at zero steps equals the plain forward") {
  Model model(tiny_model(31));
  std::vector<std::vector<SamplePair>> per_task(2);
  for (int t = 0; t < 2; ++t)
    for (int i = 0; i < 2; ++i) {
      SamplePair p;
      p.clean = random_image(16, uint64_t(40 * t + i));
      p.degraded = p.clean;
      p.task = Task(t);
      per_task[size_t(t)].push_back(std::move(p));
    }
  AnchorSet anchors = model.compute_anchors(per_task, Variant::Full);

  Image img = random_image(16, 999);
  Image plain = model.restore(img, Variant::Full);
  TtaConfig cfg;
  cfg.steps = 0;
  Image adapted = model.restore_with_tta(img, anchors, cfg);
  for (int64_t i = 0; i < plain.tensor().numel(); ++i)
    CHECK(std::fabs(adapted.tensor()[i] - plain.tensor()[i]) <= 1e-6);
}

TEST_CASE("plain restoration never invokes the dam") {
  Model model(tiny_model(37));
  Image img = random_image(16, 55);
  CHECK(model.dam_invocations() == 0);
  model.restore(img, Variant::Full);
  model.degradation_features(img, Variant::Full);
  CHECK(model.dam_invocations() == 0);
}

TEST_CASE("tta needs at least two spatial feature rows") {
  Model model(tiny_model(41));
  std::vector<std::vector<SamplePair>> per_task(1);
  SamplePair p;
  p.clean = random_image(16, 1);
  p.degraded = p.clean;
  per_task[0].push_back(p);
  AnchorSet anchors = model.compute_anchors(per_task, Variant::Full);
  Image tiny = random_image(8, 2);  // 8x8 image -> 1x1 latent -> single row
  TtaConfig cfg;
  CHECK_THROWS_AS(model.tta_adapt(tiny, anchors, cfg), DataError);
}
