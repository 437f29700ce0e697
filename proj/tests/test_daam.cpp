#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "daam.hpp"
#include "fd_check.hpp"

using namespace udair;
using testing::fd_check;

namespace {

// exhaustive nearest-neighbor reference
int brute_force_nearest(const double* z, int d, const Tensor& codebook) {
  int best = -1;
  double best_d = 0;
  for (int k = 0; k < codebook.dim(0); ++k) {
    double acc = 0;
    for (int j = 0; j < d; ++j) {
      double diff = z[j] - codebook.at2(k, j);
      acc += diff * diff;
    }
    if (best < 0 || acc < best_d) {
      best = k;
      best_d = acc;
    }
  }
  return best;
}

Daam make_daam(ParamStore& store, int dim, int k, uint64_t seed, double eps = 1e-5) {
  DaamConfig cfg;
  cfg.dim = dim;
  cfg.codebook_size = k;
  cfg.gate_eps = eps;
  Rng rng(seed);
  return Daam(store, cfg, rng);
}

}  // namespace

TEST_CASE("nearest code: hand cases and tie-breaking") {
  Tensor codebook({2, 2}, {0.0, 0.0, 1.0, 1.0});
  double z1[2] = {0.2, 0.1};
  CHECK(nearest_code(z1, 2, codebook) == 0);  // 0.2236 vs 1.2042
  double z2[2] = {1.0, 1.0};
  CHECK(nearest_code(z2, 2, codebook) == 1);
  double z3[2] = {0.5, 0.5};
  CHECK(nearest_code(z3, 2, codebook) == 0);  // equidistant -> lowest index
}

TEST_CASE("quantizer matches the exhaustive oracle on 1000 random draws") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    int k = 2 + int(rng.below(63));
    int d = 1 + int(rng.below(8));
    Tensor codebook = Tensor::randn({k, d}, rng);
    Tensor z = Tensor::randn({1, d}, rng);
    CHECK(nearest_code(z.data(), d, codebook) == brute_force_nearest(z.data(), d, codebook));
  }
  // forced ties: duplicated codebook rows must resolve to the lowest index
  for (int trial = 0; trial < 50; ++trial) {
    int d = 1 + int(rng.below(4));
    Tensor codebook({4, d});
    Tensor z = Tensor::randn({1, d}, rng);
    for (int k = 0; k < 4; ++k)
      for (int j = 0; j < d; ++j) codebook.at2(k, j) = z[j] + (k < 2 ? 0.5 : 1.5);
    CHECK(nearest_code(z.data(), d, codebook) == 0);
  }
}

TEST_CASE("quantize is idempotent and outputs codebook rows") {
  ParamStore store;
  Daam daam = make_daam(store, 4, 16, 3);
  Rng rng(5);
  auto latent = ag::param(Tensor::randn({2, 4, 3, 3}, rng));
  auto q = daam.quantize(latent);
  const Tensor& codebook = daam.codebook()->value;

  // membership: every spatial vector of z_q is some codebook row
  const Tensor& zq = q.z_q->value;
  for (int n = 0; n < 2; ++n)
    for (int h = 0; h < 3; ++h)
      for (int w = 0; w < 3; ++w) {
        double vec[4];
        for (int c = 0; c < 4; ++c) vec[c] = zq.at4(n, c, h, w);
        int k = brute_force_nearest(vec, 4, codebook);
        double dist = 0;
        for (int c = 0; c < 4; ++c) {
          double diff = vec[c] - codebook.at2(k, c);
          dist += diff * diff;
        }
        CHECK(dist == doctest::Approx(0.0).epsilon(1e-15));
      }

  // idempotence: quantizing an already-quantized map is the identity
  auto q2 = daam.quantize(ag::constant(q.z_q->value));
  for (int64_t i = 0; i < zq.numel(); ++i) CHECK(q2.z_q->value[i] == zq[i]);
  CHECK(q2.indices == q.indices);

  // straight-through carries the quantized value
  for (int64_t i = 0; i < zq.numel(); ++i)
    CHECK(q.straight_through->value[i] == doctest::Approx(zq[i]).epsilon(1e-15));
}

TEST_CASE("gate is the identity at zero parameters") {
  ParamStore store;
  Daam daam = make_daam(store, 8, 4, 1);
  Rng rng(2);
  auto x = ag::constant(Tensor::randn({2, 8, 4, 4}, rng));
  auto y = daam.gate(x);
  for (int64_t i = 0; i < x->value.numel(); ++i) {
    double rel = std::fabs(y->value[i] - x->value[i]) /
                 std::max(std::fabs(x->value[i]), 1e-12);
    CHECK(rel <= 1e-7);
  }
}

TEST_CASE("single-channel gate matches the hand-computed formula") {
  ParamStore store;
  DaamConfig cfg;
  cfg.dim = 4;
  cfg.codebook_size = 4;
  cfg.gate_eps = 1e-12;
  Rng rng(3);
  Daam daam(store, cfg, rng);
  double gamma = 0.7, beta = -0.2;
  for (int c = 0; c < 4; ++c) {
    daam.gate_gamma()->value[c] = gamma;
    daam.gate_beta()->value[c] = beta;
  }
  // every channel has identical content, so E/N = 1 exactly as eps -> 0
  Tensor xv({1, 4, 2, 2});
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 4; ++i) xv[c * 4 + i] = 0.5 + 0.1 * i;
  auto y = daam.gate(ag::constant(xv));
  double expected_gain = 1.0 + std::tanh(gamma + beta);
  for (int64_t i = 0; i < xv.numel(); ++i)
    CHECK(y->value[i] == doctest::Approx(xv[i] * expected_gain).epsilon(1e-6));
}

TEST_CASE("gate gradients match finite differences") {
  ParamStore store;
  Daam daam = make_daam(store, 4, 4, 7);
  Rng rng(11);
  // non-trivial gate parameters
  for (int c = 0; c < 4; ++c) {
    daam.gate_gamma()->value[c] = rng.normal(0.0, 0.4);
    daam.gate_beta()->value[c] = rng.normal(0.0, 0.4);
  }
  daam.gate_lambda()->value[0] = 1.3;
  auto x = ag::param(Tensor::randn({2, 4, 3, 3}, rng));
  auto make = [&] { return ag::mean_all(ag::square(daam.gate(x))); };
  CHECK(fd_check(make, x).max_rel_err < 1e-4);
  CHECK(fd_check(make, daam.gate_gamma()).max_rel_err < 1e-4);
  CHECK(fd_check(make, daam.gate_beta()).max_rel_err < 1e-4);
  CHECK(fd_check(make, daam.gate_lambda()).max_rel_err < 1e-4);
}

TEST_CASE("codebook losses: hand values and stop-gradient contract") {
  auto a = ag::param(Tensor({1, 1, 1, 1}, {1.0}));
  auto b = ag::param(Tensor({1, 1, 1, 1}, {0.0}));
  auto [cb, commit] = Daam::codebook_losses(a, b);
  CHECK(cb->value[0] == doctest::Approx(1.0));
  CHECK(commit->value[0] == doctest::Approx(1.0));

  // z_e == z_q -> both zero
  auto c = ag::param(Tensor({1, 2, 1, 1}, {0.3, -0.7}));
  auto [cb0, commit0] = Daam::codebook_losses(c, ag::constant(c->value));
  CHECK(cb0->value[0] == 0.0);
  CHECK(commit0->value[0] == 0.0);

  // gradient routing: codebook loss reaches z_q only, commitment reaches z_e only
  a->grad = Tensor();
  b->grad = Tensor();
  auto [cb1, commit1] = Daam::codebook_losses(a, b);
  ag::backward(cb1);
  CHECK(a->grad.numel() == 0);  // stop-gradient on z_e
  CHECK(b->grad[0] == doctest::Approx(-2.0));
  a->grad = Tensor();
  b->grad = Tensor();
  ag::backward(commit1);
  CHECK(b->grad.numel() == 0);
  CHECK(a->grad[0] == doctest::Approx(2.0));
}

TEST_CASE("straight-through gradient equals the identity-surrogate finite difference") {
  // The quantized map is piecewise constant in z_e, so its true derivative is
  // zero; the straight-through contract is that the backward pass reports the
  // gradient of z_e + (z_q - z_e)|frozen instead. Check exactly that.
  Rng rng(21);
  for (int seed = 0; seed < 20; ++seed) {
    ParamStore store;
    Daam daam = make_daam(store, 4, 8, uint64_t(seed) + 100);
    auto z = ag::param(Tensor::randn({1, 4, 2, 2}, rng));
    Tensor target = Tensor::randn({1, 4, 2, 2}, rng);

    auto q = daam.quantize(z);
    Tensor offset(q.z_q->value.shape());
    for (int64_t i = 0; i < offset.numel(); ++i)
      offset[i] = q.z_q->value[i] - z->value[i];
    auto loss = ag::mean_all(ag::square(ag::sub(q.straight_through, ag::constant(target))));
    ag::backward(loss);
    Tensor analytic = z->grad;

    auto surrogate = [&](const Tensor& zv) {
      double acc = 0;
      for (int64_t i = 0; i < zv.numel(); ++i) {
        double d = zv[i] + offset[i] - target[i];
        acc += d * d;
      }
      return acc / double(zv.numel());
    };
    double h = 1e-5;
    double max_rel = 0;
    Tensor probe = z->value;
    for (int64_t i = 0; i < probe.numel(); ++i) {
      double saved = probe[i];
      probe[i] = saved + h;
      double fp = surrogate(probe);
      probe[i] = saved - h;
      double fm = surrogate(probe);
      probe[i] = saved;
      double numeric = (fp - fm) / (2 * h);
      double rel = std::fabs(numeric - analytic[i]) /
                   std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-5});
      max_rel = std::max(max_rel, rel);
    }
    CHECK(max_rel < 1e-4);

    // and the codebook side: gradients reach codes only through the vq losses
    auto [cb_loss, commit_loss] = Daam::codebook_losses(z, q.z_q);
    daam.codebook()->grad = Tensor();
    ag::backward(cb_loss);
    CHECK(daam.codebook()->grad.numel() > 0);
    z->grad = Tensor();
    auto q2 = daam.quantize(z);
    auto loss2 = ag::mean_all(ag::square(q2.straight_through));
    daam.codebook()->grad = Tensor();
    ag::backward(loss2);
    bool all_zero = true;
    if (daam.codebook()->grad.numel())
      for (int64_t i = 0; i < daam.codebook()->grad.numel(); ++i)
        all_zero = all_zero && daam.codebook()->grad[i] == 0.0;
    CHECK(all_zero);
  }
}

TEST_CASE("degradation features: shapes, pooled consistency, codebook bypass") {
  ParamStore store;
  Daam daam = make_daam(store, 16, 32, 13);
  Rng rng(4);
  auto img = ag::constant(Tensor::randn({1, 3, 64, 64}, rng, 0.2));

  auto f = daam.features(img, /*use_codebook=*/true);
  CHECK(f.map->value.shape() == std::vector<int>{1, 16, 8, 8});
  CHECK(f.flat->value.shape() == std::vector<int>{1, 16 * 8 * 8});
  CHECK(f.pooled->value.shape() == std::vector<int>{1, 16});
  CHECK(int(f.indices.size()) == 64);

  // pooled equals the spatial mean of map
  for (int c = 0; c < 16; ++c) {
    double mean = 0;
    for (int h = 0; h < 8; ++h)
      for (int w = 0; w < 8; ++w) mean += f.map->value.at4(0, c, h, w);
    mean /= 64.0;
    CHECK(f.pooled->value[c] == doctest::Approx(mean).epsilon(1e-6));
  }

  // extraction is deterministic given weights
  auto f2 = daam.features(img, true);
  for (int64_t i = 0; i < f.map->value.numel(); ++i)
    CHECK(f2.map->value[i] == f.map->value[i]);

  // no_codebook bypass: perturbing the codebook must not change features
  auto before = daam.features(img, /*use_codebook=*/false);
  for (auto& v : daam.codebook()->value.vec()) v += 17.0;
  auto after = daam.features(img, false);
  for (int64_t i = 0; i < before.map->value.numel(); ++i)
    CHECK(after.map->value[i] == before.map->value[i]);
  CHECK(before.indices.empty());

  CHECK_THROWS_AS(daam.extract(ag::constant(Tensor({1, 3, 60, 60}))), ConfigError);
}

TEST_CASE("code usage histogram counts indices") {
  auto hist = code_usage_histogram({0, 2, 2, 5}, 8);
  CHECK(hist[0] == 1);
  CHECK(hist[2] == 2);
  CHECK(hist[5] == 1);
  CHECK(hist[7] == 0);
}
