#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "metrics.hpp"
#include "model.hpp"

namespace fs = std::filesystem;
using namespace udair;

namespace {

Image constant_image(int h, int w, double v) {
  Image img(h, w);
  for (auto& x : img.tensor().vec()) x = v;
  return img;
}

Image random_image(int h, int w, uint64_t seed) {
  Rng rng(seed);
  Image img(h, w);
  for (auto& x : img.tensor().vec()) x = rng.uniform();
  return img;
}

// direct per-pixel reference
double psnr_oracle(const Image& a, const Image& b) {
  double mse = 0;
  int64_t n = a.tensor().numel();
  for (int64_t i = 0; i < n; ++i) {
    double d = a.tensor()[i] - b.tensor()[i];
    mse += d * d;
  }
  mse /= double(n);
  if (mse <= 0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

// independent sliding-window reference with a uniform window
double ssim_oracle(const Image& a, const Image& b, int win) {
  double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0;
  int count = 0;
  for (int ch = 0; ch < 3; ++ch)
    for (int y0 = 0; y0 + win <= a.height(); ++y0)
      for (int x0 = 0; x0 + win <= a.width(); ++x0) {
        double ma = 0, mb = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            ma += a.at(ch, y0 + y, x0 + x);
            mb += b.at(ch, y0 + y, x0 + x);
          }
        ma /= win * win;
        mb /= win * win;
        double va = 0, vb = 0, cov = 0;
        for (int y = 0; y < win; ++y)
          for (int x = 0; x < win; ++x) {
            double da = a.at(ch, y0 + y, x0 + x) - ma;
            double db = b.at(ch, y0 + y, x0 + x) - mb;
            va += da * da;
            vb += db * db;
            cov += da * db;
          }
        va /= win * win;
        vb /= win * win;
        cov /= win * win;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / count;
}

}  // namespace

TEST_CASE("psnr: cap, hand case, oracle equivalence") {
  Image a = random_image(8, 8, 1);
  CHECK(psnr(a, a) == 99.0);

  Image zeros = constant_image(8, 8, 0.0);
  Image half = constant_image(8, 8, 0.5);
  CHECK(psnr(zeros, half) == doctest::Approx(10.0 * std::log10(4.0)).epsilon(1e-12));
  CHECK(psnr(zeros, half) == doctest::Approx(6.0206).epsilon(1e-4));

  for (uint64_t seed = 0; seed < 20; ++seed) {
    Image x = random_image(8, 8, seed * 2 + 1);
    Image y = random_image(8, 8, seed * 2 + 2);
    CHECK(std::fabs(psnr(x, y) - psnr_oracle(x, y)) <= 1e-9);
  }

  CHECK_THROWS_AS(psnr(a, constant_image(4, 4, 0.1)), ConfigError);
}

TEST_CASE("ssim: identity, symmetry, oracle equivalence") {
  Image a = random_image(16, 16, 3);
  SsimConfig cfg;
  cfg.window = 8;
  CHECK(ssim(a, a, cfg) == doctest::Approx(1.0).epsilon(1e-12));

  Image b = random_image(16, 16, 4);
  CHECK(ssim(a, b, cfg) == doctest::Approx(ssim(b, a, cfg)).epsilon(1e-9));

  for (uint64_t seed = 0; seed < 10; ++seed) {
    Image x = random_image(16, 16, 100 + seed);
    Image y = random_image(16, 16, 200 + seed);
    CHECK(std::fabs(ssim(x, y, cfg) - ssim_oracle(x, y, 8)) <= 1e-6);
  }

  // gaussian window variant runs and stays within [-1, 1]
  SsimConfig g;
  g.window = 11;
  g.gaussian = true;
  double s = ssim(random_image(16, 16, 7), random_image(16, 16, 8), g);
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  CHECK_THROWS_AS(ssim(constant_image(4, 4, 0.2), constant_image(4, 4, 0.2), cfg), DataError);
}

TEST_CASE("kl divergence: identical, hand case, non-negativity") {
  Rng rng(5);
  std::vector<double> vals;
  for (int i = 0; i < 500; ++i) vals.push_back(rng.normal());
  CHECK(feature_density_kl(vals, vals, 64) == doctest::Approx(0.0).epsilon(1e-9));

  double hand = 0.5 * std::log(0.5 / 0.9) + 0.5 * std::log(0.5 / 0.1);
  CHECK(kl_divergence({0.5, 0.5}, {0.9, 0.1}) == doctest::Approx(hand).epsilon(1e-12));
  CHECK(hand == doctest::Approx(0.5108).epsilon(1e-3));

  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> p, q;
    for (int i = 0; i < 64; ++i) {
      p.push_back(rng.uniform() + 1e-6);
      q.push_back(rng.uniform() + 1e-6);
    }
    double sp = 0, sq = 0;
    for (int i = 0; i < 64; ++i) {
      sp += p[size_t(i)];
      sq += q[size_t(i)];
    }
    for (int i = 0; i < 64; ++i) {
      p[size_t(i)] /= sp;
      q[size_t(i)] /= sq;
    }
    CHECK(kl_divergence(p, q) >= -1e-12);
  }

  // histograms are normalized over the shared support
  std::vector<double> other;
  for (int i = 0; i < 300; ++i) other.push_back(rng.normal() + 2.0);
  auto h = paired_histograms(vals, other, 64);
  double sp = 0, sq = 0;
  for (double v : h.p) sp += v;
  for (double v : h.q) sq += v;
  CHECK(sp == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(sq == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(feature_density_kl(vals, other, 64) > 0.1);

  CHECK_THROWS_AS(feature_density_kl({}, vals, 64), DataError);
}

TEST_CASE("cluster margin: orthogonal clusters, degenerate case, oracle") {
  // two labels, identical within, orthogonal across
  std::vector<std::vector<double>> feats = {
      {1, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 1, 0}};
  std::vector<int> labels = {0, 0, 1, 1};
  auto m = cluster_margin(feats, labels);
  CHECK(m.intra == doctest::Approx(1.0));
  CHECK(m.inter == doctest::Approx(0.0));
  CHECK(m.margin == doctest::Approx(1.0));

  // all samples identical -> margin 0
  std::vector<std::vector<double>> same = {{1, 1}, {1, 1}, {1, 1}, {1, 1}};
  auto ms = cluster_margin(same, labels);
  CHECK(ms.margin == doctest::Approx(0.0).epsilon(1e-12));

  // exhaustive pairwise oracle on random vectors
  Rng rng(9);
  std::vector<std::vector<double>> rnd;
  std::vector<int> rlabels;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> v(6);
    for (auto& x : v) x = rng.normal();
    rnd.push_back(v);
    rlabels.push_back(i % 4);
  }
  auto mr = cluster_margin(rnd, rlabels);
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  auto cos = [](const std::vector<double>& a, const std::vector<double>& b) {
    double d = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
      d += a[i] * b[i];
      na += a[i] * a[i];
      nb += b[i] * b[i];
    }
    return d / (std::sqrt(na) * std::sqrt(nb));
  };
  for (size_t i = 0; i < rnd.size(); ++i)
    for (size_t j = i + 1; j < rnd.size(); ++j) {
      if (rlabels[i] == rlabels[j]) {
        intra += cos(rnd[i], rnd[j]);
        ++ni;
      } else {
        inter += cos(rnd[i], rnd[j]);
        ++nx;
      }
    }
  CHECK(mr.intra == doctest::Approx(intra / ni).epsilon(1e-12));
  CHECK(mr.inter == doctest::Approx(inter / nx).epsilon(1e-12));
  CHECK(mr.margin >= -2.0);
  CHECK(mr.margin <= 2.0);

  CHECK_THROWS_AS(cluster_margin(feats, {0, 0, 0, 0}), ConfigError);
  CHECK_THROWS_AS(cluster_margin({{1, 0}, {0, 1}}, {0, 1}), ConfigError);
}

TEST_CASE("feature export writes a header plus one row per sample") {
  fs::path dir = fs::temp_directory_path() / "udair_export";
  fs::create_directories(dir);
  std::vector<std::vector<double>> feats = {{0.125, -3.0}, {7.5, 0.25}, {1.0 / 3.0, 2.0}};
  std::vector<int> labels = {0, 1, 0};
  std::string path = (dir / "features.tsv").string();
  export_features(feats, labels, {"noise", "haze"}, path);

  std::ifstream f(path);
  std::string line;
  std::getline(f, line);
  CHECK(line == "label\ttask\tf0\tf1");
  int rows = 0;
  while (std::getline(f, line)) {
    std::stringstream ss(line);
    std::string label, task, v0, v1;
    std::getline(ss, label, '\t');
    std::getline(ss, task, '\t');
    std::getline(ss, v0, '\t');
    std::getline(ss, v1, '\t');
    CHECK(std::fabs(std::stod(v0) - feats[size_t(rows)][0]) <= 1e-6);
    CHECK(std::fabs(std::stod(v1) - feats[size_t(rows)][1]) <= 1e-6);
    ++rows;
  }
  CHECK(rows == 3);
}

TEST_CASE("parameter counting: dense layer hand case and group partition") {
  ParamStore store;
  Rng rng(1);
  Linear dense(store, ParamGroup::Restoration, "probe", 3, 4, rng);
  CHECK(store.count() == 16);  // 3*4 weights + 4 biases

  ModelConfig cfg;
  cfg.backbone.base_dim = 8;
  cfg.backbone.levels = 3;
  cfg.backbone.blocks_per_level = 1;
  cfg.backbone.block_kind = BlockKind::Conv;
  cfg.backbone.inject_dim = 16;
  cfg.daam.dim = 16;
  cfg.daam.codebook_size = 32;
  cfg.dam.dim = 16;
  Model model(cfg);

  int64_t total = model.params().count();
  int64_t partition = model.params().count(ParamGroup::Restoration) +
                      model.params().count(ParamGroup::Awareness) +
                      model.params().count(ParamGroup::Adaptation);
  CHECK(total == partition);

  // closed-form count for this configuration (documented in the README):
  auto conv = [](int cin, int cout, int k) { return int64_t(cout) * cin * k * k + cout; };
  int64_t theta_r = 0;
  theta_r += conv(3, 8, 3);  // stem
  int ch[4] = {8, 16, 32, 64};
  for (int l = 0; l < 3; ++l) {
    theta_r += 2 * conv(ch[l], ch[l], 3);      // encoder block
    theta_r += conv(ch[l], ch[l + 1], 3);      // downsample
  }
  theta_r += 2 * conv(64, 64, 3);              // bottleneck block
  for (int l = 2; l >= 0; --l) {
    theta_r += conv(ch[l + 1], ch[l], 3);      // upsample conv
    theta_r += conv(2 * ch[l] + 16, ch[l], 1); // fuse
    theta_r += 2 * conv(ch[l], ch[l], 3);      // decoder block
  }
  theta_r += conv(8, 3, 3);                    // head
  CHECK(model.params().count(ParamGroup::Restoration) == theta_r);

  int64_t theta_a = conv(3, 4, 3) + conv(4, 8, 3) + conv(8, 16, 3)  // extractor
                    + 32 * 16                                       // codebook
                    + 1 + 16 + 16;                                  // gate params
  CHECK(model.params().count(ParamGroup::Awareness) == theta_a);

  int64_t theta_da = conv(16, 32, 1)            // expand
                     + (32 * 9 + 32)            // depthwise 3x3
                     + conv(32, 32, 1)          // pointwise
                     + (8 * 32 + 8)             // se reduce
                     + (32 * 8 + 32)            // se expand
                     + conv(32, 16, 1);         // project
  CHECK(model.params().count(ParamGroup::Adaptation) == theta_da);
}
