#include "metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "common.hpp"

namespace udair {

double psnr(const Image& a, const Image& b) {
  if (!a.tensor().same_shape(b.tensor())) throw ConfigError("psnr shape mismatch");
  double mse = 0.0;
  const auto& va = a.tensor().vec();
  const auto& vb = b.tensor().vec();
  for (size_t i = 0; i < va.size(); ++i) {
    double d = va[i] - vb[i];
    mse += d * d;
  }
  mse /= double(va.size());
  if (mse <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<double> window_weights(const SsimConfig& cfg) {
  int n = cfg.window;
  std::vector<double> w(size_t(n) * size_t(n));
  if (!cfg.gaussian) {
    std::fill(w.begin(), w.end(), 1.0 / double(n * n));
    return w;
  }
  double c = (n - 1) / 2.0;
  double sum = 0.0;
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) {
      double dy = y - c, dx = x - c;
      double v = std::exp(-(dy * dy + dx * dx) / (2.0 * cfg.sigma * cfg.sigma));
      w[size_t(y) * size_t(n) + size_t(x)] = v;
      sum += v;
    }
  for (auto& v : w) v /= sum;
  return w;
}

}  // namespace

double ssim(const Image& a, const Image& b, const SsimConfig& cfg) {
  if (!a.tensor().same_shape(b.tensor())) throw ConfigError("ssim shape mismatch");
  int h = a.height(), w = a.width(), n = cfg.window;
  if (h < n || w < n)
    throw DataError("image smaller than ssim window (" + std::to_string(n) + ")");
  const double c1 = (cfg.k1 * cfg.data_range) * (cfg.k1 * cfg.data_range);
  const double c2 = (cfg.k2 * cfg.data_range) * (cfg.k2 * cfg.data_range);
  std::vector<double> weights = window_weights(cfg);

  double total = 0.0;
  int64_t count = 0;
  for (int ch = 0; ch < 3; ++ch) {
    for (int y0 = 0; y0 + n <= h; ++y0) {
      for (int x0 = 0; x0 + n <= w; ++x0) {
        double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
        for (int y = 0; y < n; ++y)
          for (int x = 0; x < n; ++x) {
            double wt = weights[size_t(y) * size_t(n) + size_t(x)];
            double va = a.at(ch, y0 + y, x0 + x);
            double vb = b.at(ch, y0 + y, x0 + x);
            ma += wt * va;
            mb += wt * vb;
            aa += wt * va * va;
            bb += wt * vb * vb;
            ab += wt * va * vb;
          }
        double var_a = aa - ma * ma;
        double var_b = bb - mb * mb;
        double cov = ab - ma * mb;
        double s = ((2 * ma * mb + c1) * (2 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
        total += s;
        ++count;
      }
    }
  }
  return total / double(count);
}

HistogramPair paired_histograms(const std::vector<double>& source,
                                const std::vector<double>& other, int bins, double eps) {
  if (source.empty() || other.empty())
    throw DataError("empty feature collection for histogram");
  if (bins < 1) throw ConfigError("histogram needs at least one bin");
  double lo = source[0], hi = source[0];
  for (double v : source) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  for (double v : other) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  HistogramPair out;
  out.lo = lo;
  out.hi = hi;
  out.p.assign(size_t(bins), 0.0);
  out.q.assign(size_t(bins), 0.0);
  double width = hi - lo;
  auto fill = [&](const std::vector<double>& values, std::vector<double>& hist) {
    for (double v : values) {
      int idx = width <= 0.0 ? 0 : int((v - lo) / width * double(bins));
      idx = std::clamp(idx, 0, bins - 1);
      hist[size_t(idx)] += 1.0;
    }
    double total = 0.0;
    for (auto& m : hist) {
      m += eps;
      total += m;
    }
    for (auto& m : hist) m /= total;
  };
  fill(source, out.p);
  fill(other, out.q);
  return out;
}

double kl_divergence(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) throw ConfigError("kl histogram size mismatch");
  double kl = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    if (q[i] <= 0.0) throw NumericError("kl undefined: zero mass in q where p > 0");
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return kl;
}

double feature_density_kl(const std::vector<double>& source,
                          const std::vector<double>& other, int bins) {
  auto h = paired_histograms(source, other, bins);
  return kl_divergence(h.p, h.q);
}

namespace {

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double dot = 0, na = 0, nb = 0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return dot / (std::max(std::sqrt(na), 1e-12) * std::max(std::sqrt(nb), 1e-12));
}

}  // namespace

ClusterMargin cluster_margin(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels) {
  if (features.size() != labels.size() || features.size() < 2)
    throw ConfigError("cluster_margin needs matching features/labels");
  int max_label = *std::max_element(labels.begin(), labels.end());
  std::vector<int> counts(size_t(max_label) + 1, 0);
  for (int l : labels) {
    if (l < 0) throw ConfigError("negative label");
    ++counts[size_t(l)];
  }
  int distinct = 0;
  for (int c : counts)
    if (c > 0) ++distinct;
  if (distinct < 2) throw ConfigError("cluster_margin needs at least 2 labels");
  for (int c : counts)
    if (c == 1) throw ConfigError("every label needs at least 2 samples");

  double intra = 0, inter = 0;
  int64_t n_intra = 0, n_inter = 0;
  for (size_t i = 0; i < features.size(); ++i)
    for (size_t j = i + 1; j < features.size(); ++j) {
      double s = cosine(features[i], features[j]);
      if (labels[i] == labels[j]) {
        intra += s;
        ++n_intra;
      } else {
        inter += s;
        ++n_inter;
      }
    }
  ClusterMargin out;
  out.intra = intra / double(n_intra);
  out.inter = inter / double(n_inter);
  out.margin = out.intra - out.inter;
  return out;
}

void export_features(const std::vector<std::vector<double>>& features,
                     const std::vector<int>& labels,
                     const std::vector<std::string>& label_names, const std::string& path) {
  if (features.size() != labels.size()) throw ConfigError("features/labels size mismatch");
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot write feature export: " + path);
  size_t dim = features.empty() ? 0 : features[0].size();
  f << "label\ttask";
  for (size_t i = 0; i < dim; ++i) f << "\tf" << i;
  f << "\n";
  f.precision(17);
  for (size_t i = 0; i < features.size(); ++i) {
    int l = labels[i];
    f << l << "\t" << (size_t(l) < label_names.size() ? label_names[size_t(l)] : "?");
    for (double v : features[i]) f << "\t" << v;
    f << "\n";
  }
  if (!f) throw IoError("short write to feature export: " + path);
}

}  // namespace udair
