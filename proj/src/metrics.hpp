#pragma once

#include <string>
#include <vector>

#include "image.hpp"

namespace udair {

constexpr double kPsnrCap = 99.0;  // sentinel for (near-)zero MSE

// 10*log10(1/MSE) over all pixels and channels, capped at 99 dB.
double psnr(const Image& a, const Image& b);

struct SsimConfig {
  int window = 8;
  bool gaussian = false;  // true: 11x11 Gaussian window, sigma 1.5
  double sigma = 1.5;
  double k1 = 0.01, k2 = 0.03;
  double data_range = 1.0;
};

// Mean local SSIM over all valid window positions and channels.
double ssim(const Image& a, const Image& b, const SsimConfig& cfg = {});

struct HistogramPair {
  std::vector<double> p, q;  // normalized masses over the shared support
  double lo = 0.0, hi = 0.0;
};

// Shared-support histograms with add-eps smoothing; KL(p||q) in nats.
HistogramPair paired_histograms(const std::vector<double>& source,
                                const std::vector<double>& other, int bins,
                                double eps = 1e-8);
double kl_divergence(const std::vector<double>& p, const std::vector<double>& q);
double feature_density_kl(const std::vector<double>& source,
                          const std::vector<double>& other, int bins);

struct ClusterMargin {
  double intra = 0.0;  // mean pairwise cosine within a label
  double inter = 0.0;  // mean pairwise cosine across labels
  double margin = 0.0;
};

ClusterMargin cluster_margin(const std::vector<std::vector<double>>& features,
                             const std::vector<int>& labels);

// Tab-separated export: header, then one row per sample (label + vector).
void export_features(const std::vector<std::vector<double>>& features,
                     const std::vector<int>& labels,
                     const std::vector<std::string>& label_names, const std::string& path);

}  // namespace udair
