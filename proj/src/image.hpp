#pragma once

#include <string>

#include "tensor.hpp"

namespace udair {

// RGB image in [0,1], stored as a (3, H, W) tensor.
class Image {
public:
  Image() = default;
  Image(int height, int width) : t_(Tensor({3, height, width})) {}
  explicit Image(Tensor t) : t_(std::move(t)) {
    if (t_.rank() != 3 || t_.dim(0) != 3)
      throw ConfigError("image tensor must be (3,H,W)");
  }

  int height() const { return t_.dim(1); }
  int width() const { return t_.dim(2); }

  double& at(int c, int y, int x) {
    return t_[(int64_t(c) * height() + y) * width() + x];
  }
  double at(int c, int y, int x) const {
    return t_[(int64_t(c) * height() + y) * width() + x];
  }

  Tensor& tensor() { return t_; }
  const Tensor& tensor() const { return t_; }

  void clamp01();
  bool in_range01(double tol = 0.0) const;

  Image crop(int y0, int x0, int h, int w) const;

private:
  Tensor t_;
};

// 8-bit RGB PNG round trip. Values are quantized with round(v*255).
void write_png(const Image& img, const std::string& path);
Image read_png(const std::string& path);

}  // namespace udair
