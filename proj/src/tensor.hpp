#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "common.hpp"

namespace udair {

// Dense row-major double tensor. Feature maps use NCHW order, matrices are
// (rows, cols), images are (3, H, W) in [0,1].
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape)
      : shape_(std::move(shape)), data_(checked_numel(shape_), 0.0) {}
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (int64_t(data_.size()) != checked_numel(shape_))
      throw ConfigError("tensor data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  static Tensor randn(std::vector<int> shape, Rng& rng, double stddev = 1.0) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.normal(0.0, stddev);
    return t;
  }

  static Tensor rand_uniform(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = rng.uniform(lo, hi);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_[size_t(i)]; }
  int rank() const { return int(shape_.size()); }
  int64_t numel() const { return int64_t(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  double& operator[](int64_t i) { return data_[size_t(i)]; }
  double operator[](int64_t i) const { return data_[size_t(i)]; }

  // NCHW accessor
  double& at4(int n, int c, int h, int w) {
    return data_[size_t(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double at4(int n, int c, int h, int w) const {
    return data_[size_t(((int64_t(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w)];
  }
  double& at2(int r, int c) { return data_[size_t(int64_t(r) * shape_[1] + c)]; }
  double at2(int r, int c) const { return data_[size_t(int64_t(r) * shape_[1] + c)]; }

  Tensor reshaped(std::vector<int> shape) const {
    Tensor t;
    t.shape_ = std::move(shape);
    if (checked_numel(t.shape_) != numel())
      throw ConfigError("reshape changes element count");
    t.data_ = data_;
    return t;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  static int64_t checked_numel(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d <= 0) throw ConfigError("tensor dims must be positive");
      n *= d;
    }
    return n;
  }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

}  // namespace udair
