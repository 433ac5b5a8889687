// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <vector>

namespace cassi {

// Dense row-major tensor of doubles. Shapes stay small (<= 4 dims);
// hot loops index through raw data() pointers, the at() helpers are
// for setup code and tests.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (int d : shape_) {
      if (d < 0) throw std::invalid_argument("Tensor: negative dimension");
      n *= static_cast<std::size_t>(d);
    }
    data_.assign(n, fill);
  }
  Tensor(std::initializer_list<int> shape, double fill = 0.0)
      : Tensor(std::vector<int>(shape), fill) {}

  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_); }

  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(int i, int j) {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
  }
  double at(int i, int j) const {
    return data_[static_cast<std::size_t>(i) * dim(1) + j];
  }
  double& at(int i, int j, int k) {
    return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  double at(int i, int j, int k) const {
    return data_[(static_cast<std::size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

// Elementwise helpers used across modules and tests.
double tensor_min(const Tensor& t);
double tensor_max(const Tensor& t);
double tensor_abs_mean(const Tensor& t);
double tensor_dot(const Tensor& a, const Tensor& b);
double tensor_sq_norm(const Tensor& t);
bool tensor_all_finite(const Tensor& t);
double tensor_max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace cassi
