#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace vlws {

// Dense row-major tensor of doubles. All training math runs in 64-bit so
// finite-difference checks and cross-run reproducibility hold exactly.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    data_.assign(static_cast<size_t>(count(shape_)), 0.0);
  }
  Tensor(std::vector<int> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (static_cast<int64_t>(data_.size()) != count(shape_))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<int> shape, double v) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), v);
    return t;
  }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const std::vector<int>& shape() const { return shape_; }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // NCHW accessors.
  double& at4(int n, int c, int h, int w) {
    return data_[static_cast<size_t>(((int64_t(n) * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  double at4(int n, int c, int h, int w) const {
    return data_[static_cast<size_t>(((int64_t(n) * dim(1) + c) * dim(2) + h) * dim(3) + w)];
  }
  double& at2(int r, int c) { return data_[static_cast<size_t>(int64_t(r) * dim(1) + c)]; }
  double at2(int r, int c) const { return data_[static_cast<size_t>(int64_t(r) * dim(1) + c)]; }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  std::string shape_str() const {
    std::string s = "(";
    for (size_t i = 0; i < shape_.size(); ++i) {
      if (i) s += ",";
      s += std::to_string(shape_[i]);
    }
    return s + ")";
  }

  static int64_t count(const std::vector<int>& shape) {
    int64_t n = 1;
    for (int d : shape) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

 private:
  std::vector<int> shape_;
  std::vector<double> data_;
};

inline void check_shape(const Tensor& t, const std::vector<int>& want, const char* what) {
  if (t.shape() != want)
    throw std::invalid_argument(std::string(what) + ": expected shape " +
                                Tensor(want).shape_str() + ", got " + t.shape_str());
}

}  // namespace vlws
