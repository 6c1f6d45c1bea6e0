#pragma once

#include <cassert>
#include <vector>

namespace wsda {

// Dense row-major double tensor. Feature maps use (H, W, C) order so the
// channel axis is contiguous.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims) : dims_(std::move(dims)) {
    size_ = 1;
    for (int d : dims_) size_ *= d;
    v_.assign(static_cast<size_t>(size_), 0.0);
  }

  static Tensor scalar(double v) {
    Tensor t(std::vector<int>{1});
    t.v_[0] = v;
    return t;
  }

  int ndim() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<size_t>(i)]; }
  const std::vector<int>& dims() const { return dims_; }
  int size() const { return size_; }
  bool empty() const { return size_ == 0; }

  double* data() { return v_.data(); }
  const double* data() const { return v_.data(); }

  double& operator[](int i) { return v_[static_cast<size_t>(i)]; }
  double operator[](int i) const { return v_[static_cast<size_t>(i)]; }

  // (H, W, C) indexing
  double& at(int y, int x, int c) {
    assert(ndim() == 3);
    return v_[static_cast<size_t>((y * dims_[1] + x) * dims_[2] + c)];
  }
  double at(int y, int x, int c) const {
    assert(ndim() == 3);
    return v_[static_cast<size_t>((y * dims_[1] + x) * dims_[2] + c)];
  }

  // (rows, cols) indexing
  double& at2(int r, int c) {
    assert(ndim() == 2);
    return v_[static_cast<size_t>(r * dims_[1] + c)];
  }
  double at2(int r, int c) const {
    assert(ndim() == 2);
    return v_[static_cast<size_t>(r * dims_[1] + c)];
  }

  bool same_shape(const Tensor& o) const { return dims_ == o.dims_; }

  void fill(double v) { v_.assign(v_.size(), v); }

 private:
  std::vector<int> dims_;
  int size_ = 0;
  std::vector<double> v_;
};

}  // namespace wsda
