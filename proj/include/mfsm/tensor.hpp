#pragma once

#define EIGEN_DONT_PARALLELIZE
#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/rng.hpp"

namespace mfsm {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// 64-byte-aligned element storage. Eigen picks its vector code paths from the
// runtime phase of a buffer relative to the packet width, so two buffers of
// the same shape can round a product differently if the heap placed them at
// different phases. Pinning every buffer to one phase makes those picks a
// pure function of shape, which the bit-reproducibility contracts need.
template <typename T>
struct AlignedAlloc {
  using value_type = T;
  static constexpr std::size_t alignment = 64;

  AlignedAlloc() = default;
  template <typename U>
  AlignedAlloc(const AlignedAlloc<U>&) {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t{alignment}));
  }
  void deallocate(T* p, std::size_t) noexcept {
    ::operator delete(p, std::align_val_t{alignment});
  }

  template <typename U>
  bool operator==(const AlignedAlloc<U>&) const { return true; }
  template <typename U>
  bool operator!=(const AlignedAlloc<U>&) const { return false; }
};

// Dense row-major matrix of float or double. Vectors are 1 x k rows.
template <typename T>
class Tensor {
 public:
  using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using Map = Eigen::Map<EMat>;
  using CMap = Eigen::Map<const EMat>;

  Tensor() = default;
  Tensor(int rows, int cols) : rows_(rows), cols_(cols) {
    if (rows < 0 || cols < 0) throw ShapeError("Tensor: negative dimension");
    v_.assign(static_cast<std::size_t>(rows) * cols, T(0));
  }

  static Tensor zeros(int r, int c) { return Tensor(r, c); }

  static Tensor full(int r, int c, T value) {
    Tensor t(r, c);
    for (auto& x : t.v_) x = value;
    return t;
  }

  static Tensor randn(int r, int c, Rng& rng, double std = 1.0) {
    Tensor t(r, c);
    for (auto& x : t.v_) x = static_cast<T>(std * rng.normal());
    return t;
  }

  static Tensor from_rows(std::initializer_list<std::initializer_list<T>> rows) {
    const int r = static_cast<int>(rows.size());
    const int c = r > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    Tensor t(r, c);
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c)
        throw ShapeError("Tensor::from_rows: ragged rows");
      int j = 0;
      for (T x : row) t(i, j++) = x;
      ++i;
    }
    return t;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return v_.size(); }
  std::vector<int> shape() const { return {rows_, cols_}; }

  T& operator()(int i, int j) { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  T operator()(int i, int j) const { return v_[static_cast<std::size_t>(i) * cols_ + j]; }
  T& at_flat(std::size_t k) { return v_[k]; }
  T at_flat(std::size_t k) const { return v_[k]; }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }

  Map m() { return Map(v_.data(), rows_, cols_); }
  CMap m() const { return CMap(v_.data(), rows_, cols_); }

  bool same_shape(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  bool all_finite() const {
    for (T x : v_)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  void fill(T value) { for (auto& x : v_) x = value; }

  Tensor reshaped(int r, int c) const {
    if (static_cast<std::size_t>(r) * c != v_.size())
      throw ShapeError("Tensor::reshaped: element count mismatch");
    Tensor t = *this;
    t.rows_ = r;
    t.cols_ = c;
    return t;
  }

  bool operator==(const Tensor& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && v_ == o.v_;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> t(rows_, cols_);
    for (std::size_t k = 0; k < v_.size(); ++k)
      t.at_flat(k) = static_cast<U>(v_[k]);
    return t;
  }

 private:
  int rows_ = 0, cols_ = 0;
  std::vector<T, AlignedAlloc<T>> v_;
};

// Fixed-order scalar sum. Eigen's vectorized reductions split lanes by the
// runtime pointer alignment, so their rounding can differ between identical
// computations; every value-bearing reduction goes through this instead.
template <typename T>
T ordered_sum(const T* p, std::size_t n) {
  T s = 0;
  for (std::size_t k = 0; k < n; ++k) s += p[k];
  return s;
}

template <typename T>
T ordered_dot(const T* a, const T* b, std::size_t n) {
  T s = 0;
  for (std::size_t k = 0; k < n; ++k) s += a[k] * b[k];
  return s;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.rows(), b.cols());
  out.m().noalias() = a.m() * b.m();
  return out;
}

template <typename T>
T max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  T m = 0;
  for (std::size_t k = 0; k < a.size(); ++k)
    m = std::max(m, std::abs(a.at_flat(k) - b.at_flat(k)));
  return m;
}

}  // namespace mfsm
