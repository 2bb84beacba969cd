#pragma once

#include <cmath>
#include <vector>

#include "mfsm/tensor.hpp"

// Tape-free forward kernels. These mirror the forward halves of the autodiff
// ops exactly (same reduction order) so a network evaluated through either
// path produces the same values.
namespace mfsm::kern {

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  Tensor<T> out(x.rows(), w.cols());
  out.m().noalias() = x.m() * w.m();
  out.m().rowwise() += b.m().row(0);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.rows(), a.cols());
  out.m() = a.m() + b.m();
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.rows(), a.cols());
  out.m() = a.m() - b.m();
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  Tensor<T> out(a.rows(), a.cols());
  out.m() = a.m().cwiseProduct(b.m());
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  Tensor<T> out = x;
  out.m() *= s;
  return out;
}

template <typename T>
Tensor<T> add_const(const Tensor<T>& x, T c) {
  Tensor<T> out = x;
  out.m().array() += c;
  return out;
}

template <typename T>
Tensor<T> add_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  Tensor<T> out(x.rows(), x.cols());
  out.m() = x.m().rowwise() + v.m().row(0);
  return out;
}

template <typename T>
Tensor<T> mul_rowvec(const Tensor<T>& x, const Tensor<T>& v) {
  Tensor<T> out(x.rows(), x.cols());
  out.m() = (x.m().array().rowwise() * v.m().row(0).array()).matrix();
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  Tensor<T> out(x.cols(), x.rows());
  out.m() = x.m().transpose();
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  const int n = x.cols();
  Tensor<T> out(x.rows(), n);
  for (int i = 0; i < x.rows(); ++i) {
    T mx = x.m().row(i).maxCoeff();
    out.m().row(i) = (x.m().row(i).array() - mx).exp();
    out.m().row(i) /= ordered_sum(out.data() + std::size_t(i) * n, n);
  }
  return out;
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  Tensor<T> out(x.rows(), x.cols());
  for (std::size_t k = 0; k < x.size(); ++k) {
    double u = static_cast<double>(x.at_flat(k));
    out.at_flat(k) = static_cast<T>(0.5 * u * (1.0 + std::erf(u * M_SQRT1_2)));
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, T eps = static_cast<T>(1e-5)) {
  const int n = x.cols();
  Tensor<T> out(x.rows(), n);
  for (int i = 0; i < x.rows(); ++i) {
    const T* xp = x.data() + std::size_t(i) * n;
    T mu = ordered_sum(xp, n) / T(n);
    T var = 0;
    for (int k = 0; k < n; ++k) var += (xp[k] - mu) * (xp[k] - mu);
    var /= T(n);
    T istd = T(1) / std::sqrt(var + eps);
    out.m().row(i) = ((x.m().row(i).array() - mu) * istd).matrix();
  }
  return out;
}

template <typename T>
Tensor<T> slice_cols(const Tensor<T>& x, int c0, int c1) {
  Tensor<T> out(x.rows(), c1 - c0);
  out.m() = x.m().middleCols(c0, c1 - c0);
  return out;
}

template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  int cols = 0;
  for (const auto& p : parts) cols += p.cols();
  Tensor<T> out(parts[0].rows(), cols);
  int off = 0;
  for (const auto& p : parts) {
    out.m().middleCols(off, p.cols()) = p.m();
    off += p.cols();
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(const Tensor<T>& x, const std::vector<int>& idx) {
  Tensor<T> out(static_cast<int>(idx.size()), x.cols());
  for (int i = 0; i < out.rows(); ++i) out.m().row(i) = x.m().row(idx[i]);
  return out;
}

template <typename T>
T sum_all(const Tensor<T>& x) {
  return ordered_sum(x.data(), x.size());
}

template <typename T>
T mean_all(const Tensor<T>& x) {
  const T inv = T(1) / static_cast<T>(x.size());
  return ordered_sum(x.data(), x.size()) * inv;
}

// FiLM conditioning: scale (x) h + shift, elementwise.
template <typename T>
Tensor<T> film(const Tensor<T>& h, const Tensor<T>& scale,
               const Tensor<T>& shift) {
  if (!h.same_shape(scale) || !h.same_shape(shift))
    throw ShapeError("film: shape mismatch");
  Tensor<T> out(h.rows(), h.cols());
  out.m() = h.m().cwiseProduct(scale.m()) + shift.m();
  return out;
}

}  // namespace mfsm::kern
