#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/tensor.hpp"

namespace mfsm {

// Eager reverse-mode tape. One tape per loss evaluation; nodes are appended in
// forward order, so reverse insertion order is a valid topological order for
// the backward sweep. Gradients are allocated lazily and accumulated, which
// makes aliased parents (e.g. hadamard(x, x)) come out right.
template <typename T>
class Tape {
 public:
  using Id = std::int32_t;

  Id input(Tensor<T> v) { return push(std::move(v), false, "input", {}); }
  Id param(Tensor<T> v) { return push(std::move(v), true, "param", {}); }

  const Tensor<T>& val(Id id) const { return nodes_[check_id(id)].value; }
  bool requires_grad(Id id) const { return nodes_[check_id(id)].requires_grad; }

  Tensor<T>& grad(Id id) {
    Node& n = nodes_[check_id(id)];
    if (!n.grad_alloc) {
      n.grad = Tensor<T>::zeros(n.value.rows(), n.value.cols());
      n.grad_alloc = true;
    }
    return n.grad;
  }

  bool has_grad(Id id) const { return nodes_[check_id(id)].grad_alloc; }
  std::size_t node_count() const { return nodes_.size(); }

  Id matmul(Id a, Id b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    require(av.cols() == bv.rows(), "matmul", av, bv);
    Tensor<T> out(av.rows(), bv.cols());
    out.m().noalias() = av.m() * bv.m();
    return push(std::move(out), requires_grad(a) || requires_grad(b), "matmul",
                [a, b](Tape& t, Id self) {
                  const auto& g = t.grad(self);
                  if (t.requires_grad(a))
                    t.grad(a).m().noalias() += g.m() * t.val(b).m().transpose();
                  if (t.requires_grad(b))
                    t.grad(b).m().noalias() += t.val(a).m().transpose() * g.m();
                });
  }

  // x:[n,k] W:[k,m] bias:[1,m] -> x*W + bias broadcast over rows.
  Id linear(Id x, Id w, Id bias) {
    const auto& xv = val(x);
    const auto& wv = val(w);
    const auto& bv = val(bias);
    require(xv.cols() == wv.rows(), "linear", xv, wv);
    require(bv.rows() == 1 && bv.cols() == wv.cols(), "linear", wv, bv);
    Tensor<T> out(xv.rows(), wv.cols());
    out.m().noalias() = xv.m() * wv.m();
    out.m().rowwise() += bv.m().row(0);
    bool rg = requires_grad(x) || requires_grad(w) || requires_grad(bias);
    return push(std::move(out), rg, "linear", [x, w, bias](Tape& t, Id self) {
      const auto& g = t.grad(self);
      if (t.requires_grad(x))
        t.grad(x).m().noalias() += g.m() * t.val(w).m().transpose();
      if (t.requires_grad(w))
        t.grad(w).m().noalias() += t.val(x).m().transpose() * g.m();
      if (t.requires_grad(bias))
        t.grad(bias).m().row(0) += g.m().colwise().sum();
    });
  }

  Id add(Id a, Id b) { return ew(a, b, "add", +1); }
  Id sub(Id a, Id b) { return ew(a, b, "sub", -1); }

  Id hadamard(Id a, Id b) {
    const auto& av = val(a);
    const auto& bv = val(b);
    require(av.same_shape(bv), "hadamard", av, bv);
    Tensor<T> out(av.rows(), av.cols());
    out.m() = av.m().cwiseProduct(bv.m());
    return push(std::move(out), requires_grad(a) || requires_grad(b),
                "hadamard", [a, b](Tape& t, Id self) {
                  const auto& g = t.grad(self);
                  if (t.requires_grad(a))
                    t.grad(a).m() += g.m().cwiseProduct(t.val(b).m());
                  if (t.requires_grad(b))
                    t.grad(b).m() += g.m().cwiseProduct(t.val(a).m());
                });
  }

  Id scale(Id x, T s) {
    Tensor<T> out = val(x);
    out.m() *= s;
    return push(std::move(out), requires_grad(x), "scale",
                [x, s](Tape& t, Id self) {
                  if (t.requires_grad(x)) t.grad(x).m() += s * t.grad(self).m();
                });
  }

  Id add_const(Id x, T c) {
    Tensor<T> out = val(x);
    out.m().array() += c;
    return push(std::move(out), requires_grad(x), "add_const",
                [x](Tape& t, Id self) {
                  if (t.requires_grad(x)) t.grad(x).m() += t.grad(self).m();
                });
  }

  // x:[n,c] v:[1,c], broadcast over rows.
  Id add_rowvec(Id x, Id v) { return rowvec(x, v, "add_rowvec", true); }
  Id mul_rowvec(Id x, Id v) { return rowvec(x, v, "mul_rowvec", false); }

  Id transpose(Id x) {
    const auto& xv = val(x);
    Tensor<T> out(xv.cols(), xv.rows());
    out.m() = xv.m().transpose();
    return push(std::move(out), requires_grad(x), "transpose",
                [x](Tape& t, Id self) {
                  if (t.requires_grad(x))
                    t.grad(x).m() += t.grad(self).m().transpose();
                });
  }

  Id softmax_rows(Id x) {
    const auto& xv = val(x);
    const int n = xv.cols();
    Tensor<T> out(xv.rows(), n);
    for (int i = 0; i < xv.rows(); ++i) {
      T mx = xv.m().row(i).maxCoeff();
      out.m().row(i) = (xv.m().row(i).array() - mx).exp();
      out.m().row(i) /= ordered_sum(out.data() + std::size_t(i) * n, n);
    }
    return push(std::move(out), requires_grad(x), "softmax_rows",
                [x](Tape& t, Id self) {
                  if (!t.requires_grad(x)) return;
                  const auto& y = t.val(self);
                  const auto& g = t.grad(self);
                  const int n = y.cols();
                  auto gx = t.grad(x).m();
                  for (int i = 0; i < y.rows(); ++i) {
                    T dot = ordered_dot(g.data() + std::size_t(i) * n,
                                        y.data() + std::size_t(i) * n, n);
                    gx.row(i) += (y.m().row(i).array() *
                                  (g.m().row(i).array() - dot))
                                     .matrix();
                  }
                });
  }

  Id gelu(Id x) {
    const auto& xv = val(x);
    Tensor<T> out(xv.rows(), xv.cols());
    for (std::size_t k = 0; k < xv.size(); ++k) {
      double u = static_cast<double>(xv.at_flat(k));
      out.at_flat(k) = static_cast<T>(0.5 * u * (1.0 + std::erf(u * M_SQRT1_2)));
    }
    return push(std::move(out), requires_grad(x), "gelu",
                [x](Tape& t, Id self) {
                  if (!t.requires_grad(x)) return;
                  const auto& xv = t.val(x);
                  const auto& g = t.grad(self);
                  auto& gx = t.grad(x);
                  constexpr double inv_sqrt2pi = 0.3989422804014327;
                  for (std::size_t k = 0; k < xv.size(); ++k) {
                    double u = static_cast<double>(xv.at_flat(k));
                    double cdf = 0.5 * (1.0 + std::erf(u * M_SQRT1_2));
                    double pdf = inv_sqrt2pi * std::exp(-0.5 * u * u);
                    gx.at_flat(k) += static_cast<T>((cdf + u * pdf) *
                                                    static_cast<double>(g.at_flat(k)));
                  }
                });
  }

  // Per-row normalization, no affine terms (pair with mul_rowvec/add_rowvec).
  Id layer_norm(Id x, T eps = static_cast<T>(1e-5)) {
    const auto& xv = val(x);
    const int n = xv.cols();
    require(n > 0, "layer_norm", xv, xv);
    Tensor<T> out(xv.rows(), n);
    std::vector<T> istd(xv.rows());
    for (int i = 0; i < xv.rows(); ++i) {
      const T* xp = xv.data() + std::size_t(i) * n;
      T mu = ordered_sum(xp, n) / T(n);
      T var = 0;
      for (int k = 0; k < n; ++k) var += (xp[k] - mu) * (xp[k] - mu);
      var /= T(n);
      istd[i] = T(1) / std::sqrt(var + eps);
      out.m().row(i) = ((xv.m().row(i).array() - mu) * istd[i]).matrix();
    }
    return push(std::move(out), requires_grad(x), "layer_norm",
                [x, istd = std::move(istd)](Tape& t, Id self) {
                  if (!t.requires_grad(x)) return;
                  const auto& y = t.val(self);
                  const auto& g = t.grad(self);
                  const int n = y.cols();
                  auto gx = t.grad(x).m();
                  for (int i = 0; i < y.rows(); ++i) {
                    T gmean =
                        ordered_sum(g.data() + std::size_t(i) * n, n) / T(n);
                    T gymean = ordered_dot(g.data() + std::size_t(i) * n,
                                           y.data() + std::size_t(i) * n, n) /
                               T(n);
                    gx.row(i) += istd[i] * (g.m().row(i).array() - gmean -
                                            y.m().row(i).array() * gymean)
                                     .matrix();
                  }
                });
  }

  Id slice_cols(Id x, int c0, int c1) {
    const auto& xv = val(x);
    if (c0 < 0 || c1 > xv.cols() || c0 >= c1)
      throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                       std::to_string(c1) + ") out of " + shape_str(xv));
    Tensor<T> out(xv.rows(), c1 - c0);
    out.m() = xv.m().middleCols(c0, c1 - c0);
    return push(std::move(out), requires_grad(x), "slice_cols",
                [x, c0, c1](Tape& t, Id self) {
                  if (t.requires_grad(x))
                    t.grad(x).m().middleCols(c0, c1 - c0) += t.grad(self).m();
                });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw ShapeError("concat_cols: no inputs");
    int rows = val(parts[0]).rows(), cols = 0;
    bool rg = false;
    for (Id p : parts) {
      if (val(p).rows() != rows)
        throw ShapeError("concat_cols: row mismatch " + shape_str(val(p)));
      cols += val(p).cols();
      rg = rg || requires_grad(p);
    }
    Tensor<T> out(rows, cols);
    int off = 0;
    for (Id p : parts) {
      out.m().middleCols(off, val(p).cols()) = val(p).m();
      off += val(p).cols();
    }
    return push(std::move(out), rg, "concat_cols",
                [parts](Tape& t, Id self) {
                  int off = 0;
                  for (Id p : parts) {
                    int w = t.val(p).cols();
                    if (t.requires_grad(p))
                      t.grad(p).m() += t.grad(self).m().middleCols(off, w);
                    off += w;
                  }
                });
  }

  // out.row(i) = x.row(idx[i]); duplicate indices accumulate in backward.
  Id gather_rows(Id x, std::vector<int> idx) {
    const auto& xv = val(x);
    for (int i : idx)
      if (i < 0 || i >= xv.rows())
        throw ShapeError("gather_rows: index " + std::to_string(i) +
                         " out of " + shape_str(xv));
    Tensor<T> out(static_cast<int>(idx.size()), xv.cols());
    for (int i = 0; i < out.rows(); ++i) out.m().row(i) = xv.m().row(idx[i]);
    return push(std::move(out), requires_grad(x), "gather_rows",
                [x, idx = std::move(idx)](Tape& t, Id self) {
                  if (!t.requires_grad(x)) return;
                  const auto& g = t.grad(self);
                  auto gx = t.grad(x).m();
                  for (int i = 0; i < g.rows(); ++i)
                    gx.row(idx[i]) += g.m().row(i);
                });
  }

  Id sum_all(Id x) {
    Tensor<T> out(1, 1);
    out(0, 0) = ordered_sum(val(x).data(), val(x).size());
    return push(std::move(out), requires_grad(x), "sum_all",
                [x](Tape& t, Id self) {
                  if (t.requires_grad(x))
                    t.grad(x).m().array() += t.grad(self)(0, 0);
                });
  }

  Id mean_all(Id x) {
    const T inv = T(1) / static_cast<T>(val(x).size());
    Tensor<T> out(1, 1);
    out(0, 0) = ordered_sum(val(x).data(), val(x).size()) * inv;
    return push(std::move(out), requires_grad(x), "mean_all",
                [x, inv](Tape& t, Id self) {
                  if (t.requires_grad(x))
                    t.grad(x).m().array() += t.grad(self)(0, 0) * inv;
                });
  }

  Id reshape(Id x, int r, int c) {
    Tensor<T> out = val(x).reshaped(r, c);
    return push(std::move(out), requires_grad(x), "reshape",
                [x](Tape& t, Id self) {
                  if (!t.requires_grad(x)) return;
                  const auto& xv = t.val(x);
                  t.grad(x).m() +=
                      t.grad(self).reshaped(xv.rows(), xv.cols()).m();
                });
  }

  // Seeds d(root)/d(root) = 1 and sweeps the tape in reverse insertion order.
  void backward(Id root) {
    if (nodes_.empty()) throw std::logic_error("backward: empty tape");
    check_id(root);
    const auto& rv = val(root);
    if (rv.rows() != 1 || rv.cols() != 1)
      throw std::logic_error("backward: root must be 1x1, got " + shape_str(rv));
    if (!nodes_[root].requires_grad)
      throw std::logic_error("backward: root does not require grad");
    grad(root)(0, 0) = T(1);
    for (Id id = root; id >= 0; --id) {
      Node& n = nodes_[id];
      if (n.grad_alloc && n.back) n.back(*this, id);
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool grad_alloc = false;
    const char* op = "";
    std::function<void(Tape&, Id)> back;
  };

  Id push(Tensor<T> v, bool rg, const char* op,
          std::function<void(Tape&, Id)> back) {
    nodes_.push_back(Node{std::move(v), {}, rg, false, op,
                          rg ? std::move(back) : nullptr});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id ew(Id a, Id b, const char* op, int sign) {
    const auto& av = val(a);
    const auto& bv = val(b);
    require(av.same_shape(bv), op, av, bv);
    Tensor<T> out(av.rows(), av.cols());
    if (sign > 0)
      out.m() = av.m() + bv.m();
    else
      out.m() = av.m() - bv.m();
    return push(std::move(out), requires_grad(a) || requires_grad(b), op,
                [a, b, sign](Tape& t, Id self) {
                  const auto& g = t.grad(self);
                  if (t.requires_grad(a)) t.grad(a).m() += g.m();
                  if (t.requires_grad(b)) {
                    if (sign > 0)
                      t.grad(b).m() += g.m();
                    else
                      t.grad(b).m() -= g.m();
                  }
                });
  }

  Id rowvec(Id x, Id v, const char* op, bool additive) {
    const auto& xv = val(x);
    const auto& vv = val(v);
    require(vv.rows() == 1 && vv.cols() == xv.cols(), op, xv, vv);
    Tensor<T> out(xv.rows(), xv.cols());
    if (additive)
      out.m() = xv.m().rowwise() + vv.m().row(0);
    else
      out.m() = xv.m().array().rowwise() * vv.m().row(0).array();
    return push(std::move(out), requires_grad(x) || requires_grad(v), op,
                [x, v, additive](Tape& t, Id self) {
                  const auto& g = t.grad(self);
                  if (additive) {
                    if (t.requires_grad(x)) t.grad(x).m() += g.m();
                    if (t.requires_grad(v))
                      t.grad(v).m().row(0) += g.m().colwise().sum();
                  } else {
                    if (t.requires_grad(x))
                      t.grad(x).m() += (g.m().array().rowwise() *
                                        t.val(v).m().row(0).array())
                                           .matrix();
                    if (t.requires_grad(v))
                      t.grad(v).m().row(0) +=
                          g.m().cwiseProduct(t.val(x).m()).colwise().sum();
                  }
                });
  }

  Id check_id(Id id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
      throw std::logic_error("tape: node id " + std::to_string(id) +
                             " out of range");
    return id;
  }

  void require(bool ok, const char* op, const Tensor<T>& a,
               const Tensor<T>& b) const {
    if (!ok)
      throw ShapeError(std::string(op) + ": incompatible shapes " +
                       shape_str(a) + " and " + shape_str(b));
  }

  std::vector<Node> nodes_;
};

}  // namespace mfsm
