#pragma once

#include <cmath>
#include <cstdio>
#include <vector>

#include "mfsm/tensor.hpp"

namespace mfsm {

// Adam with bias correction and linear learning-rate warmup. A step whose
// gradients contain any non-finite value is skipped (weights, moments and the
// bias-correction counter all stay untouched) and counted.
template <typename T>
class Adam {
 public:
  struct Config {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    int warmup_steps = 100;
  };

  Adam() = default;
  explicit Adam(Config cfg) : cfg_(cfg) {}

  const Config& config() const { return cfg_; }
  long step_count() const { return t_; }
  long skipped_steps() const { return skipped_; }

  // Schedule hooks: adjust the base rate or warmup span for later steps.
  void set_lr(double lr) { cfg_.lr = lr; }
  void set_warmup(int steps) { cfg_.warmup_steps = steps; }

  // params[i] and grads[i] must keep identical shapes across calls.
  bool step(const std::vector<Tensor<T>*>& params,
            const std::vector<const Tensor<T>*>& grads) {
    if (m_.empty()) {
      for (auto* p : params) {
        m_.push_back(Tensor<T>::zeros(p->rows(), p->cols()));
        v_.push_back(Tensor<T>::zeros(p->rows(), p->cols()));
      }
    }
    for (auto* g : grads) {
      if (!g->all_finite()) {
        ++skipped_;
        std::fprintf(stderr,
                     "adam: non-finite gradient at update %ld, step skipped\n",
                     t_ + 1);
        return false;
      }
    }
    ++t_;
    const double warm =
        cfg_.warmup_steps > 0
            ? std::min(1.0, static_cast<double>(t_) / cfg_.warmup_steps)
            : 1.0;
    const double lr_t = cfg_.lr * warm;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = *params[i];
      const auto& g = *grads[i];
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double gk = static_cast<double>(g.at_flat(k));
        const double mk =
            cfg_.beta1 * static_cast<double>(m.at_flat(k)) + (1 - cfg_.beta1) * gk;
        const double vk = cfg_.beta2 * static_cast<double>(v.at_flat(k)) +
                          (1 - cfg_.beta2) * gk * gk;
        m.at_flat(k) = static_cast<T>(mk);
        v.at_flat(k) = static_cast<T>(vk);
        const double mhat = mk / bc1;
        const double vhat = vk / bc2;
        p.at_flat(k) -= static_cast<T>(lr_t * mhat / (std::sqrt(vhat) + cfg_.eps));
      }
    }
    return true;
  }

  // Moment access for checkpointing; layout mirrors the param list.
  std::vector<Tensor<T>>& moments1() { return m_; }
  std::vector<Tensor<T>>& moments2() { return v_; }
  const std::vector<Tensor<T>>& moments1() const { return m_; }
  const std::vector<Tensor<T>>& moments2() const { return v_; }
  void restore(std::vector<Tensor<T>> m, std::vector<Tensor<T>> v, long t,
               long skipped) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = t;
    skipped_ = skipped;
  }

 private:
  Config cfg_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
  long skipped_ = 0;
};

}  // namespace mfsm
