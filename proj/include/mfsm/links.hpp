#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/rng.hpp"

namespace mfsm {

enum class Family : std::uint8_t { ddm = 0, rdm = 1, cdm = 2, gauss = 3 };

inline const char* family_name(Family f) {
  switch (f) {
    case Family::ddm: return "ddm";
    case Family::rdm: return "rdm";
    case Family::cdm: return "cdm";
    case Family::gauss: return "gauss";
  }
  throw std::invalid_argument("unknown family code");
}

inline Family parse_family(const std::string& s) {
  if (s == "ddm") return Family::ddm;
  if (s == "rdm") return Family::rdm;
  if (s == "cdm") return Family::cdm;
  if (s == "gauss") return Family::gauss;
  throw std::invalid_argument("unknown family: " + s);
}

// Parameter order fixes row/column layout everywhere downstream.
inline const std::vector<std::string>& param_names(Family f) {
  static const std::vector<std::string> ddm = {"drift", "bound", "start",
                                               "ndt", "s_drift", "s_ndt"};
  static const std::vector<std::string> rdm = {"drift",   "drift_diff", "bound",
                                               "ndt", "s_drift", "s_ndt"};
  static const std::vector<std::string> cdm = {"drift", "drift_angle", "bound",
                                               "ndt", "s_drift", "s_ndt"};
  static const std::vector<std::string> gauss = {"mu"};
  switch (f) {
    case Family::ddm: return ddm;
    case Family::rdm: return rdm;
    case Family::cdm: return cdm;
    case Family::gauss: return gauss;
  }
  throw std::invalid_argument("unknown family code");
}

inline int param_count(Family f) {
  return static_cast<int>(param_names(f).size());
}

enum class LinkKind : std::uint8_t { softplus, sigmoid, scaled_sigmoid, identity };

inline double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct LinkFunction {
  LinkKind kind = LinkKind::identity;
  double lower = 0.0, upper = 1.0;  // scaled_sigmoid only

  static LinkFunction softplus() { return {LinkKind::softplus}; }
  static LinkFunction sigmoid() { return {LinkKind::sigmoid}; }
  static LinkFunction identity() { return {LinkKind::identity}; }
  static LinkFunction scaled_sigmoid(double lo, double hi) {
    if (!(lo < hi))
      throw std::invalid_argument("scaled_sigmoid: lower must be < upper");
    return {LinkKind::scaled_sigmoid, lo, hi};
  }

  double apply(double x) const {
    switch (kind) {
      case LinkKind::softplus: return stable_softplus(x);
      case LinkKind::sigmoid: return open_interval(stable_sigmoid(x), 0.0, 1.0);
      case LinkKind::scaled_sigmoid:
        return open_interval(lower + (upper - lower) * stable_sigmoid(x),
                             lower, upper);
      case LinkKind::identity: return x;
    }
    throw std::logic_error("unknown link kind");
  }

 private:
  // Rounding saturates to the bounds for |x| beyond ~37; the codomain is the
  // open interval, so nudge back in by one ulp.
  static double open_interval(double y, double lo, double hi) {
    if (y <= lo) return std::nextafter(lo, hi);
    if (y >= hi) return std::nextafter(hi, lo);
    return y;
  }
};

struct PriorSpec {
  double mean = 0.0;
  double std = 1.0;
  LinkFunction link;

  PriorSpec(double m, double s, LinkFunction l) : mean(m), std(s), link(l) {
    if (!(s > 0.0)) throw std::invalid_argument("PriorSpec: std must be > 0");
  }
};

inline double sample_intrinsic(const PriorSpec& prior, Rng& rng) {
  return rng.normal(prior.mean, prior.std);
}

// Unconstrained-scale Gaussian priors for intercept coefficients, one entry
// per parameter in param_names order, each carrying its link.
inline std::vector<PriorSpec> prior_table(Family f) {
  using L = LinkFunction;
  switch (f) {
    case Family::ddm:
      return {{1.0, 0.8, L::softplus()},
              {0.5, 0.5, L::softplus()},
              {0.0, 0.8, L::scaled_sigmoid(0.1, 0.9)},
              {-1.2, 0.5, L::softplus()},
              {-1.2, 1.0, L::softplus()},
              {-1.5, 0.7, L::softplus()}};
    case Family::rdm:
      return {{0.6, 0.5, L::softplus()},
              {0.6, 0.5, L::softplus()},
              {0.25, 0.5, L::softplus()},
              {-1.2, 0.5, L::softplus()},
              {-1.0, 0.6, L::softplus()},
              {-1.5, 0.7, L::sigmoid()}};
    case Family::cdm:
      return {{1.0, 0.8, L::softplus()},
              {0.0, 0.5, L::scaled_sigmoid(-M_PI / 2, M_PI / 2)},
              {0.5, 0.5, L::softplus()},
              {-1.2, 0.5, L::softplus()},
              {-1.0, 0.6, L::softplus()},
              {-1.5, 0.7, L::softplus()}};
    case Family::gauss:
      return {{0.0, 1.0, L::identity()}};
  }
  throw std::invalid_argument("unknown family code");
}

inline std::vector<LinkFunction> link_table(Family f) {
  std::vector<LinkFunction> out;
  for (const auto& p : prior_table(f)) out.push_back(p.link);
  return out;
}

}  // namespace mfsm
