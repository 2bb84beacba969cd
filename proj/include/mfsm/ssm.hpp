#pragma once

#include <array>
#include <cmath>
#include <stdexcept>

#include "mfsm/links.hpp"
#include "mfsm/rng.hpp"

namespace mfsm {

struct SimSettings {
  double dt = 1e-3;   // Euler step, seconds
  double t_max = 10.0;  // decision-time cap, seconds

  void validate() const {
    if (!(dt > 0.0 && dt <= 0.01))
      throw std::invalid_argument("SimSettings: dt must be in (0, 0.01]");
    if (!(t_max >= 1.0))
      throw std::invalid_argument("SimSettings: t_max must be >= 1");
  }
};

// Constrained per-trial parameters in param_names(family) order. The
// diffusion coefficient is fixed at 1 for every family.
struct TrialParams {
  Family family = Family::ddm;
  std::array<double, 6> c{};
};

struct TrialOutcome {
  double rt = 0.0;       // seconds; holds the observation y for gauss
  double response = 0.0;  // choice 0/1 for ddm/rdm, angle in (-pi, pi] for cdm
  bool censored = false;
};

// Evidence x drifts between absorbing boundaries 0 and a from start a*z;
// upper hit codes choice 1. Trial drift ~ N(drift, s_drift), trial
// non-decision time = ndt + U(0, s_ndt).
inline TrialOutcome simulate_ddm(const TrialParams& p, const SimSettings& s,
                                 Rng& rng) {
  const double a = p.c[1], z = p.c[2];
  const double v = p.c[4] > 0.0 ? rng.normal(p.c[0], p.c[4]) : p.c[0];
  const double ndt = p.c[3] + (p.c[5] > 0.0 ? rng.uniform(0.0, p.c[5]) : 0.0);
  const double sq = std::sqrt(s.dt);
  double x = a * z;
  for (double t = s.dt; t <= s.t_max; t += s.dt) {
    x += v * s.dt + sq * rng.normal();
    if (x >= a) return {t + ndt, 1.0, false};
    if (x <= 0.0) return {t + ndt, 0.0, false};
  }
  return {s.t_max + ndt, x >= a * 0.5 ? 1.0 : 0.0, true};
}

// Two accumulators race from 0 to a shared threshold a with rates
// (drift, drift + drift_diff); response codes the winner. One trial
// perturbation on the base rate moves both accumulators together
// (shared_drift_perturbation=false draws independent perturbations).
inline TrialOutcome simulate_rdm(const TrialParams& p, const SimSettings& s,
                                 Rng& rng, bool shared_drift_perturbation = true) {
  const double a = p.c[2];
  double v0 = p.c[0], v1 = p.c[0] + p.c[1];
  if (p.c[4] > 0.0) {
    if (shared_drift_perturbation) {
      const double eps = rng.normal(0.0, p.c[4]);
      v0 += eps;
      v1 += eps;
    } else {
      v0 += rng.normal(0.0, p.c[4]);
      v1 += rng.normal(0.0, p.c[4]);
    }
  }
  const double ndt = p.c[3] + (p.c[5] > 0.0 ? rng.uniform(0.0, p.c[5]) : 0.0);
  const double sq = std::sqrt(s.dt);
  double x0 = 0.0, x1 = 0.0;
  for (double t = s.dt; t <= s.t_max; t += s.dt) {
    x0 = std::max(0.0, x0 + v0 * s.dt + sq * rng.normal());
    x1 = std::max(0.0, x1 + v1 * s.dt + sq * rng.normal());
    const bool h0 = x0 >= a, h1 = x1 >= a;
    if (h0 || h1) {
      double resp = h0 && h1 ? (x1 > x0 ? 1.0 : 0.0) : (h1 ? 1.0 : 0.0);
      return {t + ndt, resp, false};
    }
  }
  return {s.t_max + ndt, x1 > x0 ? 1.0 : 0.0, true};
}

// 2-D diffusion from the origin to a circular boundary of radius a; the
// recorded response is the exit angle (drift points at drift_angle, so an
// unbiased trial has circular mean drift_angle).
inline TrialOutcome simulate_cdm(const TrialParams& p, const SimSettings& s,
                                 Rng& rng) {
  const double a = p.c[2];
  const double mag = p.c[4] > 0.0 ? rng.normal(p.c[0], p.c[4]) : p.c[0];
  const double vx = mag * std::cos(p.c[1]), vy = mag * std::sin(p.c[1]);
  const double ndt = p.c[3] + (p.c[5] > 0.0 ? rng.uniform(0.0, p.c[5]) : 0.0);
  const double sq = std::sqrt(s.dt);
  const double a2 = a * a;
  double x = 0.0, y = 0.0;
  for (double t = s.dt; t <= s.t_max; t += s.dt) {
    x += vx * s.dt + sq * rng.normal();
    y += vy * s.dt + sq * rng.normal();
    if (x * x + y * y >= a2) return {t + ndt, std::atan2(y, x), false};
  }
  return {s.t_max + ndt, (x == 0.0 && y == 0.0) ? 0.0 : std::atan2(y, x), true};
}

// Conjugate verification family: one observation y ~ N(mu, 1) in the rt slot.
inline TrialOutcome simulate_gaussian_oracle(const TrialParams& p,
                                             const SimSettings&, Rng& rng) {
  return {rng.normal(p.c[0], 1.0), 0.0, false};
}

inline TrialOutcome simulate_trial(const TrialParams& p, const SimSettings& s,
                                   Rng& rng,
                                   bool shared_drift_perturbation = true) {
  switch (p.family) {
    case Family::ddm: return simulate_ddm(p, s, rng);
    case Family::rdm: return simulate_rdm(p, s, rng, shared_drift_perturbation);
    case Family::cdm: return simulate_cdm(p, s, rng);
    case Family::gauss: return simulate_gaussian_oracle(p, s, rng);
  }
  throw std::invalid_argument("unknown family code");
}

// Exact posterior for the gauss family: prior mu ~ N(m, s2), N observations
// with unit noise summing to sum_y.
struct GaussPosterior {
  double mean = 0.0;
  double var = 0.0;
};

inline GaussPosterior gaussian_posterior(double m, double s2, double sum_y,
                                         long n) {
  const double prec = 1.0 / s2 + static_cast<double>(n);
  return {(m / s2 + sum_y) / prec, 1.0 / prec};
}

}  // namespace mfsm
