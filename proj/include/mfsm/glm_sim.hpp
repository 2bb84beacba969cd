#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mfsm/links.hpp"
#include "mfsm/presets.hpp"
#include "mfsm/rng.hpp"
#include "mfsm/ssm.hpp"
#include "mfsm/tensor.hpp"

namespace mfsm {

enum class Scope : std::uint8_t { instance, family, model_class };

inline const char* scope_name(Scope s) {
  switch (s) {
    case Scope::instance: return "instance";
    case Scope::family: return "family";
    case Scope::model_class: return "class";
  }
  throw std::invalid_argument("unknown scope code");
}

inline Scope parse_scope(const std::string& s) {
  if (s == "instance") return Scope::instance;
  if (s == "family") return Scope::family;
  if (s == "class") return Scope::model_class;
  throw std::invalid_argument("unknown scope: " + s);
}

struct StructurePrior {
  int n_min = 64, n_max = 512;
  int r_max = 8;
  double p_continuous = 0.4, p_categorical = 0.4, p_interaction = 0.2;
  double p_active = 0.5;        // slope-cell mask prior
  double p_param_active = 1.0;  // chance a parameter participates at all
  int c_obs_max = 2;
};

struct MetaConfig {
  Scope scope = Scope::family;
  std::vector<Family> families = {Family::ddm};
  std::vector<double> family_probs;  // empty means uniform
  std::optional<Preset> preset;
  StructurePrior structure;
  SimSettings sim;
  bool shared_drift_perturbation = true;
  double max_censor_rate = 0.01;
  int max_resample_attempts = 10;
  std::uint64_t seed = 0;

  void validate() const {
    sim.validate();
    if (families.empty()) throw std::invalid_argument("no families configured");
    if (scope != Scope::model_class && families.size() != 1)
      throw std::invalid_argument("multiple families require class scope");
    if (!family_probs.empty() && family_probs.size() != families.size())
      throw std::invalid_argument("family_probs size mismatch");
    if (structure.n_min < 1 || structure.n_max < structure.n_min)
      throw std::invalid_argument("bad N range");
    if (structure.r_max < 1) throw std::invalid_argument("r_max must be >= 1");
    if (preset && preset_spec(*preset, families[0]).R > structure.r_max)
      throw std::invalid_argument("preset needs more columns than r_max");
  }
};

inline int obs_dim(Family f) { return f == Family::gauss ? 1 : 2; }

struct Design {
  Tensor<float> values;  // N x r_max, columns >= R exactly zero
  int R = 1;
  std::vector<PresetColumn> columns;  // size R
};

struct DatasetItem {
  Family family = Family::ddm;
  int N = 0, R = 1, D = 0;
  Tensor<float> X;  // N x r_max
  Tensor<float> B;  // r_max x D, masked cells stored as 0
  Tensor<float> M;  // r_max x D binary
  Tensor<float> Y;  // N x c_obs_max
  Tensor<double> theta;  // N x D constrained params (derived, not serialized)
  std::vector<PresetColumn> columns;
  std::uint64_t seed = 0;  // per-dataset derived seed; full identity with config
  int censored = 0;
  int attempts = 1;
};

struct SimBatch {
  int N = 0, R = 1;
  std::vector<DatasetItem> items;
};

namespace rngtag {
// Second key word of every per-dataset stream; third word carries the
// resample attempt, fourth the trial index where applicable.
constexpr std::uint64_t family = 1, design = 2, mask = 3, coeff = 4, trial = 5,
                        batch = 0xB47C4;
}  // namespace rngtag

inline void fill_column(Tensor<float>& X, int col, const PresetColumn& kind,
                        Rng& rng) {
  const int N = X.rows();
  switch (kind.kind) {
    case ColKind::intercept:
      for (int n = 0; n < N; ++n) X(n, col) = 1.0f;
      break;
    case ColKind::continuous:
      for (int n = 0; n < N; ++n) X(n, col) = static_cast<float>(rng.normal());
      break;
    case ColKind::categorical:
      for (int n = 0; n < N; ++n)
        X(n, col) = rng.uniform() < 0.5 ? -0.5f : 0.5f;
      break;
    case ColKind::interaction:
      for (int n = 0; n < N; ++n)
        X(n, col) = X(n, kind.parent_i) * X(n, kind.parent_j);
      break;
  }
}

inline Design sample_design(int N, int R, const StructurePrior& sp, Rng& rng) {
  if (R < 1 || R > sp.r_max)
    throw std::invalid_argument("sample_design: R out of [1, r_max]");
  Design d;
  d.R = R;
  d.values = Tensor<float>::zeros(N, sp.r_max);
  d.columns.push_back({ColKind::intercept});
  fill_column(d.values, 0, d.columns[0], rng);
  for (int r = 1; r < R; ++r) {
    double u = rng.uniform();
    PresetColumn col;
    if (u < sp.p_continuous) {
      col.kind = ColKind::continuous;
    } else if (u < sp.p_continuous + sp.p_categorical) {
      col.kind = ColKind::categorical;
    } else if (r >= 3) {
      // needs two existing non-intercept parents
      col.kind = ColKind::interaction;
      col.parent_i = 1 + static_cast<int>(rng.bounded(r - 1));
      col.parent_j = 1 + static_cast<int>(rng.bounded(r - 1));
      while (col.parent_j == col.parent_i)
        col.parent_j = 1 + static_cast<int>(rng.bounded(r - 1));
    } else {
      col.kind = ColKind::continuous;
    }
    d.columns.push_back(col);
    fill_column(d.values, r, col, rng);
  }
  return d;
}

inline Design preset_design(int N, const PresetSpec& ps, int r_max, Rng& rng) {
  Design d;
  d.R = ps.R;
  d.values = Tensor<float>::zeros(N, r_max);
  d.columns = ps.columns;
  for (int r = 0; r < ps.R; ++r) fill_column(d.values, r, ps.columns[r], rng);
  return d;
}

// Intercept-row cells of participating parameters are always 1; slope cells
// are Bernoulli(p_active). Rows >= R and dropped parameters stay 0.
inline Tensor<float> sample_mask(Family f, int R, const StructurePrior& sp,
                                 Rng& rng) {
  const int D = param_count(f);
  auto M = Tensor<float>::zeros(sp.r_max, D);
  for (int d = 0; d < D; ++d) {
    bool active =
        sp.p_param_active >= 1.0 || rng.uniform() < sp.p_param_active;
    if (!active) continue;
    M(0, d) = 1.0f;
    for (int r = 1; r < R; ++r)
      M(r, d) = rng.uniform() < sp.p_active ? 1.0f : 0.0f;
  }
  return M;
}

inline Tensor<float> preset_mask(const PresetSpec& ps, Family f, int r_max) {
  const int D = param_count(f);
  auto M = Tensor<float>::zeros(r_max, D);
  for (int r = 0; r < ps.R; ++r)
    for (int d = 0; d < D; ++d) M(r, d) = static_cast<float>(ps.mask_rows[r][d]);
  return M;
}

// Intercept row from the intrinsic priors, slope rows standard normal.
// Every cell consumes one draw so the stream layout is mask-independent;
// masked cells are stored as zero.
inline Tensor<float> sample_coefficients(Family f, const Tensor<float>& M,
                                         Rng& rng) {
  const auto priors = prior_table(f);
  const int D = static_cast<int>(priors.size());
  auto B = Tensor<float>::zeros(M.rows(), D);
  for (int r = 0; r < M.rows(); ++r)
    for (int d = 0; d < D; ++d) {
      double draw = r == 0 ? sample_intrinsic(priors[d], rng) : rng.normal();
      B(r, d) = M(r, d) != 0.0f ? static_cast<float>(draw) : 0.0f;
    }
  return B;
}

struct ThetaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline Tensor<double> build_theta(const Tensor<float>& X,
                                  const Tensor<float>& B,
                                  const Tensor<float>& M,
                                  const std::vector<LinkFunction>& links,
                                  int N, int D) {
  Tensor<double> theta(N, D);
  for (int n = 0; n < N; ++n)
    for (int d = 0; d < D; ++d) {
      double lin = 0.0;
      for (int r = 0; r < X.cols(); ++r)
        lin += static_cast<double>(X(n, r)) * M(r, d) * B(r, d);
      double v = links[d].apply(lin);
      if (!std::isfinite(v))
        throw ThetaError("non-finite constrained parameter");
      theta(n, d) = v;
    }
  return theta;
}

// 10x the 99.9th prior percentile per parameter; bounded links never trip it.
inline std::vector<double> theta_guard(Family f) {
  std::vector<double> g;
  for (const auto& p : prior_table(f)) {
    if (p.link.kind == LinkKind::sigmoid ||
        p.link.kind == LinkKind::scaled_sigmoid) {
      g.push_back(std::numeric_limits<double>::infinity());
    } else {
      double hi = std::abs(p.link.apply(p.mean + 3.09 * p.std));
      double lo = std::abs(p.link.apply(p.mean - 3.09 * p.std));
      g.push_back(10.0 * std::max(hi, lo));
    }
  }
  return g;
}

// One dataset, deterministic in (config, N, R, ds_seed). Resamples everything
// under a fresh attempt index when the draw is pathological (non-finite or
// out-of-guard theta, censoring above the cap); gives up after the cap.
inline DatasetItem simulate_dataset(const MetaConfig& cfg, int N, int R,
                                    std::uint64_t ds_seed) {
  const auto& sp = cfg.structure;
  for (int attempt = 0; attempt < cfg.max_resample_attempts; ++attempt) {
    Family fam = cfg.families[0];
    if (cfg.families.size() > 1) {
      Rng frng(ds_seed, rngtag::family, static_cast<std::uint64_t>(attempt), 0);
      double u = frng.uniform(), acc = 0.0;
      for (std::size_t k = 0; k < cfg.families.size(); ++k) {
        acc += cfg.family_probs.empty() ? 1.0 / cfg.families.size()
                                        : cfg.family_probs[k];
        if (u < acc || k + 1 == cfg.families.size()) {
          fam = cfg.families[k];
          break;
        }
      }
    }
    const int D = param_count(fam);
    const auto links = link_table(fam);

    Rng drng(ds_seed, rngtag::design, static_cast<std::uint64_t>(attempt), 0);
    Design design;
    Tensor<float> M;
    if (cfg.preset) {
      auto ps = preset_spec(*cfg.preset, fam);
      if (R != ps.R)
        throw std::invalid_argument("R does not match the pinned preset");
      design = preset_design(N, ps, sp.r_max, drng);
      M = preset_mask(ps, fam, sp.r_max);
    } else {
      design = sample_design(N, R, sp, drng);
      Rng mrng(ds_seed, rngtag::mask, static_cast<std::uint64_t>(attempt), 0);
      M = sample_mask(fam, R, sp, mrng);
    }

    Rng crng(ds_seed, rngtag::coeff, static_cast<std::uint64_t>(attempt), 0);
    auto B = sample_coefficients(fam, M, crng);

    Tensor<double> theta;
    try {
      theta = build_theta(design.values, B, M, links, N, D);
    } catch (const ThetaError&) {
      continue;
    }
    const auto guard = theta_guard(fam);
    bool pathological = false;
    for (int n = 0; n < N && !pathological; ++n)
      for (int d = 0; d < D; ++d)
        if (std::abs(theta(n, d)) > guard[d]) {
          pathological = true;
          break;
        }
    if (pathological) continue;

    DatasetItem item;
    item.Y = Tensor<float>::zeros(N, sp.c_obs_max);
    item.censored = 0;
    for (int n = 0; n < N; ++n) {
      TrialParams tp;
      tp.family = fam;
      for (int d = 0; d < D; ++d) tp.c[d] = theta(n, d);
      Rng trng(ds_seed, rngtag::trial, static_cast<std::uint64_t>(attempt),
               static_cast<std::uint64_t>(n));
      auto out = simulate_trial(tp, cfg.sim, trng,
                                cfg.shared_drift_perturbation);
      item.censored += out.censored;
      item.Y(n, 0) = static_cast<float>(out.rt);
      if (obs_dim(fam) > 1) item.Y(n, 1) = static_cast<float>(out.response);
    }
    if (item.censored > cfg.max_censor_rate * N) continue;

    item.family = fam;
    item.N = N;
    item.R = R;
    item.D = D;
    item.X = std::move(design.values);
    item.columns = std::move(design.columns);
    item.B = std::move(B);
    item.M = std::move(M);
    item.theta = std::move(theta);
    item.seed = ds_seed;
    item.attempts = attempt + 1;
    return item;
  }
  throw std::runtime_error("simulate_dataset: resample cap exceeded");
}

inline std::uint64_t dataset_seed(std::uint64_t master, std::uint64_t key) {
  return mix_key(master, key);
}

// Batches share one (N, R) draw; item structure is independent per item.
// Item keys are (batch_index << 20) | i, so batch_size must stay below 2^20.
inline SimBatch make_batch(const MetaConfig& cfg, int batch_size,
                           std::uint64_t batch_index) {
  if (batch_size < 1 || batch_size >= (1 << 20))
    throw std::invalid_argument("batch_size out of range");
  Rng brng(cfg.seed, rngtag::batch, batch_index, 0);
  SimBatch batch;
  batch.N = cfg.structure.n_min +
            static_cast<int>(brng.bounded(
                static_cast<std::uint64_t>(cfg.structure.n_max -
                                           cfg.structure.n_min + 1)));
  if (cfg.preset) {
    batch.R = preset_spec(*cfg.preset, cfg.families[0]).R;
  } else {
    batch.R = 1 + static_cast<int>(
                      brng.bounded(static_cast<std::uint64_t>(cfg.structure.r_max)));
  }
  batch.items.reserve(batch_size);
  for (int i = 0; i < batch_size; ++i) {
    std::uint64_t key = (batch_index << 20) | static_cast<std::uint64_t>(i);
    batch.items.push_back(
        simulate_dataset(cfg, batch.N, batch.R, dataset_seed(cfg.seed, key)));
  }
  return batch;
}

}  // namespace mfsm
