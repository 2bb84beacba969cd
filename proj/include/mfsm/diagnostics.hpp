#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/flow.hpp"

namespace mfsm {

namespace rngtag {
// Diagnostics streams; disjoint from the simulator and flow tags.
constexpr std::uint64_t boot = 8, band = 9, c2st_fold = 10, priorvar = 11;
}  // namespace rngtag

// Full-scale benchmark medians kept for report context; desk-scale runs are
// not expected to reproduce them.
namespace reference {
constexpr double ddm_baseline_nrmse_median = 0.078;
constexpr double ddm_baseline_calibration_median = 0.022;
constexpr double ddm_baseline_contraction_median = 0.902;
constexpr double ddm_family_vs_baseline_c2st_median = 0.693;
}  // namespace reference

// ---------------------------------------------------------------------------
// aggregation primitives

inline double median_of(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty set");
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Standard error of the median by bootstrap; a single value has no spread to
// estimate, reported as missing.
inline std::optional<double> median_sem_bootstrap(const std::vector<double>& v,
                                                  int resamples,
                                                  std::uint64_t seed) {
  if (resamples < 2) throw std::invalid_argument("need at least 2 resamples");
  const std::size_t n = v.size();
  if (n < 2) return std::nullopt;
  std::vector<double> meds(resamples);
  std::vector<double> sample(n);
  for (int rep = 0; rep < resamples; ++rep) {
    Rng rng(seed, rngtag::boot, static_cast<std::uint64_t>(rep), 0);
    for (std::size_t k = 0; k < n; ++k) sample[k] = v[rng.bounded(n)];
    meds[rep] = median_of(sample);
  }
  double mean = 0;
  for (double m : meds) mean += m;
  mean /= resamples;
  double sq = 0;
  for (double m : meds) sq += (m - mean) * (m - mean);
  return std::sqrt(sq / (resamples - 1));
}

// ---------------------------------------------------------------------------
// recovery and error

// Pearson correlation between ground truth and point estimates across test
// datasets. A truth column with no spread has no defined correlation and is
// reported as missing rather than thrown: whole parameters can be pinned by
// the structure mask.
inline std::optional<double> recovery_r(const std::vector<double>& truth,
                                        const std::vector<double>& est) {
  if (truth.size() != est.size())
    throw std::invalid_argument("recovery_r: length mismatch");
  const std::size_t n = truth.size();
  if (n < 3) throw std::invalid_argument("recovery_r: need at least 3 datasets");
  double mt = 0, me = 0;
  for (std::size_t k = 0; k < n; ++k) {
    mt += truth[k];
    me += est[k];
  }
  mt /= n;
  me /= n;
  double st = 0, se = 0, cov = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const double dt = truth[k] - mt, de = est[k] - me;
    st += dt * dt;
    se += de * de;
    cov += dt * de;
  }
  if (st <= 0.0 || se <= 0.0) return std::nullopt;
  return cov / std::sqrt(st * se);
}

inline double truth_range(const std::vector<double>& truth) {
  if (truth.empty()) throw std::invalid_argument("truth_range: empty");
  auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
  return *hi - *lo;
}

inline double nrmse(const std::vector<double>& truth,
                    const std::vector<double>& est, double normalizer) {
  if (truth.size() != est.size())
    throw std::invalid_argument("nrmse: length mismatch");
  if (truth.empty()) throw std::invalid_argument("nrmse: empty");
  if (!(normalizer > 0.0))
    throw std::invalid_argument("nrmse: normalizer must be positive");
  double sq = 0;
  for (std::size_t k = 0; k < truth.size(); ++k)
    sq += (est[k] - truth[k]) * (est[k] - truth[k]);
  return std::sqrt(sq / truth.size()) / normalizer;
}

inline double nrmse(const std::vector<double>& truth,
                    const std::vector<double>& est) {
  return nrmse(truth, est, truth_range(truth));
}

// ---------------------------------------------------------------------------
// calibration

// Fraction of posterior draws strictly below the generating value.
inline double fractional_rank(double truth, const Tensor<float>& draws,
                              int col) {
  if (draws.rows() < 20)
    throw std::invalid_argument("fractional_rank: need at least 20 draws");
  if (col < 0 || col >= draws.cols())
    throw std::invalid_argument("fractional_rank: column out of range");
  int below = 0;
  for (int i = 0; i < draws.rows(); ++i)
    below += static_cast<double>(draws(i, col)) < truth;
  return static_cast<double>(below) / draws.rows();
}

struct Calibration {
  std::vector<double> ranks;  // one fractional rank per dataset
  std::vector<double> grid;   // quantile evaluation points in (0, 1]
  std::vector<double> ecdf;   // empirical CDF of ranks at each grid point
  double error = 0;           // mean |ecdf - grid|
};

inline Calibration calibration(const std::vector<double>& ranks,
                               int num_quantiles) {
  if (ranks.empty()) throw std::invalid_argument("calibration: no ranks");
  if (num_quantiles < 2)
    throw std::invalid_argument("calibration: need at least 2 quantiles");
  Calibration out;
  out.ranks = ranks;
  out.grid.resize(num_quantiles);
  out.ecdf.resize(num_quantiles);
  double err = 0;
  for (int k = 0; k < num_quantiles; ++k) {
    const double u = static_cast<double>(k + 1) / num_quantiles;
    int below = 0;
    for (double r : ranks) below += r <= u;
    out.grid[k] = u;
    out.ecdf[k] = static_cast<double>(below) / ranks.size();
    err += std::abs(out.ecdf[k] - u);
  }
  out.error = err / num_quantiles;
  return out;
}

struct CalibrationBand {
  std::vector<double> grid, lo, hi;  // simultaneous 95% envelope
  double half_width = 0;             // sup deviation at the 95th percentile
  double ece_p95 = 0;                // 95th percentile of the null error
};

// Null envelope for the rank ECDF: simulate uniform ranks with the matched
// dataset count and take the 95th percentile of the sup deviation, so a
// well-calibrated run stays fully inside the band 95% of the time.
inline CalibrationBand simulate_calibration_band(int n_datasets,
                                                 int num_quantiles, int sims,
                                                 std::uint64_t seed) {
  if (n_datasets < 1 || sims < 20)
    throw std::invalid_argument("band: need datasets and at least 20 sims");
  std::vector<double> sup(sims), ece(sims), ranks(n_datasets);
  for (int s = 0; s < sims; ++s) {
    Rng rng(seed, rngtag::band, static_cast<std::uint64_t>(s), 0);
    for (auto& r : ranks) r = rng.uniform();
    auto cal = calibration(ranks, num_quantiles);
    double worst = 0;
    for (int k = 0; k < num_quantiles; ++k)
      worst = std::max(worst, std::abs(cal.ecdf[k] - cal.grid[k]));
    sup[s] = worst;
    ece[s] = cal.error;
  }
  std::sort(sup.begin(), sup.end());
  std::sort(ece.begin(), ece.end());
  const int idx = static_cast<int>(std::ceil(0.95 * sims)) - 1;

  CalibrationBand band;
  band.half_width = sup[idx];
  band.ece_p95 = ece[idx];
  band.grid.resize(num_quantiles);
  band.lo.resize(num_quantiles);
  band.hi.resize(num_quantiles);
  for (int k = 0; k < num_quantiles; ++k) {
    const double u = static_cast<double>(k + 1) / num_quantiles;
    band.grid[k] = u;
    band.lo[k] = std::max(0.0, u - band.half_width);
    band.hi[k] = std::min(1.0, u + band.half_width);
  }
  return band;
}

// ---------------------------------------------------------------------------
// contraction

inline double contraction(double prior_var, double post_var) {
  if (!(prior_var > 0.0))
    throw std::invalid_argument("contraction: prior variance must be positive");
  return 1.0 - post_var / prior_var;
}

struct PriorVariance {
  Tensor<double> var;    // per grid cell; NaN where the cell was never active
  Tensor<double> count;  // active draws that entered each cell's estimate
};

// Monte Carlo marginal variance of each coefficient cell under the simulator
// prior, conditioned on the cell being active. Only the structure and
// coefficient draws run; no trials are simulated.
inline PriorVariance prior_variance_mc(const MetaConfig& cfg, int n_draws,
                                       std::uint64_t seed) {
  cfg.validate();
  if (n_draws < 2) throw std::invalid_argument("prior mc: need draws");
  const int R = cfg.structure.r_max;
  const int D = net_param_dim(cfg);
  Tensor<double> sum(R, D), sq(R, D), count(R, D);
  for (int k = 0; k < n_draws; ++k) {
    Rng rng(cfg.seed, rngtag::priorvar, static_cast<std::uint64_t>(k), 0);
    Family fam = cfg.families[0];
    if (cfg.families.size() > 1) {
      const double u = rng.uniform();
      double acc = 0;
      for (std::size_t f = 0; f < cfg.families.size(); ++f) {
        acc += cfg.family_probs.empty() ? 1.0 / cfg.families.size()
                                        : cfg.family_probs[f];
        if (u < acc || f + 1 == cfg.families.size()) {
          fam = cfg.families[f];
          break;
        }
      }
    }
    Tensor<float> M;
    if (cfg.preset) {
      M = preset_mask(preset_spec(*cfg.preset, fam), fam, R);
    } else {
      const int rr = 1 + static_cast<int>(
                             rng.bounded(static_cast<std::uint64_t>(R)));
      M = sample_mask(fam, rr, cfg.structure, rng);
    }
    auto B = sample_coefficients(fam, M, rng);
    for (int r = 0; r < R; ++r)
      for (int d = 0; d < D; ++d)
        if (M(r, d) != 0.0f) {
          const double b = B(r, d);
          sum(r, d) += b;
          sq(r, d) += b * b;
          count(r, d) += 1;
        }
  }
  PriorVariance out;
  out.var = Tensor<double>(R, D);
  out.count = count;
  for (int r = 0; r < R; ++r)
    for (int d = 0; d < D; ++d) {
      const double n = count(r, d);
      if (n < 2) {
        out.var(r, d) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      const double mean = sum(r, d) / n;
      out.var(r, d) = (sq(r, d) - n * mean * mean) / (n - 1);
    }
  return out;
}

// ---------------------------------------------------------------------------
// classifier two-sample test

struct C2stOptions {
  int folds = 5;
  bool standardize = true;
  int hidden_units = 0;  // 0 trains plain logistic regression
  double l2 = 1e-3;
  int max_iter = 50;
  std::uint64_t seed = 0;
};

namespace detail {

using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                           Eigen::RowMajor>;
using DVec = Eigen::VectorXd;

inline double sigmoid_d(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

// Penalized iteratively reweighted least squares; the ridge term keeps the
// solve bounded when the classes are separable.
inline DVec fit_logistic(const DMat& X, const DVec& y, double l2,
                         int max_iter) {
  const int n = static_cast<int>(X.rows()), d = static_cast<int>(X.cols());
  DVec w = DVec::Zero(d);
  for (int it = 0; it < max_iter; ++it) {
    DVec eta = X * w;
    DVec p(n), wt(n);
    for (int i = 0; i < n; ++i) {
      p(i) = sigmoid_d(eta(i));
      wt(i) = std::max(p(i) * (1.0 - p(i)), 1e-9);
    }
    DMat H = X.transpose() * wt.asDiagonal() * X;
    for (int j = 0; j < d; ++j) H(j, j) += l2;
    DVec g = X.transpose() * (y - p) - l2 * w;
    DVec step = H.ldlt().solve(g);
    w += step;
    if (step.cwiseAbs().maxCoeff() < 1e-10) break;
  }
  return w;
}

struct Mlp {
  DMat w1;  // (d x h)
  DVec b1, w2;
  double b2 = 0;
};

// One tanh hidden layer trained by full-batch gradient descent; fixed
// iteration count keeps the fit deterministic.
inline Mlp fit_mlp(const DMat& X, const DVec& y, int hidden, double l2,
                   Rng& rng) {
  const int n = static_cast<int>(X.rows()), d = static_cast<int>(X.cols());
  Mlp m;
  m.w1 = DMat(d, hidden);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < hidden; ++j) m.w1(i, j) = s1 * rng.normal();
  m.b1 = DVec::Zero(hidden);
  m.w2 = DVec(hidden);
  const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
  for (int j = 0; j < hidden; ++j) m.w2(j) = s2 * rng.normal();

  const double lr = 0.5;
  for (int it = 0; it < 300; ++it) {
    DMat h =
        (((X * m.w1).rowwise() + m.b1.transpose()).array().tanh()).matrix();
    DVec p(n);
    for (int i = 0; i < n; ++i)
      p(i) = sigmoid_d(h.row(i).dot(m.w2) + m.b2);
    DVec delta = (p - y) / n;
    DVec gw2 = h.transpose() * delta + (l2 / n) * m.w2;
    const double gb2 = delta.sum();
    DMat back = delta * m.w2.transpose();
    DMat gh = (back.array() * (1.0 - h.array().square())).matrix();
    DMat gw1 = X.transpose() * gh + (l2 / n) * m.w1;
    DVec gb1 = gh.colwise().sum().transpose();
    m.w1 -= lr * gw1;
    m.b1 -= lr * gb1;
    m.w2 -= lr * gw2;
    m.b2 -= lr * gb2;
  }
  return m;
}

inline double mlp_prob(const Mlp& m, const DVec& x) {
  DVec h = (m.w1.transpose() * x + m.b1).array().tanh();
  return sigmoid_d(h.dot(m.w2) + m.b2);
}

}  // namespace detail

// Cross-validated accuracy of a discriminative classifier told to separate
// the two draw sets; 0.5 means indistinguishable.
inline double c2st(const Tensor<float>& a, const Tensor<float>& b,
                   const C2stOptions& opt = {}) {
  if (a.cols() != b.cols())
    throw ShapeError("c2st: dimension mismatch " + shape_str(a) + " vs " +
                     shape_str(b));
  if (a.rows() < 100 || b.rows() < 100)
    throw std::invalid_argument("c2st: need at least 100 draws per side");
  if (opt.folds < 2) throw std::invalid_argument("c2st: need at least 2 folds");

  const int d = a.cols(), na = a.rows(), nb = b.rows(), n = na + nb;
  detail::DMat X(n, d + 1);
  detail::DVec y(n);
  for (int i = 0; i < na; ++i) {
    X(i, 0) = 1.0;
    for (int j = 0; j < d; ++j) X(i, j + 1) = a(i, j);
    y(i) = 0.0;
  }
  for (int i = 0; i < nb; ++i) {
    X(na + i, 0) = 1.0;
    for (int j = 0; j < d; ++j) X(na + i, j + 1) = b(i, j);
    y(na + i) = 1.0;
  }

  if (opt.standardize) {
    for (int j = 1; j <= d; ++j) {
      double mean = 0;
      for (int i = 0; i < n; ++i) mean += X(i, j);
      mean /= n;
      double sq = 0;
      for (int i = 0; i < n; ++i) sq += (X(i, j) - mean) * (X(i, j) - mean);
      double sd = std::sqrt(sq / (n - 1));
      if (!(sd > 0.0)) sd = 1.0;
      for (int i = 0; i < n; ++i) X(i, j) = (X(i, j) - mean) / sd;
    }
  }

  // Stratified fold assignment: shuffle within each class, then deal the
  // positions out round-robin so every fold keeps the class balance.
  std::vector<int> fold(n);
  Rng rng(opt.seed, rngtag::c2st_fold, 0, 0);
  auto deal = [&](int begin, int count) {
    std::vector<int> idx(count);
    for (int i = 0; i < count; ++i) idx[i] = begin + i;
    for (int i = count - 1; i > 0; --i) {
      const int j = static_cast<int>(
          rng.bounded(static_cast<std::uint64_t>(i + 1)));
      std::swap(idx[i], idx[j]);
    }
    for (int i = 0; i < count; ++i) fold[idx[i]] = i % opt.folds;
  };
  deal(0, na);
  deal(na, nb);

  long correct = 0, total = 0;
  for (int f = 0; f < opt.folds; ++f) {
    int ntr = 0;
    for (int i = 0; i < n; ++i) ntr += fold[i] != f;
    if (ntr == 0 || ntr == n) continue;
    detail::DMat Xtr(ntr, d + 1);
    detail::DVec ytr(ntr);
    int r = 0;
    for (int i = 0; i < n; ++i)
      if (fold[i] != f) {
        Xtr.row(r) = X.row(i);
        ytr(r) = y(i);
        ++r;
      }

    if (opt.hidden_units > 0) {
      auto m = detail::fit_mlp(Xtr, ytr, opt.hidden_units, opt.l2, rng);
      for (int i = 0; i < n; ++i)
        if (fold[i] == f) {
          const double p = detail::mlp_prob(m, X.row(i).transpose());
          correct += (p > 0.5) == (y(i) > 0.5);
          ++total;
        }
    } else {
      auto w = detail::fit_logistic(Xtr, ytr, opt.l2, opt.max_iter);
      for (int i = 0; i < n; ++i)
        if (fold[i] == f) {
          const double p = detail::sigmoid_d(X.row(i).dot(w));
          correct += (p > 0.5) == (y(i) > 0.5);
          ++total;
        }
    }
  }
  return static_cast<double>(correct) / total;
}

// ---------------------------------------------------------------------------
// evaluation assembly

// One held-out dataset: the generating coefficients on the active cells that
// the posterior draws address, in the draws' active-cell order.
struct EvalRun {
  std::string scope;  // baseline | family | class
  std::vector<double> truth;
  PosteriorDraws draws;

  void validate() const {
    if (truth.size() != draws.active_cells.size())
      throw std::invalid_argument("EvalRun: truth does not match active cells");
    if (draws.draws.rows() < 20)
      throw std::invalid_argument("EvalRun: need at least 20 kept draws");
  }
};

struct CellStat {
  int cell = 0;  // flat r * D + d
  std::optional<double> r;
  std::optional<double> nrmse_v;
  double calibration_error = 0;
  std::optional<double> contraction_v;  // median over datasets
};

// Per-cell metrics across a collection of runs that share one active-cell
// layout (one preset and scope).
inline std::vector<CellStat> evaluate_cells(const std::vector<EvalRun>& runs,
                                            const PriorVariance& prior,
                                            int num_quantiles) {
  if (runs.size() < 3)
    throw std::invalid_argument("evaluate_cells: need at least 3 runs");
  for (const auto& run : runs) {
    run.validate();
    if (run.draws.active_cells != runs.front().draws.active_cells)
      throw std::invalid_argument("evaluate_cells: active-cell sets differ");
  }
  const auto& cells = runs.front().draws.active_cells;
  const int D = runs.front().draws.cols_grid;
  if (prior.var.rows() != runs.front().draws.rows_grid ||
      prior.var.cols() != D)
    throw ShapeError("evaluate_cells: prior grid is " + shape_str(prior.var) +
                     ", draws expect " +
                     std::to_string(runs.front().draws.rows_grid) + "x" +
                     std::to_string(D));

  std::vector<CellStat> out;
  for (std::size_t k = 0; k < cells.size(); ++k) {
    CellStat st;
    st.cell = cells[k];

    std::vector<double> truths, means, ranks, contractions;
    for (const auto& run : runs) {
      const auto& dr = run.draws.draws;
      double sum = 0;
      for (int i = 0; i < dr.rows(); ++i) sum += dr(i, static_cast<int>(k));
      const double mean = sum / dr.rows();
      double sq = 0;
      for (int i = 0; i < dr.rows(); ++i)
        sq += (dr(i, static_cast<int>(k)) - mean) *
              (dr(i, static_cast<int>(k)) - mean);
      const double var = sq / (dr.rows() - 1);

      truths.push_back(run.truth[k]);
      means.push_back(mean);
      ranks.push_back(
          fractional_rank(run.truth[k], dr, static_cast<int>(k)));

      const double pv = prior.var(cells[k] / D, cells[k] % D);
      if (std::isfinite(pv) && pv > 0.0)
        contractions.push_back(contraction(pv, var));
    }

    st.r = recovery_r(truths, means);
    const double range = truth_range(truths);
    if (range > 0.0) st.nrmse_v = nrmse(truths, means, range);
    st.calibration_error = calibration(ranks, num_quantiles).error;
    if (!contractions.empty()) st.contraction_v = median_of(contractions);
    out.push_back(std::move(st));
  }
  return out;
}

struct AggregateEntry {
  std::string scope, metric;
  double median = 0;
  std::optional<double> sem;
  int n = 0;
};

struct GapEntry {
  std::string scope_a, scope_b, metric;
  double gap = 0;  // median_a - median_b
};

struct AmortizationReport {
  std::vector<AggregateEntry> rows;
  std::vector<GapEntry> gaps;
};

// Medians with bootstrap standard errors per scope and metric, plus pairwise
// median gaps between scopes.
inline AmortizationReport aggregate(
    const std::map<std::string, std::vector<CellStat>>& per_scope,
    int bootstrap_resamples, std::uint64_t seed) {
  if (per_scope.size() < 2)
    throw std::invalid_argument("aggregate: need at least 2 scopes");
  static const std::vector<std::string> metrics = {
      "recovery_r", "nrmse", "calibration_error", "contraction"};

  auto values_of = [](const std::vector<CellStat>& stats,
                      const std::string& metric) {
    std::vector<double> v;
    for (const auto& s : stats) {
      if (metric == "recovery_r" && s.r) v.push_back(*s.r);
      if (metric == "nrmse" && s.nrmse_v) v.push_back(*s.nrmse_v);
      if (metric == "calibration_error") v.push_back(s.calibration_error);
      if (metric == "contraction" && s.contraction_v)
        v.push_back(*s.contraction_v);
    }
    return v;
  };

  AmortizationReport rep;
  for (const auto& metric : metrics) {
    std::map<std::string, double> med;
    for (const auto& [scope, stats] : per_scope) {
      auto v = values_of(stats, metric);
      if (v.empty()) continue;
      AggregateEntry e;
      e.scope = scope;
      e.metric = metric;
      e.median = median_of(v);
      e.sem = median_sem_bootstrap(v, bootstrap_resamples, seed);
      e.n = static_cast<int>(v.size());
      med[scope] = e.median;
      rep.rows.push_back(std::move(e));
    }
    for (auto a = med.begin(); a != med.end(); ++a)
      for (auto b = std::next(a); b != med.end(); ++b)
        rep.gaps.push_back({a->first, b->first, metric,
                            a->second - b->second});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// report emission

inline std::string format_opt(const std::optional<double>& v) {
  if (!v) return "NA";
  std::ostringstream os;
  os << *v;
  return os.str();
}

inline std::string metrics_dsv(
    const std::map<std::string, std::vector<CellStat>>& per_scope) {
  std::ostringstream os;
  os << "scope\tcell\trecovery_r\tnrmse\tcalibration_error\tcontraction\n";
  for (const auto& [scope, stats] : per_scope)
    for (const auto& s : stats)
      os << scope << '\t' << s.cell << '\t' << format_opt(s.r) << '\t'
         << format_opt(s.nrmse_v) << '\t' << s.calibration_error << '\t'
         << format_opt(s.contraction_v) << '\n';
  return os.str();
}

inline std::string aggregate_dsv(const AmortizationReport& rep) {
  std::ostringstream os;
  os << "scope\tmetric\tmedian\tsem\tn\n";
  for (const auto& r : rep.rows)
    os << r.scope << '\t' << r.metric << '\t' << r.median << '\t'
       << format_opt(r.sem) << '\t' << r.n << '\n';
  os << "scope_a\tscope_b\tmetric\tgap\n";
  for (const auto& g : rep.gaps)
    os << g.scope_a << '\t' << g.scope_b << '\t' << g.metric << '\t' << g.gap
       << '\n';
  return os.str();
}

struct DiagnosticsOptions {
  int num_quantiles = 20;
  int prior_mc_draws = 10000;
  int bootstrap_resamples = 1000;
  int band_sims = 1000;
  C2stOptions c2st;
};

// Every choice that shapes a reported number, spelled out next to the table
// it produced.
inline std::string manifest_text(const DiagnosticsOptions& opt) {
  std::ostringstream os;
  os << "point_estimator=posterior_mean\n"
     << "nrmse_normalizer=truth_range\n"
     << "calibration_rank=fraction_of_draws_below_truth\n"
     << "calibration_quantiles=" << opt.num_quantiles << '\n'
     << "calibration_band=simulated_simultaneous_95\n"
     << "calibration_band_sims=" << opt.band_sims << '\n'
     << "contraction_prior=mc_active_conditional\n"
     << "contraction_prior_draws=" << opt.prior_mc_draws << '\n'
     << "contraction_aggregation=median_over_datasets\n"
     << "c2st_classifier="
     << (opt.c2st.hidden_units > 0
             ? "mlp_" + std::to_string(opt.c2st.hidden_units)
             : std::string("logistic_regression"))
     << '\n'
     << "c2st_folds=" << opt.c2st.folds << '\n'
     << "c2st_standardize=" << (opt.c2st.standardize ? "on" : "off") << '\n'
     << "median_sem=bootstrap_" << opt.bootstrap_resamples << '\n';
  return os.str();
}

}  // namespace mfsm
