#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/glm_sim.hpp"
#include "mfsm/net.hpp"
#include "mfsm/optimizer.hpp"

namespace mfsm {

namespace rngtag {
// Stream tags for flow-matching time/noise draws and posterior draws; the
// dataset tags live in glm_sim.hpp and must not collide with these.
constexpr std::uint64_t flow = 6, draw = 7;
}  // namespace rngtag

// Velocity field bound to one dataset's summaries: (masked state, mask, t).
using VelocityFn = std::function<Tensor<float>(
    const Tensor<float>&, const Tensor<float>&, double)>;

// Per-t loss weight; empty means unit weighting.
using TimeWeight = std::function<double(double)>;

inline Tensor<float> interpolate(const Tensor<float>& B,
                                 const Tensor<float>& Z1, double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("interpolate: t outside [0,1]");
  if (!B.same_shape(Z1))
    throw ShapeError("interpolate: shape mismatch " + shape_str(B) + " vs " +
                     shape_str(Z1));
  Tensor<float> out(B.rows(), B.cols());
  for (std::size_t k = 0; k < out.size(); ++k)
    out.at_flat(k) = static_cast<float>((1.0 - t) * B.at_flat(k) +
                                        t * Z1.at_flat(k));
  return out;
}

struct FlowSample {
  Tensor<float> B;   // regression target grid
  Tensor<float> Z1;  // standard normal noise
  Tensor<float> Zt;  // (1-t) B + t Z1
  Tensor<float> V;   // velocity target Z1 - B
  Tensor<float> M;   // active-cell mask
  double t = 0;
};

// Consumes one uniform (t) then rows x cols normals from rng, in that order.
inline FlowSample draw_flow_sample(const DatasetItem& item, Rng& rng) {
  FlowSample fs;
  fs.t = rng.uniform();
  fs.B = item.B;
  fs.Z1 = Tensor<float>::randn(item.B.rows(), item.B.cols(), rng);
  fs.Zt = interpolate(fs.B, fs.Z1, fs.t);
  fs.V = kern::sub(fs.Z1, fs.B);
  fs.M = item.M;
  return fs;
}

// The network only ever sees the masked interpolant.
inline Tensor<float> masked_state(const FlowSample& fs) {
  return kern::hadamard(fs.M, fs.Zt);
}

// Mean over samples of w(t) * sum of squares of M (x) (u_hat - V).
inline float fm_loss_value(const VelocityFn& u,
                           const std::vector<FlowSample>& samples,
                           const TimeWeight& weight = {}) {
  if (samples.empty()) throw std::invalid_argument("fm_loss: empty batch");
  float total = 0;
  bool first = true;
  for (const auto& fs : samples) {
    auto uhat = u(masked_state(fs), fs.M, fs.t);
    auto d = kern::hadamard(kern::sub(uhat, fs.V), fs.M);
    float item = kern::sum_all(kern::hadamard(d, d));
    item *= static_cast<float>(weight ? weight(fs.t) : 1.0);
    total = first ? item : total + item;
    first = false;
  }
  return total * static_cast<float>(1.0 / samples.size());
}

// Same objective built through a backend, so the identical expression can be
// taped for gradients or evaluated plainly. Items and samples run parallel.
template <typename BK>
typename BK::H fm_loss_h(BK& b, const VelocityNet& net,
                         const std::vector<const DatasetItem*>& items,
                         const std::vector<int>& fam_index,
                         const std::vector<FlowSample>& samples,
                         const TimeWeight& weight = {}) {
  if (items.empty()) throw std::invalid_argument("fm_loss: empty batch");
  using H = typename BK::H;
  H total{};
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = *items[i];
    const auto& fs = samples[i];
    H s = net.encode_h(b, it.X, it.Y, fam_index[i]);
    H uhat = net.velocity_h(b, s, masked_state(fs), fs.M, fs.t, fam_index[i]);
    H d = b.hadamard(b.sub(uhat, b.constant(fs.V)), b.constant(fs.M));
    H item = b.scale(b.sum_all(b.hadamard(d, d)),
                     weight ? weight(fs.t) : 1.0);
    total = i == 0 ? item : b.add(total, item);
  }
  return b.scale(total, 1.0 / items.size());
}

// Position of an item's family in the network roster.
inline int family_index(const MetaConfig& cfg, Family f) {
  if (cfg.scope != Scope::model_class) return 0;
  for (std::size_t i = 0; i < cfg.families.size(); ++i)
    if (cfg.families[i] == f) return static_cast<int>(i);
  throw std::invalid_argument("family not in configured roster");
}

inline int net_roster(const MetaConfig& cfg) {
  return cfg.scope == Scope::model_class
             ? static_cast<int>(cfg.families.size())
             : 1;
}

inline int net_param_dim(const MetaConfig& cfg) {
  int d = param_count(cfg.families[0]);
  for (Family f : cfg.families)
    if (param_count(f) != d)
      throw std::invalid_argument("families in one roster must share D");
  return d;
}

inline NetConfig desk_net_config(const MetaConfig& cfg) {
  return NetConfig::desk(cfg.structure.r_max, net_param_dim(cfg),
                         cfg.structure.c_obs_max, net_roster(cfg));
}

inline NetConfig full_net_config(const MetaConfig& cfg) {
  return NetConfig::full(cfg.structure.r_max, net_param_dim(cfg),
                         cfg.structure.c_obs_max, net_roster(cfg));
}

// Loss of one generated batch with the training-time sample streams.
inline float fm_loss(const VelocityNet& net, const SimBatch& batch,
                     const MetaConfig& cfg, std::uint64_t flow_seed,
                     std::uint64_t batch_index, const TimeWeight& weight = {}) {
  std::vector<const DatasetItem*> items;
  std::vector<int> fams;
  std::vector<FlowSample> samples;
  for (std::size_t i = 0; i < batch.items.size(); ++i) {
    items.push_back(&batch.items[i]);
    fams.push_back(family_index(cfg, batch.items[i].family));
    Rng frng(flow_seed, rngtag::flow, batch_index, i);
    samples.push_back(draw_flow_sample(batch.items[i], frng));
  }
  PlainBackend<float> b(net.params());
  return fm_loss_h(b, net, items, fams, samples, weight)(0, 0);
}

struct TrainSpec {
  int epochs = 50;
  int steps_per_epoch = 100;
  int batch_size = 64;
  double lr = 1e-4;
  int warmup_steps = 100;
  std::uint64_t seed = 1;
  Scope scope = Scope::family;
  int checkpoint_every = 10;  // epochs
  TimeWeight time_weight;     // empty: unit weight
  std::function<double(long)> lr_schedule;  // step -> multiplier; empty: 1

  void validate() const {
    if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1)
      throw std::invalid_argument("training counts must be positive");
    if (!(lr > 0)) throw std::invalid_argument("lr must be positive");
    if (checkpoint_every < 1)
      throw std::invalid_argument("checkpoint cadence must be positive");
  }

  long budget() const {
    return static_cast<long>(epochs) * steps_per_epoch * batch_size;
  }

  static TrainSpec baseline_full() {
    TrainSpec s;
    s.epochs = 1000;
    s.steps_per_epoch = 100;
    s.batch_size = 64;
    return s;
  }
  static TrainSpec meta_full() {
    TrainSpec s = baseline_full();
    s.epochs = 5000;
    s.scope = Scope::model_class;
    return s;
  }
};

struct TrainHooks {
  std::ostream* log = nullptr;
  // Called at the checkpoint cadence, at the final epoch, and whenever the
  // epoch mean loss improves on the best seen so far.
  std::function<void(int epoch, double epoch_mean_loss, bool is_best)>
      checkpoint;
};

struct TrainResult {
  std::vector<double> epoch_mean_loss;
  int best_epoch = 0;
  double best_loss = 0;
  long skipped_steps = 0;
};

// Single-threaded training loop. Data and flow randomness are keyed by the
// global batch index, so a resumed run consumes exactly the streams the
// uninterrupted run would have.
// prior_best seeds the improvement tracker when resuming, so a resumed run
// makes the same is-best decisions the uninterrupted run would have made.
inline TrainResult train(VelocityNet& net, const MetaConfig& cfg,
                         const TrainSpec& spec, Adam<float>& opt,
                         const TrainHooks& hooks = {}, int start_epoch = 1,
                         double prior_best =
                             std::numeric_limits<double>::infinity()) {
  spec.validate();
  cfg.validate();
  if (spec.scope != cfg.scope)
    throw std::invalid_argument("train: spec scope disagrees with simulator");
  if (net.config().n_families != net_roster(cfg))
    throw std::invalid_argument("train: network roster disagrees with config");
  if (start_epoch < 1 || start_epoch > spec.epochs)
    throw std::invalid_argument("train: start epoch out of range");

  auto& store = net.params();
  std::vector<Tensor<float>*> params;
  std::vector<Tensor<float>> gacc;
  std::vector<const Tensor<float>*> gptr;
  for (int i = 0; i < store.size(); ++i) {
    params.push_back(&store.value(i));
    gacc.push_back(Tensor<float>::zeros(store.value(i).rows(),
                                        store.value(i).cols()));
  }
  for (const auto& g : gacc) gptr.push_back(&g);

  // The spec owns the schedule; whatever rate the optimizer carried before is
  // overwritten so a spec cannot silently train at a stale rate.
  opt.set_lr(spec.lr);
  opt.set_warmup(spec.warmup_steps);

  const auto t0 = std::chrono::steady_clock::now();
  auto wall = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  };

  TrainResult res;
  double best = prior_best;
  res.best_epoch = 0;
  for (int epoch = start_epoch; epoch <= spec.epochs; ++epoch) {
    double epoch_sum = 0;
    for (int s = 0; s < spec.steps_per_epoch; ++s) {
      const std::uint64_t batch_index =
          static_cast<std::uint64_t>(epoch - 1) * spec.steps_per_epoch + s;
      SimBatch batch = make_batch(cfg, spec.batch_size, batch_index);

      for (auto& g : gacc) g.fill(0.0f);
      double batch_loss = 0;
      for (std::size_t i = 0; i < batch.items.size(); ++i) {
        const auto& item = batch.items[i];
        Rng frng(spec.seed, rngtag::flow, batch_index, i);
        FlowSample fs = draw_flow_sample(item, frng);
        int fam = family_index(cfg, item.family);

        Tape<float> tape;
        TapeBackend<float> tb(tape, store);
        auto sid = net.encode_h(tb, item.X, item.Y, fam);
        auto uid = net.velocity_h(tb, sid, masked_state(fs), fs.M, fs.t, fam);
        auto did = tape.hadamard(tape.sub(uid, tape.input(fs.V)),
                                 tape.input(fs.M));
        auto root = tape.scale(tape.sum_all(tape.hadamard(did, did)),
                               static_cast<float>(spec.time_weight
                                                      ? spec.time_weight(fs.t)
                                                      : 1.0));
        tape.backward(root);
        batch_loss += static_cast<double>(tape.val(root)(0, 0));
        const auto& wid = tb.weight_ids();
        for (int w = 0; w < store.size(); ++w)
          if (wid[w] >= 0) gacc[w].m() += tape.grad(wid[w]).m();
      }
      const float invb = static_cast<float>(1.0 / batch.items.size());
      for (auto& g : gacc) g.m() *= invb;
      batch_loss /= static_cast<double>(batch.items.size());

      if (spec.lr_schedule)
        opt.set_lr(spec.lr * spec.lr_schedule(opt.step_count()));
      opt.step(params, gptr);

      epoch_sum += batch_loss;
      if (hooks.log)
        (*hooks.log) << "epoch=" << epoch << " step=" << s + 1
                     << " loss=" << batch_loss << " wall_s=" << wall() << "\n";
    }
    const double mean = epoch_sum / spec.steps_per_epoch;
    res.epoch_mean_loss.push_back(mean);
    if (hooks.log)
      (*hooks.log) << "epoch=" << epoch << " mean_loss=" << mean
                   << " wall_s=" << wall() << "\n";
    const bool is_best = mean < best;
    if (is_best) {
      best = mean;
      res.best_epoch = epoch;
      res.best_loss = mean;
    }
    if (hooks.checkpoint &&
        (is_best || epoch % spec.checkpoint_every == 0 || epoch == spec.epochs))
      hooks.checkpoint(epoch, mean, is_best);
  }
  res.skipped_steps = opt.skipped_steps();
  return res;
}

struct SamplerSpec {
  double dt = 1e-2;  // reference fine value 1e-3 sits behind a flag
  int draws = 1000;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(dt > 0.0 && dt <= 0.1))
      throw std::invalid_argument("sampler dt must lie in (0, 0.1]");
    if (draws < 1) throw std::invalid_argument("draws must be positive");
  }
};

struct PosteriorDraws {
  std::vector<int> active_cells;  // flat r * D + d indices, masked cells absent
  Tensor<float> draws;            // kept draws x active cell count
  int flagged = 0;                // non-finite trajectories, excluded
  int rows_grid = 0, cols_grid = 0;
  double dt = 0;
  std::uint64_t seed = 0;
};

// Euler integration of dZ/dt = u from t=1 to t=0 with masked cells pinned to
// zero. Per-draw noise streams are keyed by draw index, so draw d is the same
// regardless of how many draws run or fail around it.
inline PosteriorDraws integrate_posterior(const VelocityFn& u,
                                          const Tensor<float>& M,
                                          const SamplerSpec& spec) {
  spec.validate();
  const int R = M.rows(), D = M.cols();
  PosteriorDraws out;
  out.rows_grid = R;
  out.cols_grid = D;
  out.dt = spec.dt;
  out.seed = spec.seed;
  for (int r = 0; r < R; ++r)
    for (int d = 0; d < D; ++d)
      if (M(r, d) != 0.0f) out.active_cells.push_back(r * D + d);

  const int nsteps =
      static_cast<int>(std::ceil(1.0 / spec.dt - 1e-9));
  std::vector<float> kept;
  int kept_rows = 0;
  for (int draw = 0; draw < spec.draws; ++draw) {
    Rng zrng(spec.seed, rngtag::draw, static_cast<std::uint64_t>(draw), 0);
    Tensor<float> z = Tensor<float>::randn(R, D, zrng);
    for (std::size_t k = 0; k < z.size(); ++k)
      if (M.at_flat(k) == 0.0f) z.at_flat(k) = 0.0f;

    bool ok = true;
    for (int k = 0; k < nsteps; ++k) {
      const double t = 1.0 - spec.dt * k;
      const double step =
          k == nsteps - 1 ? 1.0 - spec.dt * (nsteps - 1) : spec.dt;
      auto uhat = u(z, M, t);
      const float fstep = static_cast<float>(step);
      for (std::size_t c = 0; c < z.size(); ++c)
        z.at_flat(c) = M.at_flat(c) != 0.0f
                           ? z.at_flat(c) - fstep * uhat.at_flat(c)
                           : 0.0f;
      if (!z.all_finite()) {
        ok = false;
        break;
      }
    }
    if (!ok) {
      ++out.flagged;
      continue;
    }
    for (int cell : out.active_cells) kept.push_back(z.at_flat(cell));
    ++kept_rows;
  }
  out.draws = Tensor<float>(kept_rows, static_cast<int>(out.active_cells.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) out.draws.at_flat(k) = kept[k];
  return out;
}

inline PosteriorDraws sample_posterior(const VelocityNet& net,
                                       const DatasetItem& item, int fam,
                                       const SamplerSpec& spec) {
  auto summaries = net.summaries(item.X, item.Y, fam);
  VelocityFn u = [&](const Tensor<float>& z, const Tensor<float>& m,
                     double t) { return net.velocity(summaries, z, m, t, fam); };
  return integrate_posterior(u, item.M, spec);
}

}  // namespace mfsm
