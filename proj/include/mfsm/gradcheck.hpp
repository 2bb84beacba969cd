#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "mfsm/flow.hpp"

namespace mfsm {

struct GradCheckEntry {
  std::string op;
  double max_rel = 0;
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool pass = false;
};

namespace detail {

using GTape = Tape<double>;
using GId = GTape::Id;
using GBuild = std::function<GId(GTape&, const std::vector<GId>&)>;

// Fixed random projection to a scalar so every output direction contributes.
// Keyed by the output shape only, so rebuilding the graph for a perturbed
// input evaluates the same function.
inline GId gc_project(GTape& t, GId f) {
  const auto& v = t.val(f);
  Rng prng(0xabcdefu, static_cast<std::uint64_t>(v.rows()),
           static_cast<std::uint64_t>(v.cols()), 17);
  return t.sum_all(
      t.hadamard(f, t.input(Tensor<double>::randn(v.rows(), v.cols(), prng))));
}

// Central finite differences against the taped gradient over every element
// of every parameter; returns the worst relative error. A non-empty corrupt
// name biases that op's analytic gradient, proving the detector trips.
inline double gc_max_rel(const GBuild& build, std::vector<Tensor<double>> params,
                         bool corrupt) {
  GTape tape;
  std::vector<GId> ids;
  for (auto& p : params) ids.push_back(tape.param(p));
  GId root = build(tape, ids);
  tape.backward(root);

  auto eval = [&](const std::vector<Tensor<double>>& ps) {
    GTape t;
    std::vector<GId> is;
    for (auto& p : ps) is.push_back(t.param(p));
    return t.val(build(t, is))(0, 0);
  };

  const double h = 1e-5;
  double worst = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    for (std::size_t k = 0; k < params[pi].size(); ++k) {
      auto plus = params, minus = params;
      plus[pi].at_flat(k) += h;
      minus[pi].at_flat(k) -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      double an = tape.grad(ids[pi]).at_flat(k);
      if (corrupt) an += 5e-2;
      const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
      worst = std::max(worst, std::abs(fd - an) / denom);
    }
  }
  return worst;
}

// Full desk-profile objective: one flow-matching item through the whole
// network, differentiated with respect to every weight tensor. Spot-checks
// three elements per tensor; perturbations run in 64-bit through the plain
// backend's override slot. Key biases cancel inside row softmax, so a tiny
// absolute error passes where the relative test would divide noise by noise.
inline double gc_desk_loss(std::uint64_t seed, bool corrupt) {
  auto nc = NetConfig::desk(2, 6, 2, 2);
  VelocityNet net(nc, seed);
  Rng rng(seed, 0x6C05, 0, 0);
  const int N = 5;
  auto mk = [&](int r, int c) {
    Tensor<float> t(r, c);
    for (std::size_t k = 0; k < t.size(); ++k)
      t.at_flat(k) = static_cast<float>(rng.uniform() * 2.0 - 1.0);
    return t;
  };
  auto X = mk(N, nc.r_max);
  auto Y = mk(N, nc.c_obs_max);
  auto z = mk(nc.r_max, nc.d_params);
  auto target = mk(nc.r_max, nc.d_params);
  auto mask = Tensor<float>::zeros(nc.r_max, nc.d_params);
  for (int d = 0; d < nc.d_params; ++d) mask(0, d) = 1.0f;
  mask(1, 0) = mask(1, 3) = 1.0f;
  const double t_flow = 0.37;
  const int fam = 1;

  auto loss_plain = [&](PlainBackend<double>& b) {
    auto s = net.encode_h(b, X, Y, fam);
    auto u = net.velocity_h(b, s, z, mask, t_flow, fam);
    auto diff = kern::hadamard(kern::sub(u, target.cast<double>()),
                               mask.cast<double>());
    return kern::mean_all(kern::hadamard(diff, diff));
  };

  Tape<double> tape;
  TapeBackend<double> tb(tape, net.params());
  auto s_id = net.encode_h(tb, X, Y, fam);
  auto u_id = net.velocity_h(tb, s_id, z, mask, t_flow, fam);
  auto d_id = tape.hadamard(tape.sub(u_id, tape.input(target.cast<double>())),
                            tape.input(mask.cast<double>()));
  auto loss_id = tape.mean_all(tape.hadamard(d_id, d_id));
  tape.backward(loss_id);

  const auto& ps = net.params();
  const auto& wid = tb.weight_ids();
  const double h = 1e-5;
  double worst = 0;
  for (int i = 0; i < ps.size(); ++i) {
    const auto& w = ps.value(i);
    const auto& g = tape.grad(wid[i]);
    std::vector<std::size_t> picks = {0, w.size() / 2, w.size() - 1};
    picks.resize(std::min<std::size_t>(picks.size(), w.size()));
    std::sort(picks.begin(), picks.end());
    picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    for (std::size_t e : picks) {
      auto wd = w.cast<double>();
      PlainBackend<double> pb(net.params());
      wd.at_flat(e) = static_cast<double>(w.at_flat(e)) + h;
      pb.set_override(i, wd);
      const double up = loss_plain(pb);
      wd.at_flat(e) = static_cast<double>(w.at_flat(e)) - h;
      pb.set_override(i, wd);
      const double dn = loss_plain(pb);
      const double fd = (up - dn) / (2 * h);
      double an = g.at_flat(e);
      if (corrupt) an += 5e-2;
      const double err = std::abs(an - fd);
      const double rel = err / std::max({std::abs(an), std::abs(fd), 1e-8});
      if (err >= 1e-7) worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace detail

// Finite-difference audit of the autodiff surface plus the assembled
// desk-profile loss. corrupt_op biases that entry's analytic gradient so the
// failure path can be exercised deliberately.
inline GradCheckReport run_gradcheck(std::uint64_t seed,
                                     const std::string& corrupt_op = "") {
  using detail::GId;
  using detail::GTape;
  Rng rng(seed, 0x6C05, 1, 0);
  auto rt = [&](int r, int c) { return Tensor<double>::randn(r, c, rng); };

  struct Case {
    std::string name;
    detail::GBuild build;
    std::vector<Tensor<double>> params;
  };
  std::vector<Case> cases;
  auto P = [&](std::string name, detail::GBuild b,
               std::vector<Tensor<double>> params) {
    cases.push_back({std::move(name), std::move(b), std::move(params)});
  };

  P("matmul",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.matmul(p[0], p[1]));
    },
    {rt(2, 3), rt(3, 4)});
  P("linear",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.linear(p[0], p[1], p[2]));
    },
    {rt(2, 3), rt(3, 2), rt(1, 2)});
  P("add",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.add(p[0], p[1]));
    },
    {rt(2, 3), rt(2, 3)});
  P("sub",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.sub(p[0], p[1]));
    },
    {rt(2, 3), rt(2, 3)});
  P("hadamard",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.hadamard(p[0], p[1]));
    },
    {rt(2, 3), rt(2, 3)});
  P("scale",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.scale(p[0], 1.7));
    },
    {rt(2, 3)});
  P("add_const",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.add_const(p[0], 0.3));
    },
    {rt(2, 3)});
  P("add_rowvec",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.add_rowvec(p[0], p[1]));
    },
    {rt(3, 4), rt(1, 4)});
  P("mul_rowvec",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.mul_rowvec(p[0], p[1]));
    },
    {rt(3, 4), rt(1, 4)});
  P("transpose",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.transpose(p[0]));
    },
    {rt(2, 3)});
  P("softmax_rows",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.softmax_rows(p[0]));
    },
    {rt(2, 4)});
  P("gelu",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.gelu(p[0]));
    },
    {rt(2, 3)});
  P("layer_norm",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.layer_norm(p[0]));
    },
    {rt(2, 5)});
  P("slice_cols",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.slice_cols(p[0], 1, 4));
    },
    {rt(2, 5)});
  P("concat_cols",
    [](GTape& t, const std::vector<GId>& p) {
      return detail::gc_project(t, t.concat_cols({p[0], p[1]}));
    },
    {rt(2, 2), rt(2, 3)});
  P("sum_all",
    [](GTape& t, const std::vector<GId>& p) { return t.sum_all(p[0]); },
    {rt(3, 3)});
  P("mean_all",
    [](GTape& t, const std::vector<GId>& p) { return t.mean_all(p[0]); },
    {rt(3, 3)});

  GradCheckReport rep;
  rep.pass = true;
  const double tol = 1e-4;
  for (auto& c : cases) {
    GradCheckEntry e;
    e.op = c.name;
    e.max_rel = detail::gc_max_rel(c.build, c.params, c.name == corrupt_op);
    e.pass = e.max_rel < tol;
    rep.pass = rep.pass && e.pass;
    rep.entries.push_back(std::move(e));
  }

  GradCheckEntry full;
  full.op = "desk_loss";
  full.max_rel = detail::gc_desk_loss(seed, corrupt_op == "desk_loss");
  full.pass = full.max_rel < tol;
  rep.pass = rep.pass && full.pass;
  rep.entries.push_back(std::move(full));
  return rep;
}

}  // namespace mfsm
