#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "mfsm/net.hpp"

using namespace mfsm;

namespace {

Tensor<float> randu(int r, int c, Rng& rng, float lo = -1.0f, float hi = 1.0f) {
  Tensor<float> t(r, c);
  for (std::size_t k = 0; k < t.size(); ++k)
    t.at_flat(k) = lo + (hi - lo) * static_cast<float>(rng.uniform());
  return t;
}

Tensor<float> permute_rows(const Tensor<float>& x, const std::vector<int>& p) {
  Tensor<float> out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j) out(i, j) = x(p[i], j);
  return out;
}

Tensor<float> stack_twice(const Tensor<float>& x) {
  Tensor<float> out(2 * x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i)
    for (int j = 0; j < x.cols(); ++j)
      out(i, j) = out(i + x.rows(), j) = x(i, j);
  return out;
}

// Reference pooling stage written as explicit scalar loops in double
// precision, reading the same weights the network uses.
std::vector<std::vector<double>> reference_pool(const VelocityNet& net,
                                                const Tensor<float>& states) {
  const auto& cfg = net.config();
  const auto& ps = net.params();
  const int N = states.rows(), dm = cfg.d_model, sd = cfg.seed_dim;
  const int L = cfg.seed_tokens, nh = cfg.heads, dk = dm / nh;
  auto wv2d = [&](const char* n) {
    const auto& t = ps.value(n);
    std::vector<std::vector<double>> w(t.rows(), std::vector<double>(t.cols()));
    for (int i = 0; i < t.rows(); ++i)
      for (int j = 0; j < t.cols(); ++j) w[i][j] = t(i, j);
    return w;
  };
  auto ln_affine = [](std::vector<std::vector<double>> x,
                      const std::vector<std::vector<double>>& g,
                      const std::vector<std::vector<double>>& b) {
    for (auto& row : x) {
      const int n = static_cast<int>(row.size());
      double mu = 0;
      for (double v : row) mu += v;
      mu /= n;
      double var = 0;
      for (double v : row) var += (v - mu) * (v - mu);
      var /= n;
      double istd = 1.0 / std::sqrt(var + 1e-5);
      for (int j = 0; j < n; ++j) row[j] = g[0][j] * ((row[j] - mu) * istd) + b[0][j];
    }
    return x;
  };
  auto affine = [](const std::vector<std::vector<double>>& x,
                   const std::vector<std::vector<double>>& w,
                   const std::vector<std::vector<double>>& b) {
    std::vector<std::vector<double>> out(x.size(),
                                         std::vector<double>(w[0].size(), 0));
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t j = 0; j < w[0].size(); ++j) {
        double s = b[0][j];
        for (std::size_t k = 0; k < w.size(); ++k) s += x[i][k] * w[k][j];
        out[i][j] = s;
      }
    return out;
  };

  std::vector<std::vector<double>> h(N, std::vector<double>(dm));
  for (int i = 0; i < N; ++i)
    for (int j = 0; j < dm; ++j) h[i][j] = states(i, j);
  auto kv = ln_affine(h, wv2d("pool.ln.g"), wv2d("pool.ln.b"));

  auto seeds = wv2d("pool.seeds");
  auto q = affine(seeds, wv2d("pool.attn.wq"), wv2d("pool.attn.bq"));
  auto K = affine(kv, wv2d("pool.attn.wk"), wv2d("pool.attn.bk"));
  auto V = affine(kv, wv2d("pool.attn.wv"), wv2d("pool.attn.bv"));

  std::vector<std::vector<double>> attn(L, std::vector<double>(dm, 0));
  for (int s = 0; s < L; ++s)
    for (int head = 0; head < nh; ++head) {
      std::vector<double> sc(N);
      double mx = -1e300;
      for (int n = 0; n < N; ++n) {
        double dot = 0;
        for (int k = 0; k < dk; ++k)
          dot += q[s][head * dk + k] * K[n][head * dk + k];
        sc[n] = dot / std::sqrt(double(dk));
        mx = std::max(mx, sc[n]);
      }
      double z = 0;
      for (int n = 0; n < N; ++n) {
        sc[n] = std::exp(sc[n] - mx);
        z += sc[n];
      }
      for (int n = 0; n < N; ++n)
        for (int k = 0; k < dk; ++k)
          attn[s][head * dk + k] += (sc[n] / z) * V[n][head * dk + k];
    }
  auto o = affine(attn, wv2d("pool.attn.wo"), wv2d("pool.attn.bo"));
  std::vector<std::vector<double>> pooled(L, std::vector<double>(sd));
  for (int s = 0; s < L; ++s)
    for (int j = 0; j < sd; ++j) pooled[s][j] = seeds[s][j] + o[s][j];

  auto u = ln_affine(pooled, wv2d("pool.ln2.g"), wv2d("pool.ln2.b"));
  auto hid = affine(u, wv2d("pool.ff.w1"), wv2d("pool.ff.b1"));
  for (auto& row : hid)
    for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
  auto ff = affine(hid, wv2d("pool.ff.w2"), wv2d("pool.ff.b2"));
  for (int s = 0; s < L; ++s)
    for (int j = 0; j < sd; ++j) pooled[s][j] += ff[s][j];
  return pooled;
}

}  // namespace

TEST_CASE("sinusoidal embedding basics") {
  auto e = sinusoidal_embed(0, 16);
  REQUIRE(e.rows() == 1);
  REQUIRE(e.cols() == 16);
  for (int k = 0; k < 8; ++k) {
    CHECK(e(0, 2 * k) == 0.0f);
    CHECK(e(0, 2 * k + 1) == 1.0f);
  }
  CHECK_THROWS_AS(sinusoidal_embed(0, 15), std::invalid_argument);
  CHECK_THROWS_AS(sinusoidal_embed(0, 0), std::invalid_argument);
  CHECK_THROWS_AS(sinusoidal_embed(-1, 16), std::invalid_argument);
}

TEST_CASE("sinusoidal embeddings are distinct for indices below 10k") {
  const int dim = 32;
  std::vector<std::vector<float>> rows(10000);
  for (int i = 0; i < 10000; ++i) {
    auto e = sinusoidal_embed(i, dim);
    rows[i].assign(e.data(), e.data() + dim);
  }
  std::sort(rows.begin(), rows.end());
  for (int i = 1; i < 10000; ++i) REQUIRE(rows[i] != rows[i - 1]);
}

TEST_CASE("fourier time embedding basics") {
  auto e = fourier_time_embed(0.0, 8);
  for (int k = 0; k < 4; ++k) {
    CHECK(e(0, 2 * k) == 0.0f);
    CHECK(e(0, 2 * k + 1) == 1.0f);
  }
  CHECK_THROWS_AS(fourier_time_embed(-0.01, 8), std::invalid_argument);
  CHECK_THROWS_AS(fourier_time_embed(1.01, 8), std::invalid_argument);
  CHECK_THROWS_AS(fourier_time_embed(0.5, 7), std::invalid_argument);
  CHECK(fourier_time_embed(1.0, 8).all_finite());
}

TEST_CASE("fourier frequency bank: injective on [0,1], collisions at t+2") {
  const int dim = 8;
  // Coordinate 2k is sin(pi 2^k t): check against direct evaluation.
  for (int k = 0; k < dim / 2; ++k) {
    double w = M_PI * std::pow(2.0, k);
    auto e = fourier_time_embed(0.3, dim);
    CHECK(e(0, 2 * k) == Catch::Approx(std::sin(w * 0.3)).margin(1e-6));
    CHECK(e(0, 2 * k + 1) == Catch::Approx(std::cos(w * 0.3)).margin(1e-6));
  }
  // Slowest frequency pi has period 2, so the first collision t' = t + 2
  // lies strictly outside [0, 1] for every t in the domain.
  for (int k = 0; k < dim / 2; ++k) {
    double w = M_PI * std::pow(2.0, k);
    CHECK(std::sin(w * (0.4 + 2.0)) == Catch::Approx(std::sin(w * 0.4)).margin(1e-9));
    CHECK(std::cos(w * (0.4 + 2.0)) == Catch::Approx(std::cos(w * 0.4)).margin(1e-9));
  }
  // No two grid points inside the domain share an embedding.
  const int G = 1001;
  std::vector<std::vector<float>> rows(G);
  for (int i = 0; i < G; ++i) {
    auto e = fourier_time_embed(double(i) / (G - 1), dim);
    rows[i].assign(e.data(), e.data() + dim);
  }
  auto sorted = rows;
  std::sort(sorted.begin(), sorted.end());
  for (int i = 1; i < G; ++i) REQUIRE(sorted[i] != sorted[i - 1]);
  // Per-coordinate slope is bounded by the coordinate's frequency.
  const double dt = 1e-6;
  for (double t : {0.1, 0.5, 0.9}) {
    auto a = fourier_time_embed(t, dim);
    auto b = fourier_time_embed(t + dt, dim);
    for (int k = 0; k < dim / 2; ++k) {
      double w = M_PI * std::pow(2.0, k);
      CHECK(std::abs(b(0, 2 * k) - a(0, 2 * k)) <= w * dt * 1.01 + 1e-9);
      CHECK(std::abs(b(0, 2 * k + 1) - a(0, 2 * k + 1)) <= w * dt * 1.01 + 1e-9);
    }
  }
}

TEST_CASE("film modulation examples") {
  Rng rng(77, 1, 2, 3);
  auto h = randu(3, 5, rng);
  auto ones = Tensor<float>::full(3, 5, 1.0f);
  auto zero = Tensor<float>::zeros(3, 5);

  SECTION("unit scale and zero shift is the identity") {
    CHECK(kern::film(h, ones, zero) == h);
  }
  SECTION("zero scale returns the shift") {
    auto shift = randu(3, 5, rng);
    CHECK(kern::film(h, zero, shift) == shift);
  }
  SECTION("linear in h for fixed scale and shift") {
    auto s = randu(3, 5, rng);
    auto b = randu(3, 5, rng);
    auto h2 = randu(3, 5, rng);
    auto lhs = kern::film(kern::add(h, h2), s, b);
    auto rhs = kern::add(kern::film(h, s, b), kern::film(h2, s, zero));
    CHECK(max_abs_diff(lhs, rhs) < 1e-6f);
  }
  SECTION("shape mismatch is rejected") {
    CHECK_THROWS_AS(kern::film(h, Tensor<float>::zeros(3, 4), zero), ShapeError);
    CHECK_THROWS_AS(kern::film(h, ones, Tensor<float>::zeros(2, 5)), ShapeError);
  }
}

TEST_CASE("encoder shape contract and empty-input error") {
  auto cfg = NetConfig::desk(3, 4, 2, 1);
  VelocityNet net(cfg, 11);
  Rng rng(123, 0, 0, 0);

  for (int N : {1, 256}) {
    auto X = randu(N, cfg.r_max, rng);
    auto Y = randu(N, cfg.c_obs_max, rng);
    auto s = net.summaries(X, Y, 0);
    REQUIRE(s.rows() == cfg.seed_tokens);
    REQUIRE(s.cols() == cfg.seed_dim);
    CHECK(s.all_finite());
  }
  CHECK_THROWS_AS(
      net.summaries(Tensor<float>(0, cfg.r_max), Tensor<float>(0, cfg.c_obs_max), 0),
      std::invalid_argument);
  CHECK_THROWS_AS(
      net.summaries(Tensor<float>(4, cfg.r_max), Tensor<float>(3, cfg.c_obs_max), 0),
      std::invalid_argument);
}

TEST_CASE("encoder is invariant to trial permutation") {
  auto cfg = NetConfig::desk(4, 6, 2, 3);
  VelocityNet net(cfg, 21);
  Rng rng(321, 0, 0, 0);
  const int N = 32;
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);

  std::vector<int> perm(N);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 shuffler(7);
  std::shuffle(perm.begin(), perm.end(), shuffler);

  auto s0 = net.summaries(X, Y, 1);
  auto s1 = net.summaries(permute_rows(X, perm), permute_rows(Y, perm), 1);
  CHECK(max_abs_diff(s0, s1) <= 1e-5f);
}

TEST_CASE("pooling matches a scalar reference and is duplication idempotent") {
  auto cfg = NetConfig::desk(3, 4, 2, 1);
  VelocityNet net(cfg, 31);
  Rng rng(888, 0, 0, 0);
  const int N = 8;
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);

  SECTION("network pooling equals the loop reference") {
    auto states = net.trial_states(X, Y, 0);
    auto ref = reference_pool(net, states);
    auto s = net.summaries(X, Y, 0);
    double worst = 0;
    for (int i = 0; i < s.rows(); ++i)
      for (int j = 0; j < s.cols(); ++j)
        worst = std::max(worst, std::abs(ref[i][j] - double(s(i, j))));
    CHECK(worst <= 2e-5);
  }
  SECTION("duplicating every trial leaves the reference pool unchanged") {
    auto states = net.trial_states(X, Y, 0);
    auto a = reference_pool(net, states);
    auto b = reference_pool(net, stack_twice(states));
    double worst = 0;
    for (std::size_t i = 0; i < a.size(); ++i)
      for (std::size_t j = 0; j < a[i].size(); ++j)
        worst = std::max(worst, std::abs(a[i][j] - b[i][j]));
    CHECK(worst <= 1e-9);
  }
  SECTION("duplicating every trial leaves the summaries unchanged end to end") {
    auto s0 = net.summaries(X, Y, 0);
    auto s1 = net.summaries(stack_twice(X), stack_twice(Y), 0);
    CHECK(max_abs_diff(s0, s1) <= 1e-5f);
  }
}

TEST_CASE("decoder output grid shape, finiteness, and observable sensitivity") {
  auto cfg = NetConfig::desk(3, 4, 2, 1);
  VelocityNet net(cfg, 41);
  Rng rng(555, 0, 0, 0);
  const int N = 6;
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);
  auto z = randu(cfg.r_max, cfg.d_params, rng);
  auto mask = Tensor<float>::zeros(cfg.r_max, cfg.d_params);
  for (int d = 0; d < cfg.d_params; ++d) mask(0, d) = 1.0f;
  mask(1, 0) = mask(1, 2) = 1.0f;

  auto s = net.summaries(X, Y, 0);
  auto v = net.velocity(s, z, mask, 0.37, 0);
  REQUIRE(v.rows() == cfg.r_max);
  REQUIRE(v.cols() == cfg.d_params);
  CHECK(v.all_finite());

  auto Y2 = Y;
  Y2(2, 0) += 0.5f;
  auto v2 = net.velocity(net.summaries(X, Y2, 0), z, mask, 0.37, 0);
  float active_diff = 0;
  for (int r = 0; r < cfg.r_max; ++r)
    for (int d = 0; d < cfg.d_params; ++d)
      if (mask(r, d) != 0.0f)
        active_diff = std::max(active_diff, std::abs(v2(r, d) - v(r, d)));
  CHECK(active_diff > 0.0f);

  CHECK_THROWS_AS(net.velocity(s, Tensor<float>(2, cfg.d_params), mask, 0.3, 0),
                  ShapeError);
  CHECK_THROWS_AS(net.velocity(s, z, Tensor<float>(cfg.r_max, 2), 0.3, 0),
                  ShapeError);
  CHECK_THROWS_AS(net.velocity(s, z, mask, 1.5, 0), std::invalid_argument);
}

TEST_CASE("cross-attention over one summary token is its value projection") {
  auto cfg = NetConfig::desk(2, 3, 2, 1);
  VelocityNet net(cfg, 51);
  Rng rng(99, 0, 0, 0);
  auto q = randu(5, cfg.d_model, rng);
  auto kv = randu(1, cfg.seed_dim, rng);

  PlainBackend<float> b(net.params());
  auto out = net.mha(b, q, kv, "dec.L0.cross");
  auto vp = kern::linear(
      kern::linear(kv, net.params().value("dec.L0.cross.wv"),
                   net.params().value("dec.L0.cross.bv")),
      net.params().value("dec.L0.cross.wo"), net.params().value("dec.L0.cross.bo"));
  REQUIRE(out.rows() == 5);
  for (int i = 0; i < out.rows(); ++i)
    for (int j = 0; j < out.cols(); ++j)
      CHECK(out(i, j) == Catch::Approx(vp(0, j)).margin(1e-6));
}

TEST_CASE("decoder is equivariant to token reordering") {
  auto cfg = NetConfig::desk(3, 4, 2, 2);
  VelocityNet net(cfg, 61);
  Rng rng(444, 0, 0, 0);
  const int N = 5, K = cfg.tokens();
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);
  auto z = randu(cfg.r_max, cfg.d_params, rng);
  auto mask = Tensor<float>::zeros(cfg.r_max, cfg.d_params);
  for (int k = 0; k < K; k += 2) mask.at_flat(k) = 1.0f;
  auto s = net.summaries(X, Y, 1);

  auto tf = net.build_tokens(z, mask, 0.4);
  std::vector<int> perm(K);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937 shuffler(3);
  std::shuffle(perm.begin(), perm.end(), shuffler);

  TokenFeatures ptf;
  ptf.inputs = permute_rows(tf.inputs, perm);
  ptf.positional = permute_rows(tf.positional, perm);
  ptf.cond = permute_rows(tf.cond, perm);
  ptf.mask_bits.resize(K);
  for (int i = 0; i < K; ++i) ptf.mask_bits[i] = tf.mask_bits[perm[i]];

  PlainBackend<float> b(net.params());
  auto out = net.decode_tokens(b, s, tf, 1);
  PlainBackend<float> b2(net.params());
  auto pout = net.decode_tokens(b2, s, ptf, 1);
  for (int i = 0; i < K; ++i)
    CHECK(pout.at_flat(i) == Catch::Approx(out.at_flat(perm[i])).margin(1e-5));
}

TEST_CASE("family index gates both encoder and decoder") {
  auto cfg = NetConfig::desk(2, 4, 2, 4);
  VelocityNet net(cfg, 71);
  Rng rng(202, 0, 0, 0);
  auto X = randu(6, cfg.r_max, rng);
  auto Y = randu(6, cfg.c_obs_max, rng);
  auto z = randu(cfg.r_max, cfg.d_params, rng);
  auto mask = Tensor<float>::full(cfg.r_max, cfg.d_params, 1.0f);

  auto s0 = net.summaries(X, Y, 0);
  auto s2 = net.summaries(X, Y, 2);
  CHECK(max_abs_diff(s0, s2) > 0.0f);
  CHECK(max_abs_diff(net.velocity(s0, z, mask, 0.5, 0),
                     net.velocity(s0, z, mask, 0.5, 2)) > 0.0f);
  CHECK_THROWS_AS(net.summaries(X, Y, 4), std::invalid_argument);
  CHECK_THROWS_AS(net.summaries(X, Y, -1), std::invalid_argument);

  VelocityNet single(NetConfig::desk(2, 4, 2, 1), 72);
  CHECK_THROWS_AS(single.params().index("fam.table"), std::logic_error);
}

TEST_CASE("tape and plain forwards produce identical values") {
  auto cfg = NetConfig::desk(2, 3, 2, 2);
  VelocityNet net(cfg, 81);
  Rng rng(777, 0, 0, 0);
  const int N = 5;
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);
  auto z = randu(cfg.r_max, cfg.d_params, rng);
  auto target = randu(cfg.r_max, cfg.d_params, rng);
  auto mask = Tensor<float>::zeros(cfg.r_max, cfg.d_params);
  mask(0, 0) = mask(0, 2) = mask(1, 1) = 1.0f;

  PlainBackend<float> pb(net.params());
  auto s_p = net.encode_h(pb, X, Y, 1);
  auto u_p = net.velocity_h(pb, s_p, z, mask, 0.6, 1);
  auto diff = kern::hadamard(kern::sub(u_p, target), mask);
  float loss_p = kern::mean_all(kern::hadamard(diff, diff));

  Tape<float> tape;
  TapeBackend<float> tb(tape, net.params());
  auto s_t = net.encode_h(tb, X, Y, 1);
  auto u_t = net.velocity_h(tb, s_t, z, mask, 0.6, 1);
  auto d_t = tape.hadamard(tape.sub(u_t, tape.input(target)), tape.input(mask));
  auto loss_t = tape.mean_all(tape.hadamard(d_t, d_t));

  CHECK(tape.val(u_t) == u_p);
  CHECK(tape.val(loss_t)(0, 0) == loss_p);
}

TEST_CASE("full forward and backward gradient check at 64-bit") {
  auto cfg = NetConfig::desk(2, 6, 2, 2);
  VelocityNet net(cfg, 91);
  Rng rng(3141, 0, 0, 0);
  const int N = 5;
  auto X = randu(N, cfg.r_max, rng);
  auto Y = randu(N, cfg.c_obs_max, rng);
  auto z = randu(cfg.r_max, cfg.d_params, rng);
  auto target = randu(cfg.r_max, cfg.d_params, rng);
  auto mask = Tensor<float>::zeros(cfg.r_max, cfg.d_params);
  for (int d = 0; d < cfg.d_params; ++d) mask(0, d) = 1.0f;
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

  {
    PlainBackend<double> pb(net.params());
    CHECK(loss_plain(pb) == tape.val(loss_id)(0, 0));
  }

  const auto& ps = net.params();
  const auto& wid = tb.weight_ids();
  // Every parameter tensor must participate in this forward graph.
  for (int i = 0; i < ps.size(); ++i) {
    INFO("parameter " << ps.name(i));
    REQUIRE(wid[i] >= 0);
  }

  const double h = 1e-5;
  int checked = 0;
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
      wd.at_flat(e) = double(w.at_flat(e)) + h;
      pb.set_override(i, wd);
      double up = loss_plain(pb);
      wd.at_flat(e) = double(w.at_flat(e)) - h;
      pb.set_override(i, wd);
      double dn = loss_plain(pb);
      double fd = (up - dn) / (2 * h);
      double an = g.at_flat(e);
      double err = std::abs(an - fd);
      double rel = err / std::max({std::abs(an), std::abs(fd), 1e-8});
      INFO(ps.name(i) << "[" << e << "] analytic " << an << " fd " << fd);
      // Key biases shift every score in a softmax row equally, so their true
      // gradient is zero; central differences only see rounding noise there.
      REQUIRE((rel < 1e-4 || err < 1e-7));
      ++checked;
    }
  }
  CHECK(checked >= 300);
}

TEST_CASE("parameter manifest count matches the configuration") {
  auto audit = [](const NetConfig& cfg) {
    const std::size_t dm = cfg.d_model, sd = cfg.seed_dim;
    const std::size_t ffd = cfg.ff_mult * dm, ffs = cfg.ff_mult * sd;
    auto attn = [&](std::size_t qd, std::size_t kvd, std::size_t od) {
      return qd * dm + dm + 2 * (kvd * dm + dm) + dm * od + od;
    };
    std::size_t ff_d = dm * ffd + ffd + ffd * dm + dm;
    std::size_t ff_s = sd * ffs + ffs + ffs * sd + sd;
    std::size_t n = 0;
    n += (cfg.r_max + cfg.c_obs_max) * dm + dm;                 // trial input
    if (cfg.use_family())
      n += cfg.n_families * cfg.fam_dim + 2 * cfg.fam_dim * dm; // family rows
    n += cfg.enc_layers * (4 * dm + attn(dm, dm, dm) + ff_d);   // encoder
    n += cfg.seed_tokens * sd + 2 * dm + attn(sd, dm, sd) + 2 * sd + ff_s;
    n += (1 + 2 * cfg.pos_dim) * dm + dm;                       // token input
    n += 2 * dm + 2 * NetConfig::mask_cond_dim;                 // mask tables
    n += cfg.dec_layers * (6 * dm + attn(dm, dm, dm) + attn(dm, sd, dm) +
                           cfg.cond_dim() * 2 * dm + 2 * dm + ff_d);
    n += 2 * dm + dm + 1;                                       // head
    return n;
  };

  VelocityNet desk(NetConfig::desk(8, 6, 2, 4), 3);
  CHECK(desk.params().total_elements() == audit(desk.config()));

  VelocityNet full(NetConfig::full(8, 6, 2, 4), 4);
  CHECK(full.config().seed_dim == 128);
  CHECK(full.params().total_elements() == audit(full.config()));

  VelocityNet single(NetConfig::full(8, 6, 2, 1), 5);
  CHECK(single.config().seed_dim == 64);
  CHECK(single.params().total_elements() == audit(single.config()));

  const auto& ps = desk.params();
  for (int i = 0; i < ps.size(); ++i) CHECK(ps.index(ps.name(i)) == i);
}

TEST_CASE("network configuration validation") {
  auto bad = NetConfig::desk(2, 6, 2, 1);
  bad.d_model = 65;
  CHECK_THROWS_AS(VelocityNet(bad, 1), std::invalid_argument);
  auto odd = NetConfig::desk(2, 6, 2, 1);
  odd.pos_dim = 31;
  CHECK_THROWS_AS(VelocityNet(odd, 1), std::invalid_argument);
  auto zero = NetConfig::desk(2, 6, 2, 1);
  zero.enc_layers = 0;
  CHECK_THROWS_AS(VelocityNet(zero, 1), std::invalid_argument);
}
