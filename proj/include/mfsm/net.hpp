#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "mfsm/autodiff.hpp"
#include "mfsm/kernels.hpp"
#include "mfsm/rng.hpp"
#include "mfsm/tensor.hpp"

namespace mfsm {

// Interleaved sin/cos over geometric frequencies 10000^(-2k/dim).
inline Tensor<float> sinusoidal_embed(int index, int dim) {
  if (index < 0) throw std::invalid_argument("sinusoidal_embed: index < 0");
  if (dim <= 0 || dim % 2 != 0)
    throw std::invalid_argument("sinusoidal_embed: dim must be positive even");
  Tensor<float> out(1, dim);
  for (int k = 0; k < dim / 2; ++k) {
    double freq = std::pow(10000.0, -2.0 * k / dim);
    out(0, 2 * k) = static_cast<float>(std::sin(index * freq));
    out(0, 2 * k + 1) = static_cast<float>(std::cos(index * freq));
  }
  return out;
}

// Frequency bank pi * 2^k: the slowest component has period 2, so the map is
// injective on [0, 1] and the first collision t + 2 lies outside the domain.
inline Tensor<float> fourier_time_embed(double t, int dim) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::invalid_argument("fourier_time_embed: t outside [0,1]");
  if (dim <= 0 || dim % 2 != 0)
    throw std::invalid_argument("fourier_time_embed: dim must be positive even");
  Tensor<float> out(1, dim);
  for (int k = 0; k < dim / 2; ++k) {
    double w = M_PI * std::pow(2.0, k);
    out(0, 2 * k) = static_cast<float>(std::sin(w * t));
    out(0, 2 * k + 1) = static_cast<float>(std::cos(w * t));
  }
  return out;
}

struct NetConfig {
  int enc_layers = 2, dec_layers = 2, heads = 4, d_model = 64;
  int seed_tokens = 8, seed_dim = 64;
  int time_dim = 32, pos_dim = 32, fam_dim = 8;
  int ff_mult = 2;
  int r_max = 8, d_params = 6, c_obs_max = 2, n_families = 1;
  bool concat_positional = true;

  static constexpr int mask_cond_dim = 8;

  static NetConfig desk(int r_max, int d_params, int c_obs_max,
                        int n_families) {
    NetConfig c;
    c.r_max = r_max;
    c.d_params = d_params;
    c.c_obs_max = c_obs_max;
    c.n_families = n_families;
    return c;
  }

  static NetConfig full(int r_max, int d_params, int c_obs_max,
                        int n_families) {
    NetConfig c = desk(r_max, d_params, c_obs_max, n_families);
    c.enc_layers = c.dec_layers = 8;
    c.heads = 8;
    c.d_model = 256;
    c.seed_tokens = 32;
    c.seed_dim = n_families > 1 ? 128 : 64;
    c.ff_mult = 4;
    return c;
  }

  int tokens() const { return r_max * d_params; }
  int cond_dim() const {
    return time_dim + 2 * pos_dim + mask_cond_dim +
           (n_families > 1 ? fam_dim : 0);
  }
  bool use_family() const { return n_families > 1; }

  void validate() const {
    if (d_model % heads != 0)
      throw std::invalid_argument("d_model must be divisible by heads");
    if (time_dim % 2 || pos_dim % 2)
      throw std::invalid_argument("embedding dims must be even");
    if (enc_layers < 1 || dec_layers < 1 || seed_tokens < 1 || r_max < 1 ||
        d_params < 1 || c_obs_max < 1 || n_families < 1)
      throw std::invalid_argument("bad network configuration");
  }
};

class ParamStore {
 public:
  int add(const std::string& name, Tensor<float> v) {
    if (index_.count(name))
      throw std::logic_error("duplicate parameter name: " + name);
    int i = static_cast<int>(vals_.size());
    index_[name] = i;
    names_.push_back(name);
    vals_.push_back(std::move(v));
    return i;
  }
  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::logic_error("unknown parameter name: " + name);
    return it->second;
  }
  int size() const { return static_cast<int>(vals_.size()); }
  const std::string& name(int i) const { return names_[i]; }
  Tensor<float>& value(int i) { return vals_[i]; }
  const Tensor<float>& value(int i) const { return vals_[i]; }
  Tensor<float>& value(const std::string& n) { return vals_[index(n)]; }
  const Tensor<float>& value(const std::string& n) const {
    return vals_[index(n)];
  }
  std::size_t total_elements() const {
    std::size_t s = 0;
    for (const auto& v : vals_) s += v.size();
    return s;
  }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor<float>> vals_;
  std::unordered_map<std::string, int> index_;
};

// Graph-building backend over the autodiff tape. weight(i) registers each
// store entry as a tape parameter at most once, so gradients can be read
// back through weight_ids() after backward().
template <typename T>
class TapeBackend {
 public:
  using H = typename Tape<T>::Id;

  TapeBackend(Tape<T>& tape, const ParamStore& ps)
      : tape_(tape), ps_(ps), wid_(ps.size(), -1) {}

  H weight(int i) {
    if (wid_[i] < 0) wid_[i] = tape_.param(ps_.value(i).template cast<T>());
    return wid_[i];
  }
  H constant(const Tensor<float>& v) {
    return tape_.input(v.template cast<T>());
  }
  H linear(H x, H w, H b) { return tape_.linear(x, w, b); }
  H matmul(H a, H b) { return tape_.matmul(a, b); }
  H add(H a, H b) { return tape_.add(a, b); }
  H sub(H a, H b) { return tape_.sub(a, b); }
  H hadamard(H a, H b) { return tape_.hadamard(a, b); }
  H scale(H x, double s) { return tape_.scale(x, static_cast<T>(s)); }
  H add_const(H x, double c) { return tape_.add_const(x, static_cast<T>(c)); }
  H add_rowvec(H x, H v) { return tape_.add_rowvec(x, v); }
  H mul_rowvec(H x, H v) { return tape_.mul_rowvec(x, v); }
  H transpose(H x) { return tape_.transpose(x); }
  H softmax_rows(H x) { return tape_.softmax_rows(x); }
  H gelu(H x) { return tape_.gelu(x); }
  H layer_norm(H x) { return tape_.layer_norm(x); }
  H slice_cols(H x, int c0, int c1) { return tape_.slice_cols(x, c0, c1); }
  H concat_cols(const std::vector<H>& p) { return tape_.concat_cols(p); }
  H gather_rows(H x, std::vector<int> idx) {
    return tape_.gather_rows(x, std::move(idx));
  }
  H reshape(H x, int r, int c) { return tape_.reshape(x, r, c); }
  H sum_all(H x) { return tape_.sum_all(x); }
  H mean_all(H x) { return tape_.mean_all(x); }

  Tape<T>& tape() { return tape_; }
  const std::vector<H>& weight_ids() const { return wid_; }

 private:
  Tape<T>& tape_;
  const ParamStore& ps_;
  std::vector<H> wid_;
};

// Value-only backend with identical arithmetic, for sampling and evaluation.
// Individual weights can be overridden, which finite-difference checks use
// to perturb a single tensor at the working precision.
template <typename T>
class PlainBackend {
 public:
  using H = Tensor<T>;

  explicit PlainBackend(const ParamStore& ps) : ps_(ps) {}

  void set_override(int i, Tensor<T> v) { override_[i] = std::move(v); }
  void clear_overrides() { override_.clear(); }

  H weight(int i) {
    auto it = override_.find(i);
    if (it != override_.end()) return it->second;
    return ps_.value(i).template cast<T>();
  }
  H constant(const Tensor<float>& v) { return v.template cast<T>(); }
  H linear(const H& x, const H& w, const H& b) { return kern::linear(x, w, b); }
  H matmul(const H& a, const H& b) { return mfsm::matmul(a, b); }
  H add(const H& a, const H& b) { return kern::add(a, b); }
  H sub(const H& a, const H& b) { return kern::sub(a, b); }
  H hadamard(const H& a, const H& b) { return kern::hadamard(a, b); }
  H scale(const H& x, double s) { return kern::scale(x, static_cast<T>(s)); }
  H add_const(const H& x, double c) {
    return kern::add_const(x, static_cast<T>(c));
  }
  H add_rowvec(const H& x, const H& v) { return kern::add_rowvec(x, v); }
  H mul_rowvec(const H& x, const H& v) { return kern::mul_rowvec(x, v); }
  H transpose(const H& x) { return kern::transpose(x); }
  H softmax_rows(const H& x) { return kern::softmax_rows(x); }
  H gelu(const H& x) { return kern::gelu(x); }
  H layer_norm(const H& x) { return kern::layer_norm(x); }
  H slice_cols(const H& x, int c0, int c1) {
    return kern::slice_cols(x, c0, c1);
  }
  H concat_cols(const std::vector<H>& p) { return kern::concat_cols(p); }
  H gather_rows(const H& x, std::vector<int> idx) {
    return kern::gather_rows(x, idx);
  }
  H reshape(const H& x, int r, int c) { return x.reshaped(r, c); }
  H sum_all(const H& x) {
    H out(1, 1);
    out(0, 0) = kern::sum_all(x);
    return out;
  }
  H mean_all(const H& x) {
    H out(1, 1);
    out(0, 0) = kern::mean_all(x);
    return out;
  }

 private:
  const ParamStore& ps_;
  std::unordered_map<int, Tensor<T>> override_;
};

// Prebuilt constant features for the decoder token grid, row k = r*D + d.
struct TokenFeatures {
  Tensor<float> inputs;     // tokens x (1 + 2 pos_dim), or tokens x 1 in additive mode
  Tensor<float> positional; // tokens x (2 pos_dim)
  Tensor<float> cond;       // tokens x (time_dim + 2 pos_dim)
  std::vector<int> mask_bits;
};

class VelocityNet {
 public:
  VelocityNet(NetConfig cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(init_seed, 0x9e17, 0, 0);
    build(rng);
  }

  const NetConfig& config() const { return cfg_; }
  ParamStore& params() { return store_; }
  const ParamStore& params() const { return store_; }

  // ---- generic forward over either backend ----

  // Trial tokens through the self-attention stack, before pooling.
  template <typename B>
  typename B::H encode_blocks_h(B& b, const Tensor<float>& X,
                                const Tensor<float>& Y, int fam) const {
    if (X.rows() == 0) throw std::invalid_argument("encode: N = 0");
    if (X.rows() != Y.rows())
      throw std::invalid_argument("encode: X and Y disagree on N");
    using H = typename B::H;
    H h = b.linear(b.constant(hcat(X, Y)), W(b, "enc.in.w"), W(b, "enc.in.b"));
    if (cfg_.use_family())
      h = b.add_rowvec(h, b.matmul(fam_row(b, fam), W(b, "enc.fam.w")));
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      std::string p = "enc.L" + std::to_string(l) + ".";
      H u = ln(b, h, p + "ln1");
      h = b.add(h, mha(b, u, u, p + "attn"));
      h = b.add(h, ff(b, ln(b, h, p + "ln2"), p + "ff"));
    }
    return h;
  }

  // Pooling by multihead attention onto learned seed tokens.
  template <typename B>
  typename B::H pool_h(B& b, typename B::H h) const {
    using H = typename B::H;
    H kv = ln(b, h, "pool.ln");
    H seeds = W(b, "pool.seeds");
    H pooled = b.add(seeds, mha(b, seeds, kv, "pool.attn"));
    pooled = b.add(pooled, ff(b, ln(b, pooled, "pool.ln2"), "pool.ff"));
    return pooled;
  }

  template <typename B>
  typename B::H encode_h(B& b, const Tensor<float>& X, const Tensor<float>& Y,
                         int fam) const {
    return pool_h(b, encode_blocks_h(b, X, Y, fam));
  }

  TokenFeatures build_tokens(const Tensor<float>& z_masked,
                             const Tensor<float>& mask, double t) const {
    const int R = cfg_.r_max, D = cfg_.d_params, K = R * D;
    if (z_masked.rows() != R || z_masked.cols() != D)
      throw ShapeError("decode: z grid must be r_max x d_params");
    if (mask.rows() != R || mask.cols() != D)
      throw ShapeError("decode: mask grid must be r_max x d_params");
    TokenFeatures tf;
    tf.positional = Tensor<float>(K, 2 * cfg_.pos_dim);
    tf.inputs = Tensor<float>(K, 1 + 2 * cfg_.pos_dim);
    auto temb = fourier_time_embed(t, cfg_.time_dim);
    tf.cond = Tensor<float>(K, cfg_.time_dim + 2 * cfg_.pos_dim);
    tf.mask_bits.resize(K);
    for (int r = 0; r < R; ++r) {
      auto pi = sinusoidal_embed(r, cfg_.pos_dim);
      for (int d = 0; d < D; ++d) {
        auto pj = sinusoidal_embed(d, cfg_.pos_dim);
        int k = r * D + d;
        tf.mask_bits[k] = mask(r, d) != 0.0f ? 1 : 0;
        tf.inputs(k, 0) = z_masked(r, d);
        for (int c = 0; c < cfg_.pos_dim; ++c) {
          tf.positional(k, c) = pi(0, c);
          tf.positional(k, cfg_.pos_dim + c) = pj(0, c);
          tf.inputs(k, 1 + c) = pi(0, c);
          tf.inputs(k, 1 + cfg_.pos_dim + c) = pj(0, c);
        }
        for (int c = 0; c < cfg_.time_dim; ++c) tf.cond(k, c) = temb(0, c);
        for (int c = 0; c < 2 * cfg_.pos_dim; ++c)
          tf.cond(k, cfg_.time_dim + c) = tf.positional(k, c);
      }
    }
    return tf;
  }

  // Velocity over prebuilt tokens; row order of tf determines output order.
  template <typename B>
  typename B::H decode_tokens(B& b, typename B::H summaries,
                              const TokenFeatures& tf, int fam) const {
    using H = typename B::H;
    H h;
    if (cfg_.concat_positional) {
      h = b.linear(b.constant(tf.inputs), W(b, "dec.in.w"), W(b, "dec.in.b"));
    } else {
      H z = b.constant(first_col(tf.inputs));
      h = b.linear(z, W(b, "dec.z.w"), W(b, "dec.in.b"));
      h = b.add(h, b.matmul(b.constant(tf.positional), W(b, "dec.pos.w")));
    }
    h = b.add(h, b.gather_rows(W(b, "dec.mask.table"), tf.mask_bits));
    if (cfg_.use_family())
      h = b.add_rowvec(h, b.matmul(fam_row(b, fam), W(b, "dec.fam.w")));

    // FiLM conditioning: time + positional + mask embedding (+ family)
    std::vector<H> cond_parts = {
        b.constant(tf.cond),
        b.gather_rows(W(b, "dec.maskc.table"), tf.mask_bits)};
    if (cfg_.use_family())
      cond_parts.push_back(b.gather_rows(
          W(b, "fam.table"),
          std::vector<int>(tf.mask_bits.size(), fam_index(fam))));
    H cond = b.concat_cols(cond_parts);

    for (int l = 0; l < cfg_.dec_layers; ++l) {
      std::string p = "dec.L" + std::to_string(l) + ".";
      H u = ln(b, h, p + "ln1");
      h = b.add(h, mha(b, u, u, p + "self"));
      h = b.add(h, mha(b, ln(b, h, p + "ln2"), summaries, p + "cross"));
      H gb = b.linear(cond, W(b, p + "film.w"), W(b, p + "film.b"));
      H gamma = b.slice_cols(gb, 0, cfg_.d_model);
      H beta = b.slice_cols(gb, cfg_.d_model, 2 * cfg_.d_model);
      H v = ln(b, h, p + "ln3");
      v = b.add(b.hadamard(v, b.add_const(gamma, 1.0)), beta);
      h = b.add(h, ff(b, v, p + "ff"));
    }
    H out = b.linear(ln(b, h, "head.ln"), W(b, "head.w"), W(b, "head.b"));
    return b.reshape(out, cfg_.r_max, cfg_.d_params);
  }

  template <typename B>
  typename B::H velocity_h(B& b, typename B::H summaries,
                           const Tensor<float>& z_masked,
                           const Tensor<float>& mask, double t,
                           int fam) const {
    auto tf = build_tokens(z_masked, mask, t);
    return decode_tokens(b, summaries, tf, fam);
  }

  // ---- float convenience paths ----

  Tensor<float> summaries(const Tensor<float>& X, const Tensor<float>& Y,
                          int fam) const {
    PlainBackend<float> b(store_);
    return encode_h(b, X, Y, fam);
  }

  Tensor<float> trial_states(const Tensor<float>& X, const Tensor<float>& Y,
                             int fam) const {
    PlainBackend<float> b(store_);
    return encode_blocks_h(b, X, Y, fam);
  }

  Tensor<float> velocity(const Tensor<float>& summaries,
                         const Tensor<float>& z_masked,
                         const Tensor<float>& mask, double t, int fam) const {
    PlainBackend<float> b(store_);
    return velocity_h(b, summaries, z_masked, mask, t, fam);
  }

  // Multi-head attention; output width is set by the block's wo projection.
  template <typename B>
  typename B::H mha(B& b, typename B::H q_in, typename B::H kv_in,
                    const std::string& p) const {
    using H = typename B::H;
    const int dm = cfg_.d_model, nh = cfg_.heads, dk = dm / nh;
    H q = b.linear(q_in, W(b, p + ".wq"), W(b, p + ".bq"));
    H k = b.linear(kv_in, W(b, p + ".wk"), W(b, p + ".bk"));
    H v = b.linear(kv_in, W(b, p + ".wv"), W(b, p + ".bv"));
    std::vector<H> heads;
    heads.reserve(nh);
    for (int h = 0; h < nh; ++h) {
      H qh = b.slice_cols(q, h * dk, (h + 1) * dk);
      H kh = b.slice_cols(k, h * dk, (h + 1) * dk);
      H vh = b.slice_cols(v, h * dk, (h + 1) * dk);
      H scores = b.scale(b.matmul(qh, b.transpose(kh)), 1.0 / std::sqrt(dk));
      heads.push_back(b.matmul(b.softmax_rows(scores), vh));
    }
    return b.linear(b.concat_cols(heads), W(b, p + ".wo"), W(b, p + ".bo"));
  }

 private:
  NetConfig cfg_;
  ParamStore store_;

  int fam_index(int fam) const {
    if (fam < 0 || fam >= cfg_.n_families)
      throw std::invalid_argument("family index out of roster");
    return fam;
  }

  template <typename B>
  typename B::H W(B& b, const std::string& name) const {
    return b.weight(store_.index(name));
  }

  template <typename B>
  typename B::H fam_row(B& b, int fam) const {
    return b.gather_rows(W(b, "fam.table"), {fam_index(fam)});
  }

  template <typename B>
  typename B::H ln(B& b, typename B::H x, const std::string& p) const {
    return b.add_rowvec(b.mul_rowvec(b.layer_norm(x), W(b, p + ".g")),
                        W(b, p + ".b"));
  }

  template <typename B>
  typename B::H ff(B& b, typename B::H x, const std::string& p) const {
    return b.linear(b.gelu(b.linear(x, W(b, p + ".w1"), W(b, p + ".b1"))),
                    W(b, p + ".w2"), W(b, p + ".b2"));
  }

  static Tensor<float> hcat(const Tensor<float>& a, const Tensor<float>& c) {
    Tensor<float> out(a.rows(), a.cols() + c.cols());
    out.m().leftCols(a.cols()) = a.m();
    out.m().rightCols(c.cols()) = c.m();
    return out;
  }

  static Tensor<float> first_col(const Tensor<float>& x) {
    Tensor<float> out(x.rows(), 1);
    out.m() = x.m().col(0);
    return out;
  }

  // ---- construction ----

  void build(Rng& rng) {
    const int dm = cfg_.d_model, ff_d = cfg_.ff_mult * dm;
    const int sd = cfg_.seed_dim, ff_s = cfg_.ff_mult * sd;

    add_linear("enc.in", cfg_.r_max + cfg_.c_obs_max, dm, rng);
    if (cfg_.use_family()) {
      store_.add("fam.table",
                 Tensor<float>::randn(cfg_.n_families, cfg_.fam_dim, rng, 0.02));
      add_matrix("enc.fam.w", cfg_.fam_dim, dm, rng);
      add_matrix("dec.fam.w", cfg_.fam_dim, dm, rng);
    }
    for (int l = 0; l < cfg_.enc_layers; ++l) {
      std::string p = "enc.L" + std::to_string(l) + ".";
      add_lnorm(p + "ln1", dm);
      add_attn(p + "attn", dm, dm, dm, rng);
      add_lnorm(p + "ln2", dm);
      add_ff(p + "ff", dm, ff_d, dm, rng);
    }
    store_.add("pool.seeds",
               Tensor<float>::randn(cfg_.seed_tokens, sd, rng,
                                    1.0 / std::sqrt(double(sd))));
    add_lnorm("pool.ln", dm);
    add_attn("pool.attn", sd, dm, sd, rng);
    add_lnorm("pool.ln2", sd);
    add_ff("pool.ff", sd, ff_s, sd, rng);

    if (cfg_.concat_positional) {
      add_linear("dec.in", 1 + 2 * cfg_.pos_dim, dm, rng);
    } else {
      add_matrix("dec.z.w", 1, dm, rng);
      store_.add("dec.in.b", Tensor<float>::zeros(1, dm));
      add_matrix("dec.pos.w", 2 * cfg_.pos_dim, dm, rng);
    }
    store_.add("dec.mask.table", Tensor<float>::randn(2, dm, rng, 0.02));
    store_.add("dec.maskc.table",
               Tensor<float>::randn(2, NetConfig::mask_cond_dim, rng, 0.02));
    for (int l = 0; l < cfg_.dec_layers; ++l) {
      std::string p = "dec.L" + std::to_string(l) + ".";
      add_lnorm(p + "ln1", dm);
      add_attn(p + "self", dm, dm, dm, rng);
      add_lnorm(p + "ln2", dm);
      add_attn(p + "cross", dm, cfg_.seed_dim, dm, rng);
      add_lnorm(p + "ln3", dm);
      store_.add(p + "film.w", Tensor<float>::zeros(cfg_.cond_dim(), 2 * dm));
      store_.add(p + "film.b", Tensor<float>::zeros(1, 2 * dm));
      add_ff(p + "ff", dm, ff_d, dm, rng);
    }
    add_lnorm("head.ln", dm);
    add_linear("head", dm, 1, rng);
  }

  Tensor<float> glorot(int r, int c, Rng& rng) {
    return Tensor<float>::randn(r, c, rng, std::sqrt(2.0 / (r + c)));
  }
  void add_matrix(const std::string& n, int r, int c, Rng& rng) {
    store_.add(n, glorot(r, c, rng));
  }
  void add_linear(const std::string& n, int in, int out, Rng& rng) {
    store_.add(n + ".w", glorot(in, out, rng));
    store_.add(n + ".b", Tensor<float>::zeros(1, out));
  }
  void add_lnorm(const std::string& n, int dim) {
    store_.add(n + ".g", Tensor<float>::full(1, dim, 1.0f));
    store_.add(n + ".b", Tensor<float>::zeros(1, dim));
  }
  void add_ff(const std::string& n, int in, int hidden, int out, Rng& rng) {
    store_.add(n + ".w1", glorot(in, hidden, rng));
    store_.add(n + ".b1", Tensor<float>::zeros(1, hidden));
    store_.add(n + ".w2", glorot(hidden, out, rng));
    store_.add(n + ".b2", Tensor<float>::zeros(1, out));
  }
  // q_dim: query input dim; kv_dim: key/value input dim; out: output dim.
  void add_attn(const std::string& n, int q_dim, int kv_dim, int out,
                Rng& rng) {
    const int dm = cfg_.d_model;
    store_.add(n + ".wq", glorot(q_dim, dm, rng));
    store_.add(n + ".bq", Tensor<float>::zeros(1, dm));
    store_.add(n + ".wk", glorot(kv_dim, dm, rng));
    store_.add(n + ".bk", Tensor<float>::zeros(1, dm));
    store_.add(n + ".wv", glorot(kv_dim, dm, rng));
    store_.add(n + ".bv", Tensor<float>::zeros(1, dm));
    store_.add(n + ".wo", glorot(dm, out, rng));
    store_.add(n + ".bo", Tensor<float>::zeros(1, out));
  }
};

}  // namespace mfsm
