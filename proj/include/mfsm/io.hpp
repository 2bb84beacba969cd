#pragma once

#include <bit>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/config.hpp"

namespace mfsm {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Byte-explicit little-endian encoding, independent of host layout. Files
// written on any machine read back identically on any other.
namespace wire {

inline void put_u8(std::string& out, std::uint8_t v) {
  out.push_back(static_cast<char>(v));
}
inline void put_u16(std::string& out, std::uint16_t v) {
  for (int k = 0; k < 2; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}
inline void put_u32(std::string& out, std::uint32_t v) {
  for (int k = 0; k < 4; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
  for (int k = 0; k < 8; ++k) out.push_back(static_cast<char>((v >> (8 * k)) & 0xFF));
}
inline void put_f32(std::string& out, float v) {
  put_u32(out, std::bit_cast<std::uint32_t>(v));
}
inline void put_f64(std::string& out, double v) {
  put_u64(out, std::bit_cast<std::uint64_t>(v));
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;

  void need(std::size_t n) const {
    if (pos + n > buf.size()) throw IoError("truncated file");
  }
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf[pos++]);
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = 0;
    for (int k = 0; k < 2; ++k)
      v |= static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * k);
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k)
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * k);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k)
      v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf[pos++]))
           << (8 * k);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
  void done() const {
    if (pos != buf.size()) throw IoError("trailing bytes in file");
  }
};

inline void put_tensor(std::string& out, const Tensor<float>& t) {
  for (std::size_t k = 0; k < t.size(); ++k) put_f32(out, t.at_flat(k));
}

inline Tensor<float> get_tensor(Reader& r, int rows, int cols) {
  Tensor<float> t(rows, cols);
  for (std::size_t k = 0; k < t.size(); ++k) t.at_flat(k) = r.f32();
  return t;
}

}  // namespace wire

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw IoError("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  std::ostringstream body;
  body << f.rdbuf();
  return body.str();
}

inline void expect_magic(wire::Reader& r, const char* magic) {
  if (r.bytes(4) != std::string(magic, 4))
    throw IoError(std::string("bad magic, expected ") + magic);
}

// ---------------------------------------------------------------------------
// dataset container

struct DatasetFile {
  DatasetItem item;
  std::uint64_t digest = 0;
  std::uint64_t master_seed = 0;
};

inline std::string encode_dataset(const DatasetItem& item, std::uint64_t digest,
                                  std::uint64_t master_seed) {
  std::string out;
  out += "MFSM";
  wire::put_u16(out, 1);
  wire::put_u64(out, digest);
  wire::put_u64(out, master_seed);
  wire::put_u64(out, item.seed);
  wire::put_u8(out, static_cast<std::uint8_t>(item.family));
  wire::put_u8(out, 0);
  wire::put_u32(out, static_cast<std::uint32_t>(item.N));
  wire::put_u32(out, static_cast<std::uint32_t>(item.R));
  wire::put_u32(out, static_cast<std::uint32_t>(item.D));
  wire::put_u32(out, static_cast<std::uint32_t>(item.X.cols()));
  wire::put_u32(out, static_cast<std::uint32_t>(item.Y.cols()));
  wire::put_u32(out, static_cast<std::uint32_t>(item.censored));
  wire::put_u32(out, static_cast<std::uint32_t>(item.attempts));
  wire::put_u8(out, static_cast<std::uint8_t>(item.columns.size()));
  for (const auto& col : item.columns) {
    wire::put_u8(out, static_cast<std::uint8_t>(col.kind));
    wire::put_u32(out, static_cast<std::uint32_t>(col.parent_i));
    wire::put_u32(out, static_cast<std::uint32_t>(col.parent_j));
  }
  wire::put_tensor(out, item.X);
  wire::put_tensor(out, item.B);
  wire::put_tensor(out, item.M);
  wire::put_tensor(out, item.Y);
  return out;
}

inline void write_dataset(const std::string& path, const DatasetItem& item,
                          std::uint64_t digest, std::uint64_t master_seed) {
  write_file(path, encode_dataset(item, digest, master_seed));
}

inline DatasetFile decode_dataset(const std::string& bytes) {
  wire::Reader r{bytes};
  expect_magic(r, "MFSM");
  if (r.u16() != 1) throw IoError("unsupported dataset version");
  DatasetFile f;
  f.digest = r.u64();
  f.master_seed = r.u64();
  auto& it = f.item;
  it.seed = r.u64();
  it.family = static_cast<Family>(r.u8());
  family_name(it.family);  // rejects unknown codes
  r.u8();
  it.N = static_cast<int>(r.u32());
  it.R = static_cast<int>(r.u32());
  it.D = static_cast<int>(r.u32());
  const int r_max = static_cast<int>(r.u32());
  const int c_obs = static_cast<int>(r.u32());
  it.censored = static_cast<int>(r.u32());
  it.attempts = static_cast<int>(r.u32());
  const int ncols = r.u8();
  it.columns.resize(ncols);
  for (auto& col : it.columns) {
    col.kind = static_cast<ColKind>(r.u8());
    col.parent_i = static_cast<int>(r.u32());
    col.parent_j = static_cast<int>(r.u32());
  }
  it.X = wire::get_tensor(r, it.N, r_max);
  it.B = wire::get_tensor(r, r_max, it.D);
  it.M = wire::get_tensor(r, r_max, it.D);
  it.Y = wire::get_tensor(r, it.N, c_obs);
  r.done();
  return f;
}

inline DatasetFile read_dataset(const std::string& path) {
  return decode_dataset(read_file(path));
}

// ---------------------------------------------------------------------------
// checkpoint container

struct CheckpointMeta {
  std::uint64_t digest = 0;
  std::uint64_t master_seed = 0;
  Scope scope = Scope::family;
  std::vector<Family> families;
  int epoch = 0;  // last completed epoch
  double best_loss = 0;
  int best_epoch = 0;
};

struct CheckpointFile {
  CheckpointMeta meta;
  std::vector<std::string> names;
  std::vector<Tensor<float>> values;
  std::vector<Tensor<float>> m1, m2;  // empty when the optimizer never ran
  long adam_t = 0;
  long adam_skipped = 0;
};

inline std::string encode_checkpoint(const VelocityNet& net,
                                     const Adam<float>& opt,
                                     const CheckpointMeta& meta) {
  const auto& ps = net.params();
  const auto& m1 = opt.moments1();
  const auto& m2 = opt.moments2();
  if (!m1.empty() && static_cast<int>(m1.size()) != ps.size())
    throw IoError("optimizer state does not match the parameter list");

  std::string out;
  out += "MFCK";
  wire::put_u16(out, 1);
  wire::put_u64(out, meta.digest);
  wire::put_u64(out, meta.master_seed);
  wire::put_u8(out, static_cast<std::uint8_t>(meta.scope));
  wire::put_u8(out, static_cast<std::uint8_t>(meta.families.size()));
  for (Family f : meta.families)
    wire::put_u8(out, static_cast<std::uint8_t>(f));
  wire::put_u32(out, static_cast<std::uint32_t>(meta.epoch));
  wire::put_f64(out, meta.best_loss);
  wire::put_u32(out, static_cast<std::uint32_t>(meta.best_epoch));
  wire::put_u64(out, static_cast<std::uint64_t>(opt.step_count()));
  wire::put_u64(out, static_cast<std::uint64_t>(opt.skipped_steps()));
  wire::put_u8(out, m1.empty() ? 0 : 1);
  wire::put_u32(out, static_cast<std::uint32_t>(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    const auto& name = ps.name(i);
    const auto& v = ps.value(i);
    wire::put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    wire::put_u32(out, static_cast<std::uint32_t>(v.rows()));
    wire::put_u32(out, static_cast<std::uint32_t>(v.cols()));
  }
  for (int i = 0; i < ps.size(); ++i) wire::put_tensor(out, ps.value(i));
  if (!m1.empty()) {
    for (const auto& t : m1) wire::put_tensor(out, t);
    for (const auto& t : m2) wire::put_tensor(out, t);
  }
  return out;
}

inline void write_checkpoint(const std::string& path, const VelocityNet& net,
                             const Adam<float>& opt,
                             const CheckpointMeta& meta) {
  write_file(path, encode_checkpoint(net, opt, meta));
}

inline CheckpointFile decode_checkpoint(const std::string& bytes) {
  wire::Reader r{bytes};
  expect_magic(r, "MFCK");
  if (r.u16() != 1) throw IoError("unsupported checkpoint version");
  CheckpointFile f;
  f.meta.digest = r.u64();
  f.meta.master_seed = r.u64();
  f.meta.scope = static_cast<Scope>(r.u8());
  scope_name(f.meta.scope);
  const int nfam = r.u8();
  for (int k = 0; k < nfam; ++k) {
    const auto fam = static_cast<Family>(r.u8());
    family_name(fam);
    f.meta.families.push_back(fam);
  }
  f.meta.epoch = static_cast<int>(r.u32());
  f.meta.best_loss = r.f64();
  f.meta.best_epoch = static_cast<int>(r.u32());
  f.adam_t = static_cast<long>(r.u64());
  f.adam_skipped = static_cast<long>(r.u64());
  const bool has_moments = r.u8() != 0;
  const int n = static_cast<int>(r.u32());
  std::vector<std::pair<int, int>> shapes;
  for (int i = 0; i < n; ++i) {
    const int len = r.u16();
    f.names.push_back(r.bytes(static_cast<std::size_t>(len)));
    const int rows = static_cast<int>(r.u32());
    const int cols = static_cast<int>(r.u32());
    shapes.emplace_back(rows, cols);
  }
  for (int i = 0; i < n; ++i)
    f.values.push_back(wire::get_tensor(r, shapes[i].first, shapes[i].second));
  if (has_moments) {
    for (int i = 0; i < n; ++i)
      f.m1.push_back(wire::get_tensor(r, shapes[i].first, shapes[i].second));
    for (int i = 0; i < n; ++i)
      f.m2.push_back(wire::get_tensor(r, shapes[i].first, shapes[i].second));
  }
  r.done();
  return f;
}

inline CheckpointFile read_checkpoint(const std::string& path) {
  return decode_checkpoint(read_file(path));
}

// Loads weights and optimizer state into a live network. The parameter
// roster must match name for name and shape for shape; a mismatch means the
// checkpoint belongs to a different architecture.
inline void restore_checkpoint(const CheckpointFile& f, VelocityNet& net,
                               Adam<float>& opt) {
  auto& ps = net.params();
  if (static_cast<int>(f.names.size()) != ps.size())
    throw IoError("checkpoint carries " + std::to_string(f.names.size()) +
                  " tensors, network has " + std::to_string(ps.size()));
  for (int i = 0; i < ps.size(); ++i) {
    if (f.names[i] != ps.name(i))
      throw IoError("checkpoint tensor '" + f.names[i] +
                    "' does not match network tensor '" + ps.name(i) + "'");
    if (!f.values[i].same_shape(ps.value(i)))
      throw IoError("checkpoint tensor '" + f.names[i] + "' has shape " +
                    shape_str(f.values[i]) + ", network expects " +
                    shape_str(ps.value(i)));
    ps.value(i) = f.values[i];
  }
  opt.restore(f.m1, f.m2, f.adam_t, f.adam_skipped);
}

// ---------------------------------------------------------------------------
// posterior draws container

struct DrawsFile {
  PosteriorDraws draws;
  std::uint64_t digest = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t dataset_seed = 0;
};

inline std::string encode_draws(const PosteriorDraws& d, std::uint64_t digest,
                                std::uint64_t master_seed,
                                std::uint64_t dataset_seed) {
  std::string out;
  out += "MFPD";
  wire::put_u16(out, 1);
  wire::put_u64(out, digest);
  wire::put_u64(out, master_seed);
  wire::put_u64(out, dataset_seed);
  wire::put_u64(out, d.seed);
  wire::put_f64(out, d.dt);
  wire::put_u32(out, static_cast<std::uint32_t>(d.rows_grid));
  wire::put_u32(out, static_cast<std::uint32_t>(d.cols_grid));
  wire::put_u32(out, static_cast<std::uint32_t>(d.flagged));
  wire::put_u32(out, static_cast<std::uint32_t>(d.active_cells.size()));
  wire::put_u32(out, static_cast<std::uint32_t>(d.draws.rows()));
  for (int cell : d.active_cells)
    wire::put_u32(out, static_cast<std::uint32_t>(cell));
  wire::put_tensor(out, d.draws);
  return out;
}

inline void write_draws(const std::string& path, const PosteriorDraws& d,
                        std::uint64_t digest, std::uint64_t master_seed,
                        std::uint64_t dataset_seed) {
  write_file(path, encode_draws(d, digest, master_seed, dataset_seed));
}

inline DrawsFile decode_draws(const std::string& bytes) {
  wire::Reader r{bytes};
  expect_magic(r, "MFPD");
  if (r.u16() != 1) throw IoError("unsupported draws version");
  DrawsFile f;
  f.digest = r.u64();
  f.master_seed = r.u64();
  f.dataset_seed = r.u64();
  f.draws.seed = r.u64();
  f.draws.dt = r.f64();
  f.draws.rows_grid = static_cast<int>(r.u32());
  f.draws.cols_grid = static_cast<int>(r.u32());
  f.draws.flagged = static_cast<int>(r.u32());
  const int n_active = static_cast<int>(r.u32());
  const int kept = static_cast<int>(r.u32());
  for (int k = 0; k < n_active; ++k)
    f.draws.active_cells.push_back(static_cast<int>(r.u32()));
  f.draws.draws = wire::get_tensor(r, kept, n_active);
  r.done();
  return f;
}

inline DrawsFile read_draws(const std::string& path) {
  return decode_draws(read_file(path));
}

}  // namespace mfsm
