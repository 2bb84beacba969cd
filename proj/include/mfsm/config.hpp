#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsm/diagnostics.hpp"

namespace mfsm {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Everything one run needs, in one flat structure with working defaults.
// The master seed is the only source of randomness downstream.
struct RunConfig {
  // [run]
  Scope scope = Scope::family;
  std::vector<Family> families = {Family::ddm};
  std::optional<Preset> preset;
  std::string profile = "desk";  // desk | paper
  std::string out_dir = "out";
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;
  // Set by the parser when the file names out_dir; an explicit file value
  // outranks the MFSM_OUT environment fallback. Never serialized.
  bool out_dir_from_file = false;

  // [structure] and [simulator]
  StructurePrior structure;
  SimSettings sim;
  bool shared_drift_perturbation = true;
  double max_censor_rate = 0.01;
  int max_resample_attempts = 10;

  // [train]
  int epochs = 50;
  int steps_per_epoch = 100;
  int batch_size = 64;
  double lr = 1e-4;
  int warmup_steps = 100;
  int checkpoint_every = 10;

  // [sampler]
  SamplerSpec sampler;

  // [eval]
  int n_test = 50;
  DiagnosticsOptions eval;

  void validate() const {
    if (profile != "desk" && profile != "paper")
      throw ConfigError("profile must be desk or paper");
    if (scope == Scope::instance && !preset)
      throw ConfigError("instance scope pins a preset; none configured");
    if (threads < 1) throw ConfigError("threads must be >= 1");
    if (n_test < 0) throw ConfigError("n_test must be >= 0");
    to_meta().validate();
    to_train_spec().validate();
    sampler.validate();
  }

  MetaConfig to_meta() const {
    MetaConfig m;
    // Instance scope trains one pinned configuration; the simulator draws
    // masks the same way a family run would, just never varying them.
    m.scope = scope == Scope::instance ? Scope::family : scope;
    m.families = families;
    m.preset = preset;
    m.structure = structure;
    m.sim = sim;
    m.shared_drift_perturbation = shared_drift_perturbation;
    m.max_censor_rate = max_censor_rate;
    m.max_resample_attempts = max_resample_attempts;
    m.seed = seed;
    return m;
  }

  TrainSpec to_train_spec() const {
    TrainSpec t;
    t.epochs = epochs;
    t.steps_per_epoch = steps_per_epoch;
    t.batch_size = batch_size;
    t.lr = lr;
    t.warmup_steps = warmup_steps;
    t.checkpoint_every = checkpoint_every;
    t.seed = seed;
    t.scope = to_meta().scope;
    return t;
  }

  NetConfig to_net_config() const {
    const auto m = to_meta();
    return profile == "paper" ? full_net_config(m) : desk_net_config(m);
  }

  SamplerSpec to_sampler_spec() const {
    SamplerSpec s = sampler;
    s.seed = seed;
    return s;
  }
};

namespace detail {

inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

struct ConfigValue {
  std::string text;
  int line = 0;
};

// Section -> key -> value, with source lines kept for diagnostics.
using ConfigMap = std::map<std::string, std::map<std::string, ConfigValue>>;

inline void parse_into(const std::string& text, const std::string& base_dir,
                       ConfigMap& out, int depth) {
  if (depth > 8) throw ConfigError("config includes nested too deep");
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("line " + std::to_string(lineno) +
                          ": unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }

    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) +
                        ": expected key = value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError("line " + std::to_string(lineno) + ": empty key");

    if (key == "include") {
      const std::string path =
          base_dir.empty() || val.front() == '/' ? val : base_dir + "/" + val;
      std::ifstream f(path);
      if (!f) throw ConfigError("line " + std::to_string(lineno) +
                                ": cannot open include '" + path + "'");
      std::ostringstream body;
      body << f.rdbuf();
      const auto slash = path.find_last_of('/');
      parse_into(body.str(), slash == std::string::npos
                                 ? std::string()
                                 : path.substr(0, slash),
                 out, depth + 1);
      continue;
    }
    out[section][key] = {val, lineno};
  }
}

inline std::uint64_t parse_u64(const std::string& s, const std::string& where) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(where + ": '" + s + "' is not an unsigned integer");
  return v;
}

inline int parse_int(const std::string& s, const std::string& where) {
  int v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(where + ": '" + s + "' is not an integer");
  return v;
}

inline double parse_double(const std::string& s, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError(where + ": '" + s + "' is not a number");
  }
}

inline bool parse_bool(const std::string& s, const std::string& where) {
  if (s == "1" || s == "true" || s == "on") return true;
  if (s == "0" || s == "false" || s == "off") return false;
  throw ConfigError(where + ": '" + s + "' is not a boolean");
}

}  // namespace detail

inline RunConfig parse_config_text(const std::string& text,
                                   const std::string& base_dir = "") {
  detail::ConfigMap map;
  detail::parse_into(text, base_dir, map, 0);

  RunConfig c;
  auto take = [&map](const std::string& sec, const std::string& key)
      -> std::optional<std::string> {
    auto s = map.find(sec);
    if (s == map.end()) return std::nullopt;
    auto k = s->second.find(key);
    if (k == s->second.end()) return std::nullopt;
    auto v = k->second.text;
    s->second.erase(k);
    return v;
  };
  auto where = [](const std::string& sec, const std::string& key) {
    return "[" + sec + "] " + key;
  };

  if (auto v = take("run", "scope")) c.scope = parse_scope(*v);
  if (auto v = take("run", "families")) {
    c.families.clear();
    std::istringstream in(*v);
    std::string item;
    while (std::getline(in, item, ','))
      c.families.push_back(parse_family(detail::trim(item)));
    if (c.families.empty()) throw ConfigError("[run] families: empty list");
  }
  if (auto v = take("run", "preset"))
    c.preset = *v == "none" ? std::nullopt
                            : std::optional<Preset>(parse_preset(*v));
  if (auto v = take("run", "profile")) c.profile = *v;
  if (auto v = take("run", "out_dir")) {
    c.out_dir = *v;
    c.out_dir_from_file = true;
  }
  if (auto v = take("run", "seed")) c.seed = detail::parse_u64(*v, where("run", "seed"));
  if (auto v = take("run", "threads"))
    c.threads = detail::parse_int(*v, where("run", "threads"));
  if (auto v = take("run", "deterministic"))
    c.deterministic = detail::parse_bool(*v, where("run", "deterministic"));

  auto& st = c.structure;
  if (auto v = take("structure", "n_min"))
    st.n_min = detail::parse_int(*v, where("structure", "n_min"));
  if (auto v = take("structure", "n_max"))
    st.n_max = detail::parse_int(*v, where("structure", "n_max"));
  if (auto v = take("structure", "r_max"))
    st.r_max = detail::parse_int(*v, where("structure", "r_max"));
  if (auto v = take("structure", "c_obs_max"))
    st.c_obs_max = detail::parse_int(*v, where("structure", "c_obs_max"));
  if (auto v = take("structure", "p_continuous"))
    st.p_continuous = detail::parse_double(*v, where("structure", "p_continuous"));
  if (auto v = take("structure", "p_categorical"))
    st.p_categorical = detail::parse_double(*v, where("structure", "p_categorical"));
  if (auto v = take("structure", "p_interaction"))
    st.p_interaction = detail::parse_double(*v, where("structure", "p_interaction"));
  if (auto v = take("structure", "p_active"))
    st.p_active = detail::parse_double(*v, where("structure", "p_active"));
  if (auto v = take("structure", "p_param_active"))
    st.p_param_active = detail::parse_double(*v, where("structure", "p_param_active"));

  if (auto v = take("simulator", "dt"))
    c.sim.dt = detail::parse_double(*v, where("simulator", "dt"));
  if (auto v = take("simulator", "t_max"))
    c.sim.t_max = detail::parse_double(*v, where("simulator", "t_max"));
  if (auto v = take("simulator", "shared_drift_perturbation"))
    c.shared_drift_perturbation =
        detail::parse_bool(*v, where("simulator", "shared_drift_perturbation"));
  if (auto v = take("simulator", "max_censor_rate"))
    c.max_censor_rate =
        detail::parse_double(*v, where("simulator", "max_censor_rate"));
  if (auto v = take("simulator", "max_resample_attempts"))
    c.max_resample_attempts =
        detail::parse_int(*v, where("simulator", "max_resample_attempts"));

  if (auto v = take("train", "epochs"))
    c.epochs = detail::parse_int(*v, where("train", "epochs"));
  if (auto v = take("train", "steps_per_epoch"))
    c.steps_per_epoch = detail::parse_int(*v, where("train", "steps_per_epoch"));
  if (auto v = take("train", "batch_size"))
    c.batch_size = detail::parse_int(*v, where("train", "batch_size"));
  if (auto v = take("train", "lr"))
    c.lr = detail::parse_double(*v, where("train", "lr"));
  if (auto v = take("train", "warmup_steps"))
    c.warmup_steps = detail::parse_int(*v, where("train", "warmup_steps"));
  if (auto v = take("train", "checkpoint_every"))
    c.checkpoint_every = detail::parse_int(*v, where("train", "checkpoint_every"));

  if (auto v = take("sampler", "dt"))
    c.sampler.dt = detail::parse_double(*v, where("sampler", "dt"));
  if (auto v = take("sampler", "draws"))
    c.sampler.draws = detail::parse_int(*v, where("sampler", "draws"));

  if (auto v = take("eval", "n_test"))
    c.n_test = detail::parse_int(*v, where("eval", "n_test"));
  if (auto v = take("eval", "quantiles"))
    c.eval.num_quantiles = detail::parse_int(*v, where("eval", "quantiles"));
  if (auto v = take("eval", "prior_mc_draws"))
    c.eval.prior_mc_draws = detail::parse_int(*v, where("eval", "prior_mc_draws"));
  if (auto v = take("eval", "bootstrap_resamples"))
    c.eval.bootstrap_resamples =
        detail::parse_int(*v, where("eval", "bootstrap_resamples"));
  if (auto v = take("eval", "band_sims"))
    c.eval.band_sims = detail::parse_int(*v, where("eval", "band_sims"));
  if (auto v = take("eval", "c2st_folds"))
    c.eval.c2st.folds = detail::parse_int(*v, where("eval", "c2st_folds"));
  if (auto v = take("eval", "c2st_hidden_units"))
    c.eval.c2st.hidden_units =
        detail::parse_int(*v, where("eval", "c2st_hidden_units"));
  if (auto v = take("eval", "c2st_standardize"))
    c.eval.c2st.standardize =
        detail::parse_bool(*v, where("eval", "c2st_standardize"));

  // Anything left over was never consumed; naming it beats ignoring it.
  for (const auto& [sec, keys] : map)
    for (const auto& [key, val] : keys)
      throw ConfigError("line " + std::to_string(val.line) + ": unknown key '" +
                        key + "' in [" + sec + "]");
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream body;
  body << f.rdbuf();
  const auto slash = path.find_last_of('/');
  return parse_config_text(
      body.str(),
      slash == std::string::npos ? std::string() : path.substr(0, slash));
}

// Canonical form: fixed section order, keys sorted inside each section,
// every field emitted. Parsing this text reproduces the structure exactly.
inline std::string serialize_config(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "[run]\n";
  os << "deterministic = " << (c.deterministic ? 1 : 0) << '\n';
  os << "families = ";
  for (std::size_t k = 0; k < c.families.size(); ++k)
    os << (k ? "," : "") << family_name(c.families[k]);
  os << '\n';
  os << "out_dir = " << c.out_dir << '\n';
  os << "preset = " << (c.preset ? preset_name(*c.preset) : "none") << '\n';
  os << "profile = " << c.profile << '\n';
  os << "scope = " << scope_name(c.scope) << '\n';
  os << "seed = " << c.seed << '\n';
  os << "threads = " << c.threads << '\n';

  os << "\n[structure]\n";
  os << "c_obs_max = " << c.structure.c_obs_max << '\n';
  os << "n_max = " << c.structure.n_max << '\n';
  os << "n_min = " << c.structure.n_min << '\n';
  os << "p_active = " << fmt_double(c.structure.p_active) << '\n';
  os << "p_categorical = " << fmt_double(c.structure.p_categorical) << '\n';
  os << "p_continuous = " << fmt_double(c.structure.p_continuous) << '\n';
  os << "p_interaction = " << fmt_double(c.structure.p_interaction) << '\n';
  os << "p_param_active = " << fmt_double(c.structure.p_param_active) << '\n';
  os << "r_max = " << c.structure.r_max << '\n';

  os << "\n[simulator]\n";
  os << "dt = " << fmt_double(c.sim.dt) << '\n';
  os << "max_censor_rate = " << fmt_double(c.max_censor_rate) << '\n';
  os << "max_resample_attempts = " << c.max_resample_attempts << '\n';
  os << "shared_drift_perturbation = " << (c.shared_drift_perturbation ? 1 : 0)
     << '\n';
  os << "t_max = " << fmt_double(c.sim.t_max) << '\n';

  os << "\n[train]\n";
  os << "batch_size = " << c.batch_size << '\n';
  os << "checkpoint_every = " << c.checkpoint_every << '\n';
  os << "epochs = " << c.epochs << '\n';
  os << "lr = " << fmt_double(c.lr) << '\n';
  os << "steps_per_epoch = " << c.steps_per_epoch << '\n';
  os << "warmup_steps = " << c.warmup_steps << '\n';

  os << "\n[sampler]\n";
  os << "draws = " << c.sampler.draws << '\n';
  os << "dt = " << fmt_double(c.sampler.dt) << '\n';

  os << "\n[eval]\n";
  os << "band_sims = " << c.eval.band_sims << '\n';
  os << "bootstrap_resamples = " << c.eval.bootstrap_resamples << '\n';
  os << "c2st_folds = " << c.eval.c2st.folds << '\n';
  os << "c2st_hidden_units = " << c.eval.c2st.hidden_units << '\n';
  os << "c2st_standardize = " << (c.eval.c2st.standardize ? 1 : 0) << '\n';
  os << "n_test = " << c.n_test << '\n';
  os << "prior_mc_draws = " << c.eval.prior_mc_draws << '\n';
  os << "quantiles = " << c.eval.num_quantiles << '\n';
  return os.str();
}

// Identity of the modeled experiment: what the network was trained on and
// how. Output paths, thread counts, sampler and report settings can change
// without orphaning a checkpoint, so they stay out of the digest. The master
// seed travels beside the digest in every file header rather than inside it.
inline std::string digest_text(const RunConfig& c) {
  using detail::fmt_double;
  std::ostringstream os;
  os << "scope = " << scope_name(c.scope) << '\n';
  os << "families = ";
  for (std::size_t k = 0; k < c.families.size(); ++k)
    os << (k ? "," : "") << family_name(c.families[k]);
  os << '\n';
  os << "preset = " << (c.preset ? preset_name(*c.preset) : "none") << '\n';
  os << "profile = " << c.profile << '\n';
  os << "c_obs_max = " << c.structure.c_obs_max << '\n';
  os << "n_max = " << c.structure.n_max << '\n';
  os << "n_min = " << c.structure.n_min << '\n';
  os << "p_active = " << fmt_double(c.structure.p_active) << '\n';
  os << "p_categorical = " << fmt_double(c.structure.p_categorical) << '\n';
  os << "p_continuous = " << fmt_double(c.structure.p_continuous) << '\n';
  os << "p_interaction = " << fmt_double(c.structure.p_interaction) << '\n';
  os << "p_param_active = " << fmt_double(c.structure.p_param_active) << '\n';
  os << "r_max = " << c.structure.r_max << '\n';
  os << "sim_dt = " << fmt_double(c.sim.dt) << '\n';
  os << "sim_t_max = " << fmt_double(c.sim.t_max) << '\n';
  os << "max_censor_rate = " << fmt_double(c.max_censor_rate) << '\n';
  os << "max_resample_attempts = " << c.max_resample_attempts << '\n';
  os << "shared_drift_perturbation = " << (c.shared_drift_perturbation ? 1 : 0)
     << '\n';
  os << "batch_size = " << c.batch_size << '\n';
  os << "epochs = " << c.epochs << '\n';
  os << "lr = " << fmt_double(c.lr) << '\n';
  os << "steps_per_epoch = " << c.steps_per_epoch << '\n';
  os << "warmup_steps = " << c.warmup_steps << '\n';
  return os.str();
}

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char b : s) {
    h ^= b;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::uint64_t config_digest(const RunConfig& c) {
  return fnv1a64(digest_text(c));
}

}  // namespace mfsm
