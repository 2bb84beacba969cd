#pragma once

#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <string>
#include <vector>

#include "mfsm/gradcheck.hpp"
#include "mfsm/io.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mfsm::cli {

// Carries an exit code chosen at the throw site: 2 config, 3 data, 4 numeric.
struct CliError {
  int code;
  std::string msg;
};

// Held-out data shares the training generator but lives on batch indices no
// training run can reach, so test sets never replay training batches.
constexpr std::uint64_t heldout_offset = 1ULL << 44;

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setfill('0') << std::setw(16) << v;
  return os.str();
}

inline std::string pad5(int k) {
  std::ostringstream os;
  os << std::setfill('0') << std::setw(5) << k;
  return os.str();
}

inline std::string stamp(std::uint64_t digest, std::uint64_t seed) {
  return "# digest=" + hex64(digest) + "\n# seed=" + std::to_string(seed) +
         "\n";
}

inline void ensure_dir(const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw CliError{3, "cannot create output directory '" + dir + "'"};
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw CliError{3, "cannot open for writing: " + path};
  f << text;
  f.flush();
  if (!f) throw CliError{3, "write failed: " + path};
}

// ---------------------------------------------------------------------------
// argument handling

struct ParsedArgs {
  std::string cmd;
  std::map<std::string, std::string> opts;
  std::set<std::string> switches;

  bool has(const std::string& k) const {
    return opts.count(k) || switches.count(k);
  }
  std::string get(const std::string& k, const std::string& fallback = "") const {
    auto it = opts.find(k);
    return it == opts.end() ? fallback : it->second;
  }
};

inline const std::set<std::string> value_flags = {
    "--config", "--seed",       "--preset", "--scope",  "--profile",
    "--threads", "--out",       "--count",  "--data",   "--checkpoint",
    "--corrupt", "--instance",  "--family", "--class"};
inline const std::set<std::string> switch_flags = {
    "--deterministic", "--verify", "--resume", "--allow-budget-mismatch"};

inline ParsedArgs parse_args(int argc, const char* const* argv) {
  ParsedArgs a;
  if (argc < 2) throw CliError{2, "no subcommand; try mfsm_cli help"};
  a.cmd = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string flag = argv[i];
    std::string inline_val;
    const auto eq = flag.find('=');
    bool has_inline = false;
    if (eq != std::string::npos && flag.rfind("--", 0) == 0) {
      inline_val = flag.substr(eq + 1);
      flag = flag.substr(0, eq);
      has_inline = true;
    }
    if (switch_flags.count(flag)) {
      if (has_inline) throw CliError{2, flag + " takes no value"};
      a.switches.insert(flag);
    } else if (value_flags.count(flag)) {
      if (has_inline) {
        a.opts[flag] = inline_val;
      } else {
        if (i + 1 >= argc) throw CliError{2, flag + " needs a value"};
        a.opts[flag] = argv[++i];
      }
    } else {
      throw CliError{2, "unknown flag '" + flag + "'"};
    }
  }
  return a;
}

struct LoadedConfig {
  RunConfig cfg;
  bool out_from_file = false;
};

inline LoadedConfig load_with_overrides(const ParsedArgs& a) {
  LoadedConfig lc;
  if (a.opts.count("--config")) {
    lc.cfg = load_config(a.get("--config"));
    lc.out_from_file = lc.cfg.out_dir_from_file;
  }
  auto& cfg = lc.cfg;
  if (a.opts.count("--seed"))
    cfg.seed = detail::parse_u64(a.get("--seed"), "--seed");
  if (a.opts.count("--preset")) {
    const auto v = a.get("--preset");
    cfg.preset =
        v == "none" ? std::nullopt : std::optional<Preset>(parse_preset(v));
  }
  if (a.opts.count("--scope")) cfg.scope = parse_scope(a.get("--scope"));
  if (a.opts.count("--profile")) cfg.profile = a.get("--profile");
  if (a.opts.count("--threads"))
    cfg.threads = detail::parse_int(a.get("--threads"), "--threads");
  if (a.switches.count("--deterministic")) cfg.deterministic = true;

  // --out beats an explicit config path beats the environment override of
  // the built-in default.
  if (a.opts.count("--out")) {
    cfg.out_dir = a.get("--out");
  } else if (!lc.out_from_file) {
    if (const char* env = std::getenv("MFSM_OUT"); env && *env)
      cfg.out_dir = env;
  }

  cfg.validate();
  if (cfg.deterministic) cfg.threads = 1;
  return lc;
}

inline void apply_thread_cap(const RunConfig& cfg) {
  Eigen::setNbThreads(cfg.threads);
#ifdef _OPENMP
  omp_set_num_threads(cfg.threads);
#endif
}

// ---------------------------------------------------------------------------
// simulate

inline int cmd_simulate(const RunConfig& cfg, const ParsedArgs& a,
                        std::ostream& out) {
  const int count = detail::parse_int(a.get("--count", "1"), "--count");
  if (count < 0) throw CliError{2, "--count must be >= 0"};
  const auto meta = cfg.to_meta();
  const auto digest = config_digest(cfg);
  if (count > 0) ensure_dir(cfg.out_dir);
  for (int k = 0; k < count; ++k) {
    auto batch = make_batch(meta, 1, heldout_offset + static_cast<std::uint64_t>(k));
    const auto path = cfg.out_dir + "/ds_" + pad5(k) + ".mfsm";
    write_dataset(path, batch.items[0], digest, cfg.seed);
  }
  out << "simulate: wrote " << count << " dataset file(s) to " << cfg.out_dir
      << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// train

inline int cmd_train(const RunConfig& cfg, const ParsedArgs& a,
                     std::ostream& out) {
  const auto meta = cfg.to_meta();
  const auto spec = cfg.to_train_spec();
  const auto digest = config_digest(cfg);
  ensure_dir(cfg.out_dir);

  VelocityNet net(cfg.to_net_config(), cfg.seed);
  Adam<float> opt;
  int start_epoch = 1;
  CheckpointMeta meta_ck;
  meta_ck.digest = digest;
  meta_ck.master_seed = cfg.seed;
  meta_ck.scope = meta.scope;
  meta_ck.families = meta.families;

  const auto last_path = cfg.out_dir + "/last.mfck";
  double prior_best = std::numeric_limits<double>::infinity();
  if (a.switches.count("--resume")) {
    auto file = read_checkpoint(last_path);
    if (file.meta.digest != digest)
      throw CliError{3, "resume mismatch: checkpoint digest " +
                            hex64(file.meta.digest) + " vs config " +
                            hex64(digest)};
    if (file.meta.master_seed != cfg.seed)
      throw CliError{3, "resume mismatch: checkpoint seed " +
                            std::to_string(file.meta.master_seed) +
                            " vs config " + std::to_string(cfg.seed)};
    restore_checkpoint(file, net, opt);
    start_epoch = file.meta.epoch + 1;
    meta_ck.best_loss = file.meta.best_loss;
    meta_ck.best_epoch = file.meta.best_epoch;
    if (file.meta.best_epoch > 0) prior_best = file.meta.best_loss;
    if (start_epoch > spec.epochs) {
      out << "train: checkpoint already at epoch " << file.meta.epoch
          << ", nothing to do\n";
      return 0;
    }
  }

  std::ofstream log(cfg.out_dir + "/train.log",
                    start_epoch == 1 ? std::ios::trunc : std::ios::app);
  if (!log) throw CliError{3, "cannot open train.log in " + cfg.out_dir};
  if (start_epoch == 1) log << stamp(digest, cfg.seed);

  TrainHooks hooks;
  hooks.log = &log;
  hooks.checkpoint = [&](int epoch, double loss, bool is_best) {
    meta_ck.epoch = epoch;
    if (is_best) {
      meta_ck.best_epoch = epoch;
      meta_ck.best_loss = loss;
    }
    write_checkpoint(last_path, net, opt, meta_ck);
    if (is_best) write_checkpoint(cfg.out_dir + "/best.mfck", net, opt, meta_ck);
  };

  auto result = train(net, meta, spec, opt, hooks, start_epoch, prior_best);
  if (result.skipped_steps > 0 &&
      result.skipped_steps >=
          static_cast<long>(spec.epochs - start_epoch + 1) *
              spec.steps_per_epoch)
    throw CliError{4, "training produced no finite updates"};

  // The cadence hook already wrote the final epoch; meta_ck carries the best
  // epoch across any resume, so this rewrite is a plain no-op overwrite.
  meta_ck.epoch = spec.epochs;
  write_checkpoint(last_path, net, opt, meta_ck);

  out << "train: " << spec.epochs << " epoch(s), best epoch "
      << meta_ck.best_epoch << " mean loss " << meta_ck.best_loss
      << ", checkpoint " << last_path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// sample

inline CheckpointFile load_compatible_checkpoint(const RunConfig& cfg,
                                                 const ParsedArgs& a,
                                                 VelocityNet& net,
                                                 Adam<float>& opt) {
  const auto path = a.get("--checkpoint", cfg.out_dir + "/last.mfck");
  auto file = read_checkpoint(path);
  const auto meta = cfg.to_meta();
  if (file.meta.scope != meta.scope || file.meta.families != meta.families)
    throw CliError{3, "checkpoint scope/roster does not match the config"};
  if (a.switches.count("--verify")) {
    if (file.meta.digest != config_digest(cfg))
      throw CliError{3, "checkpoint digest " + hex64(file.meta.digest) +
                            " does not match config digest " +
                            hex64(config_digest(cfg))};
    if (file.meta.master_seed != cfg.seed)
      throw CliError{3, "checkpoint was produced under seed " +
                            std::to_string(file.meta.master_seed)};
  }
  try {
    restore_checkpoint(file, net, opt);
  } catch (const IoError& e) {
    throw CliError{3, std::string("checkpoint incompatible: ") + e.what()};
  }
  return file;
}

inline int fam_index_or_data_error(const MetaConfig& meta, Family f) {
  // family_index validates membership only under class scope; a dataset from
  // outside the roster must be named here instead of failing on shapes later.
  if (std::find(meta.families.begin(), meta.families.end(), f) ==
      meta.families.end())
    throw CliError{3, std::string("dataset family ") + family_name(f) +
                          " is not served by this configuration"};
  return family_index(meta, f);
}

inline int cmd_sample(const RunConfig& cfg, const ParsedArgs& a,
                      std::ostream& out) {
  if (!a.opts.count("--data")) throw CliError{2, "sample needs --data FILE"};
  const auto meta = cfg.to_meta();
  VelocityNet net(cfg.to_net_config(), cfg.seed);
  Adam<float> opt;
  load_compatible_checkpoint(cfg, a, net, opt);

  auto ds = read_dataset(a.get("--data"));
  if (a.switches.count("--verify")) {
    if (ds.digest != config_digest(cfg))
      throw CliError{3, "dataset digest " + hex64(ds.digest) +
                            " does not match config digest " +
                            hex64(config_digest(cfg))};
    if (ds.master_seed != cfg.seed)
      throw CliError{3, "dataset was produced under seed " +
                            std::to_string(ds.master_seed)};
  }
  const int fam = fam_index_or_data_error(meta, ds.item.family);
  auto draws = sample_posterior(net, ds.item, fam, cfg.to_sampler_spec());
  if (draws.draws.rows() == 0)
    throw CliError{4, "all posterior trajectories diverged"};

  ensure_dir(cfg.out_dir);
  auto stem = std::filesystem::path(a.get("--data")).stem().string();
  const auto path = cfg.out_dir + "/" + stem + ".mfpd";
  write_draws(path, draws, config_digest(cfg), cfg.seed, ds.item.seed);
  out << "sample: " << draws.draws.rows() << " draw(s), " << draws.flagged
      << " flagged, wrote " << path << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

inline std::vector<std::string> dataset_files(const std::string& dir) {
  std::vector<std::string> files;
  std::error_code ec;
  for (auto it = std::filesystem::directory_iterator(dir, ec);
       !ec && it != std::filesystem::directory_iterator(); ++it)
    if (it->path().extension() == ".mfsm") files.push_back(it->path().string());
  if (ec) throw CliError{3, "cannot read data directory '" + dir + "'"};
  std::sort(files.begin(), files.end());
  return files;
}

inline std::vector<double> truth_on_active(const DatasetItem& item,
                                           const std::vector<int>& cells) {
  std::vector<double> truth;
  for (int cell : cells)
    truth.push_back(static_cast<double>(
        item.B(cell / item.M.cols(), cell % item.M.cols())));
  return truth;
}

inline int cmd_evaluate(const RunConfig& cfg, const ParsedArgs& a,
                        std::ostream& out) {
  if (!cfg.preset)
    throw CliError{2,
                   "evaluate needs a pinned preset so every test set shares "
                   "one active-cell layout"};
  const auto meta = cfg.to_meta();
  const auto digest = config_digest(cfg);

  VelocityNet net(cfg.to_net_config(), cfg.seed);
  Adam<float> opt;
  load_compatible_checkpoint(cfg, a, net, opt);

  const auto data_dir = a.get("--data", cfg.out_dir);
  auto files = dataset_files(data_dir);
  if (files.empty())
    throw CliError{3, "no .mfsm datasets found in '" + data_dir + "'"};

  const auto sampler = cfg.to_sampler_spec();
  std::vector<EvalRun> runs;
  for (const auto& path : files) {
    auto ds = read_dataset(path);
    if (a.switches.count("--verify")) {
      if (ds.digest != digest)
        throw CliError{3, "dataset '" + path + "' digest " + hex64(ds.digest) +
                              " does not match config digest " + hex64(digest)};
      if (ds.master_seed != cfg.seed)
        throw CliError{3, "dataset '" + path + "' was produced under seed " +
                              std::to_string(ds.master_seed)};
    }
    const int fam = fam_index_or_data_error(meta, ds.item.family);
    EvalRun run;
    run.scope = scope_name(cfg.scope);
    run.draws = sample_posterior(net, ds.item, fam, sampler);
    run.truth = truth_on_active(ds.item, run.draws.active_cells);
    runs.push_back(std::move(run));
  }

  auto prior = prior_variance_mc(meta, cfg.eval.prior_mc_draws, cfg.seed);
  auto stats = evaluate_cells(runs, prior, cfg.eval.num_quantiles);

  std::map<std::string, std::vector<CellStat>> per_scope;
  per_scope[scope_name(cfg.scope)] = stats;

  ensure_dir(cfg.out_dir);
  write_text_file(cfg.out_dir + "/metrics.tsv",
                  stamp(digest, cfg.seed) + metrics_dsv(per_scope));

  // Plot-ready rank ECDF per cell with the matched simultaneous null band.
  auto band = simulate_calibration_band(static_cast<int>(runs.size()),
                                        cfg.eval.num_quantiles,
                                        cfg.eval.band_sims, cfg.seed);
  std::ostringstream caltab;
  caltab << stamp(digest, cfg.seed);
  caltab << "cell\tgrid\tecdf\tband_lo\tband_hi\n";
  for (std::size_t k = 0; k < runs.front().draws.active_cells.size(); ++k) {
    std::vector<double> ranks;
    for (const auto& run : runs)
      ranks.push_back(fractional_rank(run.truth[k], run.draws.draws,
                                      static_cast<int>(k)));
    auto cal = calibration(ranks, cfg.eval.num_quantiles);
    for (std::size_t q = 0; q < cal.grid.size(); ++q)
      caltab << runs.front().draws.active_cells[k] << '\t' << cal.grid[q]
             << '\t' << cal.ecdf[q] << '\t' << band.lo[q] << '\t' << band.hi[q]
             << '\n';
  }
  write_text_file(cfg.out_dir + "/calibration.tsv", caltab.str());

  std::ostringstream manifest;
  manifest << stamp(digest, cfg.seed);
  manifest << "scope=" << scope_name(cfg.scope) << '\n';
  manifest << "preset=" << preset_name(*cfg.preset) << '\n';
  manifest << "profile=" << cfg.profile << '\n';
  manifest << "datasets=" << runs.size() << '\n';
  manifest << "sampler_dt=" << detail::fmt_double(sampler.dt) << '\n';
  manifest << "sampler_draws=" << sampler.draws << '\n';
  manifest << "calibration_band_half_width="
           << detail::fmt_double(band.half_width) << '\n';
  manifest << manifest_text(cfg.eval);
  write_text_file(cfg.out_dir + "/manifest.txt", manifest.str());

  out << "evaluate: " << runs.size() << " dataset(s), "
      << stats.size() << " active cell(s)\n";
  for (const char* metric : {"recovery_r", "nrmse", "calibration_error",
                             "contraction"}) {
    std::vector<double> v;
    for (const auto& s : stats) {
      if (std::string(metric) == "recovery_r" && s.r) v.push_back(*s.r);
      if (std::string(metric) == "nrmse" && s.nrmse_v) v.push_back(*s.nrmse_v);
      if (std::string(metric) == "calibration_error")
        v.push_back(s.calibration_error);
      if (std::string(metric) == "contraction" && s.contraction_v)
        v.push_back(*s.contraction_v);
    }
    if (!v.empty())
      out << "  " << metric << " median=" << median_of(v) << " (n=" << v.size()
          << ")\n";
  }
  out << "evaluate: wrote metrics.tsv, calibration.tsv, manifest.txt to "
      << cfg.out_dir << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// benchmark

struct ScopeRun {
  std::string name;  // instance | family | class
  RunConfig cfg;
};

// One trained posterior sampler for one scope; instance scope holds one net
// per preset, meta scopes hold a single net.
struct TrainedScope {
  std::string name;
  std::vector<VelocityNet> nets;       // instance: per preset; else size 1
  std::vector<RunConfig> cfgs;         // matching configs
};

inline void train_or_load(const RunConfig& cfg, VelocityNet& net,
                          std::ostream& out) {
  Adam<float> opt;
  const auto digest = config_digest(cfg);
  const auto last = cfg.out_dir + "/last.mfck";
  if (std::filesystem::exists(last)) {
    auto file = read_checkpoint(last);
    if (file.meta.digest == digest && file.meta.master_seed == cfg.seed &&
        file.meta.epoch >= cfg.epochs) {
      restore_checkpoint(file, net, opt);
      out << "benchmark: loaded " << last << "\n";
      return;
    }
  }
  ensure_dir(cfg.out_dir);
  auto result = train(net, cfg.to_meta(), cfg.to_train_spec(), opt);
  CheckpointMeta meta_ck;
  meta_ck.digest = digest;
  meta_ck.master_seed = cfg.seed;
  meta_ck.scope = cfg.to_meta().scope;
  meta_ck.families = cfg.families;
  meta_ck.epoch = cfg.epochs;
  meta_ck.best_loss = result.best_loss;
  meta_ck.best_epoch = result.best_epoch;
  write_checkpoint(last, net, opt, meta_ck);
  out << "benchmark: trained " << cfg.out_dir << " (best epoch "
      << result.best_epoch << ", loss " << result.best_loss << ")\n";
}

inline int cmd_benchmark(const ParsedArgs& a, std::ostream& out) {
  std::vector<ScopeRun> scopes;
  std::vector<std::string> missing;
  for (const char* name : {"instance", "family", "class"}) {
    const std::string flag = std::string("--") + name;
    if (!a.opts.count(flag)) {
      missing.push_back(name);
      continue;
    }
    ScopeRun sr;
    sr.name = name;
    sr.cfg = load_config(a.get(flag));
    if (scope_name(sr.cfg.scope) != sr.name)
      throw CliError{2, "config passed as " + flag + " has scope=" +
                            scope_name(sr.cfg.scope)};
    sr.cfg.validate();
    scopes.push_back(std::move(sr));
  }
  if (scopes.size() < 2) {
    std::string named;
    for (const auto& m : missing) named += (named.empty() ? "" : ", ") + m;
    throw CliError{2, "benchmark needs at least two scope configs; missing: " +
                          named};
  }

  // The benchmark family comes from the narrowest scope present.
  const Family bench_family = scopes.front().cfg.families.front();
  for (const auto& sr : scopes)
    if (std::find(sr.cfg.families.begin(), sr.cfg.families.end(),
                  bench_family) == sr.cfg.families.end())
      throw CliError{2, std::string("scope ") + sr.name +
                            " does not serve family " +
                            family_name(bench_family)};

  const std::vector<Preset> presets =
      bench_family == Family::gauss
          ? std::vector<Preset>{Preset::intercept_only}
          : std::vector<Preset>{Preset::intercept_only,
                                Preset::fixed_variability, Preset::regressed,
                                Preset::fixed_regressed, Preset::interaction};

  // Matched totals under per-preset accounting: one meta run's budget equals
  // the sum over presets of the baseline budget.
  {
    std::map<std::string, long> budget;
    for (const auto& sr : scopes)
      budget[sr.name] = sr.cfg.to_train_spec().budget();
    const long factor = static_cast<long>(presets.size());
    std::vector<std::string> complaints;
    if (budget.count("instance") && budget.count("family") &&
        budget["family"] != factor * budget["instance"])
      complaints.push_back("family budget " + std::to_string(budget["family"]) +
                           " != " + std::to_string(factor) + " x instance " +
                           std::to_string(budget["instance"]));
    if (budget.count("family") && budget.count("class") &&
        budget["class"] != budget["family"])
      complaints.push_back("class budget " + std::to_string(budget["class"]) +
                           " != family " + std::to_string(budget["family"]));
    if (budget.count("instance") && budget.count("class") &&
        !budget.count("family") &&
        budget["class"] != factor * budget["instance"])
      complaints.push_back("class budget " + std::to_string(budget["class"]) +
                           " != " + std::to_string(factor) + " x instance " +
                           std::to_string(budget["instance"]));
    if (!complaints.empty() && !a.switches.count("--allow-budget-mismatch")) {
      std::string msg = "simulation budgets are not matched: ";
      for (const auto& c : complaints) msg += c + "; ";
      throw CliError{2, msg + "pass --allow-budget-mismatch to proceed"};
    }
  }

  const RunConfig& lead = scopes.front().cfg;
  const int n_test = lead.n_test;
  if (n_test < 3) throw CliError{2, "benchmark needs n_test >= 3"};

  // Shared held-out test sets per preset, identical for every scope.
  std::vector<std::vector<DatasetItem>> testsets(presets.size());
  for (std::size_t p = 0; p < presets.size(); ++p) {
    RunConfig tc = lead;
    tc.scope = Scope::instance;
    tc.families = {bench_family};
    tc.preset = presets[p];
    auto tmeta = tc.to_meta();
    for (int k = 0; k < n_test; ++k) {
      auto batch = make_batch(
          tmeta, 1,
          heldout_offset + (static_cast<std::uint64_t>(p) << 24) +
              static_cast<std::uint64_t>(k));
      testsets[p].push_back(std::move(batch.items[0]));
    }
  }

  // Train or load every scope.
  std::vector<TrainedScope> trained;
  for (const auto& sr : scopes) {
    TrainedScope ts;
    ts.name = sr.name;
    if (sr.name == "instance") {
      for (auto preset : presets) {
        RunConfig pc = sr.cfg;
        pc.preset = preset;
        pc.out_dir = sr.cfg.out_dir + "/" + preset_name(preset);
        ts.cfgs.push_back(pc);
        ts.nets.emplace_back(pc.to_net_config(), pc.seed);
        train_or_load(pc, ts.nets.back(), out);
      }
    } else {
      ts.cfgs.push_back(sr.cfg);
      ts.nets.emplace_back(sr.cfg.to_net_config(), sr.cfg.seed);
      train_or_load(sr.cfg, ts.nets.back(), out);
    }
    trained.push_back(std::move(ts));
  }

  // Evaluate every scope on every preset's shared test sets.
  std::map<std::string, std::vector<CellStat>> per_scope;
  // draws[scope][preset][dataset]
  std::map<std::string, std::vector<std::vector<PosteriorDraws>>> all_draws;
  for (auto& ts : trained) {
    all_draws[ts.name].resize(presets.size());
    for (std::size_t p = 0; p < presets.size(); ++p) {
      const auto& pc = ts.cfgs[ts.cfgs.size() == 1 ? 0 : p];
      auto& net = ts.nets[ts.nets.size() == 1 ? 0 : p];
      const auto meta = pc.to_meta();
      const int fam = fam_index_or_data_error(meta, bench_family);
      auto sampler = pc.to_sampler_spec();

      RunConfig tc = lead;
      tc.scope = Scope::instance;
      tc.families = {bench_family};
      tc.preset = presets[p];
      auto prior = prior_variance_mc(tc.to_meta(), lead.eval.prior_mc_draws,
                                     lead.seed);

      std::vector<EvalRun> runs;
      for (const auto& item : testsets[p]) {
        EvalRun run;
        run.scope = ts.name;
        run.draws = sample_posterior(net, item, fam, sampler);
        run.truth = truth_on_active(item, run.draws.active_cells);
        all_draws[ts.name][p].push_back(run.draws);
        runs.push_back(std::move(run));
      }
      auto stats = evaluate_cells(runs, prior, lead.eval.num_quantiles);
      auto& acc = per_scope[ts.name];
      acc.insert(acc.end(), stats.begin(), stats.end());
    }
  }

  auto rep = aggregate(per_scope, lead.eval.bootstrap_resamples, lead.seed);

  // Pairwise posterior C2ST per preset, draws pooled over the first ten
  // shared test datasets.
  std::ostringstream c2st_tab;
  c2st_tab << "scope_a\tscope_b\tpreset\tc2st\n";
  const int pool = std::min(10, n_test);
  for (std::size_t i = 0; i < trained.size(); ++i)
    for (std::size_t j = i + 1; j < trained.size(); ++j)
      for (std::size_t p = 0; p < presets.size(); ++p) {
        const auto& da = all_draws[trained[i].name][p];
        const auto& db = all_draws[trained[j].name][p];
        int rows_a = 0, rows_b = 0, cols = da[0].draws.cols();
        for (int k = 0; k < pool; ++k) {
          rows_a += da[k].draws.rows();
          rows_b += db[k].draws.rows();
        }
        Tensor<float> A(rows_a, cols), B(rows_b, cols);
        int ra = 0, rb = 0;
        for (int k = 0; k < pool; ++k) {
          for (int r = 0; r < da[k].draws.rows(); ++r, ++ra)
            for (int c = 0; c < cols; ++c) A(ra, c) = da[k].draws(r, c);
          for (int r = 0; r < db[k].draws.rows(); ++r, ++rb)
            for (int c = 0; c < cols; ++c) B(rb, c) = db[k].draws(r, c);
        }
        c2st_tab << trained[i].name << '\t' << trained[j].name << '\t'
                 << preset_name(presets[p]) << '\t'
                 << c2st(A, B, lead.eval.c2st) << '\n';
      }

  ensure_dir(lead.out_dir);
  std::ostringstream tab;
  for (const auto& sr : scopes)
    tab << "# digest_" << sr.name << "=" << hex64(config_digest(sr.cfg))
        << "\n";
  tab << "# seed=" << lead.seed << "\n";
  tab << aggregate_dsv(rep);
  tab << c2st_tab.str();
  write_text_file(lead.out_dir + "/benchmark.tsv", tab.str());

  out << "benchmark: " << scopes.size() << " scope(s), " << presets.size()
      << " preset(s), report " << lead.out_dir << "/benchmark.tsv\n";
  for (const auto& g : rep.gaps)
    out << "  gap " << g.metric << " " << g.scope_a << "-" << g.scope_b << " = "
        << g.gap << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// gradcheck

inline int cmd_gradcheck(const RunConfig& cfg, const ParsedArgs& a,
                         std::ostream& out) {
  auto rep = run_gradcheck(cfg.seed, a.get("--corrupt", ""));
  std::ostringstream tab;
  tab << stamp(config_digest(cfg), cfg.seed);
  tab << "op\tmax_rel\tstatus\n";
  for (const auto& e : rep.entries)
    tab << e.op << '\t' << e.max_rel << '\t' << (e.pass ? "pass" : "FAIL")
        << '\n';
  ensure_dir(cfg.out_dir);
  write_text_file(cfg.out_dir + "/gradcheck.txt", tab.str());
  out << tab.str();
  if (!rep.pass) {
    for (const auto& e : rep.entries)
      if (!e.pass)
        out << "gradcheck: FAILED op '" << e.op << "' max_rel " << e.max_rel
            << "\n";
    return 4;
  }
  out << "gradcheck: all " << rep.entries.size() << " checks passed\n";
  return 0;
}

// ---------------------------------------------------------------------------
// dispatch

inline const char* usage =
    "usage: mfsm_cli <simulate|train|sample|evaluate|benchmark|gradcheck> "
    "[--config PATH] [--seed U64] [--preset NAME] [--scope "
    "instance|family|class] [--profile desk|paper] [--threads N] "
    "[--deterministic] [--out DIR]\n"
    "  simulate  --count N\n"
    "  train     [--resume]\n"
    "  sample    --data FILE [--checkpoint PATH] [--verify]\n"
    "  evaluate  [--data DIR] [--checkpoint PATH] [--verify]\n"
    "  benchmark --instance CFG --family CFG [--class CFG] "
    "[--allow-budget-mismatch]\n"
    "  gradcheck [--corrupt OP]\n";

inline int run(int argc, const char* const* argv, std::ostream& out,
               std::ostream& err) {
  try {
    auto a = parse_args(argc, argv);
    if (a.cmd == "help" || a.cmd == "--help") {
      out << usage;
      return 0;
    }
    if (a.cmd == "benchmark") return cmd_benchmark(a, out);

    auto lc = load_with_overrides(a);
    apply_thread_cap(lc.cfg);
    if (a.cmd == "simulate") return cmd_simulate(lc.cfg, a, out);
    if (a.cmd == "train") return cmd_train(lc.cfg, a, out);
    if (a.cmd == "sample") return cmd_sample(lc.cfg, a, out);
    if (a.cmd == "evaluate") return cmd_evaluate(lc.cfg, a, out);
    if (a.cmd == "gradcheck") return cmd_gradcheck(lc.cfg, a, out);
    throw CliError{2, "unknown subcommand '" + a.cmd + "'"};
  } catch (const CliError& e) {
    err << "error: " << e.msg << "\n";
    return e.code;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ShapeError& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  } catch (const std::logic_error& e) {
    err << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    err << "data error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace mfsm::cli
