#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>
#include <string>

#include "mfsm/io.hpp"

using namespace mfsm;

namespace {

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::trunc);
  f << text;
}

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& p) : path(p) {}
  ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("defaults round-trip through the canonical form") {
  RunConfig def;
  const auto text = serialize_config(def);
  const auto back = parse_config_text(text);
  REQUIRE(serialize_config(back) == text);
  // One more cycle changes nothing.
  REQUIRE(serialize_config(parse_config_text(serialize_config(back))) == text);
  def.validate();
}

TEST_CASE("parsed values land in the right fields") {
  const std::string text = R"(
# experiment header comment
[run]
scope = class
families = ddm, rdm,cdm
preset = none
seed = 99   # trailing comment
profile = paper
deterministic = on

[train]
lr = 0.0005
epochs = 7

[sampler]
dt = 0.05
)";
  auto c = parse_config_text(text);
  REQUIRE(c.scope == Scope::model_class);
  REQUIRE(c.families ==
          std::vector<Family>{Family::ddm, Family::rdm, Family::cdm});
  REQUIRE_FALSE(c.preset.has_value());
  REQUIRE(c.seed == 99);
  REQUIRE(c.profile == "paper");
  REQUIRE(c.deterministic);
  REQUIRE(c.lr == 0.0005);
  REQUIRE(c.epochs == 7);
  REQUIRE(c.sampler.dt == 0.05);
  // Untouched fields keep their defaults.
  REQUIRE(c.batch_size == 64);
  REQUIRE(c.structure.r_max == 8);

  SECTION("diagnostics carry the offending line and field") {
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nbogus = 1\n"),
                        Catch::Matchers::ContainsSubstring("line 2") &&
                            Catch::Matchers::ContainsSubstring("bogus"));
    REQUIRE_THROWS_WITH(parse_config_text("[run]\nseed = -3\n"),
                        Catch::Matchers::ContainsSubstring("seed"));
    REQUIRE_THROWS_WITH(parse_config_text("[train]\nlr = fast\n"),
                        Catch::Matchers::ContainsSubstring("[train] lr"));
    REQUIRE_THROWS_AS(parse_config_text("just words\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("[run\nseed = 1\n"), ConfigError);
    REQUIRE_THROWS_AS(parse_config_text("[run]\nfamilies = ddm,unicorn\n"),
                      std::invalid_argument);
  }
}

TEST_CASE("include splices another file") {
  TempFile child("/tmp/mfsm_child.cfg");
  TempFile parent("/tmp/mfsm_parent.cfg");
  write_text(child.path, "[train]\nlr = 0.01\nepochs = 3\n");

  SECTION("included values apply, later lines override") {
    write_text(parent.path,
               "include = mfsm_child.cfg\n[train]\nepochs = 9\n");
    auto c = load_config(parent.path);
    REQUIRE(c.lr == 0.01);
    REQUIRE(c.epochs == 9);
  }

  SECTION("include position decides precedence") {
    write_text(parent.path,
               "[train]\nepochs = 9\ninclude = mfsm_child.cfg\n");
    auto c = load_config(parent.path);
    REQUIRE(c.epochs == 3);
  }

  SECTION("missing include is a config error") {
    write_text(parent.path, "include = nowhere.cfg\n");
    REQUIRE_THROWS_AS(load_config(parent.path), ConfigError);
  }

  SECTION("self include hits the depth cap") {
    write_text(parent.path, "include = mfsm_parent.cfg\n");
    REQUIRE_THROWS_WITH(load_config(parent.path),
                        Catch::Matchers::ContainsSubstring("deep"));
  }
}

TEST_CASE("digest tracks model identity and ignores run plumbing") {
  RunConfig base;
  const auto d0 = config_digest(base);

  RunConfig plumbing = base;
  plumbing.out_dir = "elsewhere";
  plumbing.threads = 7;
  plumbing.deterministic = true;
  plumbing.seed = 123456;
  plumbing.sampler.dt = 0.05;
  plumbing.sampler.draws = 64;
  plumbing.n_test = 5;
  plumbing.eval.num_quantiles = 10;
  REQUIRE(config_digest(plumbing) == d0);

  RunConfig lr = base;
  lr.lr = 2e-4;
  REQUIRE(config_digest(lr) != d0);

  RunConfig grid = base;
  grid.structure.r_max = 4;
  REQUIRE(config_digest(grid) != d0);

  RunConfig pre = base;
  pre.preset = Preset::intercept_only;
  REQUIRE(config_digest(pre) != d0);

  RunConfig prof = base;
  prof.profile = "paper";
  REQUIRE(config_digest(prof) != d0);

  RunConfig roster = base;
  roster.scope = Scope::model_class;
  roster.families = {Family::ddm, Family::rdm};
  REQUIRE(config_digest(roster) != d0);
}

TEST_CASE("config validation and derived specs") {
  RunConfig c;
  c.scope = Scope::instance;
  REQUIRE_THROWS_AS(c.validate(), ConfigError);
  c.preset = Preset::intercept_only;
  c.validate();

  // The simulator has no separate instance mode; a pinned preset inside
  // family scope is the instance protocol.
  REQUIRE(c.to_meta().scope == Scope::family);
  REQUIRE(c.to_train_spec().scope == Scope::family);

  c.seed = 4242;
  REQUIRE(c.to_train_spec().seed == 4242);
  REQUIRE(c.to_sampler_spec().seed == 4242);
  REQUIRE(c.to_meta().seed == 4242);

  REQUIRE(c.to_net_config().d_model == 64);
  c.profile = "paper";
  REQUIRE(c.to_net_config().d_model == 256);
  c.profile = "laptop";
  REQUIRE_THROWS_AS(c.validate(), ConfigError);

  RunConfig t;
  t.threads = 0;
  REQUIRE_THROWS_AS(t.validate(), ConfigError);
}

TEST_CASE("dataset containers round-trip bit for bit") {
  MetaConfig cfg;
  cfg.families = {Family::ddm};
  cfg.preset = Preset::fixed_variability;
  cfg.structure.r_max = 3;
  cfg.structure.n_min = 6;
  cfg.structure.n_max = 6;
  cfg.seed = 51;
  auto item = simulate_dataset(cfg, 6, preset_spec(*cfg.preset, Family::ddm).R,
                               dataset_seed(cfg.seed, 0));

  const std::uint64_t digest = 0xABCDEF0123456789ULL;
  const auto bytes = encode_dataset(item, digest, cfg.seed);
  auto f = decode_dataset(bytes);

  REQUIRE(f.digest == digest);
  REQUIRE(f.master_seed == cfg.seed);
  REQUIRE(f.item.family == item.family);
  REQUIRE(f.item.N == item.N);
  REQUIRE(f.item.R == item.R);
  REQUIRE(f.item.D == item.D);
  REQUIRE(f.item.seed == item.seed);
  REQUIRE(f.item.censored == item.censored);
  REQUIRE(f.item.attempts == item.attempts);
  REQUIRE(f.item.X == item.X);
  REQUIRE(f.item.B == item.B);
  REQUIRE(f.item.M == item.M);
  REQUIRE(f.item.Y == item.Y);
  REQUIRE(f.item.columns.size() == item.columns.size());
  for (std::size_t k = 0; k < item.columns.size(); ++k) {
    REQUIRE(f.item.columns[k].kind == item.columns[k].kind);
    REQUIRE(f.item.columns[k].parent_i == item.columns[k].parent_i);
    REQUIRE(f.item.columns[k].parent_j == item.columns[k].parent_j);
  }

  // Re-encoding the decoded item reproduces the bytes exactly.
  REQUIRE(encode_dataset(f.item, f.digest, f.master_seed) == bytes);

  SECTION("malformed bytes are rejected") {
    auto bad = bytes;
    bad[0] = 'X';
    REQUIRE_THROWS_AS(decode_dataset(bad), IoError);
    REQUIRE_THROWS_AS(decode_dataset(bytes.substr(0, bytes.size() - 3)),
                      IoError);
    REQUIRE_THROWS_AS(decode_dataset(bytes + "x"), IoError);
  }

  SECTION("file round trip") {
    TempFile tmp("/tmp/mfsm_ds_roundtrip.mfsm");
    write_dataset(tmp.path, item, digest, cfg.seed);
    auto g = read_dataset(tmp.path);
    REQUIRE(encode_dataset(g.item, g.digest, g.master_seed) == bytes);
    REQUIRE_THROWS_AS(read_dataset("/tmp/does_not_exist.mfsm"), IoError);
  }
}

namespace {

MetaConfig gauss_meta(std::uint64_t seed) {
  MetaConfig cfg;
  cfg.families = {Family::gauss};
  cfg.preset = Preset::intercept_only;
  cfg.structure.r_max = 1;
  cfg.structure.c_obs_max = 1;
  cfg.structure.n_min = 6;
  cfg.structure.n_max = 10;
  cfg.seed = seed;
  return cfg;
}

TrainSpec tiny_spec(int epochs) {
  TrainSpec spec;
  spec.epochs = epochs;
  spec.steps_per_epoch = 3;
  spec.batch_size = 4;
  spec.lr = 1e-3;
  spec.warmup_steps = 4;
  spec.seed = 17;
  spec.scope = Scope::family;
  spec.checkpoint_every = 100;
  return spec;
}

}  // namespace

TEST_CASE("checkpoints restore the exact training state") {
  auto cfg = gauss_meta(31);
  const auto nc = desk_net_config(cfg);

  // Uninterrupted reference: four epochs in one go.
  VelocityNet ref(nc, 7);
  Adam<float> ref_opt;
  train(ref, cfg, tiny_spec(4), ref_opt);

  // Interrupted run: two epochs, serialize, restore into a fresh net built
  // from a different init seed, then finish.
  VelocityNet first(nc, 7);
  Adam<float> first_opt;
  train(first, cfg, tiny_spec(2), first_opt);

  CheckpointMeta meta;
  meta.digest = 0x1122334455667788ULL;
  meta.master_seed = cfg.seed;
  meta.scope = Scope::family;
  meta.families = cfg.families;
  meta.epoch = 2;
  meta.best_loss = 0.5;
  meta.best_epoch = 2;

  const auto bytes = encode_checkpoint(first, first_opt, meta);
  auto file = decode_checkpoint(bytes);
  REQUIRE(file.meta.digest == meta.digest);
  REQUIRE(file.meta.master_seed == cfg.seed);
  REQUIRE(file.meta.scope == Scope::family);
  REQUIRE(file.meta.families == cfg.families);
  REQUIRE(file.meta.epoch == 2);
  REQUIRE(file.adam_t == first_opt.step_count());

  VelocityNet resumed(nc, 992381);
  Adam<float> resumed_opt;
  restore_checkpoint(file, resumed, resumed_opt);

  const auto& pa = first.params();
  auto& pb = resumed.params();
  REQUIRE(pa.size() == pb.size());
  for (int i = 0; i < pa.size(); ++i) REQUIRE(pa.value(i) == pb.value(i));
  REQUIRE(resumed_opt.step_count() == first_opt.step_count());
  for (std::size_t i = 0; i < first_opt.moments1().size(); ++i) {
    REQUIRE(resumed_opt.moments1()[i] == first_opt.moments1()[i]);
    REQUIRE(resumed_opt.moments2()[i] == first_opt.moments2()[i]);
  }

  train(resumed, cfg, tiny_spec(4), resumed_opt, {}, 3);
  const auto& pr = ref.params();
  for (int i = 0; i < pr.size(); ++i) REQUIRE(pr.value(i) == pb.value(i));

  // Serialization is a pure function of the state.
  REQUIRE(encode_checkpoint(first, first_opt, meta) == bytes);

  SECTION("architecture mismatches are named") {
    auto wide = cfg;
    wide.structure.r_max = 2;
    VelocityNet other(desk_net_config(wide), 7);
    Adam<float> other_opt;
    REQUIRE_THROWS_AS(restore_checkpoint(file, other, other_opt), IoError);

    auto renamed = file;
    renamed.names[0] += "_x";
    REQUIRE_THROWS_WITH(restore_checkpoint(renamed, resumed, resumed_opt),
                        Catch::Matchers::ContainsSubstring("_x"));
  }

  SECTION("fresh optimizer state serializes as absent") {
    VelocityNet blank(nc, 7);
    Adam<float> blank_opt;
    auto b = decode_checkpoint(encode_checkpoint(blank, blank_opt, meta));
    REQUIRE(b.m1.empty());
    REQUIRE(b.adam_t == 0);
    VelocityNet target(nc, 8);
    Adam<float> target_opt;
    restore_checkpoint(b, target, target_opt);
    REQUIRE(target_opt.step_count() == 0);
  }
}

TEST_CASE("draws files round-trip") {
  PosteriorDraws d;
  d.active_cells = {0, 2, 5};
  d.rows_grid = 2;
  d.cols_grid = 3;
  d.flagged = 4;
  d.dt = 0.02;
  d.seed = 909;
  Rng rng(3, 0xD1A6, 4, 0);
  d.draws = Tensor<float>::randn(40, 3, rng);

  const auto bytes = encode_draws(d, 0xFEEDULL, 11, 22);
  auto f = decode_draws(bytes);
  REQUIRE(f.digest == 0xFEEDULL);
  REQUIRE(f.master_seed == 11);
  REQUIRE(f.dataset_seed == 22);
  REQUIRE(f.draws.active_cells == d.active_cells);
  REQUIRE(f.draws.rows_grid == 2);
  REQUIRE(f.draws.cols_grid == 3);
  REQUIRE(f.draws.flagged == 4);
  REQUIRE(f.draws.dt == 0.02);
  REQUIRE(f.draws.seed == 909);
  REQUIRE(f.draws.draws == d.draws);
  REQUIRE(encode_draws(f.draws, f.digest, f.master_seed, f.dataset_seed) ==
          bytes);

  auto bad = bytes;
  bad[2] = 'Q';
  REQUIRE_THROWS_AS(decode_draws(bad), IoError);
}
