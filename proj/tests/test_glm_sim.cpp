#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <map>

#include "mfsm/glm_sim.hpp"

using namespace mfsm;

namespace {

MetaConfig base_config(Family f) {
  MetaConfig cfg;
  cfg.scope = Scope::family;
  cfg.families = {f};
  cfg.seed = 99;
  return cfg;
}

}  // namespace

TEST_CASE("design with R=1 is a lone intercept plus zero padding") {
  StructurePrior sp;
  Rng rng(1, 2, 3, 4);
  auto d = sample_design(16, 1, sp, rng);
  CHECK(d.columns.size() == 1);
  CHECK(d.columns[0].kind == ColKind::intercept);
  for (int n = 0; n < 16; ++n) {
    CHECK(d.values(n, 0) == 1.0f);
    for (int r = 1; r < sp.r_max; ++r) CHECK(d.values(n, r) == 0.0f);
  }
}

TEST_CASE("interaction columns are elementwise parent products") {
  Tensor<float> X = Tensor<float>::zeros(2, 4);
  X(0, 1) = 1;
  X(1, 1) = -1;
  X(0, 2) = 2;
  X(1, 2) = 3;
  Rng rng(0, 0, 0, 0);
  fill_column(X, 3, {ColKind::interaction, 1, 2}, rng);
  CHECK(X(0, 3) == 2.0f);
  CHECK(X(1, 3) == -3.0f);
}

TEST_CASE("sampled column statistics match their kinds") {
  StructurePrior sp;
  Rng rng(21, 0, 0, 0);
  const int N = 10000;
  auto d = sample_design(N, 8, sp, rng);
  for (int r = 1; r < d.R; ++r) {
    double mean = 0;
    for (int n = 0; n < N; ++n) mean += d.values(n, r);
    mean /= N;
    switch (d.columns[r].kind) {
      case ColKind::continuous:
        CHECK(std::abs(mean) < 0.05);
        break;
      case ColKind::categorical:
        for (int n = 0; n < N; ++n)
          REQUIRE((d.values(n, r) == 0.5f || d.values(n, r) == -0.5f));
        CHECK(std::abs(mean) < 0.05);
        break;
      case ColKind::interaction: {
        const auto& c = d.columns[r];
        REQUIRE(c.parent_i >= 1);
        REQUIRE(c.parent_j >= 1);
        REQUIRE(c.parent_i != c.parent_j);
        for (int n = 0; n < N; ++n)
          REQUIRE(d.values(n, r) ==
                  d.values(n, c.parent_i) * d.values(n, c.parent_j));
        break;
      }
      case ColKind::intercept:
        FAIL("intercept beyond column 0");
    }
  }
}

TEST_CASE("preset masks reproduce the benchmark table") {
  auto io = preset_spec(Preset::intercept_only, Family::ddm);
  CHECK(io.R == 1);
  CHECK(io.mask_rows[0] == std::array<int, 6>{1, 1, 1, 1, 1, 1});

  auto fv = preset_spec(Preset::fixed_variability, Family::ddm);
  CHECK(fv.mask_rows[0] == std::array<int, 6>{1, 1, 1, 1, 0, 0});

  auto rg_ddm = preset_spec(Preset::regressed, Family::ddm);
  CHECK(rg_ddm.R == 3);
  CHECK(rg_ddm.mask_rows[1] == std::array<int, 6>{1, 1, 1, 0, 0, 0});
  CHECK(rg_ddm.mask_rows[2] == rg_ddm.mask_rows[1]);
  CHECK(rg_ddm.columns[1].kind == ColKind::continuous);
  CHECK(rg_ddm.columns[2].kind == ColKind::categorical);

  auto rg_rdm = preset_spec(Preset::regressed, Family::rdm);
  CHECK(rg_rdm.mask_rows[1] == std::array<int, 6>{0, 1, 1, 0, 0, 0});
  auto rg_cdm = preset_spec(Preset::regressed, Family::cdm);
  CHECK(rg_cdm.mask_rows[1] == std::array<int, 6>{1, 0, 1, 0, 0, 0});

  auto fr = preset_spec(Preset::fixed_regressed, Family::rdm);
  CHECK(fr.mask_rows[0] == std::array<int, 6>{1, 1, 1, 1, 0, 0});
  CHECK(fr.mask_rows[1] == std::array<int, 6>{0, 1, 1, 0, 0, 0});

  auto in = preset_spec(Preset::interaction, Family::cdm);
  CHECK(in.R == 4);
  CHECK(in.mask_rows[1] == std::array<int, 6>{1, 1, 1, 1, 1, 0});
  CHECK(in.mask_rows[2] == std::array<int, 6>{1, 1, 1, 1, 0, 0});
  CHECK(in.mask_rows[3] == std::array<int, 6>{1, 1, 1, 0, 0, 0});
  CHECK(in.columns[3].kind == ColKind::interaction);
  CHECK(in.columns[3].parent_i == 1);
  CHECK(in.columns[3].parent_j == 2);

  CHECK_THROWS_AS(preset_spec(Preset::regressed, Family::gauss),
                  std::invalid_argument);
  CHECK(parse_preset("fixed_regressed") == Preset::fixed_regressed);
}

TEST_CASE("pinned preset mask is applied verbatim") {
  auto M = preset_mask(preset_spec(Preset::fixed_variability, Family::ddm),
                       Family::ddm, 8);
  for (int d = 0; d < 6; ++d)
    CHECK(M(0, d) == (d < 4 ? 1.0f : 0.0f));
  for (int r = 1; r < 8; ++r)
    for (int d = 0; d < 6; ++d) REQUIRE(M(r, d) == 0.0f);
}

TEST_CASE("sampled mask keeps intercepts active and pads rows beyond R") {
  StructurePrior sp;
  sp.p_active = 1.0;
  Rng rng(31, 0, 0, 0);
  auto M = sample_mask(Family::ddm, 3, sp, rng);
  for (int d = 0; d < 6; ++d)
    for (int r = 0; r < 3; ++r) REQUIRE(M(r, d) == 1.0f);
  for (int r = 3; r < sp.r_max; ++r)
    for (int d = 0; d < 6; ++d) REQUIRE(M(r, d) == 0.0f);
}

TEST_CASE("slope mask cells activate at the configured rate") {
  StructurePrior sp;
  const int n = 10000, R = 3;
  Tensor<double> rate = Tensor<double>::zeros(R, 6);
  for (int i = 0; i < n; ++i) {
    Rng rng(41, static_cast<std::uint64_t>(i), 0, 0);
    auto M = sample_mask(Family::ddm, R, sp, rng);
    for (int r = 0; r < R; ++r)
      for (int d = 0; d < 6; ++d) rate(r, d) += M(r, d);
  }
  for (int d = 0; d < 6; ++d) {
    CHECK(rate(0, d) == static_cast<double>(n));  // intercepts always on
    for (int r = 1; r < R; ++r) {
      double p = rate(r, d) / n;
      CHECK(p > 0.47);
      CHECK(p < 0.53);
    }
  }
}

TEST_CASE("build_theta semantics") {
  std::vector<LinkFunction> ident(2, LinkFunction::identity());

  SECTION("intercept-only rows repeat the intercept coefficients") {
    Tensor<float> X = Tensor<float>::zeros(4, 3);
    for (int n = 0; n < 4; ++n) X(n, 0) = 1.0f;
    Tensor<float> B = Tensor<float>::zeros(3, 2);
    B(0, 0) = 0.7f;
    B(0, 1) = -1.2f;
    Tensor<float> M = Tensor<float>::zeros(3, 2);
    M(0, 0) = M(0, 1) = 1.0f;
    auto theta = build_theta(X, B, M, ident, 4, 2);
    for (int n = 0; n < 4; ++n) {
      CHECK(theta(n, 0) == Catch::Approx(0.7));
      CHECK(theta(n, 1) == Catch::Approx(-1.2));
    }
  }

  SECTION("all-ones mask with identity links is a matrix product") {
    Rng rng(51, 0, 0, 0);
    auto X = Tensor<float>::randn(5, 3, rng);
    auto B = Tensor<float>::randn(3, 2, rng);
    auto M = Tensor<float>::full(3, 2, 1.0f);
    auto theta = build_theta(X, B, M, ident, 5, 2);
    auto ref = matmul(X.cast<double>(), B.cast<double>());
    CHECK(max_abs_diff(theta, ref) < 1e-6);
  }

  SECTION("masking a slope equals dropping the regressor") {
    Rng rng(52, 0, 0, 0);
    auto X = Tensor<float>::randn(5, 3, rng);
    auto B = Tensor<float>::randn(3, 2, rng);
    auto M = Tensor<float>::full(3, 2, 1.0f);
    M(2, 1) = 0.0f;
    auto with_mask = build_theta(X, B, M, ident, 5, 2);
    auto B2 = B;
    B2(2, 1) = 0.0f;
    auto dropped = build_theta(X, B2, Tensor<float>::full(3, 2, 1.0f), ident, 5, 2);
    CHECK(max_abs_diff(with_mask, dropped) == 0.0);
  }

  SECTION("zero slope mask gives trial-constant columns") {
    MetaConfig cfg = base_config(Family::ddm);
    cfg.preset = Preset::intercept_only;
    auto item = simulate_dataset(cfg, 32, 1, dataset_seed(cfg.seed, 1));
    for (int d = 0; d < item.D; ++d)
      for (int n = 1; n < item.N; ++n)
        REQUIRE(item.theta(n, d) == item.theta(0, d));
  }
}

TEST_CASE("theta guard thresholds") {
  auto g = theta_guard(Family::gauss);
  CHECK(g[0] == Catch::Approx(30.9));
  auto ddm = theta_guard(Family::ddm);
  CHECK(ddm[0] == Catch::Approx(10 * stable_softplus(1.0 + 3.09 * 0.8)));
  CHECK(std::isinf(ddm[2]));  // start is bounded
}

TEST_CASE("gauss dataset means track the linked intercept") {
  MetaConfig cfg = base_config(Family::gauss);
  cfg.preset = Preset::intercept_only;
  auto item = simulate_dataset(cfg, 4096, 1, dataset_seed(cfg.seed, 7));
  double mu = item.theta(0, 0);
  double mean = 0;
  for (int n = 0; n < item.N; ++n) {
    mean += item.Y(n, 0);
    REQUIRE(item.Y(n, 1) == 0.0f);  // padding beyond the family's obs dim
  }
  mean /= item.N;
  CHECK(std::abs(mean - mu) < 3.0 / std::sqrt(4096.0));
}

TEST_CASE("datasets regenerate bit-identically from their seed") {
  MetaConfig cfg = base_config(Family::rdm);
  auto a = simulate_dataset(cfg, 64, 3, dataset_seed(cfg.seed, 11));
  auto b = simulate_dataset(cfg, 64, 3, dataset_seed(cfg.seed, 11));
  CHECK(a.X == b.X);
  CHECK(a.B == b.B);
  CHECK(a.M == b.M);
  CHECK(a.Y == b.Y);
  CHECK(a.family == b.family);

  auto c = simulate_dataset(cfg, 64, 3, dataset_seed(cfg.seed, 12));
  CHECK_FALSE(a.Y == c.Y);
}

TEST_CASE("batches share N and R but randomize structure per item") {
  MetaConfig cfg = base_config(Family::ddm);
  auto b0 = make_batch(cfg, 6, 0);
  CHECK(b0.items.size() == 6);
  for (const auto& item : b0.items) {
    CHECK(item.N == b0.N);
    CHECK(item.R == b0.R);
  }
  CHECK_FALSE(b0.items[0].Y == b0.items[1].Y);

  auto again = make_batch(cfg, 6, 0);
  CHECK(again.N == b0.N);
  CHECK(again.items[3].Y == b0.items[3].Y);

  // A handful of batches must produce at least two distinct N draws.
  bool n_varies = false;
  for (std::uint64_t bi = 1; bi < 6; ++bi)
    n_varies |= (make_batch(cfg, 1, bi).N != b0.N);
  CHECK(n_varies);
}

TEST_CASE("class scope draws families at their configured frequencies") {
  MetaConfig cfg;
  cfg.scope = Scope::model_class;
  cfg.families = {Family::ddm, Family::rdm, Family::cdm};
  cfg.seed = 77;
  cfg.structure.n_min = cfg.structure.n_max = 8;  // tiny datasets, counting only
  std::map<Family, int> counts;
  const int n = 3000;
  for (int i = 0; i < n; ++i) {
    auto item = simulate_dataset(cfg, 8, 2, dataset_seed(cfg.seed, 1000 + i));
    counts[item.family]++;
  }
  for (auto f : cfg.families)
    CHECK(std::abs(counts[f] / static_cast<double>(n) - 1.0 / 3) < 0.03);
}

TEST_CASE("censoring stays rare under the intrinsic priors") {
  // Aggregate censor rate across accepted datasets at default t_max.
  for (Family f : {Family::ddm, Family::rdm, Family::cdm}) {
    MetaConfig cfg = base_config(f);
    long censored = 0, trials = 0;
    for (int i = 0; i < 60; ++i) {
      auto item = simulate_dataset(cfg, 64, 1 + i % 4,
                                   dataset_seed(cfg.seed, 500 + i));
      censored += item.censored;
      trials += item.N;
    }
    INFO(family_name(f));
    CHECK(static_cast<double>(censored) / trials < 0.001);
  }
}

TEST_CASE("resample cap surfaces as a hard error") {
  MetaConfig cfg = base_config(Family::ddm);
  cfg.max_censor_rate = -1.0;  // reject every draw
  CHECK_THROWS_AS(simulate_dataset(cfg, 16, 1, dataset_seed(cfg.seed, 3)),
                  std::runtime_error);
}

TEST_CASE("config validation") {
  MetaConfig cfg = base_config(Family::ddm);
  CHECK_NOTHROW(cfg.validate());
  cfg.families = {Family::ddm, Family::rdm};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);  // needs class scope
  cfg.scope = Scope::model_class;
  CHECK_NOTHROW(cfg.validate());
  cfg.family_probs = {0.5};
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.family_probs.clear();
  cfg.structure.r_max = 2;
  cfg.preset = Preset::interaction;  // needs 4 columns
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  CHECK(parse_scope("class") == Scope::model_class);
  CHECK(std::string(scope_name(Scope::instance)) == "instance");
}
