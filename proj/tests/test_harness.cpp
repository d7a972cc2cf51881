#include <catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <limits>
#include <fstream>
#include <sstream>

#include "fedsl/harness.hpp"

using namespace fedsl;
using Catch::Matchers::WithinAbs;

namespace {

RunConfig small_config(std::string preset = "experiment-1") {
  auto cfg = preset_config(preset);
  cfg.horizon = 60;
  cfg.realizations = 12;
  cfg.record_every = 10;
  cfg.estimator_samples = 20'000;
  cfg.seed = 7;
  return cfg;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("fedsl_test_harness_" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST_CASE("presets carry the experiment setup", "[harness]") {
  const auto e1 = preset_config("experiment-1");
  CHECK(e1.environment.agent_count() == 10);
  CHECK(std::vector<double>(e1.weights.values().begin(), e1.weights.values().end()) ==
        std::vector<double>{0.13, 0.2, 0.09, 0.15, 0.08, 0.05, 0.1, 0.05, 0.1, 0.05});
  CHECK(e1.horizon == 5000);
  CHECK(e1.realizations == 500);
  CHECK(e1.seed == 1);
  CHECK(e1.record_every == 50);
  CHECK_FALSE(e1.environment.is_correlated());

  const auto e2 = preset_config("experiment-2");
  CHECK(std::get<ExponentialFamily>(e2.environment.agent(3).family()).means ==
        std::vector<double>{1.0, 0.5});

  const auto e3 = preset_config("experiment-3");
  const auto c = e3.environment.correlation_matrix();
  CHECK(c[0] == 1.0);
  CHECK(c[1] == 0.95);
  CHECK(c[10 * 10 - 1] == 1.0);

  CHECK_THROWS_AS(preset_config("experiment-4"), Error);
}

TEST_CASE("validate rejects broken configurations", "[harness]") {
  auto cfg = small_config();
  cfg.realizations = 0;
  try {
    validate(cfg);
    FAIL("expected ConfigInvalid");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kConfigInvalid);
    CHECK(e.field() == "realizations");
  }

  cfg = small_config();
  cfg.horizon = 0;
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::kConfigInvalid);

  cfg = small_config();
  cfg.rules = {PoolingRule::kGeometric, PoolingRule::kGeometric};
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::kConfigInvalid);

  cfg = small_config();
  cfg.initial_belief = {0.0, 1.0};
  CHECK(code_of([&] { validate(cfg); }) == ErrorCode::kConfigInvalid);

  auto blind = small_config();
  blind.environment = Environment::independent(
      std::vector<AgentModel>(10, AgentModel::gaussian({0.0, 0.0}, 1.0)));
  CHECK(code_of([&] { validate(blind); }) == ErrorCode::kIdentifiabilityFailure);
  blind.allow_unidentifiable = true;
  CHECK_NOTHROW(validate(blind));
}

TEST_CASE("single realization, single round", "[harness]") {
  auto cfg = small_config();
  cfg.realizations = 1;
  cfg.horizon = 1;
  const auto rep = run_experiment(cfg, {1});
  REQUIRE(rep.rules.size() == 2);
  for (const auto& rr : rep.rules) {
    REQUIRE(rr.hypotheses.size() == 1);
    CHECK(rr.hypotheses[0].lambda.size() == 1);
    CHECK_FALSE(rr.hypotheses[0].moments.has_value());
    REQUIRE(rr.hypotheses[0].tests.size() == 1);
    CHECK(rr.hypotheses[0].tests[0].test == stats::TestKind::kKolmogorovSmirnov);
    REQUIRE(rr.error_curve.size() == 1);
    CHECK(rr.error_curve[0].time == 1);
  }
}

TEST_CASE("aggregate equals the concatenation of single realizations", "[harness]") {
  const auto cfg = small_config();
  const auto rep = run_experiment(cfg, {2});
  const auto params = compute_params(cfg);
  std::vector<RealizationResult> singles;
  for (std::size_t r = 0; r < cfg.realizations; ++r)
    singles.push_back(simulate_realization(cfg, r, params));
  for (std::size_t j = 0; j < cfg.rules.size(); ++j)
    for (std::size_t r = 0; r < cfg.realizations; ++r)
      REQUIRE(rep.rules[j].hypotheses[0].lambda[r] == singles[r].rules[j].lambda[1]);
  const auto again = aggregate(cfg, params, singles);
  CHECK(to_json(again, cfg.hypotheses) == to_json(rep, cfg.hypotheses));
  CHECK(singles[3].stream_key == derive_stream_key(cfg.seed, 3, StreamRole::kObservations));
}

TEST_CASE("rules share observation streams", "[harness]") {
  auto both = small_config();
  auto ga_only = both;
  ga_only.rules = {PoolingRule::kGeometric};
  const auto a = run_experiment(both, {1});
  const auto b = run_experiment(ga_only, {1});
  CHECK(a.find(PoolingRule::kGeometric)->hypotheses[0].lambda ==
        b.find(PoolingRule::kGeometric)->hypotheses[0].lambda);
  CHECK(b.jensen.empty());
  CHECK(a.jensen.size() == 1);
  CHECK(code_of([&] { (void)compare_rules(b); }) == ErrorCode::kMissingRule);
}

TEST_CASE("single agent gives identical error rates for both rules", "[harness]") {
  auto cfg = small_config();
  cfg.environment = Environment::independent({AgentModel::gaussian({0.0, 0.3}, 1.0)});
  cfg.weights = ConfidenceWeights({1.0});
  cfg.horizon = 40;
  cfg.realizations = 200;
  const auto cmp = compare_rules(run_experiment(cfg, {1}));
  REQUIRE_FALSE(cmp.rows.empty());
  bool any_error = false;
  for (const auto& row : cmp.rows) {
    CHECK(row.aa.errors == row.ga.errors);
    any_error = any_error || row.aa.errors > 0;
  }
  CHECK(any_error);
}

TEST_CASE("outputs are byte-identical across thread counts", "[harness]") {
  auto cfg = small_config("experiment-2");
  cfg.write_trajectories = true;
  const auto d1 = scratch_dir("t1");
  const auto d3 = scratch_dir("t3");
  write_outputs(run_experiment(cfg, {1}), cfg.hypotheses, d1);
  write_outputs(run_experiment(cfg, {3}), cfg.hypotheses, d3);
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(d1)) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), d1);
    INFO(rel.string());
    REQUIRE(std::filesystem::exists(d3 / rel));
    CHECK(slurp(entry.path()) == slurp(d3 / rel));
    ++files;
  }
  // report, 2 x lambda_tilde, 2 x histogram, 2 x 12 trajectories
  CHECK(files == 1 + 2 + 2 + 24);

  const auto traj = slurp(d1 / "trajectories" / "realization_00000_ga.csv");
  CHECK(traj.rfind("time,log_mu_0,log_mu_1,lambda_0,lambda_1\n0,", 0) == 0);
  const auto lt = slurp(d1 / "lambda_tilde_aa.csv");
  CHECK(lt.rfind("realization,theta,lambda,lambda_tilde\n", 0) == 0);
  const auto report = nlohmann::json::parse(slurp(d1 / "report.json"));
  CHECK(report.at("realizations") == 12);
  CHECK(report.at("rules").size() == 2);
  std::filesystem::remove_all(d1);
  std::filesystem::remove_all(d3);
}

TEST_CASE("error curve and predictions", "[harness]") {
  auto cfg = small_config();
  const auto rep = run_experiment(cfg, {1});
  for (const auto& rr : rep.rules) {
    REQUIRE(rr.error_curve.size() == 6);
    for (const auto& pt : rr.error_curve) {
      CHECK(pt.rate >= 0.0);
      CHECK(pt.rate <= 1.0);
      CHECK(pt.interval.lower <= pt.rate);
      CHECK(pt.interval.upper >= pt.rate);
      CHECK(pt.predicted ==
            error_prob_approx(rr.hypotheses[0].params, pt.time));
    }
    CHECK(rr.diagnostic_fraction >= 0.0);
    CHECK(rr.diagnostic_fraction <= 1.0);
  }
  const auto& ga = *rep.find(PoolingRule::kGeometric);
  CHECK(ga.hypotheses[0].params.rho == 0.5);
}

TEST_CASE("format_real", "[harness]") {
  CHECK(format_real(0.1) == "0.10000000000000001");
  CHECK(format_real(-std::numeric_limits<double>::infinity()) == "-inf");
  CHECK(format_real(2.0) == "2");
}

TEST_CASE("parallel_for rethrows the lowest failing index", "[harness]") {
  for (std::size_t threads : {1u, 4u}) {
    std::vector<int> seen(64, 0);
    try {
      parallel_for(64, threads, [&](std::size_t i) {
        seen[i] = 1;
        if (i % 10 == 7) throw Error(ErrorCode::kNonFinite, "boom").in_realization(i);
      });
      FAIL("expected an exception");
    } catch (const Error& e) {
      CHECK(e.realization() == std::optional<std::size_t>{7});
    }
    if (threads > 1) CHECK(std::count(seen.begin(), seen.end(), 1) == 64);
  }
}
