#pragma once

// Monte Carlo orchestration: R independent realizations of one configured
// star system, run in lockstep for every requested pooling rule on shared
// observation streams, then reduced in realization order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "fedsl/asymptotics.hpp"
#include "fedsl/core_model.hpp"
#include "fedsl/error.hpp"
#include "fedsl/likelihoods.hpp"
#include "fedsl/parallel.hpp"
#include "fedsl/pooling.hpp"
#include "fedsl/random.hpp"
#include "fedsl/stats.hpp"

namespace fedsl {

struct RunConfig {
  std::string name = {};
  Environment environment;
  HypothesisSet hypotheses;
  ConfidenceWeights weights;
  std::vector<PoolingRule> rules = {PoolingRule::kArithmetic, PoolingRule::kGeometric};
  std::size_t horizon = 5000;
  std::size_t realizations = 500;
  std::uint64_t seed = 1;
  std::size_t record_every = 50;
  std::vector<double> initial_belief = {};  // empty means uniform
  std::string output_dir = "out";
  std::size_t estimator_samples = kDefaultEstimatorSamples;
  bool write_trajectories = false;
  std::size_t histogram_bins = 0;  // 0 picks Sturges
  bool allow_unidentifiable = false;
  double diagnostic_epsilon = 0.5;  // as a fraction of rho
  double diagnostic_start = 0.2;    // as a fraction of the horizon

  Belief initial() const {
    return initial_belief.empty() ? Belief::uniform(hypotheses.size())
                                  : Belief::from_probabilities(initial_belief);
  }

  bool operator==(const RunConfig&) const = default;
};

inline std::size_t default_record_every(std::size_t horizon) {
  return std::max<std::size_t>(1, horizon / 100);
}

inline std::size_t diagnostic_start_time(const RunConfig& cfg) {
  const auto t = static_cast<std::size_t>(
      std::llround(cfg.diagnostic_start * static_cast<double>(cfg.horizon)));
  return std::max<std::size_t>(1, t);
}

/// Recorded times at which the error curve is evaluated (time 0 excluded).
inline std::vector<std::size_t> error_curve_times(const RunConfig& cfg) {
  std::vector<std::size_t> times;
  for (std::size_t t = 1; t <= cfg.horizon; ++t)
    if (is_recorded_time(t, cfg.horizon, cfg.record_every)) times.push_back(t);
  return times;
}

namespace detail {

inline Error invalid(std::string field, const std::string& what) {
  return Error(ErrorCode::kConfigInvalid, what).for_field(std::move(field));
}

}  // namespace detail

/// Structural checks plus the identifiability gate.
inline void validate(const RunConfig& cfg) {
  using detail::invalid;
  if (cfg.realizations < 1) throw invalid("realizations", "must be >= 1");
  if (cfg.horizon < 1) throw invalid("horizon", "must be >= 1");
  if (cfg.record_every < 1) throw invalid("record_every", "must be >= 1");
  if (cfg.rules.empty()) throw invalid("rules", "at least one pooling rule required");
  for (std::size_t i = 0; i < cfg.rules.size(); ++i)
    for (std::size_t j = i + 1; j < cfg.rules.size(); ++j)
      if (cfg.rules[i] == cfg.rules[j]) throw invalid("rules", "duplicate pooling rule");
  if (cfg.environment.hypotheses() != cfg.hypotheses.size())
    throw invalid("agents", "every agent must model exactly the configured hypotheses");
  if (cfg.weights.size() != cfg.environment.agent_count())
    throw invalid("weights", "one weight per agent required");
  if (cfg.estimator_samples < kMinMonteCarloSamples)
    throw invalid("estimator_samples", "must be >= 10000");
  if (!(cfg.diagnostic_epsilon > 0.0 && cfg.diagnostic_epsilon <= 1.0))
    throw invalid("diagnostic.epsilon_fraction", "must lie in (0, 1]");
  if (!(cfg.diagnostic_start >= 0.0 && cfg.diagnostic_start <= 1.0))
    throw invalid("diagnostic.start_fraction", "must lie in [0, 1]");
  if (!cfg.initial_belief.empty()) {
    if (cfg.initial_belief.size() != cfg.hypotheses.size())
      throw invalid("initial_belief", "one probability per hypothesis required");
    try {
      if (cfg.initial().probability(cfg.hypotheses.true_index()) <= 0.0)
        throw invalid("initial_belief", "the true hypothesis must have positive mass");
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfigInvalid) throw;
      throw invalid("initial_belief", e.what());
    }
  }
  if (!cfg.allow_unidentifiable) {
    const auto report = check_global_identifiability(cfg.environment, cfg.hypotheses);
    if (!report.passed) {
      std::string list;
      for (std::size_t theta : report.undistinguished()) {
        if (!list.empty()) list += ", ";
        list += cfg.hypotheses.label(theta);
      }
      throw Error(ErrorCode::kIdentifiabilityFailure,
                  "no agent distinguishes the truth from: " + list);
    }
  }
}

//---------------------------------------------------------------------------//
// Presets
//---------------------------------------------------------------------------//

inline const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names = {"experiment-1", "experiment-2", "experiment-3"};
  return names;
}

inline const std::vector<double>& preset_weights() {
  static const std::vector<double> w = {0.13, 0.2, 0.09, 0.15, 0.08, 0.05, 0.1, 0.05, 0.1, 0.05};
  return w;
}

/// The three K = 10 binary experiments: Gaussian 0 vs 1, exponential mean 1
/// vs 0.5, and Gaussian 0 vs 1 with 0.95 equicorrelation.
inline RunConfig preset_config(std::string_view name) {
  constexpr std::size_t kAgents = 10;
  auto base = [&](Environment env) {
    return RunConfig{.name = std::string(name),
                     .environment = std::move(env),
                     .hypotheses = HypothesisSet(2, 0),
                     .weights = ConfidenceWeights(preset_weights()),
                     .record_every = default_record_every(5000)};
  };
  const std::vector<AgentModel> gaussian(kAgents, AgentModel::gaussian({0.0, 1.0}, 1.0));
  if (name == "experiment-1") return base(Environment::independent(gaussian));
  if (name == "experiment-2")
    return base(
        Environment::independent(std::vector<AgentModel>(kAgents, AgentModel::exponential({1.0, 0.5}))));
  if (name == "experiment-3") {
    std::vector<double> corr(kAgents * kAgents, 0.95);
    for (std::size_t k = 0; k < kAgents; ++k) corr[k * kAgents + k] = 1.0;
    return base(Environment::correlated(gaussian, corr));
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown preset '" + std::string(name) + "'")
      .for_field("preset");
}

//---------------------------------------------------------------------------//
// Simulation
//---------------------------------------------------------------------------//

struct ExecutionOptions {
  std::size_t threads = default_thread_count();
};

/// Normality constants of one rule, one entry per wrong hypothesis.
struct RuleParams {
  PoolingRule rule = PoolingRule::kGeometric;
  std::vector<NormalityParams> per_theta;
};

inline std::vector<RuleParams> compute_params(const RunConfig& cfg, std::size_t threads = 1) {
  const EstimatorOptions opts{cfg.estimator_samples, cfg.seed, threads};
  std::vector<RuleParams> out;
  for (PoolingRule rule : cfg.rules) {
    RuleParams rp{rule, {}};
    for (std::size_t theta : cfg.hypotheses.wrong_hypotheses())
      rp.per_theta.push_back(
          normality_params(rule, cfg.environment, cfg.hypotheses, cfg.weights, theta, opts));
    out.push_back(std::move(rp));
  }
  return out;
}

struct RuleTrace {
  std::vector<double> lambda;        // at the horizon, indexed by hypothesis
  std::vector<std::uint8_t> errors;  // one flag per error_curve_times entry
  bool bound_held = true;
  std::optional<TrajectoryRecord> trajectory;

  bool operator==(const RuleTrace&) const = default;
};

struct RealizationResult {
  std::size_t index = 0;
  std::uint64_t stream_key = 0;
  std::vector<RuleTrace> rules;  // same order as RunConfig::rules

  bool operator==(const RealizationResult&) const = default;
};

/// One realization, every configured rule on the same observation rounds.
/// The error event at a recorded time is min over wrong theta of
/// lambda(theta) <= 0, so ties count as errors. The bound diagnostic checks
/// log mu(theta) <= -t (rho_theta - eps_theta) for all t >= start time.
inline RealizationResult simulate_realization(const RunConfig& cfg, std::size_t r,
                                              std::span<const RuleParams> params,
                                              bool keep_trajectory = false) {
  const auto& env = cfg.environment;
  const auto& hs = cfg.hypotheses;
  const std::size_t h = hs.size();
  const std::size_t truth = hs.true_index();
  const auto wrong = hs.wrong_hypotheses();
  const std::size_t start = diagnostic_start_time(cfg);
  const std::size_t n_rules = cfg.rules.size();

  RealizationResult out;
  out.index = r;
  out.stream_key = derive_stream_key(cfg.seed, r, StreamRole::kObservations);
  out.rules.resize(n_rules);

  try {
    RandomStream rng(out.stream_key);
    Environment::Sampler sampler(env);
    const Belief initial = cfg.initial();
    std::vector<SocialLearner> learners;
    learners.reserve(n_rules);
    std::vector<std::vector<double>> bound_slope(n_rules, std::vector<double>(h, 0.0));
    for (std::size_t j = 0; j < n_rules; ++j) {
      learners.emplace_back(env, cfg.weights, cfg.rules[j], initial, truth);
      for (std::size_t w = 0; w < wrong.size(); ++w) {
        const double rho = params[j].per_theta[w].rho;
        bound_slope[j][wrong[w]] = rho * (1.0 - cfg.diagnostic_epsilon);
      }
      if (keep_trajectory) {
        out.rules[j].trajectory.emplace(r, out.stream_key, h, truth);
        out.rules[j].trajectory->append(0, learners[j].log_belief());
      }
    }

    std::vector<Observation> round(env.agent_count());
    for (std::size_t t = 1; t <= cfg.horizon; ++t) {
      sampler.draw(truth, rng, round);
      const bool recorded = is_recorded_time(t, cfg.horizon, cfg.record_every);
      for (std::size_t j = 0; j < n_rules; ++j) {
        learners[j].step(round);
        const auto log_mu = learners[j].log_belief();
        auto& trace = out.rules[j];
        if (t >= start && trace.bound_held) {
          const double td = static_cast<double>(t);
          for (std::size_t theta : wrong)
            if (log_mu[theta] > -td * bound_slope[j][theta]) trace.bound_held = false;
        }
        if (recorded) {
          bool error = false;
          for (std::size_t theta : wrong) error = error || log_mu[truth] - log_mu[theta] <= 0.0;
          trace.errors.push_back(error ? 1 : 0);
          if (keep_trajectory) trace.trajectory->append(t, log_mu);
        }
      }
    }
    for (std::size_t j = 0; j < n_rules; ++j) {
      out.rules[j].lambda.resize(h);
      log_belief_ratio_into(learners[j].log_belief(), truth, out.rules[j].lambda);
    }
  } catch (Error& e) {
    e.in_realization(r);
    throw;
  }
  return out;
}

//---------------------------------------------------------------------------//
// Aggregation
//---------------------------------------------------------------------------//

struct HypothesisSummary {
  std::size_t theta = 0;
  NormalityParams params;
  std::vector<double> lambda;        // at the horizon, one per realization
  std::vector<double> lambda_tilde;  // normalized, one per realization
  std::optional<stats::Moments> moments;
  std::vector<stats::TestResult> tests;  // KS always, Shapiro-Wilk when 3 <= R <= 5000
  stats::Histogram histogram;
};

struct ErrorPoint {
  std::size_t time = 0;
  std::size_t errors = 0;
  double rate = 0.0;
  stats::Interval interval;
  double predicted = 0.0;
};

struct RuleReport {
  PoolingRule rule = PoolingRule::kGeometric;
  std::vector<HypothesisSummary> hypotheses;
  std::vector<ErrorPoint> error_curve;
  double diagnostic_fraction = 0.0;
  std::vector<TrajectoryRecord> trajectories;
};

struct AggregateReport {
  std::string name = {};
  std::uint64_t seed = 0;
  std::size_t horizon = 0;
  std::size_t realizations = 0;
  std::size_t record_every = 0;
  double diagnostic_epsilon = 0.0;
  std::size_t diagnostic_start = 0;
  std::vector<RuleReport> rules;
  std::vector<JensenGap> jensen;  // only when both rules ran

  const RuleReport* find(PoolingRule rule) const {
    for (const auto& r : rules)
      if (r.rule == rule) return &r;
    return nullptr;
  }
};

/// Deterministic reduction of per-realization results in the given order.
inline AggregateReport aggregate(const RunConfig& cfg, std::span<const RuleParams> params,
                                 std::span<const RealizationResult> results) {
  AggregateReport rep;
  rep.name = cfg.name;
  rep.seed = cfg.seed;
  rep.horizon = cfg.horizon;
  rep.realizations = results.size();
  rep.record_every = cfg.record_every;
  rep.diagnostic_epsilon = cfg.diagnostic_epsilon;
  rep.diagnostic_start = diagnostic_start_time(cfg);
  const auto wrong = cfg.hypotheses.wrong_hypotheses();
  const auto times = error_curve_times(cfg);
  const std::size_t n = results.size();
  const std::size_t bins = cfg.histogram_bins ? cfg.histogram_bins : stats::sturges_bins(n);

  for (std::size_t j = 0; j < cfg.rules.size(); ++j) {
    RuleReport rr;
    rr.rule = cfg.rules[j];
    for (std::size_t w = 0; w < wrong.size(); ++w) {
      HypothesisSummary hsum;
      hsum.theta = wrong[w];
      hsum.params = params[j].per_theta[w];
      for (const auto& res : results) {
        const double lam = res.rules[j].lambda[wrong[w]];
        hsum.lambda.push_back(lam);
        hsum.lambda_tilde.push_back(normalize_statistic(lam, hsum.params, cfg.horizon));
      }
      if (n >= 2) hsum.moments = stats::sample_moments(hsum.lambda_tilde);
      hsum.tests.push_back(stats::ks_test_normal(hsum.lambda_tilde));
      if (n >= 3 && n <= 5000) hsum.tests.push_back(stats::shapiro_wilk(hsum.lambda_tilde));
      hsum.histogram = stats::histogram_density(hsum.lambda_tilde, bins);
      rr.hypotheses.push_back(std::move(hsum));
    }
    for (std::size_t k = 0; k < times.size(); ++k) {
      ErrorPoint pt;
      pt.time = times[k];
      for (const auto& res : results) pt.errors += res.rules[j].errors[k];
      pt.rate = n ? static_cast<double>(pt.errors) / static_cast<double>(n) : 0.0;
      pt.interval = stats::wilson_interval(pt.errors, n);
      pt.predicted = error_prob_union(params[j].per_theta, pt.time);
      rr.error_curve.push_back(pt);
    }
    std::size_t inside = 0;
    for (const auto& res : results) {
      if (res.rules[j].bound_held) ++inside;
      if (res.rules[j].trajectory) rr.trajectories.push_back(*res.rules[j].trajectory);
    }
    rr.diagnostic_fraction = n ? static_cast<double>(inside) / static_cast<double>(n) : 0.0;
    rep.rules.push_back(std::move(rr));
  }

  const auto aa = std::find(cfg.rules.begin(), cfg.rules.end(), PoolingRule::kArithmetic);
  const auto ga = std::find(cfg.rules.begin(), cfg.rules.end(), PoolingRule::kGeometric);
  if (aa != cfg.rules.end() && ga != cfg.rules.end()) {
    const auto& pa = params[static_cast<std::size_t>(aa - cfg.rules.begin())];
    const auto& pg = params[static_cast<std::size_t>(ga - cfg.rules.begin())];
    for (std::size_t w = 0; w < wrong.size(); ++w)
      rep.jensen.push_back(jensen_gap(pg.per_theta[w], pa.per_theta[w]));
  }
  return rep;
}

/// Validate, estimate constants, simulate R realizations in parallel and
/// reduce. The result does not depend on exec.threads.
inline AggregateReport run_experiment(const RunConfig& cfg, const ExecutionOptions& exec = {}) {
  validate(cfg);
  const auto params = compute_params(cfg, exec.threads);
  std::vector<RealizationResult> results(cfg.realizations);
  parallel_for(cfg.realizations, exec.threads, [&](std::size_t r) {
    results[r] = simulate_realization(cfg, r, params, cfg.write_trajectories);
  });
  return aggregate(cfg, params, results);
}

//---------------------------------------------------------------------------//
// Rule comparison
//---------------------------------------------------------------------------//

struct ComparisonRow {
  std::size_t time = 0;
  ErrorPoint aa;
  ErrorPoint ga;
};

struct RuleComparison {
  std::vector<ComparisonRow> rows;
  std::vector<std::pair<NormalityParams, NormalityParams>> params;  // (aa, ga) per wrong theta
  std::vector<JensenGap> jensen;
};

inline RuleComparison compare_rules(const AggregateReport& report) {
  const auto* aa = report.find(PoolingRule::kArithmetic);
  const auto* ga = report.find(PoolingRule::kGeometric);
  if (!aa || !ga)
    throw Error(ErrorCode::kMissingRule, "comparison needs results for both aa and ga");
  RuleComparison cmp;
  for (std::size_t k = 0; k < aa->error_curve.size(); ++k)
    cmp.rows.push_back({aa->error_curve[k].time, aa->error_curve[k], ga->error_curve[k]});
  for (std::size_t w = 0; w < aa->hypotheses.size(); ++w)
    cmp.params.emplace_back(aa->hypotheses[w].params, ga->hypotheses[w].params);
  cmp.jensen = report.jensen;
  return cmp;
}

//---------------------------------------------------------------------------//
// Output
//---------------------------------------------------------------------------//

/// 17 significant digits; infinities as "inf" / "-inf".
inline std::string format_real(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline nlohmann::json to_json(const NormalityParams& p) {
  return {{"rule", to_string(p.rule)},
          {"theta", p.theta},
          {"rho", p.rho},
          {"sigma2", p.sigma2},
          {"estimation", to_string(p.estimation)},
          {"samples", p.samples},
          {"std_error_rho", p.std_error_rho},
          {"std_error_sigma2", p.std_error_sigma2},
          {"seed", p.seed}};
}

inline nlohmann::json to_json(const stats::TestResult& t) {
  return {{"test", to_string(t.test)}, {"statistic", t.statistic}, {"p_value", t.p_value}, {"n", t.n}};
}

inline nlohmann::json to_json(const JensenGap& g) {
  return {{"theta", g.theta},
          {"rho_g", g.rho_g},
          {"rho_a", g.rho_a},
          {"std_error_rho_a", g.std_error_rho_a},
          {"gap", g.gap()},
          {"holds", g.holds}};
}

inline nlohmann::json to_json(const AggregateReport& rep, const HypothesisSet& hs) {
  nlohmann::json rules = nlohmann::json::array();
  for (const auto& rr : rep.rules) {
    nlohmann::json hyps = nlohmann::json::array();
    for (const auto& h : rr.hypotheses) {
      nlohmann::json tests = nlohmann::json::array();
      for (const auto& t : h.tests) tests.push_back(to_json(t));
      nlohmann::json entry = {{"theta", h.theta},
                              {"label", hs.label(h.theta)},
                              {"params", to_json(h.params)},
                              {"tests", tests}};
      if (h.moments)
        entry["lambda_tilde"] = {{"mean", h.moments->mean}, {"variance", h.moments->variance}};
      hyps.push_back(std::move(entry));
    }
    nlohmann::json curve = nlohmann::json::array();
    for (const auto& pt : rr.error_curve)
      curve.push_back({{"time", pt.time},
                       {"errors", pt.errors},
                       {"rate", pt.rate},
                       {"ci_lower", pt.interval.lower},
                       {"ci_upper", pt.interval.upper},
                       {"predicted", pt.predicted}});
    rules.push_back({{"rule", to_string(rr.rule)},
                     {"hypotheses", hyps},
                     {"error_curve", curve},
                     {"diagnostic",
                      {{"epsilon_fraction", rep.diagnostic_epsilon},
                       {"start_time", rep.diagnostic_start},
                       {"fraction", rr.diagnostic_fraction}}}});
  }
  nlohmann::json jensen = nlohmann::json::array();
  for (const auto& g : rep.jensen) jensen.push_back(to_json(g));
  return {{"name", rep.name},
          {"seed", rep.seed},
          {"horizon", rep.horizon},
          {"realizations", rep.realizations},
          {"record_every", rep.record_every},
          {"rules", rules},
          {"jensen", jensen}};
}

namespace detail {

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kInvalidArgument, "cannot write " + path.string());
  return out;
}

}  // namespace detail

inline void write_trajectory_csv(const TrajectoryRecord& rec, const HypothesisSet& hs,
                                 const std::filesystem::path& path) {
  auto out = detail::open_output(path);
  out << "time";
  for (std::size_t t = 0; t < hs.size(); ++t) out << ",log_mu_" << hs.label(t);
  for (std::size_t t = 0; t < hs.size(); ++t) out << ",lambda_" << hs.label(t);
  out << '\n';
  for (std::size_t row = 0; row < rec.size(); ++row) {
    out << rec.times()[row];
    for (double v : rec.log_belief(row)) out << ',' << format_real(v);
    for (double v : rec.lambda(row)) out << ',' << format_real(v);
    out << '\n';
  }
}

/// report.json, lambda_tilde_{rule}.csv, histogram_{rule}.csv and, when the
/// report carries them, trajectories/realization_{r}_{rule}.csv.
inline void write_outputs(const AggregateReport& rep, const HypothesisSet& hs,
                          const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::open_output(dir / "report.json") << to_json(rep, hs).dump(2) << '\n';
  for (const auto& rr : rep.rules) {
    const std::string rule(to_string(rr.rule));
    auto lt = detail::open_output(dir / ("lambda_tilde_" + rule + ".csv"));
    lt << "realization,theta,lambda,lambda_tilde\n";
    for (const auto& h : rr.hypotheses)
      for (std::size_t r = 0; r < h.lambda.size(); ++r)
        lt << r << ',' << hs.label(h.theta) << ',' << format_real(h.lambda[r]) << ','
           << format_real(h.lambda_tilde[r]) << '\n';

    auto hist = detail::open_output(dir / ("histogram_" + rule + ".csv"));
    hist << "theta,bin_left,bin_right,density\n";
    for (const auto& h : rr.hypotheses)
      for (std::size_t b = 0; b < h.histogram.densities.size(); ++b)
        hist << hs.label(h.theta) << ',' << format_real(h.histogram.edges[b]) << ','
             << format_real(h.histogram.edges[b + 1]) << ','
             << format_real(h.histogram.densities[b]) << '\n';

    if (!rr.trajectories.empty()) {
      std::filesystem::create_directories(dir / "trajectories");
      for (const auto& rec : rr.trajectories) {
        char name[64];
        std::snprintf(name, sizeof name, "realization_%05zu_%s.csv", rec.realization_index(),
                      rule.c_str());
        write_trajectory_csv(rec, hs, dir / "trajectories" / name);
      }
    }
  }
}

}  // namespace fedsl
