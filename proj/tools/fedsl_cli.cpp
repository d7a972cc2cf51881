// fedsl: run and inspect star-topology social learning experiments.
//
//   fedsl simulate --config run.json [--out DIR] [overrides]
//   fedsl preset experiment-1 [--emit] [--out DIR] [overrides]
//   fedsl params (--config run.json | --preset NAME)
//   fedsl normality lambda_tilde_ga.csv
//   fedsl validate --config run.json
//
// Exit codes: 0 ok, 2 parse / usage, 3 validation, 4 runtime.

#include <CLI11.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>

#include "fedsl/config.hpp"
#include "fedsl/harness.hpp"

namespace {

using namespace fedsl;

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> realizations;
  std::optional<std::size_t> horizon;
  std::optional<std::string> rule;
  std::optional<std::size_t> record_every;
  std::size_t threads = default_thread_count();

  void attach(CLI::App& app) {
    app.add_option("--out", out, "Output directory");
    app.add_option("--seed", seed, "Master seed");
    app.add_option("--realizations", realizations, "Number of realizations R");
    app.add_option("--horizon", horizon, "Time horizon i");
    app.add_option("--rule", rule, "Pooling rule")->check(CLI::IsMember({"aa", "ga", "both"}));
    app.add_option("--threads", threads, "Worker threads")->check(CLI::PositiveNumber);
    app.add_option("--record-every", record_every, "Recording stride");
  }

  void apply(RunConfig& cfg) const {
    if (out) cfg.output_dir = *out;
    if (seed) cfg.seed = *seed;
    if (realizations) cfg.realizations = *realizations;
    if (horizon) cfg.horizon = *horizon;
    if (record_every) cfg.record_every = *record_every;
    if (rule) {
      if (*rule == "both")
        cfg.rules = {PoolingRule::kArithmetic, PoolingRule::kGeometric};
      else
        cfg.rules = {*parse_rule(*rule)};
    }
  }
};

void log_summary(const AggregateReport& rep, const HypothesisSet& hs) {
  for (const auto& rr : rep.rules) {
    for (const auto& h : rr.hypotheses) {
      std::cerr << to_string(rr.rule) << " theta=" << hs.label(h.theta)
                << " rho=" << format_real(h.params.rho) << " sigma2=" << format_real(h.params.sigma2);
      for (const auto& t : h.tests) std::cerr << ' ' << to_string(t.test) << "_p=" << t.p_value;
      std::cerr << '\n';
    }
    if (!rr.error_curve.empty())
      std::cerr << to_string(rr.rule) << " error(i=" << rr.error_curve.back().time
                << ")=" << rr.error_curve.back().rate
                << " diagnostic_fraction=" << rr.diagnostic_fraction << '\n';
  }
  for (const auto& g : rep.jensen)
    std::cerr << "jensen theta=" << hs.label(g.theta) << " gap=" << g.gap()
              << (g.holds ? " holds" : " VIOLATED") << '\n';
}

int run(RunConfig cfg, const Overrides& ov) {
  ov.apply(cfg);
  std::cerr << "running " << (cfg.name.empty() ? "config" : cfg.name) << ": R=" << cfg.realizations
            << " i=" << cfg.horizon << " seed=" << cfg.seed << " threads=" << ov.threads << '\n';
  const auto report = run_experiment(cfg, {ov.threads});
  write_outputs(report, cfg.hypotheses, cfg.output_dir);
  log_summary(report, cfg.hypotheses);
  std::cerr << "wrote " << cfg.output_dir << '\n';
  return 0;
}

int print_params(const RunConfig& cfg, std::size_t threads) {
  validate(cfg);
  nlohmann::json out = nlohmann::json::array();
  for (const auto& rp : compute_params(cfg, threads))
    for (const auto& p : rp.per_theta) out.push_back(to_json(p));
  std::cout << out.dump(2) << '\n';
  return 0;
}

/// Tests the lambda_tilde column of a CSV against N(0, 1), grouped by theta
/// when a theta column is present.
int test_normality(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorCode::kParseError, "empty CSV " + path);
  std::vector<std::string> header;
  {
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) header.push_back(cell);
  }
  const auto find = [&](const std::string& name) -> std::optional<std::size_t> {
    for (std::size_t c = 0; c < header.size(); ++c)
      if (header[c] == name) return c;
    return std::nullopt;
  };
  std::optional<std::size_t> value_col = find("lambda_tilde");
  if (!value_col && header.size() == 1) value_col = 0;
  if (!value_col) throw Error(ErrorCode::kParseError, "CSV has no lambda_tilde column");
  const auto theta_col = find("theta");

  std::map<std::string, std::vector<double>> groups;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != header.size())
      throw Error(ErrorCode::kParseError, "row " + std::to_string(row) + " has the wrong width");
    try {
      groups[theta_col ? cells[*theta_col] : ""].push_back(std::stod(cells[*value_col]));
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::kParseError, "row " + std::to_string(row) + " is not numeric");
    }
  }
  nlohmann::json out = nlohmann::json::array();
  for (const auto& [theta, values] : groups) {
    nlohmann::json tests = nlohmann::json::array();
    tests.push_back(to_json(stats::ks_test_normal(values)));
    if (values.size() >= 3 && values.size() <= 5000)
      tests.push_back(to_json(stats::shapiro_wilk(values)));
    nlohmann::json entry = {{"tests", tests}, {"n", values.size()}};
    if (theta_col) entry["theta"] = theta;
    out.push_back(entry);
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

int validate_only(const std::string& path) {
  nlohmann::json j;
  {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::kParseError, "cannot read config " + path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::kParseError, std::string("malformed JSON: ") + e.what());
    }
  }
  // Structural checks first with the gate off, then report identifiability.
  auto relaxed = j;
  relaxed["allow_unidentifiable"] = true;
  const auto cfg = config_from_json(relaxed);
  const auto report = check_global_identifiability(cfg.environment, cfg.hypotheses);
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : report.entries)
    entries.push_back({{"theta", cfg.hypotheses.label(e.theta)},
                       {"max_kl", e.max_kl},
                       {"best_agent", e.best_agent},
                       {"identifiable", e.identifiable}});
  std::cout << nlohmann::json{{"valid", true}, {"identifiable", report.passed}, {"hypotheses", entries}}
                   .dump(2)
            << '\n';
  if (!report.passed && !j.value("allow_unidentifiable", false)) {
    std::string list;
    for (std::size_t theta : report.undistinguished())
      list += (list.empty() ? "" : ", ") + cfg.hypotheses.label(theta);
    throw Error(ErrorCode::kIdentifiabilityFailure, "no agent distinguishes the truth from: " + list);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Star-topology social learning with arithmetic and geometric pooling"};
  app.require_subcommand(1, 1);

  Overrides sim_ov;
  std::string sim_config;
  auto* sim = app.add_subcommand("simulate", "Run a configuration file");
  sim->add_option("--config", sim_config, "Run configuration (JSON)")->required();
  sim_ov.attach(*sim);

  Overrides preset_ov;
  std::string preset_name;
  bool emit = false;
  auto* preset = app.add_subcommand("preset", "Run or emit one of the built-in experiments");
  preset->add_option("name", preset_name, "experiment-1 | experiment-2 | experiment-3")->required();
  preset->add_flag("--emit", emit, "Print the preset configuration and exit");
  preset_ov.attach(*preset);

  std::string params_config, params_preset;
  std::size_t params_threads = default_thread_count();
  auto* params = app.add_subcommand("params", "Compute normality constants only");
  auto* pc = params->add_option("--config", params_config, "Run configuration (JSON)");
  auto* pp = params->add_option("--preset", params_preset, "Preset name");
  pc->excludes(pp);
  params->add_option("--threads", params_threads, "Worker threads")->check(CLI::PositiveNumber);

  std::string csv_path;
  auto* normality = app.add_subcommand("normality", "Test a lambda_tilde CSV against N(0, 1)");
  normality->add_option("csv", csv_path, "CSV with a lambda_tilde column")->required();

  std::string validate_config;
  auto* val = app.add_subcommand("validate", "Check a configuration and identifiability");
  val->add_option("--config", validate_config, "Run configuration (JSON)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*sim) return run(parse_config(sim_config), sim_ov);
    if (*preset) {
      auto cfg = preset_config(preset_name);
      if (emit) {
        preset_ov.apply(cfg);
        std::cout << to_json(cfg).dump(2) << '\n';
        return 0;
      }
      return run(std::move(cfg), preset_ov);
    }
    if (*params) {
      if (params_config.empty() && params_preset.empty())
        throw Error(ErrorCode::kParseError, "params needs --config or --preset");
      return print_params(
          params_config.empty() ? preset_config(params_preset) : parse_config(params_config),
          params_threads);
    }
    if (*normality) return test_normality(csv_path);
    if (*val) return validate_only(validate_config);
  } catch (const Error& e) {
    std::cerr << "error: " << e.describe() << '\n';
    if (e.code() == ErrorCode::kInvalidArgument && e.field() == "preset") return 2;
    return exit_code(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
