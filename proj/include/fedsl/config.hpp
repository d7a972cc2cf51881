#pragma once

// JSON run configuration. Schema:
//
//   {
//     "name": "experiment-1",
//     "hypotheses": {"count": 2, "true_index": 0, "labels": ["h0", "h1"]},
//     "agents": [
//       {"family": "gaussian", "means": [0, 1], "std_dev": 1, "repeat": 10},
//       {"family": "exponential", "means": [1, 0.5]},
//       {"family": "categorical", "probabilities": [[0.2, 0.8], [0.5, 0.5]]}
//     ],
//     "correlation": [[1, 0.95], [0.95, 1]],          (optional, Gaussian only)
//     "weights": [0.5, 0.5],
//     "rules": ["aa", "ga"],
//     "horizon": 5000, "realizations": 500, "seed": 1,
//     "record_every": 50,                              (default max(1, horizon/100))
//     "initial_belief": "uniform" | [p_0, ..., p_H-1],
//     "output_dir": "out",
//     "estimator_samples": 1000000,
//     "trajectories": false,
//     "histogram_bins": 0,                             (0 picks Sturges)
//     "allow_unidentifiable": false,
//     "diagnostic": {"epsilon_fraction": 0.5, "start_fraction": 0.2}
//   }

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include <json.hpp>

#include "fedsl/error.hpp"
#include "fedsl/harness.hpp"

namespace fedsl {

/// 0 ok, 2 parse, 3 validation / identifiability, 4 anything at run time.
inline int exit_code(const Error& e) {
  switch (e.code()) {
    case ErrorCode::kParseError:
      return 2;
    case ErrorCode::kConfigInvalid:
    case ErrorCode::kIdentifiabilityFailure:
      return 3;
    default:
      return 4;
  }
}

namespace detail {

using nlohmann::json;

inline Error config_error(const std::string& field, const std::string& what) {
  return Error(ErrorCode::kConfigInvalid, what).for_field(field);
}

template <typename T>
T read_field(const json& j, const std::string& key, const std::string& path) {
  if (!j.contains(key)) throw config_error(path + key, "required field missing");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw config_error(path + key, "wrong type");
  }
}

template <typename T>
T read_field_or(const json& j, const std::string& key, const std::string& path, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  return read_field<T>(j, key, path);
}

inline std::size_t read_count(const json& j, const std::string& key, const std::string& path,
                              std::optional<std::size_t> fallback = std::nullopt) {
  if (!j.contains(key) || j.at(key).is_null()) {
    if (fallback) return *fallback;
    throw config_error(path + key, "required field missing");
  }
  const auto& v = j.at(key);
  if (!v.is_number_unsigned())
    throw config_error(path + key, "must be a non-negative integer");
  return v.get<std::size_t>();
}

inline AgentModel parse_agent(const json& a, const std::string& path) {
  if (!a.is_object()) throw config_error(path, "agent entry must be an object");
  const auto family = read_field<std::string>(a, "family", path + ".");
  try {
    if (family == "gaussian")
      return AgentModel::gaussian(read_field<std::vector<double>>(a, "means", path + "."),
                                  read_field<double>(a, "std_dev", path + "."));
    if (family == "exponential")
      return AgentModel::exponential(read_field<std::vector<double>>(a, "means", path + "."));
    if (family == "categorical")
      return AgentModel::categorical(
          read_field<std::vector<std::vector<double>>>(a, "probabilities", path + "."));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid) throw;
    throw config_error(path, e.what());
  }
  throw config_error(path + ".family", "unknown family '" + family + "'");
}

inline json agent_to_json(const AgentModel& m) {
  return std::visit(
      [](const auto& f) -> json {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, GaussianFamily>)
          return {{"family", "gaussian"}, {"means", f.means}, {"std_dev", f.std_dev}};
        else if constexpr (std::is_same_v<T, ExponentialFamily>)
          return {{"family", "exponential"}, {"means", f.means}};
        else
          return {{"family", "categorical"}, {"probabilities", f.rows}};
      },
      m.family());
}

}  // namespace detail

/// Build a RunConfig from parsed JSON, fill defaults and validate.
inline RunConfig config_from_json(const nlohmann::json& j) {
  using detail::config_error;
  using detail::read_count;
  using detail::read_field;
  using detail::read_field_or;
  if (!j.is_object()) throw config_error("", "top level must be an object");

  if (!j.contains("hypotheses")) throw config_error("hypotheses", "required field missing");
  const auto& hj = j.at("hypotheses");
  std::optional<HypothesisSet> hs;
  try {
    hs.emplace(read_count(hj, "count", "hypotheses."), read_count(hj, "true_index", "hypotheses.", 0),
               read_field_or<std::vector<std::string>>(hj, "labels", "hypotheses.", {}));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid) throw;
    throw config_error("hypotheses", e.what());
  }

  if (!j.contains("agents") || !j.at("agents").is_array() || j.at("agents").empty())
    throw config_error("agents", "non-empty array of agent models required");
  std::vector<AgentModel> agents;
  for (std::size_t i = 0; i < j.at("agents").size(); ++i) {
    const std::string path = "agents[" + std::to_string(i) + "]";
    const auto& a = j.at("agents")[i];
    const auto model = detail::parse_agent(a, path);
    const std::size_t repeat = read_count(a, "repeat", path + ".", 1);
    if (repeat < 1) throw config_error(path + ".repeat", "must be >= 1");
    agents.insert(agents.end(), repeat, model);
  }
  for (std::size_t k = 0; k < agents.size(); ++k)
    if (agents[k].hypotheses() != hs->size())
      throw config_error("agents[" + std::to_string(k) + "]",
                         "model must list one parameter per hypothesis");

  std::optional<Environment> env;
  try {
    if (j.contains("correlation") && !j.at("correlation").is_null()) {
      const auto rows = read_field<std::vector<std::vector<double>>>(j, "correlation", "");
      std::vector<double> flat;
      for (const auto& row : rows) {
        if (row.size() != agents.size())
          throw config_error("correlation", "must be K x K with K the number of agents");
        flat.insert(flat.end(), row.begin(), row.end());
      }
      if (rows.size() != agents.size())
        throw config_error("correlation", "must be K x K with K the number of agents");
      env.emplace(Environment::correlated(std::move(agents), std::move(flat)));
    } else {
      env.emplace(Environment::independent(std::move(agents)));
    }
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid) throw;
    throw config_error(e.field().empty() ? "correlation" : e.field(), e.what());
  }

  std::optional<ConfidenceWeights> weights;
  try {
    weights.emplace(read_field<std::vector<double>>(j, "weights", ""));
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kConfigInvalid) throw;
    throw config_error("weights", e.what());
  }

  const std::size_t horizon = read_count(j, "horizon", "");
  RunConfig cfg{.name = read_field_or<std::string>(j, "name", "", ""),
                .environment = std::move(*env),
                .hypotheses = *hs,
                .weights = std::move(*weights),
                .horizon = horizon,
                .realizations = read_count(j, "realizations", ""),
                .seed = read_field_or<std::uint64_t>(j, "seed", "", 1),
                .record_every = read_count(j, "record_every", "", default_record_every(horizon))};

  if (j.contains("rules")) {
    cfg.rules.clear();
    for (const auto& name : read_field<std::vector<std::string>>(j, "rules", "")) {
      const auto rule = parse_rule(name);
      if (!rule) throw config_error("rules", "unknown rule '" + name + "' (expected aa or ga)");
      cfg.rules.push_back(*rule);
    }
  }
  if (j.contains("initial_belief") && !j.at("initial_belief").is_null()) {
    const auto& ib = j.at("initial_belief");
    if (ib.is_string()) {
      if (ib.get<std::string>() != "uniform")
        throw config_error("initial_belief", "expected \"uniform\" or a probability vector");
    } else {
      cfg.initial_belief = read_field<std::vector<double>>(j, "initial_belief", "");
    }
  }
  cfg.output_dir = read_field_or<std::string>(j, "output_dir", "", cfg.output_dir);
  cfg.estimator_samples = read_count(j, "estimator_samples", "", kDefaultEstimatorSamples);
  cfg.write_trajectories = read_field_or<bool>(j, "trajectories", "", false);
  cfg.histogram_bins = read_count(j, "histogram_bins", "", 0);
  cfg.allow_unidentifiable = read_field_or<bool>(j, "allow_unidentifiable", "", false);
  if (j.contains("diagnostic")) {
    const auto& d = j.at("diagnostic");
    cfg.diagnostic_epsilon =
        read_field_or<double>(d, "epsilon_fraction", "diagnostic.", cfg.diagnostic_epsilon);
    cfg.diagnostic_start =
        read_field_or<double>(d, "start_fraction", "diagnostic.", cfg.diagnostic_start);
  }
  validate(cfg);
  return cfg;
}

inline RunConfig parse_config_text(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParseError, std::string("malformed JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig parse_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kParseError, "cannot read config " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str());
}

/// Full form: agents expanded, every default written out.
inline nlohmann::json to_json(const RunConfig& cfg) {
  using nlohmann::json;
  json hyp = {{"count", cfg.hypotheses.size()}, {"true_index", cfg.hypotheses.true_index()}};
  if (!cfg.hypotheses.labels().empty()) hyp["labels"] = cfg.hypotheses.labels();
  json agents = json::array();
  for (const auto& a : cfg.environment.agents()) agents.push_back(detail::agent_to_json(a));
  json rules = json::array();
  for (auto r : cfg.rules) rules.push_back(to_string(r));
  json out = {{"name", cfg.name},
              {"hypotheses", hyp},
              {"agents", agents},
              {"weights", std::vector<double>(cfg.weights.values().begin(), cfg.weights.values().end())},
              {"rules", rules},
              {"horizon", cfg.horizon},
              {"realizations", cfg.realizations},
              {"seed", cfg.seed},
              {"record_every", cfg.record_every},
              {"output_dir", cfg.output_dir},
              {"estimator_samples", cfg.estimator_samples},
              {"trajectories", cfg.write_trajectories},
              {"histogram_bins", cfg.histogram_bins},
              {"allow_unidentifiable", cfg.allow_unidentifiable},
              {"diagnostic",
               {{"epsilon_fraction", cfg.diagnostic_epsilon},
                {"start_fraction", cfg.diagnostic_start}}}};
  if (cfg.initial_belief.empty())
    out["initial_belief"] = "uniform";
  else
    out["initial_belief"] = cfg.initial_belief;
  if (const auto& c = cfg.environment.correlation()) {
    const std::size_t k = cfg.environment.agent_count();
    json rows = json::array();
    for (std::size_t i = 0; i < k; ++i)
      rows.push_back(std::vector<double>(c->begin() + static_cast<std::ptrdiff_t>(i * k),
                                         c->begin() + static_cast<std::ptrdiff_t>((i + 1) * k)));
    out["correlation"] = rows;
  }
  return out;
}

inline std::string emit_preset(std::string_view name) {
  return to_json(preset_config(name)).dump(2) + "\n";
}

}  // namespace fedsl
