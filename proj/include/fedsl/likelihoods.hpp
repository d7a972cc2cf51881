#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "fedsl/core_model.hpp"
#include "fedsl/error.hpp"
#include "fedsl/random.hpp"

namespace fedsl {

/// One observation. Categorical symbols are carried as their integer index.
using Observation = double;

struct GaussianFamily {
  std::vector<double> means;  // one per hypothesis
  double std_dev = 1.0;       // shared across hypotheses
  bool operator==(const GaussianFamily&) const = default;
};

struct ExponentialFamily {
  std::vector<double> means;  // parameterized by mean, not rate
  bool operator==(const ExponentialFamily&) const = default;
};

struct CategoricalFamily {
  std::vector<std::vector<double>> rows;  // rows[theta][symbol], strictly positive
  bool operator==(const CategoricalFamily&) const = default;
};

enum class FamilyKind { kGaussian, kExponential, kCategorical };

constexpr std::string_view to_string(FamilyKind kind) {
  switch (kind) {
    case FamilyKind::kGaussian: return "gaussian";
    case FamilyKind::kExponential: return "exponential";
    case FamilyKind::kCategorical: return "categorical";
  }
  return "unknown";
}

//---------------------------------------------------------------------------//
/// Per-agent likelihood family L_k(. | theta), one member per hypothesis.
/// All members share the same support, so log-likelihood ratios are finite.
class AgentModel {
 public:
  using Family = std::variant<GaussianFamily, ExponentialFamily, CategoricalFamily>;

  explicit AgentModel(Family family) : family_(std::move(family)) { validate_and_cache(); }

  static AgentModel gaussian(std::vector<double> means, double std_dev) {
    return AgentModel(GaussianFamily{std::move(means), std_dev});
  }
  static AgentModel exponential(std::vector<double> means) {
    return AgentModel(ExponentialFamily{std::move(means)});
  }
  static AgentModel categorical(std::vector<std::vector<double>> rows) {
    return AgentModel(CategoricalFamily{std::move(rows)});
  }

  const Family& family() const noexcept { return family_; }
  FamilyKind kind() const noexcept { return static_cast<FamilyKind>(family_.index()); }
  std::size_t hypotheses() const noexcept { return hypotheses_; }

  /// Exact log-density (continuous) or log-mass (categorical).
  double log_likelihood(Observation x, std::size_t theta) const {
    check_support(x);
    return log_likelihood_unchecked(x, theta);
  }

  /// All H log-likelihoods at once.
  void log_likelihoods(Observation x, std::span<double> out) const {
    check_support(x);
    for (std::size_t t = 0; t < hypotheses_; ++t) out[t] = log_likelihood_unchecked(x, t);
  }

  /// Independent draw from L(. | theta).
  Observation sample(std::size_t theta, RandomStream& rng) const {
    switch (kind()) {
      case FamilyKind::kGaussian: {
        const auto& g = std::get<GaussianFamily>(family_);
        return g.means[theta] + g.std_dev * rng.normal();
      }
      case FamilyKind::kExponential:
        return rng.exponential(std::get<ExponentialFamily>(family_).means[theta]);
      case FamilyKind::kCategorical: {
        const auto& row = std::get<CategoricalFamily>(family_).rows[theta];
        const double u = rng.uniform();
        double cumulative = 0.0;
        for (std::size_t s = 0; s + 1 < row.size(); ++s) {
          cumulative += row[s];
          if (u < cumulative) return static_cast<double>(s);
        }
        return static_cast<double>(row.size() - 1);
      }
    }
    return 0.0;
  }

  /// Gaussian members only: mean under theta and the shared std.
  double gaussian_mean(std::size_t theta) const {
    return std::get<GaussianFamily>(family_).means.at(theta);
  }
  double gaussian_std() const { return std::get<GaussianFamily>(family_).std_dev; }

  bool operator==(const AgentModel& other) const { return family_ == other.family_; }

 private:
  void validate_and_cache() {
    auto fail = [](const std::string& msg) { throw Error(ErrorCode::kInvalidArgument, msg); };
    std::visit(
        [&](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, GaussianFamily>) {
            hypotheses_ = f.means.size();
            if (!(f.std_dev > 0.0) || !std::isfinite(f.std_dev))
              fail("gaussian std must be positive");
            for (double m : f.means)
              if (!std::isfinite(m)) fail("gaussian means must be finite");
            log_norm_ = -std::log(f.std_dev) - 0.5 * std::log(2.0 * std::numbers::pi);
          } else if constexpr (std::is_same_v<T, ExponentialFamily>) {
            hypotheses_ = f.means.size();
            for (double m : f.means) {
              if (!(m > 0.0) || !std::isfinite(m)) fail("exponential means must be positive");
              log_means_.push_back(std::log(m));
            }
          } else {
            hypotheses_ = f.rows.size();
            if (f.rows.empty() || f.rows.front().empty()) fail("categorical rows must be non-empty");
            alphabet_ = f.rows.front().size();
            for (const auto& row : f.rows) {
              if (row.size() != alphabet_) fail("categorical rows must share one alphabet");
              double sum = 0.0;
              for (double p : row) {
                if (!(p > 0.0)) fail("categorical probabilities must be strictly positive");
                sum += p;
              }
              if (std::abs(sum - 1.0) > kMassTolerance)
                fail("categorical rows must sum to 1 within 1e-12");
              for (double p : row) log_probs_.push_back(std::log(p));
            }
          }
        },
        family_);
    if (hypotheses_ < 1) fail("model needs at least one hypothesis");
  }

  void check_support(Observation x) const {
    switch (kind()) {
      case FamilyKind::kGaussian:
        if (!std::isfinite(x)) throw Error(ErrorCode::kOutOfSupport, "observation must be finite");
        break;
      case FamilyKind::kExponential:
        if (!(x >= 0.0) || !std::isfinite(x))
          throw Error(ErrorCode::kOutOfSupport, "exponential observation must be >= 0");
        break;
      case FamilyKind::kCategorical:
        if (!(x >= 0.0) || x != std::floor(x) || x >= static_cast<double>(alphabet_))
          throw Error(ErrorCode::kOutOfSupport, "categorical symbol outside the alphabet");
        break;
    }
  }

  double log_likelihood_unchecked(Observation x, std::size_t theta) const {
    switch (kind()) {
      case FamilyKind::kGaussian: {
        const auto& g = std::get<GaussianFamily>(family_);
        const double z = (x - g.means[theta]) / g.std_dev;
        return log_norm_ - 0.5 * z * z;
      }
      case FamilyKind::kExponential:
        return -log_means_[theta] - x / std::get<ExponentialFamily>(family_).means[theta];
      case FamilyKind::kCategorical:
        return log_probs_[theta * alphabet_ + static_cast<std::size_t>(x)];
    }
    return 0.0;
  }

  Family family_;
  std::size_t hypotheses_ = 0;
  std::size_t alphabet_ = 0;
  double log_norm_ = 0.0;
  std::vector<double> log_means_;
  std::vector<double> log_probs_;
};

/// log r(theta) = log L(x|theta) - log L(x|true); exactly 0 at the true index.
inline std::vector<double> log_likelihood_ratios(const AgentModel& model, Observation x,
                                                 const HypothesisSet& hs) {
  std::vector<double> out(hs.size());
  model.log_likelihoods(x, out);
  const double truth = out[hs.true_index()];
  for (std::size_t t = 0; t < out.size(); ++t)
    out[t] = (t == hs.true_index()) ? 0.0 : out[t] - truth;
  return out;
}

/// D_KL(L(.|from) || L(.|to)) in closed form.
inline double kl_divergence(const AgentModel& model, std::size_t from, std::size_t to) {
  if (from >= model.hypotheses() || to >= model.hypotheses())
    throw Error(ErrorCode::kInvalidArgument, "hypothesis index out of range");
  if (from == to) return 0.0;
  switch (model.kind()) {
    case FamilyKind::kGaussian: {
      const auto& g = std::get<GaussianFamily>(model.family());
      const double gap = g.means[from] - g.means[to];
      return gap * gap / (2.0 * g.std_dev * g.std_dev);
    }
    case FamilyKind::kExponential: {
      const auto& e = std::get<ExponentialFamily>(model.family());
      const double a = 1.0 / e.means[from];
      const double b = 1.0 / e.means[to];
      return std::log(a / b) + b / a - 1.0;
    }
    case FamilyKind::kCategorical: {
      const auto& c = std::get<CategoricalFamily>(model.family());
      double sum = 0.0;
      for (std::size_t s = 0; s < c.rows[from].size(); ++s)
        sum += c.rows[from][s] * std::log(c.rows[from][s] / c.rows[to][s]);
      return std::max(sum, 0.0);
    }
  }
  return 0.0;
}

//---------------------------------------------------------------------------//
/// Observations of all K agents at one time instant.
struct ObservationRound {
  std::vector<Observation> values;
};

/// Joint data-generating process across agents: independent, or a Gaussian
/// correlation matrix over all-Gaussian agents.
class Environment {
 public:
  static Environment independent(std::vector<AgentModel> agents) {
    return Environment(std::move(agents), std::nullopt);
  }

  /// `correlation` is K x K, row-major, symmetric positive-definite, unit diagonal.
  static Environment correlated(std::vector<AgentModel> agents, std::vector<double> correlation) {
    return Environment(std::move(agents), std::move(correlation));
  }

  std::size_t agent_count() const noexcept { return agents_.size(); }
  std::size_t hypotheses() const noexcept { return agents_.front().hypotheses(); }
  const std::vector<AgentModel>& agents() const noexcept { return agents_; }
  const AgentModel& agent(std::size_t k) const { return agents_.at(k); }
  bool is_correlated() const noexcept { return correlation_.has_value(); }
  bool all_gaussian() const {
    for (const auto& a : agents_)
      if (a.kind() != FamilyKind::kGaussian) return false;
    return true;
  }

  /// Correlation matrix; identity when independent.
  std::vector<double> correlation_matrix() const {
    if (correlation_) return *correlation_;
    std::vector<double> eye(agents_.size() * agents_.size(), 0.0);
    for (std::size_t k = 0; k < agents_.size(); ++k) eye[k * agents_.size() + k] = 1.0;
    return eye;
  }
  const std::optional<std::vector<double>>& correlation() const noexcept { return correlation_; }

  bool operator==(const Environment& other) const {
    return agents_ == other.agents_ && correlation_ == other.correlation_;
  }

 private:
  Environment(std::vector<AgentModel> agents, std::optional<std::vector<double>> correlation)
      : agents_(std::move(agents)), correlation_(std::move(correlation)) {
    if (agents_.empty())
      throw Error(ErrorCode::kInvalidArgument, "environment needs at least one agent")
          .for_field("agents");
    for (const auto& a : agents_)
      if (a.hypotheses() != agents_.front().hypotheses())
        throw Error(ErrorCode::kInvalidArgument, "agents disagree on the number of hypotheses")
            .for_field("agents");
    if (correlation_) factorize();
  }

  void factorize() {
    const std::size_t n = agents_.size();
    const auto& c = *correlation_;
    auto fail = [](const std::string& msg) {
      throw Error(ErrorCode::kInvalidArgument, msg).for_field("correlation");
    };
    if (!all_gaussian()) fail("a correlation matrix requires every agent to be gaussian");
    if (c.size() != n * n) fail("correlation matrix must be K x K");
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(c[i * n + i] - 1.0) > kMassTolerance) fail("correlation diagonal must be 1");
      for (std::size_t j = 0; j < i; ++j)
        if (std::abs(c[i * n + j] - c[j * n + i]) > kMassTolerance)
          fail("correlation matrix must be symmetric");
    }
    cholesky_.assign(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j <= i; ++j) {
        double sum = c[i * n + j];
        for (std::size_t p = 0; p < j; ++p) sum -= cholesky_[i * n + p] * cholesky_[j * n + p];
        if (i == j) {
          if (!(sum > 0.0)) fail("correlation matrix must be positive-definite");
          cholesky_[i * n + i] = std::sqrt(sum);
        } else {
          cholesky_[i * n + j] = sum / cholesky_[j * n + j];
        }
      }
    }
  }

  std::vector<AgentModel> agents_;
  std::optional<std::vector<double>> correlation_;
  std::vector<double> cholesky_;

 public:
  /// Joint draw of one round under `truth`. Holds the scratch space the
  /// correlated path needs, so use one Sampler per thread.
  class Sampler {
   public:
    explicit Sampler(const Environment& env) : env_(env), normals_(env.agent_count()) {}

    void draw(std::size_t truth, RandomStream& rng, std::span<Observation> out) {
      const std::size_t k_count = env_.agents_.size();
      if (!env_.correlation_) {
        for (std::size_t k = 0; k < k_count; ++k) out[k] = env_.agents_[k].sample(truth, rng);
        return;
      }
      for (std::size_t k = 0; k < k_count; ++k) normals_[k] = rng.normal();
      for (std::size_t k = 0; k < k_count; ++k) {
        double z = 0.0;
        for (std::size_t j = 0; j <= k; ++j) z += env_.cholesky_[k * k_count + j] * normals_[j];
        out[k] = env_.agents_[k].gaussian_mean(truth) + env_.agents_[k].gaussian_std() * z;
      }
    }

   private:
    const Environment& env_;
    std::vector<double> normals_;
  };
};

inline ObservationRound sample_round(const Environment& env, std::size_t truth,
                                     RandomStream& rng) {
  ObservationRound round{std::vector<Observation>(env.agent_count())};
  Environment::Sampler(env).draw(truth, rng, round.values);
  return round;
}

//---------------------------------------------------------------------------//
struct IdentifiabilityEntry {
  std::size_t theta = 0;
  double max_kl = 0.0;
  std::size_t best_agent = 0;
  bool identifiable = false;
};

struct IdentifiabilityReport {
  std::vector<IdentifiabilityEntry> entries;  // one per wrong hypothesis
  bool passed = false;

  std::vector<std::size_t> undistinguished() const {
    std::vector<std::size_t> out;
    for (const auto& e : entries)
      if (!e.identifiable) out.push_back(e.theta);
    return out;
  }
};

inline constexpr double kIdentifiabilityTolerance = 1e-12;

/// Every wrong hypothesis needs at least one agent with positive divergence
/// from the truth. A failing report is a value; callers decide what to do.
inline IdentifiabilityReport check_global_identifiability(const Environment& env,
                                                          const HypothesisSet& hs) {
  if (env.hypotheses() != hs.size())
    throw Error(ErrorCode::kInvalidArgument, "environment and hypothesis set disagree on H");
  IdentifiabilityReport report;
  report.passed = true;
  for (std::size_t theta : hs.wrong_hypotheses()) {
    IdentifiabilityEntry entry{theta, 0.0, 0, false};
    for (std::size_t k = 0; k < env.agent_count(); ++k) {
      const double kl = kl_divergence(env.agent(k), hs.true_index(), theta);
      if (kl > entry.max_kl) {
        entry.max_kl = kl;
        entry.best_agent = k;
      }
    }
    entry.identifiable = entry.max_kl > kIdentifiabilityTolerance;
    report.passed = report.passed && entry.identifiable;
    report.entries.push_back(entry);
  }
  return report;
}

}  // namespace fedsl
