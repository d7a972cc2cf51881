#pragma once

// Adapt / fuse dynamics on a star topology. Every round, each agent runs a
// local Bayes update of the broadcast belief with its private observation,
// then the server pools the K intermediate beliefs arithmetically (AA) or
// geometrically (GA) and broadcasts the result.

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "fedsl/core_model.hpp"
#include "fedsl/error.hpp"
#include "fedsl/likelihoods.hpp"
#include "fedsl/random.hpp"

namespace fedsl {

enum class PoolingRule { kArithmetic, kGeometric };

constexpr std::string_view to_string(PoolingRule rule) {
  return rule == PoolingRule::kArithmetic ? "aa" : "ga";
}

inline std::optional<PoolingRule> parse_rule(std::string_view text) {
  if (text == "aa" || text == "AA") return PoolingRule::kArithmetic;
  if (text == "ga" || text == "GA") return PoolingRule::kGeometric;
  return std::nullopt;
}

namespace kernel {

/// log psi = normalize(log L(x|.) + log prior). Zero prior mass stays zero.
inline void adapt_into(std::span<const double> log_prior, const AgentModel& model, Observation x,
                       std::span<double> out) {
  model.log_likelihoods(x, out);
  for (std::size_t t = 0; t < out.size(); ++t) out[t] += log_prior[t];
  normalize_in_place(out);
}

/// mu(theta) = sum_k pi_k psi_k(theta), evaluated per hypothesis as a
/// log-sum-exp over agents with log pi_k folded in. `psi` is K x H row-major.
inline void fuse_aa_into(std::span<const double> psi, std::size_t hypotheses,
                         const ConfidenceWeights& weights, std::span<double> out) {
  const auto log_pi = weights.log_values();
  const std::size_t agents = weights.size();
  for (std::size_t t = 0; t < hypotheses; ++t) {
    double peak = kNegInf;
    for (std::size_t k = 0; k < agents; ++k)
      peak = std::max(peak, log_pi[k] + psi[k * hypotheses + t]);
    if (peak == kNegInf) {
      out[t] = kNegInf;
      continue;
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < agents; ++k)
      sum += std::exp(log_pi[k] + psi[k * hypotheses + t] - peak);
    out[t] = peak + std::log(sum);
  }
  // Exact arithmetic needs no renormalization; this only absorbs rounding.
  normalize_in_place(out.first(hypotheses));
}

/// mu(theta) proportional to prod_k psi_k(theta)^pi_k. A single zero entry
/// vetoes the hypothesis; vetoing every hypothesis throws AllZero.
inline void fuse_ga_into(std::span<const double> psi, std::size_t hypotheses,
                         const ConfidenceWeights& weights, std::span<double> out) {
  const auto pi = weights.values();
  const std::size_t agents = weights.size();
  for (std::size_t t = 0; t < hypotheses; ++t) {
    double acc = 0.0;
    for (std::size_t k = 0; k < agents; ++k) {
      const double v = psi[k * hypotheses + t];
      if (v == kNegInf) {
        acc = kNegInf;
        break;
      }
      acc += pi[k] * v;
    }
    out[t] = acc;
  }
  normalize_in_place(out.first(hypotheses));
}

}  // namespace kernel

/// Local Bayes update of `prior` with one observation.
inline Belief adapt(const Belief& prior, const AgentModel& model, Observation x) {
  if (prior.size() != model.hypotheses())
    throw Error(ErrorCode::kInvalidArgument, "prior size does not match the model");
  std::vector<double> out(prior.size());
  kernel::adapt_into(prior.log_values(), model, x, out);
  return normalize(std::move(out));
}

namespace detail {

inline std::vector<double> flatten_beliefs(std::span<const Belief> psis,
                                           const ConfidenceWeights& weights) {
  if (psis.empty() || psis.size() != weights.size())
    throw Error(ErrorCode::kInvalidArgument, "need exactly one belief per weight");
  const std::size_t h = psis.front().size();
  std::vector<double> flat;
  flat.reserve(psis.size() * h);
  for (const auto& b : psis) {
    if (b.size() != h) throw Error(ErrorCode::kInvalidArgument, "beliefs differ in size");
    flat.insert(flat.end(), b.log_values().begin(), b.log_values().end());
  }
  return flat;
}

}  // namespace detail

inline Belief fuse_aa(std::span<const Belief> psis, const ConfidenceWeights& weights) {
  const auto flat = detail::flatten_beliefs(psis, weights);
  std::vector<double> out(psis.front().size());
  kernel::fuse_aa_into(flat, out.size(), weights, out);
  return normalize(std::move(out));
}

inline Belief fuse_ga(std::span<const Belief> psis, const ConfidenceWeights& weights) {
  const auto flat = detail::flatten_beliefs(psis, weights);
  std::vector<double> out(psis.front().size());
  kernel::fuse_ga_into(flat, out.size(), weights, out);
  return normalize(std::move(out));
}

inline Belief fuse(PoolingRule rule, std::span<const Belief> psis,
                   const ConfidenceWeights& weights) {
  return rule == PoolingRule::kArithmetic ? fuse_aa(psis, weights) : fuse_ga(psis, weights);
}

//---------------------------------------------------------------------------//
/// Server state of one pooled system. `step` runs one synchronous round:
/// every agent adapts from the same broadcast belief, then the server fuses.
class SocialLearner {
 public:
  SocialLearner(const Environment& env, const ConfidenceWeights& weights, PoolingRule rule,
                const Belief& initial, std::size_t true_index)
      : env_(env),
        weights_(weights),
        rule_(rule),
        true_index_(true_index),
        hypotheses_(env.hypotheses()),
        log_mu_(initial.log_values().begin(), initial.log_values().end()),
        psi_(env.agent_count() * env.hypotheses()) {
    if (weights.size() != env.agent_count())
      throw Error(ErrorCode::kInvalidArgument, "one confidence weight per agent required")
          .for_field("weights");
    if (initial.size() != hypotheses_)
      throw Error(ErrorCode::kInvalidArgument, "initial belief size does not match H")
          .for_field("initial_belief");
    if (true_index_ >= hypotheses_)
      throw Error(ErrorCode::kInvalidArgument, "true hypothesis index out of range");
    if (log_mu_[true_index_] == kNegInf)
      throw Error(ErrorCode::kTruthAnnihilated, "initial belief gives zero mass to the truth")
          .at_time(0);
  }

  void step(std::span<const Observation> round) {
    const std::size_t agents = env_.agent_count();
    if (round.size() != agents)
      throw Error(ErrorCode::kInvalidArgument, "observation round has the wrong length");
    try {
      for (std::size_t k = 0; k < agents; ++k)
        kernel::adapt_into(log_mu_, env_.agent(k), round[k],
                           std::span<double>(psi_).subspan(k * hypotheses_, hypotheses_));
      if (rule_ == PoolingRule::kArithmetic)
        kernel::fuse_aa_into(psi_, hypotheses_, weights_, log_mu_);
      else
        kernel::fuse_ga_into(psi_, hypotheses_, weights_, log_mu_);
    } catch (Error& e) {
      e.at_time(time_ + 1);
      throw;
    }
    ++time_;
    if (log_mu_[true_index_] == kNegInf)
      throw Error(ErrorCode::kTruthAnnihilated, "pooled belief on the truth reached zero")
          .at_time(time_);
  }

  std::size_t time() const noexcept { return time_; }
  PoolingRule rule() const noexcept { return rule_; }
  std::span<const double> log_belief() const noexcept { return log_mu_; }
  Belief belief() const { return normalize(log_mu_); }

  /// Intermediate beliefs of the last round, K x H row-major.
  std::span<const double> intermediate() const noexcept { return psi_; }

 private:
  const Environment& env_;
  const ConfidenceWeights& weights_;
  PoolingRule rule_;
  std::size_t true_index_;
  std::size_t hypotheses_;
  std::size_t time_ = 0;
  std::vector<double> log_mu_;
  std::vector<double> psi_;
};

/// Recorded times: 0, every, 2 * every, ... and always the horizon itself.
inline bool is_recorded_time(std::size_t t, std::size_t horizon, std::size_t every) {
  return t % every == 0 || t == horizon;
}

/// Run one realization for `horizon` rounds. Bit-reproducible given the
/// stream key.
inline TrajectoryRecord run_trajectory(const Environment& env, const HypothesisSet& hs,
                                       const ConfidenceWeights& weights, PoolingRule rule,
                                       const Belief& initial, std::size_t horizon,
                                       std::size_t record_every, RandomStream& rng,
                                       std::size_t realization_index = 0) {
  if (record_every == 0) throw Error(ErrorCode::kInvalidArgument, "record_every must be >= 1");
  if (env.hypotheses() != hs.size())
    throw Error(ErrorCode::kInvalidArgument, "environment and hypothesis set disagree on H");
  TrajectoryRecord record(realization_index, rng.key(), hs.size(), hs.true_index());
  SocialLearner learner(env, weights, rule, initial, hs.true_index());
  record.append(0, learner.log_belief());
  Environment::Sampler sampler(env);
  std::vector<Observation> round(env.agent_count());
  for (std::size_t t = 1; t <= horizon; ++t) {
    sampler.draw(hs.true_index(), rng, round);
    learner.step(round);
    if (is_recorded_time(t, horizon, record_every)) record.append(t, learner.log_belief());
  }
  return record;
}

}  // namespace fedsl
