#pragma once

// Hypotheses, beliefs and confidence weights. Beliefs live in log-space:
// log-belief ratios grow linearly in time, so linear probabilities would
// underflow long before typical horizons.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fedsl/error.hpp"

namespace fedsl {

inline constexpr double kNegInf = -std::numeric_limits<double>::infinity();
inline constexpr double kPosInf = std::numeric_limits<double>::infinity();

/// Tolerance on the total mass of a normalized belief and on weight sums.
inline constexpr double kMassTolerance = 1e-12;

//---------------------------------------------------------------------------//
class HypothesisSet {
 public:
  HypothesisSet(std::size_t count, std::size_t true_index, std::vector<std::string> labels = {})
      : count_(count), true_index_(true_index), labels_(std::move(labels)) {
    if (count_ < 2) throw Error(ErrorCode::kInvalidArgument, "hypothesis count must be >= 2");
    if (true_index_ >= count_)
      throw Error(ErrorCode::kInvalidArgument, "true hypothesis index out of range");
    if (!labels_.empty() && labels_.size() != count_)
      throw Error(ErrorCode::kInvalidArgument, "labels must have exactly one entry per hypothesis");
  }

  std::size_t size() const noexcept { return count_; }
  std::size_t true_index() const noexcept { return true_index_; }
  const std::vector<std::string>& labels() const noexcept { return labels_; }

  std::string label(std::size_t theta) const {
    return labels_.empty() ? std::to_string(theta) : labels_.at(theta);
  }

  /// Indices of every hypothesis other than the true one, ascending.
  std::vector<std::size_t> wrong_hypotheses() const {
    std::vector<std::size_t> out;
    for (std::size_t t = 0; t < count_; ++t)
      if (t != true_index_) out.push_back(t);
    return out;
  }

  bool operator==(const HypothesisSet&) const = default;

 private:
  std::size_t count_;
  std::size_t true_index_;
  std::vector<std::string> labels_;
};

//---------------------------------------------------------------------------//
// Log-space kernels shared by the belief algebra and the pooling loop.
//---------------------------------------------------------------------------//
namespace kernel {

/// log(sum(exp(values))); -inf when every entry is -inf.
inline double log_sum_exp(std::span<const double> values) {
  double peak = kNegInf;
  for (double v : values) peak = std::max(peak, v);
  if (peak == kNegInf) return kNegInf;
  double sum = 0.0;
  for (double v : values) sum += std::exp(v - peak);
  return peak + std::log(sum);
}

/// Shift `values` so that exp(values) sums to one. Throws AllZero when every
/// entry is -inf. A shift below 1e-14 in magnitude is skipped, which makes the
/// operation idempotent bit-for-bit.
inline void normalize_in_place(std::span<double> values) {
  const double total = log_sum_exp(values);
  if (total == kNegInf)
    throw Error(ErrorCode::kAllZero, "every hypothesis has zero mass; cannot normalize");
  if (!std::isfinite(total)) throw Error(ErrorCode::kNonFinite, "non-finite log-belief entry");
  if (std::abs(total) <= 1e-14) return;
  for (double& v : values) v -= total;
}

}  // namespace kernel

//---------------------------------------------------------------------------//
/// Probability vector over H hypotheses, stored as log-probabilities.
/// Always normalized; -inf marks a hypothesis with zero mass.
class Belief {
 public:
  static Belief uniform(std::size_t count) {
    if (count == 0) throw Error(ErrorCode::kInvalidArgument, "belief needs at least one entry");
    return Belief(std::vector<double>(count, -std::log(static_cast<double>(count))));
  }

  /// Linear-space probabilities; normalized on the way in.
  static Belief from_probabilities(std::span<const double> probabilities) {
    std::vector<double> logs;
    logs.reserve(probabilities.size());
    for (double p : probabilities) {
      if (!(p >= 0.0) || !std::isfinite(p))
        throw Error(ErrorCode::kInvalidArgument, "probabilities must be finite and nonnegative");
      logs.push_back(p == 0.0 ? kNegInf : std::log(p));
    }
    return normalized(std::move(logs));
  }

  /// Normalize arbitrary log-weights (the `normalize` operation).
  static Belief normalized(std::vector<double> log_values) {
    if (log_values.empty()) throw Error(ErrorCode::kInvalidArgument, "empty log-value vector");
    for (double v : log_values)
      if (std::isnan(v) || v == kPosInf)
        throw Error(ErrorCode::kNonFinite, "log-values must be finite or -inf");
    kernel::normalize_in_place(log_values);
    return Belief(std::move(log_values));
  }

  std::size_t size() const noexcept { return log_values_.size(); }
  std::span<const double> log_values() const noexcept { return log_values_; }
  double log_value(std::size_t theta) const { return log_values_.at(theta); }
  double probability(std::size_t theta) const { return std::exp(log_values_.at(theta)); }

  std::vector<double> probabilities() const {
    std::vector<double> out(log_values_.size());
    std::transform(log_values_.begin(), log_values_.end(), out.begin(),
                   [](double v) { return std::exp(v); });
    return out;
  }

  bool operator==(const Belief&) const = default;

 private:
  explicit Belief(std::vector<double> log_values) : log_values_(std::move(log_values)) {}

  std::vector<double> log_values_;
};

inline Belief normalize(std::vector<double> log_values) {
  return Belief::normalized(std::move(log_values));
}

/// lambda(theta) = log mu(true) - log mu(theta); exactly 0 at the true index
/// and +inf where mu(theta) = 0.
inline void log_belief_ratio_into(std::span<const double> log_mu, std::size_t true_index,
                                  std::span<double> out) {
  const double truth = log_mu[true_index];
  if (truth == kNegInf)
    throw Error(ErrorCode::kTruthAnnihilated, "belief on the true hypothesis is exactly zero");
  for (std::size_t t = 0; t < log_mu.size(); ++t)
    out[t] = (t == true_index) ? 0.0 : (log_mu[t] == kNegInf ? kPosInf : truth - log_mu[t]);
}

inline std::vector<double> log_belief_ratio(const Belief& belief, const HypothesisSet& hs) {
  if (belief.size() != hs.size())
    throw Error(ErrorCode::kInvalidArgument, "belief size does not match hypothesis count");
  std::vector<double> out(belief.size());
  log_belief_ratio_into(belief.log_values(), hs.true_index(), out);
  return out;
}

/// Argmax of the belief; ties go to the lowest index.
inline std::size_t map_estimate(std::span<const double> log_mu) {
  std::size_t best = 0;
  for (std::size_t t = 1; t < log_mu.size(); ++t)
    if (log_mu[t] > log_mu[best]) best = t;
  return best;
}

inline std::size_t map_estimate(const Belief& belief) { return map_estimate(belief.log_values()); }

//---------------------------------------------------------------------------//
/// Server-side confidence weights: positive, summing to one.
class ConfidenceWeights {
 public:
  explicit ConfidenceWeights(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.empty())
      throw Error(ErrorCode::kInvalidArgument, "at least one weight required").for_field("weights");
    double sum = 0.0;
    for (double w : weights_) {
      if (!(w > 0.0) || !std::isfinite(w))
        throw Error(ErrorCode::kInvalidArgument, "every weight must be a positive finite number")
            .for_field("weights");
      sum += w;
    }
    if (std::abs(sum - 1.0) > kMassTolerance)
      throw Error(ErrorCode::kInvalidArgument,
                  "weights must sum to 1 within 1e-12 (sum is " + std::to_string(sum) + ")")
          .for_field("weights");
    log_weights_.reserve(weights_.size());
    for (double w : weights_) log_weights_.push_back(std::log(w));
  }

  static ConfidenceWeights uniform(std::size_t count) {
    return ConfidenceWeights(std::vector<double>(count, 1.0 / static_cast<double>(count)));
  }

  std::size_t size() const noexcept { return weights_.size(); }
  std::span<const double> values() const noexcept { return weights_; }
  std::span<const double> log_values() const noexcept { return log_weights_; }
  double operator[](std::size_t k) const { return weights_[k]; }
  double min() const { return *std::min_element(weights_.begin(), weights_.end()); }

  bool operator==(const ConfidenceWeights& other) const { return weights_ == other.weights_; }

 private:
  std::vector<double> weights_;
  std::vector<double> log_weights_;
};

//---------------------------------------------------------------------------//
/// Time series of server beliefs and log-belief ratios for one realization.
/// Stored flat (row per recorded time, H columns each).
class TrajectoryRecord {
 public:
  TrajectoryRecord(std::size_t realization_index, std::uint64_t seed, std::size_t hypotheses,
                   std::size_t true_index)
      : realization_index_(realization_index),
        seed_(seed),
        hypotheses_(hypotheses),
        true_index_(true_index) {}

  void append(std::size_t time, std::span<const double> log_mu) {
    if (log_mu.size() != hypotheses_)
      throw Error(ErrorCode::kInvalidArgument, "belief size does not match record");
    if (!times_.empty() && time <= times_.back())
      throw Error(ErrorCode::kInvalidArgument, "recorded times must be strictly increasing");
    const std::size_t offset = lambda_.size();
    log_beliefs_.insert(log_beliefs_.end(), log_mu.begin(), log_mu.end());
    lambda_.resize(offset + hypotheses_);
    log_belief_ratio_into(log_mu, true_index_, std::span<double>(lambda_).subspan(offset));
    times_.push_back(time);
  }

  std::size_t realization_index() const noexcept { return realization_index_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t hypotheses() const noexcept { return hypotheses_; }
  std::size_t true_index() const noexcept { return true_index_; }
  std::size_t size() const noexcept { return times_.size(); }
  const std::vector<std::size_t>& times() const noexcept { return times_; }

  std::span<const double> log_belief(std::size_t row) const {
    return std::span<const double>(log_beliefs_).subspan(row * hypotheses_, hypotheses_);
  }
  std::span<const double> lambda(std::size_t row) const {
    return std::span<const double>(lambda_).subspan(row * hypotheses_, hypotheses_);
  }
  Belief belief(std::size_t row) const {
    auto lv = log_belief(row);
    return Belief::normalized({lv.begin(), lv.end()});
  }

  /// Keep only rows whose time is a multiple of `every`, plus the last row.
  TrajectoryRecord thinned(std::size_t every) const {
    TrajectoryRecord out(realization_index_, seed_, hypotheses_, true_index_);
    for (std::size_t row = 0; row < size(); ++row)
      if (times_[row] % every == 0 || row + 1 == size()) out.append(times_[row], log_belief(row));
    return out;
  }

  bool operator==(const TrajectoryRecord&) const = default;

 private:
  std::size_t realization_index_;
  std::uint64_t seed_;
  std::size_t hypotheses_;
  std::size_t true_index_;
  std::vector<std::size_t> times_;
  std::vector<double> log_beliefs_;
  std::vector<double> lambda_;
};

}  // namespace fedsl
