#pragma once

// Asymptotic-normality constants for both pooling rules.
//
// For a wrong hypothesis theta with per-round log-likelihood ratios
// log r_k = log L_k(x_k|theta) - log L_k(x_k|true):
//
//   GA: rho_G = sum_k pi_k KL_k(true || theta),  sigma_G^2 = Var[sum_k pi_k log r_k]
//   AA: rho_A = -E[log sum_k pi_k r_k],           sigma_A^2 = Var[log sum_k pi_k r_k]
//
// and (lambda_i - rho i) / (sigma sqrt(i)) is asymptotically standard normal.
// rho_G only involves marginals; rho_A and both variances feel cross-agent
// correlation. rho_G >= rho_A by Jensen.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iterator>
#include <span>
#include <string_view>
#include <vector>

#include "fedsl/core_model.hpp"
#include "fedsl/error.hpp"
#include "fedsl/likelihoods.hpp"
#include "fedsl/parallel.hpp"
#include "fedsl/pooling.hpp"
#include "fedsl/random.hpp"
#include "fedsl/stats.hpp"

namespace fedsl {

enum class Estimation { kAnalytic, kMonteCarlo };

constexpr std::string_view to_string(Estimation e) {
  return e == Estimation::kAnalytic ? "analytic" : "monte_carlo";
}

inline constexpr std::size_t kMinMonteCarloSamples = 10'000;
inline constexpr std::size_t kDefaultEstimatorSamples = 1'000'000;

/// Rate and per-round variance of the log-belief ratio for one rule and one
/// wrong hypothesis. Standard errors are zero for analytic quantities.
struct NormalityParams {
  PoolingRule rule = PoolingRule::kGeometric;
  std::size_t theta = 0;
  double rho = 0.0;
  double sigma2 = 0.0;
  Estimation estimation = Estimation::kAnalytic;
  std::size_t samples = 0;
  double std_error_rho = 0.0;
  double std_error_sigma2 = 0.0;
  std::uint64_t seed = 0;

  double sigma() const { return std::sqrt(sigma2); }
};

struct EstimatorOptions {
  std::size_t samples = kDefaultEstimatorSamples;
  std::uint64_t seed = 1;
  std::size_t threads = 1;
};

namespace detail {

inline constexpr std::size_t kEstimatorBlock = 1u << 14;

inline void check_theta(const HypothesisSet& hs, std::size_t theta) {
  if (theta >= hs.size()) throw Error(ErrorCode::kInvalidArgument, "theta out of range");
  if (theta == hs.true_index())
    throw Error(ErrorCode::kInvalidArgument, "theta must differ from the true hypothesis");
}

inline void check_inputs(const Environment& env, const HypothesisSet& hs,
                         const ConfidenceWeights& w) {
  if (env.hypotheses() != hs.size())
    throw Error(ErrorCode::kInvalidArgument, "environment and hypothesis set disagree on H");
  if (env.agent_count() != w.size())
    throw Error(ErrorCode::kInvalidArgument, "one confidence weight per agent required");
}

/// Moments of statistic(log r_1..log r_K) over `samples` rounds drawn under
/// the truth. Blocks use streams derived from (seed, block index) and are
/// merged in block order, so the result is independent of thread count.
template <typename Statistic>
stats::MomentAccumulator monte_carlo_log_ratio_moments(const Environment& env,
                                                       const HypothesisSet& hs, std::size_t theta,
                                                       const EstimatorOptions& opts,
                                                       Statistic statistic) {
  if (opts.samples < kMinMonteCarloSamples)
    throw Error(ErrorCode::kInsufficientSamples, "Monte Carlo estimators need >= 1e4 samples");
  const std::size_t blocks = (opts.samples + kEstimatorBlock - 1) / kEstimatorBlock;
  std::vector<stats::MomentAccumulator> partial(blocks);
  parallel_for(blocks, opts.threads, [&](std::size_t b) {
    RandomStream rng(derive_stream_key(opts.seed, b, StreamRole::kEstimator));
    Environment::Sampler sampler(env);
    const std::size_t k_count = env.agent_count();
    std::vector<Observation> round(k_count);
    std::vector<double> log_ratio(k_count);
    std::vector<double> ll(hs.size());
    const std::size_t begin = b * kEstimatorBlock;
    const std::size_t end = std::min(opts.samples, begin + kEstimatorBlock);
    for (std::size_t s = begin; s < end; ++s) {
      sampler.draw(hs.true_index(), rng, round);
      for (std::size_t k = 0; k < k_count; ++k) {
        env.agent(k).log_likelihoods(round[k], ll);
        log_ratio[k] = ll[theta] - ll[hs.true_index()];
      }
      partial[b].add(statistic(std::span<const double>(log_ratio)));
    }
  });
  stats::MomentAccumulator total;
  for (const auto& p : partial) total.merge(p);
  return total;
}

}  // namespace detail

/// GA constants. rho_G is the weighted KL (exact, marginals only). sigma_G^2
/// is analytic for all-Gaussian environments (pi' D C D pi with D the per-agent
/// mean gap over variance and C the covariance), Monte Carlo otherwise.
inline NormalityParams ga_params(const Environment& env, const HypothesisSet& hs,
                                 const ConfidenceWeights& w, std::size_t theta,
                                 const EstimatorOptions& opts = {}) {
  detail::check_inputs(env, hs, w);
  detail::check_theta(hs, theta);
  NormalityParams p;
  p.rule = PoolingRule::kGeometric;
  p.theta = theta;
  for (std::size_t k = 0; k < env.agent_count(); ++k)
    p.rho += w[k] * kl_divergence(env.agent(k), hs.true_index(), theta);

  if (env.all_gaussian()) {
    const std::size_t n = env.agent_count();
    const auto corr = env.correlation_matrix();
    std::vector<double> slope_scale(n);  // pi_k * (gap_k / s_k^2) * s_k
    for (std::size_t k = 0; k < n; ++k) {
      const auto& a = env.agent(k);
      const double gap = a.gaussian_mean(theta) - a.gaussian_mean(hs.true_index());
      slope_scale[k] = w[k] * gap / a.gaussian_std();
    }
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) var += slope_scale[i] * slope_scale[j] * corr[i * n + j];
    p.sigma2 = var;
    p.estimation = Estimation::kAnalytic;
    return p;
  }

  const auto pi = w.values();
  const auto acc = detail::monte_carlo_log_ratio_moments(
      env, hs, theta, opts, [&](std::span<const double> log_r) {
        double s = 0.0;
        for (std::size_t k = 0; k < log_r.size(); ++k) s += pi[k] * log_r[k];
        return s;
      });
  p.sigma2 = acc.variance();
  p.estimation = Estimation::kMonteCarlo;
  p.samples = acc.count();
  p.std_error_sigma2 = acc.variance_std_error();
  p.seed = opts.seed;
  return p;
}

/// AA constants by Monte Carlo over the statistic log sum_k pi_k r_k,
/// evaluated as a log-sum-exp of log pi_k + log r_k.
inline NormalityParams aa_params(const Environment& env, const HypothesisSet& hs,
                                 const ConfidenceWeights& w, std::size_t theta,
                                 const EstimatorOptions& opts = {}) {
  detail::check_inputs(env, hs, w);
  detail::check_theta(hs, theta);
  const auto log_pi = w.log_values();
  const auto acc = detail::monte_carlo_log_ratio_moments(
      env, hs, theta, opts, [log_pi](std::span<const double> log_r) {
        double peak = kNegInf;
        for (std::size_t k = 0; k < log_r.size(); ++k) peak = std::max(peak, log_pi[k] + log_r[k]);
        double sum = 0.0;
        for (std::size_t k = 0; k < log_r.size(); ++k) sum += std::exp(log_pi[k] + log_r[k] - peak);
        return peak + std::log(sum);
      });
  NormalityParams p;
  p.rule = PoolingRule::kArithmetic;
  p.theta = theta;
  p.rho = -acc.mean();
  p.sigma2 = acc.variance();
  p.estimation = Estimation::kMonteCarlo;
  p.samples = acc.count();
  p.std_error_rho = acc.mean_std_error();
  p.std_error_sigma2 = acc.variance_std_error();
  p.seed = opts.seed;
  return p;
}

inline NormalityParams normality_params(PoolingRule rule, const Environment& env,
                                        const HypothesisSet& hs, const ConfidenceWeights& w,
                                        std::size_t theta, const EstimatorOptions& opts = {}) {
  return rule == PoolingRule::kArithmetic ? aa_params(env, hs, w, theta, opts)
                                          : ga_params(env, hs, w, theta, opts);
}

//---------------------------------------------------------------------------//

enum class StatisticForm {
  kLogBeliefRatio,  // (lambda_i - rho i) / (sigma sqrt i)
  kLogBelief,       // (log mu_i(theta) + rho i) / (sigma sqrt i)
};

inline double normalize_statistic(double value, const NormalityParams& p, std::size_t i,
                                  StatisticForm form = StatisticForm::kLogBeliefRatio) {
  if (i < 1) throw Error(ErrorCode::kInvalidArgument, "time must be >= 1");
  if (!(p.sigma2 > 0.0))
    throw Error(ErrorCode::kDegenerateVariance, "sigma^2 is zero; statistic undefined");
  const double t = static_cast<double>(i);
  const double scale = p.sigma() * std::sqrt(t);
  return form == StatisticForm::kLogBeliefRatio ? (value - p.rho * t) / scale
                                                : (value + p.rho * t) / scale;
}

/// P(lambda_i(theta) <= 0) ~ Phi(-sqrt(i) rho / sigma).
inline double error_prob_approx(const NormalityParams& p, std::size_t i) {
  if (i < 1) throw Error(ErrorCode::kInvalidArgument, "time must be >= 1");
  if (!(p.sigma2 > 0.0))
    throw Error(ErrorCode::kDegenerateVariance, "sigma^2 is zero; approximation undefined");
  return stats::std_normal_cdf(-std::sqrt(static_cast<double>(i)) * p.rho / p.sigma());
}

/// Union bound over wrong hypotheses, clamped at one. Equal to the plain
/// approximation when H = 2.
inline double error_prob_union(std::span<const NormalityParams> params, std::size_t i) {
  double total = 0.0;
  for (const auto& p : params) total += error_prob_approx(p, i);
  return std::min(total, 1.0);
}

//---------------------------------------------------------------------------//

/// True when mu_i(theta) <= exp(-i (rho - epsilon)) for every recorded i >= i0
/// and every wrong theta. Recorded times in the window must be consecutive.
inline bool satisfies_highprob_bound(const TrajectoryRecord& record, const NormalityParams& p,
                                     double epsilon, std::size_t i0) {
  const auto& times = record.times();
  const auto first = std::lower_bound(times.begin(), times.end(), i0);
  for (auto it = first; it != times.end() && std::next(it) != times.end(); ++it)
    if (*std::next(it) != *it + 1)
      throw Error(ErrorCode::kInvalidArgument,
                  "bound diagnostic needs every time step recorded from i0 on");
  for (auto row = static_cast<std::size_t>(first - times.begin()); row < record.size(); ++row) {
    const double bound = -static_cast<double>(times[row]) * (p.rho - epsilon);
    const auto log_mu = record.log_belief(row);
    for (std::size_t t = 0; t < log_mu.size(); ++t)
      if (t != record.true_index() && log_mu[t] > bound) return false;
  }
  return true;
}

/// Fraction of realizations inside the high-probability event
/// {mu_i(theta) <= exp(-i (rho - epsilon)) for all i >= i0, all theta != true}.
inline double highprob_bound_diagnostic(std::span<const TrajectoryRecord> records,
                                        const NormalityParams& p, double epsilon,
                                        std::size_t i0) {
  if (!(epsilon > 0.0) || epsilon > p.rho)
    throw Error(ErrorCode::kInvalidArgument, "epsilon must lie in (0, rho]");
  if (records.empty()) return 0.0;
  std::size_t inside = 0;
  for (const auto& r : records)
    if (satisfies_highprob_bound(r, p, epsilon, i0)) ++inside;
  return static_cast<double>(inside) / static_cast<double>(records.size());
}

//---------------------------------------------------------------------------//

struct JensenGap {
  std::size_t theta = 0;
  double rho_g = 0.0;
  double rho_a = 0.0;
  double std_error_rho_a = 0.0;
  bool holds = false;  // rho_G >= rho_A - 4 SE

  double gap() const { return rho_g - rho_a; }
};

inline constexpr double kStdErrorBand = 4.0;

inline JensenGap jensen_gap(const NormalityParams& ga, const NormalityParams& aa) {
  JensenGap g{ga.theta, ga.rho, aa.rho, aa.std_error_rho, false};
  g.holds = g.rho_g >= g.rho_a - kStdErrorBand * g.std_error_rho_a;
  return g;
}

inline JensenGap jensen_gap(const Environment& env, const HypothesisSet& hs,
                            const ConfidenceWeights& w, std::size_t theta,
                            const EstimatorOptions& opts = {}) {
  return jensen_gap(ga_params(env, hs, w, theta, opts), aa_params(env, hs, w, theta, opts));
}

}  // namespace fedsl
