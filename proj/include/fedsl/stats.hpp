#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "fedsl/error.hpp"

namespace fedsl::stats {

//---------------------------------------------------------------------------//
// Standard normal distribution
//---------------------------------------------------------------------------//

/// Phi(t). erfc keeps full relative precision in the lower tail.
inline double std_normal_cdf(double t) {
  return 0.5 * std::erfc(-t * std::numbers::sqrt2 / 2.0);
}

/// Upper tail 1 - Phi(t) without cancellation.
inline double std_normal_sf(double t) { return 0.5 * std::erfc(t * std::numbers::sqrt2 / 2.0); }

inline double std_normal_pdf(double t) {
  return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
}

namespace detail {

template <std::size_t N>
double horner(const std::array<double, N>& c, double x) {
  double acc = c[N - 1];
  for (std::size_t i = N - 1; i-- > 0;) acc = acc * x + c[i];
  return acc;
}

}  // namespace detail

/// Phi^{-1}(p), Wichura's AS 241 (PPND16), relative accuracy about 1e-16.
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    if (p == 0.0) return -std::numeric_limits<double>::infinity();
    if (p == 1.0) return std::numeric_limits<double>::infinity();
    throw Error(ErrorCode::kInvalidArgument, "quantile probability outside [0, 1]");
  }
  static constexpr std::array<double, 8> a = {
      3.3871328727963666080e0, 1.3314166789178437745e+2, 1.9715909503065514427e+3,
      1.3731693765509461125e+4, 4.5921953931549871457e+4, 6.7265770927008700853e+4,
      3.3430575583588128105e+4, 2.5090809287301226727e+3};
  static constexpr std::array<double, 8> b = {
      1.0, 4.2313330701600911252e+1, 6.8718700749205790830e+2, 5.3941960214247511077e+3,
      2.1213794301586595867e+4, 3.9307895800092710610e+4, 2.8729085735721942674e+4,
      5.2264952788528545610e+3};
  static constexpr std::array<double, 8> c = {
      1.42343711074968357734e0, 4.63033784615654529590e0, 5.76949722146069140550e0,
      3.64784832476320460504e0, 1.27045825245236838258e0, 2.41780725177450611770e-1,
      2.27238449892691845833e-2, 7.74545014278341407640e-4};
  static constexpr std::array<double, 8> d = {
      1.0, 2.05319162663775882187e0, 1.67638483018380384940e0, 6.89767334985100004550e-1,
      1.48103976427480074590e-1, 1.51986665636164571966e-2, 5.47593808499534494600e-4,
      1.05075007164441684324e-9};
  static constexpr std::array<double, 8> e = {
      6.65790464350110377720e0, 5.46378491116411436990e0, 1.78482653991729133580e0,
      2.96560571828504891230e-1, 2.65321895265761230930e-2, 1.24266094738807843860e-3,
      2.71155556874348757815e-5, 2.01033439929228813265e-7};
  static constexpr std::array<double, 8> f = {
      1.0, 5.99832206555887937690e-1, 1.36929880922735805310e-1, 1.48753612908506148525e-2,
      7.86869131145613259100e-4, 1.84631831751005468180e-5, 1.42151175831644588870e-7,
      2.04426310338993978564e-15};

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q * detail::horner(a, r) / detail::horner(b, r);
  }
  double r = std::sqrt(-std::log(q < 0.0 ? p : 1.0 - p));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value = detail::horner(c, r) / detail::horner(d, r);
  } else {
    r -= 5.0;
    value = detail::horner(e, r) / detail::horner(f, r);
  }
  return q < 0.0 ? -value : value;
}

//---------------------------------------------------------------------------//
// Moments
//---------------------------------------------------------------------------//

/// Streaming central moments up to order four (Welford / Pebay). Merging two
/// accumulators is exact in exact arithmetic, so block-wise parallel sums
/// reduced in a fixed order are reproducible.
class MomentAccumulator {
 public:
  void add(double x) {
    const double n1 = static_cast<double>(n_);
    ++n_;
    const double n = static_cast<double>(n_);
    const double delta = x - mean_;
    const double delta_n = delta / n;
    const double delta_n2 = delta_n * delta_n;
    const double term1 = delta * delta_n * n1;
    mean_ += delta_n;
    m4_ += term1 * delta_n2 * (n * n - 3.0 * n + 3.0) + 6.0 * delta_n2 * m2_ - 4.0 * delta_n * m3_;
    m3_ += term1 * delta_n * (n - 2.0) - 3.0 * delta_n * m2_;
    m2_ += term1;
  }

  void merge(const MomentAccumulator& other) {
    if (other.n_ == 0) return;
    if (n_ == 0) {
      *this = other;
      return;
    }
    const double na = static_cast<double>(n_);
    const double nb = static_cast<double>(other.n_);
    const double n = na + nb;
    const double delta = other.mean_ - mean_;
    const double d2 = delta * delta;
    const double d3 = d2 * delta;
    const double d4 = d2 * d2;
    const double m2 = m2_ + other.m2_ + d2 * na * nb / n;
    const double m3 = m3_ + other.m3_ + d3 * na * nb * (na - nb) / (n * n) +
                      3.0 * delta * (na * other.m2_ - nb * m2_) / n;
    const double m4 = m4_ + other.m4_ + d4 * na * nb * (na * na - na * nb + nb * nb) / (n * n * n) +
                      6.0 * d2 * (na * na * other.m2_ + nb * nb * m2_) / (n * n) +
                      4.0 * delta * (na * other.m3_ - nb * m3_) / n;
    mean_ += delta * nb / n;
    m2_ = m2;
    m3_ = m3;
    m4_ = m4;
    n_ += other.n_;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }

  /// Unbiased (n - 1) variance.
  double variance() const {
    if (n_ < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs at least 2 samples");
    return m2_ / static_cast<double>(n_ - 1);
  }

  /// Standard error of the sample mean.
  double mean_std_error() const { return std::sqrt(variance() / static_cast<double>(n_)); }

  /// Large-sample standard error of the variance estimate: sqrt((mu4 - sigma^4) / n).
  double variance_std_error() const {
    if (n_ < 2) throw Error(ErrorCode::kInsufficientSamples, "variance needs at least 2 samples");
    const double n = static_cast<double>(n_);
    const double mu2 = m2_ / n;
    const double mu4 = m4_ / n;
    return std::sqrt(std::max(mu4 - mu2 * mu2, 0.0) / n);
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
  double m3_ = 0.0;
  double m4_ = 0.0;
};

struct Moments {
  double mean = 0.0;
  double variance = 0.0;  // unbiased
};

inline Moments sample_moments(std::span<const double> samples) {
  if (samples.size() < 2)
    throw Error(ErrorCode::kInsufficientSamples, "sample moments need at least 2 samples");
  MomentAccumulator acc;
  for (double x : samples) acc.add(x);
  return {acc.mean(), acc.variance()};
}

//---------------------------------------------------------------------------//
// Goodness of fit
//---------------------------------------------------------------------------//

enum class TestKind { kKolmogorovSmirnov, kShapiroWilk };

constexpr std::string_view to_string(TestKind kind) {
  return kind == TestKind::kKolmogorovSmirnov ? "ks" : "shapiro_wilk";
}

struct TestResult {
  TestKind test = TestKind::kKolmogorovSmirnov;
  double statistic = 0.0;
  double p_value = 1.0;
  std::size_t n = 0;
};

/// Survival function of the Kolmogorov distribution, Q(x) = P(K > x).
inline double kolmogorov_sf(double x) {
  if (x <= 0.0) return 1.0;
  if (x < 1.18) {
    // Jacobi theta form converges fast for small x.
    const double k = std::sqrt(2.0 * std::numbers::pi) / x;
    const double w = std::numbers::pi * std::numbers::pi / (8.0 * x * x);
    double sum = 0.0;
    for (int j = 1; j <= 100; ++j) {
      const double odd = 2.0 * j - 1.0;
      const double term = std::exp(-odd * odd * w);
      sum += term;
      if (term < 1e-300) break;
    }
    return std::clamp(1.0 - k * sum, 0.0, 1.0);
  }
  double sum = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = std::exp(-2.0 * j * j * x * x);
    sum += (j % 2 == 1) ? term : -term;
    if (term < 1e-300) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

inline void require_finite(std::span<const double> samples) {
  for (double x : samples)
    if (!std::isfinite(x)) throw Error(ErrorCode::kNonFinite, "sample contains a non-finite value");
}

/// One-sample KS test against the standard normal; asymptotic p-value.
inline TestResult ks_test_normal(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::kSampleSizeOutOfRange, "KS test needs n >= 1");
  require_finite(samples);
  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    const double cdf = std_normal_cdf(sorted[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return {TestKind::kKolmogorovSmirnov, d, kolmogorov_sf(std::sqrt(n) * d), sorted.size()};
}

/// Two-sample KS test; asymptotic p-value with effective size nm/(n+m).
inline TestResult ks_two_sample(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty())
    throw Error(ErrorCode::kSampleSizeOutOfRange, "two-sample KS needs non-empty samples");
  require_finite(a);
  require_finite(b);
  std::vector<double> x(a.begin(), a.end());
  std::vector<double> y(b.begin(), b.end());
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  const double nx = static_cast<double>(x.size());
  const double ny = static_cast<double>(y.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double d = 0.0;
  while (i < x.size() && j < y.size()) {
    const double v = std::min(x[i], y[j]);
    while (i < x.size() && x[i] == v) ++i;
    while (j < y.size() && y[j] == v) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / nx - static_cast<double>(j) / ny));
  }
  const double effective = nx * ny / (nx + ny);
  return {TestKind::kKolmogorovSmirnov, d, kolmogorov_sf(std::sqrt(effective) * d),
          x.size() + y.size()};
}

/// Shapiro-Wilk W test, Royston's AS R94 approximation, 3 <= n <= 5000.
inline TestResult shapiro_wilk(std::span<const double> samples) {
  const std::size_t n = samples.size();
  if (n < 3 || n > 5000)
    throw Error(ErrorCode::kSampleSizeOutOfRange, "Shapiro-Wilk needs 3 <= n <= 5000");
  require_finite(samples);
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  if (x.back() - x.front() <= 1e-19 * std::max(1.0, std::abs(x.front())))
    throw Error(ErrorCode::kConstantSample, "all samples are equal");

  // Coefficients for the upper half of the order statistics.
  const std::size_t half = n / 2;
  const double an = static_cast<double>(n);
  std::vector<double> coef(half);
  if (n == 3) {
    coef[0] = std::numbers::sqrt2 / 2.0;
  } else {
    static constexpr std::array<double, 6> c1 = {0.0, 0.221157, -0.147981, -2.07119, 4.434685,
                                                 -2.706056};
    static constexpr std::array<double, 6> c2 = {0.0, 0.042981, -0.293762, -1.752461, 5.682633,
                                                 -3.582633};
    std::vector<double> m(half);
    double summ2 = 0.0;
    for (std::size_t i = 0; i < half; ++i) {
      m[i] = std_normal_quantile((static_cast<double>(i + 1) - 0.375) / (an + 0.25));
      summ2 += m[i] * m[i];
    }
    summ2 *= 2.0;
    const double ssumm2 = std::sqrt(summ2);
    const double rsn = 1.0 / std::sqrt(an);
    const double a1 = detail::horner(c1, rsn) - m[0] / ssumm2;
    std::size_t first_scaled;
    double fac;
    if (n > 5) {
      first_scaled = 2;
      const double a2 = -m[1] / ssumm2 + detail::horner(c2, rsn);
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0] - 2.0 * m[1] * m[1]) /
                      (1.0 - 2.0 * a1 * a1 - 2.0 * a2 * a2));
      coef[1] = a2;
    } else {
      first_scaled = 1;
      fac = std::sqrt((summ2 - 2.0 * m[0] * m[0]) / (1.0 - 2.0 * a1 * a1));
    }
    coef[0] = a1;
    for (std::size_t i = first_scaled; i < half; ++i) coef[i] = -m[i] / fac;
  }

  // W = (sum a_i x_(i))^2 / sum (x_i - mean)^2 with antisymmetric a.
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= an;
  double ssx = 0.0;
  for (double v : x) ssx += (v - mean) * (v - mean);
  double sax = 0.0;
  for (std::size_t i = 0; i < half; ++i) sax += coef[i] * (x[n - 1 - i] - x[i]);
  double ssa = 0.0;
  for (double c : coef) ssa += 2.0 * c * c;
  const double w = std::min(sax * sax / (ssa * ssx), 1.0);

  double p;
  if (n == 3) {
    constexpr double kSixOverPi = 6.0 / std::numbers::pi;
    p = std::max(kSixOverPi * (std::asin(std::sqrt(w)) - std::numbers::pi / 3.0), 0.0);
    return {TestKind::kShapiroWilk, w, std::min(p, 1.0), n};
  }
  double y = std::log1p(-w);
  double mu;
  double sigma;
  if (n <= 11) {
    const double gamma = -2.273 + 0.459 * an;
    if (y >= gamma) return {TestKind::kShapiroWilk, w, 1e-99, n};
    y = -std::log(gamma - y);
    mu = detail::horner(std::array<double, 4>{0.544, -0.39978, 0.025054, -6.714e-4}, an);
    sigma = std::exp(
        detail::horner(std::array<double, 4>{1.3822, -0.77857, 0.062767, -0.0020322}, an));
  } else {
    const double ln = std::log(an);
    mu = detail::horner(std::array<double, 4>{-1.5861, -0.31082, -0.083751, 0.0038915}, ln);
    sigma = std::exp(detail::horner(std::array<double, 3>{-0.4803, -0.082676, 0.0030302}, ln));
  }
  p = std_normal_sf((y - mu) / sigma);
  return {TestKind::kShapiroWilk, w, p, n};
}

//---------------------------------------------------------------------------//
// Histograms and intervals
//---------------------------------------------------------------------------//

struct Histogram {
  std::vector<double> edges;      // bins + 1 entries
  std::vector<double> densities;  // integrates to one
};

/// ceil(log2 n) + 1.
inline std::size_t sturges_bins(std::size_t n) {
  if (n <= 1) return 1;
  return static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(n)))) + 1;
}

/// Equal-width density histogram over [min, max]. A constant sample yields a
/// single bin of width 1 centered on the value.
inline Histogram histogram_density(std::span<const double> samples, std::size_t bin_count) {
  if (samples.empty()) throw Error(ErrorCode::kInsufficientSamples, "histogram needs samples");
  if (bin_count == 0) throw Error(ErrorCode::kInvalidArgument, "bin count must be >= 1");
  require_finite(samples);
  const auto [lo_it, hi_it] = std::minmax_element(samples.begin(), samples.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  const double n = static_cast<double>(samples.size());
  if (hi == lo) return {{lo - 0.5, lo + 0.5}, {1.0}};

  const double width = (hi - lo) / static_cast<double>(bin_count);
  Histogram h;
  h.edges.resize(bin_count + 1);
  for (std::size_t b = 0; b <= bin_count; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  std::vector<std::size_t> counts(bin_count, 0);
  for (double x : samples) {
    auto b = static_cast<std::size_t>((x - lo) / width);
    ++counts[std::min(b, bin_count - 1)];
  }
  h.densities.resize(bin_count);
  for (std::size_t b = 0; b < bin_count; ++b)
    h.densities[b] = static_cast<double>(counts[b]) / (n * (h.edges[b + 1] - h.edges[b]));
  return h;
}

struct Interval {
  double lower = 0.0;
  double upper = 1.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t successes, std::size_t trials, double z = 1.959963984540054) {
  if (trials == 0) return {0.0, 1.0};
  const double n = static_cast<double>(trials);
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double centre = (p + z2 / (2.0 * n)) / (1.0 + z2 / n);
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / (1.0 + z2 / n);
  const double lower = successes == 0 ? 0.0 : std::max(0.0, centre - half);
  const double upper = successes == trials ? 1.0 : std::min(1.0, centre + half);
  return {lower, upper};
}

}  // namespace fedsl::stats
