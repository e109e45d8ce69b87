#include "dml/significance.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "dml/error.hpp"

namespace dml {

namespace {

double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 500;
  constexpr double kEps = 1e-15;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::abs(delta - 1.0) < kEps) return h;
  }
  throw Error("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0 && b > 0)) throw ConfigError("incomplete_beta: a and b must be positive");
  if (!(x >= 0 && x <= 1)) throw ConfigError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0 || x == 1) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  // The fraction converges fast for x < (a + 1) / (a + b + 2); use symmetry otherwise.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided(double t, double dof) {
  if (!(dof > 0)) throw ConfigError("student_t_two_sided: dof must be positive");
  if (std::isnan(t)) throw ConfigError("student_t_two_sided: t is NaN");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(dof / 2.0, 0.5, dof / (dof + t * t));
}

PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw DimensionError("paired_t_test: " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " scores");
  }
  if (a.size() < 2) throw DimensionError("paired_t_test: need at least two pairs");
  const auto n = static_cast<double>(a.size());
  PairedTTest out;
  out.dof = static_cast<int>(a.size()) - 1;
  double mean = 0;
  for (std::size_t i = 0; i < a.size(); ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  bool all_zero = true;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (d != 0) all_zero = false;
    ss += (d - mean) * (d - mean);
  }
  out.mean_difference = mean;
  if (all_zero) {
    out.p_value = 1.0;
    return out;
  }
  const double sd = std::sqrt(ss / (n - 1.0));
  // Differences equal up to rounding count as zero variance.
  if (sd <= 1e-12 * std::abs(mean)) {
    out.t_statistic = mean > 0 ? std::numeric_limits<double>::infinity()
                               : -std::numeric_limits<double>::infinity();
    out.p_value = 0.0;
    return out;
  }
  out.t_statistic = mean / (sd / std::sqrt(n));
  out.p_value = student_t_two_sided(out.t_statistic, out.dof);
  return out;
}

double paired_significance(std::span<const double> a, std::span<const double> b) {
  return paired_t_test(a, b).p_value;
}

}  // namespace dml
