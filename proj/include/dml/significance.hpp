#pragma once

#include <span>

namespace dml {

/// Regularized incomplete beta I_x(a, b), evaluated with the modified Lentz
/// continued fraction. Converges to 1e-15 relative; documented accuracy 1e-10.
double incomplete_beta(double a, double b, double x);

/// Two-sided tail probability P(|T| >= |t|) for Student's t with `dof` degrees
/// of freedom.
double student_t_two_sided(double t, double dof);

struct PairedTTest {
  double mean_difference = 0;
  double t_statistic = 0;
  double p_value = 1;
  int dof = 0;
};

/// Two-sided paired t-test on the per-fold differences a_i - b_i.
/// All-zero differences give p = 1; zero variance with a nonzero mean gives p = 0.
PairedTTest paired_t_test(std::span<const double> a, std::span<const double> b);

/// p-value of paired_t_test.
double paired_significance(std::span<const double> a, std::span<const double> b);

}  // namespace dml
