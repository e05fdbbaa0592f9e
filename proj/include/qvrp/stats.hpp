#pragma once

#include <vector>

namespace qvrp::stats {

double ln_gamma(double x);

// Regularized lower incomplete gamma P(a, x).
double gamma_p(double a, double x);

// Regularized incomplete beta I_x(a, b).
double inc_beta(double a, double b, double x);

double normal_cdf(double z);
double chi2_cdf(double x, double dof);
double student_t_cdf(double t, double dof);

struct PairedTTest {
  double t = 0.0;
  double p_one_sided = 1.0;  // P(T >= t) under H0
  int dof = 0;
};

// Tests whether mean(a - b) > 0. Degenerate zero-variance differences give
// t = +/-inf semantics: p = 0 if the mean is positive, 1 otherwise.
PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
};

LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y);

// Pearson chi-square statistic against expected counts; bins with expected
// count below `min_expected` are merged into the last compliant bin. Returns
// the p-value P(X2 >= stat).
double chi2_gof_pvalue(const std::vector<long>& counts, const std::vector<double>& expected,
                       double min_expected = 5.0);

double percentile(std::vector<double> values, double q);  // q in [0,1]

}  // namespace qvrp::stats
