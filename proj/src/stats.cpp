#include "qvrp/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "qvrp/errors.hpp"

namespace qvrp::stats {

double ln_gamma(double x) { return std::lgamma(x); }

namespace {

// Series expansion of P(a,x), valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int i = 0; i < 500; ++i) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-15) break;
  }
  return sum * std::exp(-x + a * std::log(x) - ln_gamma(a));
}

// Continued fraction for Q(a,x), valid for x >= a + 1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i < 500; ++i) {
    double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-15) break;
  }
  return std::exp(-x + a * std::log(x) - ln_gamma(a)) * h;
}

double beta_cf(double a, double b, double x) {
  const double tiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return h;
}

}  // namespace

double gamma_p(double a, double x) {
  if (x < 0 || a <= 0) throw ArgumentError("gamma_p: domain error");
  if (x == 0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_cf(a, x);
}

double inc_beta(double a, double b, double x) {
  if (x <= 0) return 0.0;
  if (x >= 1) return 1.0;
  double ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * std::log(x) +
                    b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_cf(a, b, x) / a;
  return 1.0 - front * beta_cf(b, a, 1.0 - x) / b;
}

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

double chi2_cdf(double x, double dof) {
  if (x <= 0) return 0.0;
  return gamma_p(dof / 2.0, x / 2.0);
}

double student_t_cdf(double t, double dof) {
  double x = dof / (dof + t * t);
  double p = 0.5 * inc_beta(dof / 2.0, 0.5, x);
  return t > 0 ? 1.0 - p : p;
}

PairedTTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw ArgumentError("paired_t_test: need two samples of equal size >= 2");
  int n = static_cast<int>(a.size());
  double mean = 0;
  for (int i = 0; i < n; ++i) mean += a[i] - b[i];
  mean /= n;
  double ss = 0;
  for (int i = 0; i < n; ++i) {
    double d = a[i] - b[i] - mean;
    ss += d * d;
  }
  double sd = std::sqrt(ss / (n - 1));
  PairedTTest r;
  r.dof = n - 1;
  if (sd == 0.0) {
    r.t = mean > 0 ? std::numeric_limits<double>::infinity()
                   : (mean < 0 ? -std::numeric_limits<double>::infinity() : 0.0);
    r.p_one_sided = mean > 0 ? 0.0 : 1.0;
    return r;
  }
  r.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  r.p_one_sided = 1.0 - student_t_cdf(r.t, r.dof);
  return r;
}

LineFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw ArgumentError("linear_fit: bad input");
  double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  LineFit f;
  f.slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  f.intercept = (sy - f.slope * sx) / n;
  return f;
}

double chi2_gof_pvalue(const std::vector<long>& counts, const std::vector<double>& expected,
                       double min_expected) {
  if (counts.size() != expected.size() || counts.empty())
    throw ArgumentError("chi2_gof_pvalue: bad input");
  // Merge small-expectation bins.
  std::vector<double> obs_m, exp_m;
  double obs_tail = 0, exp_tail = 0;
  for (size_t i = 0; i < counts.size(); ++i) {
    if (expected[i] >= min_expected) {
      obs_m.push_back(static_cast<double>(counts[i]));
      exp_m.push_back(expected[i]);
    } else {
      obs_tail += static_cast<double>(counts[i]);
      exp_tail += expected[i];
    }
  }
  if (exp_tail > 0) {
    obs_m.push_back(obs_tail);
    exp_m.push_back(exp_tail);
  }
  if (obs_m.size() < 2) return 1.0;
  double stat = 0;
  for (size_t i = 0; i < obs_m.size(); ++i) {
    double d = obs_m[i] - exp_m[i];
    stat += d * d / exp_m[i];
  }
  double dof = static_cast<double>(obs_m.size()) - 1.0;
  return 1.0 - chi2_cdf(stat, dof);
}

double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile: empty input");
  std::sort(values.begin(), values.end());
  double pos = q * (values.size() - 1);
  size_t lo = static_cast<size_t>(pos);
  size_t hi = std::min(lo + 1, values.size() - 1);
  double frac = pos - static_cast<double>(lo);
  return values[lo] * (1.0 - frac) + values[hi] * frac;
}

}  // namespace qvrp::stats
