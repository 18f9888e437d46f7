// Copyright (c) 2026 the warpaug authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file stats.hpp
/// @brief Paired and Welch t-tests with two-tailed p-values from the
///        continued-fraction incomplete beta, plus a KS uniformity check.

#ifndef WARPAUG_STATS_HPP
#define WARPAUG_STATS_HPP

#include <algorithm>
#include <vector>

#include "warpaug/common.hpp"

namespace warpaug {

namespace detail {

/// Continued fraction for the regularized incomplete beta (Lentz's method).
inline double betacf(double a, double b, double x) {
  constexpr int kMaxIter = 300;
  constexpr double kEps = 3e-14, kFpMin = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::abs(d) < kFpMin) d = kFpMin;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kFpMin) d = kFpMin;
    c = 1.0 + aa / c;
    if (std::abs(c) < kFpMin) c = kFpMin;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error(ErrorKind::numeric, "incomplete beta did not converge");
}

/// Regularized incomplete beta I_x(a, b).
inline double betai(double a, double b, double x) {
  if (x < 0.0 || x > 1.0)
    throw Error(ErrorKind::parameter, "betai domain error");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;
  double bt = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                       a * std::log(x) + b * std::log(1.0 - x));
  if (x < (a + 1.0) / (a + b + 2.0)) return bt * betacf(a, b, x) / a;
  return 1.0 - bt * betacf(b, a, 1.0 - x) / b;
}

}  // namespace detail

/// Two-tailed p-value of a t statistic with the given degrees of freedom.
inline double tTestPValue(double t, double df) {
  return detail::betai(df / 2.0, 0.5, df / (df + t * t));
}

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  double mean_difference = 0.0;
};

/// Paired two-tailed t-test on matched vectors.
inline TTestResult pairedTTest(const std::vector<double>& a,
                               const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw Error(ErrorKind::parameter, "paired test needs matched n >= 2");
  const size_t n = a.size();
  std::vector<double> d(n);
  for (size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  double mean = 0;
  for (double v : d) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0;
  for (double v : d) ss += (v - mean) * (v - mean);
  double sd = std::sqrt(ss / static_cast<double>(n - 1));
  if (sd <= 0)
    throw Error(ErrorKind::undefined_metric,
                "zero variance of paired differences");
  TTestResult out;
  out.mean_difference = mean;
  out.df = static_cast<double>(n - 1);
  out.t = mean / (sd / std::sqrt(static_cast<double>(n)));
  out.p = tTestPValue(out.t, out.df);
  return out;
}

/// Welch two-sample two-tailed t-test.
inline TTestResult twoSampleTTest(const std::vector<double>& a,
                                  const std::vector<double>& b) {
  if (a.size() < 2 || b.size() < 2)
    throw Error(ErrorKind::parameter, "two-sample test needs n >= 2 per side");
  auto moments = [](const std::vector<double>& v) {
    double mean = 0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    double ss = 0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::pair<double, double>(mean,
                                     ss / static_cast<double>(v.size() - 1));
  };
  auto [ma, va] = moments(a);
  auto [mb, vb] = moments(b);
  double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  double se2 = va / na + vb / nb;
  if (se2 <= 0)
    throw Error(ErrorKind::undefined_metric, "zero variance in both samples");
  TTestResult out;
  out.mean_difference = ma - mb;
  out.t = (ma - mb) / std::sqrt(se2);
  out.df = se2 * se2 /
           (va * va / (na * na * (na - 1)) + vb * vb / (nb * nb * (nb - 1)));
  out.p = tTestPValue(out.t, out.df);
  return out;
}

/// One-sample KS statistic against Uniform(0,1).
inline double ksStatisticUniform(std::vector<double> samples) {
  if (samples.empty())
    throw Error(ErrorKind::parameter, "KS needs at least one sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    double x = std::clamp(samples[i], 0.0, 1.0);
    d = std::max(d, std::abs((i + 1) / n - x));
    d = std::max(d, std::abs(x - i / n));
  }
  return d;
}

/// Asymptotic KS critical value; alpha = 0.01 or 0.05.
inline double ksCriticalValue(size_t n, double alpha) {
  double c = alpha <= 0.01 ? 1.6276 : 1.3581;
  return c / std::sqrt(static_cast<double>(n));
}

}  // namespace warpaug

#endif  // WARPAUG_STATS_HPP
