#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace costwise {

// Latency targets are learned as ln(y + 1); the shift keeps zero latencies
// finite and, together with squared error, penalizes under-estimation harder
// than over-estimation of the same magnitude.
inline double log_transform(double y_ms) {
  if (!(y_ms >= 0.0)) throw std::invalid_argument("metrics: latency must be >= 0");
  return std::log1p(y_ms);
}

inline double inverse_log_transform(double t) {
  double y = std::expm1(t);
  return y > 0.0 ? y : 0.0;
}

// Mean squared error between log-shifted predictions and actuals.
inline double msle(const std::vector<double>& predicted,
                   const std::vector<double>& actual) {
  if (predicted.size() != actual.size() || predicted.empty())
    throw std::invalid_argument("metrics: size mismatch or empty input");
  double acc = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    double d = std::log1p(predicted[i]) - std::log1p(actual[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(predicted.size());
}

inline double relative_error(double predicted, double actual, double eps = 1e-9) {
  return std::fabs(predicted - actual) / std::max(actual, eps);
}

// p in [0, 1]; linear interpolation between adjacent ranks of the sorted errors.
inline double percentile_rel_error(const std::vector<double>& predicted,
                                   const std::vector<double>& actual, double p) {
  if (predicted.size() != actual.size() || predicted.empty())
    throw std::invalid_argument("metrics: size mismatch or empty input");
  std::vector<double> errs(predicted.size());
  for (std::size_t i = 0; i < predicted.size(); ++i)
    errs[i] = relative_error(predicted[i], actual[i]);
  std::sort(errs.begin(), errs.end());
  double rank = p * static_cast<double>(errs.size() - 1);
  std::size_t lo = static_cast<std::size_t>(rank);
  std::size_t hi = std::min(lo + 1, errs.size() - 1);
  double frac = rank - static_cast<double>(lo);
  return errs[lo] * (1.0 - frac) + errs[hi] * frac;
}

inline double median_rel_error(const std::vector<double>& predicted,
                               const std::vector<double>& actual) {
  return percentile_rel_error(predicted, actual, 0.5);
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size() || a.size() < 2)
    throw std::invalid_argument("metrics: pearson needs >= 2 paired values");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(a.size());
  mb /= static_cast<double>(a.size());
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace costwise
