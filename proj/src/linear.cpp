#include <cassert>
#include <cmath>
#include <stdexcept>

#include "costwise/learners.hpp"
#include "costwise/metrics.hpp"

namespace costwise {

namespace {

double soft_threshold(double z, double gamma) {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

void check_matrix(const std::vector<std::vector<double>>& X,
                  const std::vector<double>& y, std::size_t dim) {
  if (X.empty()) throw std::invalid_argument("learners: empty dataset");
  if (X.size() != y.size())
    throw std::invalid_argument("learners: row/target count mismatch");
  for (const auto& row : X) {
    if (row.size() != dim)
      throw std::invalid_argument("learners: ragged feature matrix");
    for (double v : row)
      if (!std::isfinite(v))
        throw std::invalid_argument("learners: non-finite feature value");
  }
}

}  // namespace

double LinearCostModel::predict_log(std::span<const double> x) const {
  if (x.size() != weights.size())
    throw std::invalid_argument("learners: feature vector does not cover model columns");
  double acc = intercept;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (stds[j] <= 0.0 || weights[j] == 0.0) continue;
    acc += weights[j] * (x[j] - means[j]) / stds[j];
  }
  return acc;
}

LinearCostModel fit_elastic_net(const std::vector<std::vector<double>>& X,
                                const std::vector<double>& y_ms,
                                const FitConfig& cfg,
                                std::vector<std::string> feature_ids,
                                std::vector<double>* objective_trace) {
  const std::size_t p = feature_ids.size();
  check_matrix(X, y_ms, p);
  const std::size_t n = X.size();
  const double dn = static_cast<double>(n);

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = log_transform(y_ms[i]);

  LinearCostModel m;
  m.feature_ids = std::move(feature_ids);
  m.weights.assign(p, 0.0);
  m.means.assign(p, 0.0);
  m.stds.assign(p, 0.0);

  // population z-scoring; (1/n) sum z_j^2 == 1 keeps the coordinate update
  // denominator at 1 + alpha (1 - l1)
  for (std::size_t j = 0; j < p; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += X[i][j];
    mu /= dn;
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double d = X[i][j] - mu;
      var += d * d;
    }
    var /= dn;
    m.means[j] = mu;
    m.stds[j] = var > 0.0 ? std::sqrt(var) : 0.0;
  }

  std::vector<std::size_t> active;
  for (std::size_t j = 0; j < p; ++j)
    if (m.stds[j] > 0.0) active.push_back(j);

  // column-major standardized copy of the active columns
  std::vector<std::vector<double>> z(active.size(), std::vector<double>(n));
  for (std::size_t a = 0; a < active.size(); ++a) {
    std::size_t j = active[a];
    for (std::size_t i = 0; i < n; ++i) z[a][i] = (X[i][j] - m.means[j]) / m.stds[j];
  }

  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= dn;
  m.intercept = ybar;  // standardized columns have zero mean

  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - ybar;

  const double l1 = cfg.alpha * cfg.l1_ratio;
  const double l2 = cfg.alpha * (1.0 - cfg.l1_ratio);
  std::vector<double> theta(active.size(), 0.0);

  auto objective = [&] {
    double sse = 0.0;
    for (double r : resid) sse += r * r;
    double pen1 = 0.0, pen2 = 0.0;
    for (double t : theta) {
      pen1 += std::fabs(t);
      pen2 += t * t;
    }
    return sse / (2.0 * dn) + l1 * pen1 + 0.5 * l2 * pen2;
  };

  double prev_obj = objective();
  for (int iter = 0; iter < cfg.max_iter; ++iter) {
    double max_delta = 0.0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::vector<double>& col = z[a];
      double rho = 0.0;
      for (std::size_t i = 0; i < n; ++i) rho += col[i] * resid[i];
      rho = rho / dn + theta[a];
      double updated = soft_threshold(rho, l1) / (1.0 + l2);
      double delta = updated - theta[a];
      if (delta != 0.0) {
        for (std::size_t i = 0; i < n; ++i) resid[i] -= delta * col[i];
        theta[a] = updated;
        max_delta = std::max(max_delta, std::fabs(delta));
      }
    }
    double obj = objective();
    assert(obj <= prev_obj + 1e-10 && "coordinate descent must not increase the objective");
    prev_obj = obj;
    if (objective_trace) objective_trace->push_back(obj);
    if (max_delta < cfg.tol) break;
  }

  for (std::size_t a = 0; a < active.size(); ++a) m.weights[active[a]] = theta[a];
  return m;
}

double predict_linear(const LinearCostModel& m, std::span<const double> x) {
  return inverse_log_transform(m.predict_log(x));
}

nlohmann::json LinearCostModel::to_json() const {
  return {{"type", "linear"},
          {"features", feature_ids},
          {"weights", weights},
          {"means", means},
          {"stds", stds},
          {"intercept", intercept}};
}

LinearCostModel LinearCostModel::from_json(const nlohmann::json& j) {
  LinearCostModel m;
  m.feature_ids = j.at("features").get<std::vector<std::string>>();
  m.weights = j.at("weights").get<std::vector<double>>();
  m.means = j.at("means").get<std::vector<double>>();
  m.stds = j.at("stds").get<std::vector<double>>();
  m.intercept = j.at("intercept").get<double>();
  if (m.weights.size() != m.feature_ids.size() || m.means.size() != m.weights.size() ||
      m.stds.size() != m.weights.size())
    throw std::runtime_error("learners: inconsistent linear model document");
  return m;
}

}  // namespace costwise
