#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace costwise {

// Shared hyper-parameters for both model families. Defaults are the shipped
// training configuration; tests override selectively.
struct FitConfig {
  // elastic net
  double alpha = 1.0;
  double l1_ratio = 0.5;
  double tol = 1e-6;
  int max_iter = 1000;
  // gradient-boosted trees
  int n_trees = 20;
  int max_depth = 5;
  double subsample = 0.9;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;
};

// Sparse linear model over z-scored features, fit on ln(y+1). Columns with
// zero variance are excluded from both standardization and the penalty; their
// weight stays zero.
struct LinearCostModel {
  std::vector<std::string> feature_ids;
  std::vector<double> weights;  // per standardized column
  std::vector<double> means;
  std::vector<double> stds;     // 0 marks an excluded constant column
  double intercept = 0.0;

  // b + sum_j w_j * (x_j - mu_j) / sigma_j, in log space
  double predict_log(std::span<const double> x) const;
  // Weight per unit of the raw (unstandardized) feature.
  double raw_weight(std::size_t j) const {
    return stds[j] > 0.0 ? weights[j] / stds[j] : 0.0;
  }

  nlohmann::json to_json() const;
  static LinearCostModel from_json(const nlohmann::json& j);
};

// Cyclic coordinate descent with soft thresholding on
//   (1/2n)||y' - X theta - b||^2 + alpha * (l1 ||theta||_1 + (1-l1)/2 ||theta||^2)
// where y' = ln(y+1). The intercept is unpenalized. When objective_trace is
// given it receives the objective after every sweep.
LinearCostModel fit_elastic_net(const std::vector<std::vector<double>>& X,
                                const std::vector<double>& y_ms,
                                const FitConfig& cfg,
                                std::vector<std::string> feature_ids,
                                std::vector<double>* objective_trace = nullptr);

// exp(predict_log) - 1, clamped to be non-negative.
double predict_linear(const LinearCostModel& m, std::span<const double> x);

// Axis-aligned regression tree stored as a flat node array. feature == -1
// marks a leaf and `value` holds the leaf mean; internal nodes route
// x[feature] <= threshold to `left`.
struct TreeNode {
  int feature = -1;
  double value = 0.0;  // threshold for internal nodes, prediction for leaves
  int left = -1;
  int right = -1;
};

struct RegressionTree {
  std::vector<TreeNode> nodes;
  double predict(std::span<const double> x) const;
};

// Boosted ensemble over raw feature values, fit on ln(y+1) residuals with a
// constant base score (the mean target). Subsampling is driven by a
// splitmix64 stream from cfg.seed, so a seed pins the whole model.
struct GbtCostModel {
  std::vector<std::string> feature_ids;
  std::vector<RegressionTree> trees;
  double base_score = 0.0;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;

  double predict_log(std::span<const double> x) const;

  nlohmann::json to_json() const;
  static GbtCostModel from_json(const nlohmann::json& j);
};

GbtCostModel fit_gbt(const std::vector<std::vector<double>>& X,
                     const std::vector<double>& y_ms,
                     const FitConfig& cfg,
                     std::vector<std::string> feature_ids);

double predict_gbt(const GbtCostModel& m, std::span<const double> x);

}  // namespace costwise
