#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "costwise/hashing.hpp"
#include "costwise/learners.hpp"
#include "costwise/metrics.hpp"

namespace costwise {

double RegressionTree::predict(std::span<const double> x) const {
  int idx = 0;
  while (true) {
    const TreeNode& n = nodes[idx];
    if (n.feature < 0) return n.value;
    idx = x[static_cast<std::size_t>(n.feature)] <= n.value ? n.left : n.right;
  }
}

double GbtCostModel::predict_log(std::span<const double> x) const {
  if (x.size() != feature_ids.size())
    throw std::invalid_argument("learners: feature vector does not cover model columns");
  double acc = base_score;
  for (const auto& t : trees) acc += learning_rate * t.predict(x);
  return acc;
}

namespace {

struct TreeBuilder {
  const std::vector<std::vector<double>>& X;
  const std::vector<double>& resid;
  int max_depth;
  std::vector<TreeNode> nodes;

  // Best squared-error split of `idx` over all features; candidates are the
  // midpoints between consecutive distinct sorted values.
  bool best_split(std::vector<std::size_t>& idx, int& feat, double& thr) const {
    const std::size_t n = idx.size();
    double total = 0.0, total_sq = 0.0;
    for (std::size_t i : idx) {
      total += resid[i];
      total_sq += resid[i] * resid[i];
    }
    const double parent_sse = total_sq - total * total / static_cast<double>(n);
    double best_gain = 1e-12;  // require a real improvement
    bool found = false;

    std::vector<std::size_t> order(idx);
    const std::size_t p = X[0].size();
    for (std::size_t j = 0; j < p; ++j) {
      std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        double va = X[a][j], vb = X[b][j];
        if (va != vb) return va < vb;
        return a < b;  // total order keeps the build deterministic
      });
      double left_sum = 0.0, left_sq = 0.0;
      for (std::size_t k = 0; k + 1 < n; ++k) {
        double v = resid[order[k]];
        left_sum += v;
        left_sq += v * v;
        double xa = X[order[k]][j], xb = X[order[k + 1]][j];
        if (xa == xb) continue;
        double nl = static_cast<double>(k + 1);
        double nr = static_cast<double>(n - k - 1);
        double right_sum = total - left_sum;
        double right_sq = total_sq - left_sq;
        double sse = (left_sq - left_sum * left_sum / nl) +
                     (right_sq - right_sum * right_sum / nr);
        double gain = parent_sse - sse;
        if (gain > best_gain) {
          best_gain = gain;
          feat = static_cast<int>(j);
          thr = xa + (xb - xa) / 2.0;
          found = true;
        }
      }
    }
    return found;
  }

  int build(std::vector<std::size_t> idx, int depth) {
    double mean = 0.0;
    for (std::size_t i : idx) mean += resid[i];
    mean /= static_cast<double>(idx.size());

    int feat = -1;
    double thr = 0.0;
    if (depth >= max_depth || idx.size() < 2 || !best_split(idx, feat, thr)) {
      nodes.push_back(TreeNode{-1, mean, -1, -1});
      return static_cast<int>(nodes.size()) - 1;
    }

    std::vector<std::size_t> left, right;
    for (std::size_t i : idx) (X[i][feat] <= thr ? left : right).push_back(i);

    int self = static_cast<int>(nodes.size());
    nodes.push_back(TreeNode{feat, thr, -1, -1});
    nodes[self].left = build(std::move(left), depth + 1);
    nodes[self].right = build(std::move(right), depth + 1);
    return self;
  }
};

}  // namespace

GbtCostModel fit_gbt(const std::vector<std::vector<double>>& X,
                     const std::vector<double>& y_ms,
                     const FitConfig& cfg,
                     std::vector<std::string> feature_ids) {
  if (X.empty()) throw std::invalid_argument("learners: empty dataset");
  if (X.size() != y_ms.size())
    throw std::invalid_argument("learners: row/target count mismatch");
  const std::size_t n = X.size();
  const std::size_t p = feature_ids.size();
  for (const auto& row : X)
    if (row.size() != p) throw std::invalid_argument("learners: ragged feature matrix");

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = log_transform(y_ms[i]);

  GbtCostModel m;
  m.feature_ids = std::move(feature_ids);
  m.learning_rate = cfg.learning_rate;
  m.seed = cfg.seed;
  m.base_score = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(n);

  std::vector<double> pred(n, m.base_score);
  std::vector<double> resid(n);
  std::uint64_t rng_state = cfg.seed;

  const std::size_t bag =
      std::max<std::size_t>(1, static_cast<std::size_t>(
          std::ceil(cfg.subsample * static_cast<double>(n))));

  for (int t = 0; t < cfg.n_trees; ++t) {
    for (std::size_t i = 0; i < n; ++i) resid[i] = y[i] - pred[i];

    // deterministic partial Fisher-Yates draw of `bag` distinct rows
    std::vector<std::size_t> pool(n);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<std::size_t> sample;
    sample.reserve(bag);
    for (std::size_t k = 0; k < bag; ++k) {
      std::size_t r = k + splitmix64(rng_state) % (n - k);
      std::swap(pool[k], pool[r]);
      sample.push_back(pool[k]);
    }
    std::sort(sample.begin(), sample.end());

    TreeBuilder builder{X, resid, cfg.max_depth, {}};
    builder.build(std::move(sample), 0);

    RegressionTree tree{std::move(builder.nodes)};
    for (std::size_t i = 0; i < n; ++i)
      pred[i] += cfg.learning_rate * tree.predict(X[i]);
    m.trees.push_back(std::move(tree));
  }
  return m;
}

double predict_gbt(const GbtCostModel& m, std::span<const double> x) {
  return inverse_log_transform(m.predict_log(x));
}

nlohmann::json GbtCostModel::to_json() const {
  nlohmann::json trees_json = nlohmann::json::array();
  for (const auto& t : trees) {
    nlohmann::json nodes_json = nlohmann::json::array();
    for (const auto& n : t.nodes)
      nodes_json.push_back({{"f", n.feature}, {"v", n.value}, {"l", n.left}, {"r", n.right}});
    trees_json.push_back(std::move(nodes_json));
  }
  return {{"type", "gbt"},
          {"features", feature_ids},
          {"base", base_score},
          {"rate", learning_rate},
          {"seed", seed},
          {"trees", std::move(trees_json)}};
}

GbtCostModel GbtCostModel::from_json(const nlohmann::json& j) {
  GbtCostModel m;
  m.feature_ids = j.at("features").get<std::vector<std::string>>();
  m.base_score = j.at("base").get<double>();
  m.learning_rate = j.at("rate").get<double>();
  m.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& tj : j.at("trees")) {
    RegressionTree t;
    for (const auto& nj : tj)
      t.nodes.push_back(TreeNode{nj.at("f").get<int>(), nj.at("v").get<double>(),
                                 nj.at("l").get<int>(), nj.at("r").get<int>()});
    m.trees.push_back(std::move(t));
  }
  return m;
}

}  // namespace costwise
