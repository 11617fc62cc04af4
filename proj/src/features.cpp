#include "costwise/features.hpp"

#include <array>
#include <charconv>
#include <cstdio>
#include <sstream>
#include <stdexcept>

#include "costwise/hashing.hpp"

namespace costwise {

const std::vector<std::string>& feature_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n = {
        "I", "B", "C", "L", "P",
        "sqrt_I", "sqrt_B",
        "L_I", "L_B", "L_lgB", "L_lgI", "L_lgC",
        "B_C", "I_C", "B_lgC", "I_lgC", "lgI_lgC", "lgB_lgC",
        "I_per_P", "C_per_P", "IL_per_P", "CL_per_P",
        "sqrtI_per_P", "sqrtC_per_P", "lgI_per_P"};
    char buf[8];
    for (int i = 0; i < kInputBuckets; ++i) {
      std::snprintf(buf, sizeof buf, "in_%02d", i);
      n.emplace_back(buf);
    }
    for (int i = 0; i < kParamBuckets; ++i) {
      std::snprintf(buf, sizeof buf, "pm_%02d", i);
      n.emplace_back(buf);
    }
    return n;
  }();
  return names;
}

namespace {

void collect_basic(const PlanNode& node, double& leaf_base_sum) {
  if (node.is_leaf()) {
    leaf_base_sum += node.stats.base_card;
    return;
  }
  for (const auto& c : node.children) collect_basic(*c, leaf_base_sum);
}

}  // namespace

BasicFeatures basic_features(const PlanNode& node, std::optional<int> partition_override) {
  BasicFeatures b;
  if (node.is_leaf()) {
    b.input_card = node.stats.base_card;
    b.base_card = node.stats.base_card;
  } else {
    double in = 0.0;
    for (const auto& c : node.children) in += c->stats.output_card;
    b.input_card = in;
    double base = 0.0;
    collect_basic(node, base);
    b.base_card = base;
  }
  b.output_card = node.stats.output_card;
  b.avg_row_len = node.stats.avg_row_len;
  if (partition_override) {
    b.partitions = *partition_override;
  } else if (node.partition_count) {
    b.partitions = *node.partition_count;
  } else {
    throw std::runtime_error("features: node has no partition count assigned");
  }
  if (b.partitions < 1) throw std::runtime_error("features: partition count must be >= 1");
  b.input_templates = subtree_input_templates(node);
  b.params = node.params;
  return b;
}

FeatureVector derived_features(const BasicFeatures& b) {
  FeatureVector fv;
  fv.values.assign(kFeatureDim, 0.0);
  const double I = b.input_card, B = b.base_card, C = b.output_card;
  const double L = b.avg_row_len;
  const double P = static_cast<double>(b.partitions);

  double* v = fv.values.data();
  v[0] = I;
  v[1] = B;
  v[2] = C;
  v[3] = L;
  v[4] = P;
  v[5] = std::sqrt(I);
  v[6] = std::sqrt(B);
  v[7] = L * I;
  v[8] = L * B;
  v[9] = L * lg(B);
  v[10] = L * lg(I);
  v[11] = L * lg(C);
  v[12] = B * C;
  v[13] = I * C;
  v[14] = B * lg(C);
  v[15] = I * lg(C);
  v[16] = lg(I) * lg(C);
  v[17] = lg(B) * lg(C);
  v[18] = I / P;
  v[19] = C / P;
  v[20] = I * L / P;
  v[21] = C * L / P;
  v[22] = std::sqrt(I) / P;
  v[23] = std::sqrt(C) / P;
  v[24] = lg(I) / P;

  for (const auto& t : b.input_templates)
    v[kNumericFeatureCount + fnv1a64(t) % kInputBuckets] += 1.0;
  for (const auto& p : b.params)
    v[kNumericFeatureCount + kInputBuckets + fnv1a64(p) % kParamBuckets] += 1.0;
  return fv;
}

std::array<double, kPerPartitionCount> per_partition_numerators(const BasicFeatures& b) {
  const double I = b.input_card, C = b.output_card, L = b.avg_row_len;
  return {I, C, I * L, C * L, std::sqrt(I), std::sqrt(C), lg(I)};
}

namespace {

// (logical operator count, logical depth) of a subtree; Exchange descendants
// are skipped, though the node we were called for always contributes.
std::pair<double, double> context_walk(const PlanNode& node, bool is_root) {
  double count = 0.0;
  double depth = 0.0;
  for (const auto& c : node.children) {
    auto [cc, cd] = context_walk(*c, false);
    count += cc;
    depth = std::max(depth, cd);
  }
  bool counts_self = is_root || !node.is_physical() ||
                     logical_of(node.physical()).has_value();
  if (counts_self) {
    count += 1.0;
    depth += 1.0;
  }
  return {count, depth};
}

}  // namespace

ContextFeatures context_features(const PlanNode& node) {
  auto [count, depth] = context_walk(node, true);
  return ContextFeatures{count, depth};
}

const std::vector<std::string>& MetaFeatures::names() {
  static const std::vector<std::string> n = {
      "pred_subgraph", "pred_approx", "pred_input", "pred_operator",
      "has_subgraph", "has_approx", "has_input", "has_operator",
      "I", "B", "C", "I_per_P", "B_per_P", "C_per_P", "P"};
  return n;
}

std::vector<double> MetaFeatures::to_vector() const {
  return {pred_subgraph,
          pred_approx,
          pred_input,
          pred_operator,
          has_subgraph ? 1.0 : 0.0,
          has_approx ? 1.0 : 0.0,
          has_input ? 1.0 : 0.0,
          1.0,  // operator-level model backs every lookup
          input_card,
          base_card,
          output_card,
          input_per_p,
          base_per_p,
          output_per_p,
          partitions};
}

MetaFeatures meta_features(std::optional<double> pred_subgraph,
                           std::optional<double> pred_approx,
                           std::optional<double> pred_input,
                           double pred_operator,
                           const BasicFeatures& basic) {
  if (!std::isfinite(pred_operator))
    throw std::runtime_error("features: operator-level prediction must be finite");
  MetaFeatures m;
  m.pred_subgraph = pred_subgraph.value_or(pred_operator);
  m.pred_approx = pred_approx.value_or(pred_operator);
  m.pred_input = pred_input.value_or(pred_operator);
  m.pred_operator = pred_operator;
  m.has_subgraph = pred_subgraph.has_value();
  m.has_approx = pred_approx.has_value();
  m.has_input = pred_input.has_value();
  const double P = static_cast<double>(basic.partitions);
  m.input_card = basic.input_card;
  m.base_card = basic.base_card;
  m.output_card = basic.output_card;
  m.input_per_p = basic.input_card / P;
  m.base_per_p = basic.base_card / P;
  m.output_per_p = basic.output_card / P;
  m.partitions = P;
  return m;
}

std::string feature_csv_header() {
  std::string out;
  const auto& names = feature_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (i) out.push_back(',');
    out += names[i];
  }
  return out;
}

std::string to_csv_row(const FeatureVector& fv) {
  if (fv.values.size() != static_cast<std::size_t>(kFeatureDim))
    throw std::runtime_error("features: vector has wrong dimension");
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < fv.values.size(); ++i) {
    if (i) out.push_back(',');
    std::snprintf(buf, sizeof buf, "%.17g", fv.values[i]);
    out += buf;
  }
  return out;
}

FeatureVector from_csv_row(const std::string& line) {
  FeatureVector fv;
  fv.values.reserve(kFeatureDim);
  const char* p = line.data();
  const char* end = p + line.size();
  while (p < end) {
    char* after = nullptr;
    double v = std::strtod(p, &after);
    if (after == p) throw std::runtime_error("features: bad CSV field");
    fv.values.push_back(v);
    p = after;
    if (p < end && *p == ',') ++p;
  }
  if (fv.values.size() != static_cast<std::size_t>(kFeatureDim))
    throw std::runtime_error("features: CSV row has wrong dimension");
  return fv;
}

}  // namespace costwise
