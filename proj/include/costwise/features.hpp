#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "costwise/plan.hpp"

namespace costwise {

// log used throughout featurization; shifted so zero-valued statistics stay
// finite.
inline double lg(double x) { return std::log1p(x); }

// Raw per-node quantities every model input is derived from.
//   I  input cardinality (sum of children output cardinalities)
//   B  base cardinality (sum of leaf cardinalities under the node)
//   C  output cardinality
//   L  average row length in bytes
//   P  partition count
struct BasicFeatures {
  double input_card = 0.0;
  double base_card = 0.0;
  double output_card = 0.0;
  double avg_row_len = 1.0;
  int partitions = 1;
  std::vector<std::string> input_templates;  // normalized subtree leaf inputs
  std::vector<std::string> params;
};

inline constexpr int kNumericFeatureCount = 25;
inline constexpr int kInputBuckets = 64;
inline constexpr int kParamBuckets = 64;
inline constexpr int kFeatureDim = kNumericFeatureCount + kInputBuckets + kParamBuckets;

// Index of the raw partition-count column and of the columns of form g/P,
// used by the analytical partition rule to read cost slopes back out of a
// linear model.
inline constexpr int kRawPartitionIndex = 4;
inline constexpr int kPerPartitionFirst = 18;
inline constexpr int kPerPartitionCount = 7;

// Fixed column order for every model matrix and CSV export.
const std::vector<std::string>& feature_names();

struct FeatureVector {
  std::vector<double> values;  // kFeatureDim entries, feature_names() order
};

// Derives I and B from the tree per the canonical rules (leaves: I = B = raw
// cardinality; internal: I = sum of children C, B = sum of leaf B). P must be
// assigned on the node unless an override is supplied.
BasicFeatures basic_features(const PlanNode& node,
                             std::optional<int> partition_override = std::nullopt);

FeatureVector derived_features(const BasicFeatures& basic);

// Numerator of each g/P column, evaluated on the node's statistics. Position i
// corresponds to column kPerPartitionFirst + i.
std::array<double, kPerPartitionCount> per_partition_numerators(const BasicFeatures& basic);

// Rough shape-context of the subtree rooted at a node: how many logical
// operators it spans and how tall it is. Exchange nodes are transparent
// (they implement no logical operator); the root always counts.
struct ContextFeatures {
  double logical_count = 1.0;  // CL
  double depth = 1.0;          // D, leaf = 1
};

ContextFeatures context_features(const PlanNode& node);

// Inputs of the per-operator combined model: the four granularity predictions
// (missing ones imputed from the operator-level prediction, with availability
// flags) plus a slice of the node's own statistics.
struct MetaFeatures {
  double pred_subgraph = 0.0;
  double pred_approx = 0.0;
  double pred_input = 0.0;
  double pred_operator = 0.0;
  bool has_subgraph = false;
  bool has_approx = false;
  bool has_input = false;
  double input_card = 0.0;
  double base_card = 0.0;
  double output_card = 0.0;
  double input_per_p = 0.0;
  double base_per_p = 0.0;
  double output_per_p = 0.0;
  double partitions = 1.0;

  std::vector<double> to_vector() const;
  static const std::vector<std::string>& names();
};

// pred_operator is the imputation fallback and must be present.
MetaFeatures meta_features(std::optional<double> pred_subgraph,
                           std::optional<double> pred_approx,
                           std::optional<double> pred_input,
                           double pred_operator,
                           const BasicFeatures& basic);

// CSV round-trip with exact double fidelity (17 significant digits).
std::string feature_csv_header();
std::string to_csv_row(const FeatureVector& fv);
FeatureVector from_csv_row(const std::string& line);

}  // namespace costwise
