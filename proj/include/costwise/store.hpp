#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "costwise/features.hpp"
#include "costwise/learners.hpp"
#include "costwise/plan.hpp"

namespace costwise {

// One plan node flattened for training: its signatures, feature blocks, and
// the recorded exclusive latency.
struct TrainingRow {
  SignatureSet signatures;
  PhysicalKind kind = PhysicalKind::Extract;
  FeatureVector features;
  ContextFeatures context;
  double actual_ms = 0.0;
  std::string job_id;
  int day = 0;
};

// Per-granularity model counts, kept for reporting.
struct StoreCounts {
  int subgraph_models = 0;
  int approx_models = 0;
  int input_models = 0;
  int operator_models = 0;
  int combined_models = 0;
  int skipped_small_groups = 0;
};

struct StoreMeta {
  std::vector<int> train_days;      // days the individual models saw
  std::optional<int> combined_day;  // day the combined ensembles saw
  StoreCounts counts;
};

struct TrainConfig {
  int min_occurrences = 5;
  FitConfig fit;
  int jobs = 1;
};

// Result of costing one node: the per-granularity predictions that exist plus
// the combined-ensemble estimate.
struct Prediction {
  std::optional<double> subgraph;
  std::optional<double> approx;
  std::optional<double> input;
  std::optional<double> op;
  double combined = 0.0;
};

// All trained cost models, keyed by 64-bit signature. Four maps of linear
// models at decreasing specificity, plus one boosted ensemble per operator
// kind that arbitrates among them.
class CostModelStore {
 public:
  CostModelStore() = default;
  // moves are hand-written because the lookup counter is atomic
  CostModelStore(CostModelStore&& other) noexcept
      : subgraph_models(std::move(other.subgraph_models)),
        approx_models(std::move(other.approx_models)),
        input_models(std::move(other.input_models)),
        operator_models(std::move(other.operator_models)),
        combined_models(std::move(other.combined_models)),
        meta(std::move(other.meta)),
        lookups_(other.lookups_.load()) {}
  CostModelStore& operator=(CostModelStore&& other) noexcept {
    subgraph_models = std::move(other.subgraph_models);
    approx_models = std::move(other.approx_models);
    input_models = std::move(other.input_models);
    operator_models = std::move(other.operator_models);
    combined_models = std::move(other.combined_models);
    meta = std::move(other.meta);
    lookups_.store(other.lookups_.load());
    return *this;
  }

  std::map<std::uint64_t, LinearCostModel> subgraph_models;
  std::map<std::uint64_t, LinearCostModel> approx_models;
  std::map<std::uint64_t, LinearCostModel> input_models;
  std::map<std::uint64_t, LinearCostModel> operator_models;
  std::map<std::uint64_t, GbtCostModel> combined_models;  // keyed by operator_sig
  StoreMeta meta;

  // Number of model evaluations issued through lookups: each costed node
  // counts one evaluation per present individual model plus one for the
  // combined ensemble.
  std::uint64_t lookup_count() const { return lookups_.load(); }
  void reset_lookup_count() { lookups_.store(0); }
  void add_lookups(std::uint64_t n) const { lookups_.fetch_add(n); }

  bool covers_kind(PhysicalKind k) const;

 private:
  mutable std::atomic<std::uint64_t> lookups_{0};
};

// One row per plan node, bottom-up signature pass per plan. Every node must
// carry actual_ms and a partition count.
std::vector<TrainingRow> extract_training_rows(const PlanNode& root,
                                               const std::string& job_id, int day);

// Fits the four individual-model families. Rows are grouped by each signature
// in turn; groups smaller than min_occurrences are skipped silently (counted
// in meta). Operator-input groups see ContextFeatures as two extra columns.
CostModelStore group_and_fit(const std::vector<TrainingRow>& rows, const TrainConfig& cfg);

// Fits the per-operator-kind combined ensembles on rows from a later day,
// using the day-one individual models for the meta features. Throws if a row's
// operator kind has no operator-level model, naming the kind.
void fit_combined(CostModelStore& store, const std::vector<TrainingRow>& rows_next_day,
                  const TrainConfig& cfg);

// Costs one node. Queries all granularities by signature, imputes missing
// predictions from the operator-level one, and runs the combined ensemble.
// Throws if the node's operator kind was never trained.
Prediction lookup(const CostModelStore& store, const PlanNode& node,
                  std::optional<int> partition_override = std::nullopt);

// Same, but with pre-computed signatures/features so optimizers can re-cost a
// node at many partition counts without re-walking the subtree.
Prediction lookup_prepared(const CostModelStore& store, const SignatureSet& sigs,
                           const BasicFeatures& basic, const ContextFeatures& ctx);

// Per-family predictions for one extracted row, for evaluation harnesses.
// Unlike lookup, missing models leave slots empty instead of throwing, and
// nothing is added to the lookup counter.
struct RowPrediction {
  std::optional<double> subgraph;
  std::optional<double> approx;
  std::optional<double> input;
  std::optional<double> op;
  std::optional<double> combined;
};
RowPrediction predict_row(const CostModelStore& store, const TrainingRow& row);

void save_store(const CostModelStore& store, const std::string& path);
CostModelStore load_store(const std::string& path);
nlohmann::json store_to_json(const CostModelStore& store);
CostModelStore store_from_json(const nlohmann::json& j);

// The two feature-column layouts used by the individual models.
std::vector<std::string> base_feature_ids();
std::vector<std::string> input_family_feature_ids();  // base + CL, D

}  // namespace costwise
