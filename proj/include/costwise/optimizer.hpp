#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "costwise/plan.hpp"
#include "costwise/store.hpp"

namespace costwise {

enum class OptimizeMode { FixedPartitions, Sampling, Analytical };
enum class SampleStrategy { Geometric, Uniform, Random };

struct SamplingConfig {
  SampleStrategy strategy = SampleStrategy::Geometric;
  int s = 2;        // geometric skipping coefficient
  int k = 10;       // sample count for Uniform/Random
  int p_min = 1;
  int p_max = 3000;
  std::uint64_t seed = 0;
};

// Anything that can price a plan node at a given partition count. `lookups`
// follows the model-evaluation accounting: a fully covered store charges five
// per costed (node, P) pair.
class CostSource {
 public:
  virtual ~CostSource() = default;
  virtual double exclusive_ms(const PlanNode& node, int partitions) = 0;
  // Restricted-form cost slopes (theta_P, theta_C) for the analytical rule;
  // nullopt when the source has no linear model to differentiate.
  virtual std::optional<std::pair<double, double>> theta_terms(const PlanNode&) {
    return std::nullopt;
  }
  std::uint64_t lookups() const { return lookups_; }

 protected:
  void charge(std::uint64_t n) { lookups_ += n; }

 private:
  std::uint64_t lookups_ = 0;
};

// Production coster: combined-model predictions out of a store, with cached
// per-node signatures and a (node, P) result cache so re-pricing the final
// plan does not issue new evaluations.
class StoreCoster : public CostSource {
 public:
  explicit StoreCoster(const CostModelStore& store) : store_(store) {}
  double exclusive_ms(const PlanNode& node, int partitions) override;
  std::optional<std::pair<double, double>> theta_terms(const PlanNode& node) override;

 private:
  struct NodeCtx {
    SignatureSet sigs;
    BasicFeatures basic;
    ContextFeatures ctx;
  };
  const NodeCtx& prepare(const PlanNode& node);

  const CostModelStore& store_;
  std::map<const PlanNode*, NodeCtx> prepared_;
  std::map<std::pair<const PlanNode*, int>, double> cache_;
};

// Prices nodes from their embedded cost tables (fixture plans). Exact
// partition matches only.
class TableCoster : public CostSource {
 public:
  double exclusive_ms(const PlanNode& node, int partitions) override;
};

// Wraps an arbitrary cost function; `charge_per_probe` keeps the accounting
// comparable with full store lookups.
class FunctionCoster : public CostSource {
 public:
  using Fn = std::function<double(const PlanNode&, int)>;
  explicit FunctionCoster(Fn fn, std::uint64_t charge_per_probe = 5)
      : fn_(std::move(fn)), charge_(charge_per_probe) {}
  double exclusive_ms(const PlanNode& node, int partitions) override {
    charge(charge_);
    return fn_(node, partitions);
  }

 private:
  Fn fn_;
  std::uint64_t charge_;
};

// Physical alternatives of one logical operator. Total over LogicalKind;
// Union maps to Exchange (a stream merge is repartitioning work).
const std::vector<PhysicalKind>& enumerate_physical(LogicalKind k);

// Operators that need their input repartitioned: an Exchange is inserted
// below each child during physical mapping.
bool repartitions_input(PhysicalKind k);

// Maps a logical tree to a physical one, consulting `choose` wherever the
// rule table offers alternatives and inserting Exchange nodes below
// repartitioning operators. Exchange stats are pass-through of the child.
using ChoiceFn =
    std::function<PhysicalKind(const PlanNode& logical, const std::vector<PhysicalKind>&)>;
std::unique_ptr<PlanNode> map_to_physical(const PlanNode& logical, const ChoiceFn& choose);

// clamp(ceil(B*L / 1 GiB), 1, p_max) where B is the subtree base cardinality
// of the stage's boundary operator.
int heuristic_partitions(const PlanNode& boundary, int p_max);

// Candidate partition counts before costing.
std::vector<int> geometric_samples(const SamplingConfig& cfg);
std::vector<int> sample_partitions(const SamplingConfig& cfg);

// Per-stage working state while one stage's partition count is being chosen:
// theta sums per operator plus the sampled cost curves. Discarded after the
// stage is selected.
struct ResourceContext {
  struct Entry {
    const PlanNode* node = nullptr;
    double theta_p = 0.0;
    double theta_c = 0.0;
    std::map<int, double> curve;  // sampled P -> exclusive ms
  };
  std::vector<Entry> entries;
  int p_min = 1;
  int p_max = 3000;
};

// Sums per-node costs over explicit candidates and returns (argmin P, its
// stage cost). Ties break toward the smaller P.
std::pair<int, double> explore_stage(const Stage& stage, CostSource& coster,
                                     std::span<const int> candidates);
std::pair<int, double> explore_stage_sampling(const Stage& stage,
                                              const CostModelStore& store,
                                              const SamplingConfig& cfg);

// Closed-form partition selection from the stage's theta sums. Falls back to
// the boundary heuristic (with a warning) when both sums are zero.
int analytical_partition(double theta_p_sum, double theta_c_sum, int p_min, int p_max,
                         int fallback);
int optimize_stage_analytical(const Stage& stage, const CostModelStore& store,
                              const SamplingConfig& cfg);

// Stamps P_star on every node of the stage; a required_partition anywhere in
// the stage pins the whole stage instead. Conflicting required values error.
void derive_stage_partitions(Stage& stage, int p_star);

enum class CountMode { Naive, Sampling, Analytical };
std::uint64_t count_lookups(int ops_per_stage, int n_stages, int p_max, CountMode mode,
                            const SamplingConfig& cfg);

struct MemoEntry {
  std::string logical_op;
  std::vector<PhysicalKind> candidates;
  PhysicalKind chosen = PhysicalKind::Extract;
  double best_local_ms = 0.0;
};

struct StageSelection {
  int stage_index = 0;  // 1-based, bottom-up discovery order
  std::string boundary_op;
  int partitions = 1;
  double stage_cost_ms = 0.0;
  bool pinned = false;
};

struct OptimizedPlan {
  std::unique_ptr<PlanNode> root;
  double predicted_cost_ms = 0.0;
  std::uint64_t lookup_count = 0;
  OptimizeMode mode = OptimizeMode::FixedPartitions;
  std::vector<StageSelection> stages;
  std::vector<MemoEntry> memo;
};

OptimizedPlan optimize(const PlanNode& logical_plan, const CostModelStore& store,
                       const SamplingConfig& cfg, OptimizeMode mode);
// Pointer form for callers holding a parse result; rejects empty plans.
OptimizedPlan optimize(const PlanNode* logical_plan, const CostModelStore& store,
                       const SamplingConfig& cfg, OptimizeMode mode);
// Same search against an arbitrary cost source (baselines, fixtures, tests).
OptimizedPlan optimize_with(const PlanNode& logical_plan, CostSource& coster,
                            const SamplingConfig& cfg, OptimizeMode mode);
// Partition selection for an already-physical plan carrying per-node cost
// tables; candidates per stage are the union of its table keys.
OptimizedPlan optimize_tables(const PlanNode& physical_plan);

// The annotated plan document emitted by the CLI.
nlohmann::json optimized_to_json(const OptimizedPlan& plan);

std::string_view to_string(OptimizeMode mode);
std::optional<OptimizeMode> parse_mode(std::string_view s);

}  // namespace costwise
