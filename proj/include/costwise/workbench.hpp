#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "costwise/hashing.hpp"
#include "costwise/optimizer.hpp"
#include "costwise/plan.hpp"
#include "costwise/store.hpp"

namespace costwise {

// Knobs of the synthetic recurring workload. Everything downstream (template
// shapes, statistics, latencies, noise) is a pure function of `seed`.
struct WorkloadConfig {
  int n_templates = 50;
  int instances_per_template = 10;
  int days = 3;
  double adhoc_fraction = 0.0;  // share of one-off jobs mixed into each day
  double input_growth = 0.03;   // daily multiplicative drift of input sizes
  double noise_cv = 0.1;        // sigma of the multiplicative lognormal noise
  bool hard_mode = false;       // adds a term outside the model feature span
  int p_max = 3000;
  std::uint64_t seed = 0;
  int jobs = 1;
};

struct OracleCoeffs {
  double a = 0.0;  // fixed overhead, ms
  double b = 0.0;  // per input byte per partition
  double c = 0.0;  // per output byte per partition
  double d = 0.0;  // per-partition overhead, ms
  double e = 0.0;  // per sqrt(input row)
};

// Hidden ground truth: latency = a + b*(I*L/P) + c*(C*L/P) + d*P + e*sqrt(I),
// times lognormal noise. Coefficients are drawn per (operator kind, job
// template), so different jobs stress operators differently.
struct OracleParams {
  std::map<std::pair<PhysicalKind, std::string>, OracleCoeffs> coeffs;
  bool hard_mode = false;
};

// One executed plan as it would appear in an execution log.
struct LoggedPlan {
  std::string job_id;
  std::string template_tag;
  int day = 0;
  bool adhoc = false;
  std::unique_ptr<PlanNode> root;  // physical, partitions and actual_ms stamped
};

// A next-day logical plan to optimize, with the template key that selects its
// oracle coefficients.
struct SuitePlan {
  std::string template_tag;
  std::unique_ptr<PlanNode> logical;
};

struct Workload {
  std::vector<LoggedPlan> plans;  // day-major generation order
  std::vector<SuitePlan> suite;   // recurring templates instantiated one day ahead
  OracleParams oracle;
};

Workload gen_workload(const WorkloadConfig& cfg);

// Noiseless when `noise` is null. Throws on a (kind, template) pair the
// oracle has no coefficients for.
double oracle_latency(const PlanNode& node, int partitions, const OracleParams& params,
                      const std::string& template_tag, Rng* noise, double noise_cv);

// Sum of per-node noiseless latencies, and total processing time defined as
// sum over nodes of partitions * latency.
double oracle_plan_latency(const PlanNode& root, const OracleParams& params,
                           const std::string& template_tag);
double oracle_plan_processing(const PlanNode& root, const OracleParams& params,
                              const std::string& template_tag);

// The deliberately weak baseline: a fixed per-kind constant times the output
// cardinality. Ignores row width, partitioning, and context entirely.
double default_cost(const PlanNode& node);

class DefaultCoster : public CostSource {
 public:
  double exclusive_ms(const PlanNode& node, int partitions) override {
    (void)partitions;
    return default_cost(node);
  }
};

struct EvalRow {
  std::string family;
  int day = 0;
  double pearson = 0.0;
  double median_err = 0.0;
  double p95_err = 0.0;
  double coverage = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;  // families x days, fixed family order
  std::string to_csv() const;
  const EvalRow* find(const std::string& family, int day) const;
};

// Scores every model family (and the default baseline) against the logged
// latencies, per day. Metrics are computed over each family's covered rows.
EvalReport evaluate(const CostModelStore& store, const std::vector<LoggedPlan>& test_logs);

struct PlanChangeReport {
  int total = 0;
  int changed = 0;
  int improved = 0;  // changed plans with lower noiseless latency
  double default_latency_ms = 0.0;
  double learned_latency_ms = 0.0;
  double default_processing = 0.0;  // sum of partitions * latency
  double learned_processing = 0.0;
  double fraction_changed() const { return total == 0 ? 0.0 : double(changed) / total; }
  double fraction_improved() const { return changed == 0 ? 0.0 : double(improved) / changed; }
};

// Optimizes each suite plan twice: the default cost model with heuristic
// partitions versus the trained store with analytical partition selection.
// Both final plans are scored by the noiseless oracle.
PlanChangeReport compare_plans(const std::vector<SuitePlan>& suite, const CostModelStore& store,
                               const OracleParams& oracle, const SamplingConfig& cfg);

// Execution-log serialization: one JSON object per line.
void write_jsonl(const std::vector<LoggedPlan>& plans, const std::string& path);
std::vector<LoggedPlan> read_jsonl(const std::string& path);

// One row of the exploration benchmark: how close a partition-selection
// strategy lands to the brute-force grid optimum of a single operator's cost
// curve, and what it costs in model evaluations.
struct BenchRow {
  std::string strategy;
  int samples = 0;  // per stage; 0 for the closed-form row
  std::uint64_t lookups = 0;
  double median_gap = 0.0;  // relative cost above the grid optimum
};

std::vector<BenchRow> bench_explore(const CostModelStore& store, int n_stages,
                                    const SamplingConfig& base_cfg, std::uint64_t seed);
std::string bench_to_csv(const std::vector<BenchRow>& rows);

}  // namespace costwise
