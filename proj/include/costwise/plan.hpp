#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <json.hpp>

namespace costwise {

enum class LogicalKind : std::uint8_t {
  Get,
  Filter,
  Project,
  Join,
  GroupAgg,
  Sort,
  Union,
  Udf,
  Output,
};

enum class PhysicalKind : std::uint8_t {
  Extract,
  FilterExec,
  ProjectExec,
  HashJoin,
  MergeJoin,
  HashAgg,
  StreamAgg,
  SortExec,
  Exchange,
  UdfExec,
  OutputExec,
};

inline constexpr int kNumLogicalKinds = 9;
inline constexpr int kNumPhysicalKinds = 11;

std::string_view to_string(LogicalKind k);
std::string_view to_string(PhysicalKind k);
std::optional<LogicalKind> parse_logical(std::string_view s);
std::optional<PhysicalKind> parse_physical(std::string_view s);

// Stage boundaries: operators that materialize / repartition their output.
inline bool is_boundary(PhysicalKind k) {
  return k == PhysicalKind::Extract || k == PhysicalKind::Exchange;
}

// The logical operator a physical one implements. Exchange is purely
// physical glue and has no logical counterpart.
std::optional<LogicalKind> logical_of(PhysicalKind k);

// Per-node cardinality and width statistics, as recorded in plan documents.
// input_card/base_card/output_card are row counts, avg_row_len is bytes.
struct Stats {
  double input_card = 0.0;
  double base_card = 0.0;
  double output_card = 0.0;
  double avg_row_len = 1.0;
};

struct PlanNode {
  std::variant<LogicalKind, PhysicalKind> op;
  Stats stats;
  std::vector<std::string> params;
  std::vector<std::string> inputs;  // leaf scans only
  std::optional<int> partition_count;
  std::optional<int> required_partition;
  std::optional<double> actual_latency_ms;
  // Optional per-node cost table (partition count -> exclusive ms), used by
  // plan fixtures that pin costs instead of carrying trained models.
  std::map<int, double> cost_table;
  std::vector<std::unique_ptr<PlanNode>> children;

  bool is_leaf() const { return children.empty(); }
  bool is_physical() const { return std::holds_alternative<PhysicalKind>(op); }
  PhysicalKind physical() const { return std::get<PhysicalKind>(op); }
  LogicalKind logical() const { return std::get<LogicalKind>(op); }
  std::string_view op_name() const;

  std::unique_ptr<PlanNode> clone() const;
};

// Four signature granularities for one node, most to least specific.
struct SignatureSet {
  std::uint64_t subgraph_sig = 0;
  std::uint64_t subgraph_approx_sig = 0;
  std::uint64_t op_input_sig = 0;
  std::uint64_t operator_sig = 0;
};

// One execution stage: a boundary operator plus the pipelined operators that
// run fused on top of it. `nodes` lists the boundary first.
struct Stage {
  std::vector<PlanNode*> nodes;
  PlanNode* boundary = nullptr;
};

// Parses a plan document (one JSON object per node, nested via "children").
// Throws std::runtime_error on malformed documents, unknown operator kinds,
// or invalid statistics.
std::unique_ptr<PlanNode> build_plan(const nlohmann::json& doc);
nlohmann::json to_document(const PlanNode& node);

// Splits a physical plan into stages. Every leaf must be an Extract. A
// non-boundary node joins the stage of its nearest boundary descendant,
// following the left-most child path when several are available.
std::vector<Stage> decompose_stages(PlanNode& root);
std::vector<Stage> decompose_stages(const PlanNode& root) = delete;

// Replaces every maximal digit run with '#': "clicks_2019_08_01.tsv" becomes
// "clicks_#_#_#.tsv". Date and number tokens are just digit runs, so recurring
// jobs over drifting inputs map to one template. Idempotent.
std::string normalize_input_name(std::string_view raw);

// Signatures for one node over its subtree. All four are FNV-1a hashes of a
// canonical byte serialization (kind tag, child hashes little-endian, then
// length-prefixed UTF-8 templates), so they are stable across platforms.
SignatureSet compute_signatures(const PlanNode& node);

// Signatures for every node of a plan in one bottom-up pass; cheaper than
// calling compute_signatures per node on deep plans.
std::map<const PlanNode*, SignatureSet> compute_all_signatures(const PlanNode& root);

// Normalized input templates of the subtree's leaves, left to right.
std::vector<std::string> subtree_input_templates(const PlanNode& node);

std::string to_hex(std::uint64_t sig);
std::uint64_t from_hex(const std::string& s);

}  // namespace costwise
