#include "costwise/plan.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <stdexcept>

#include "costwise/hashing.hpp"

namespace costwise {

namespace {

constexpr std::array<std::string_view, kNumLogicalKinds> kLogicalNames = {
    "Get", "Filter", "Project", "Join", "GroupAgg",
    "Sort", "Union", "Udf", "Output"};

constexpr std::array<std::string_view, kNumPhysicalKinds> kPhysicalNames = {
    "Extract", "FilterExec", "ProjectExec", "HashJoin", "MergeJoin",
    "HashAgg", "StreamAgg", "SortExec", "Exchange", "UdfExec", "OutputExec"};

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("plan: " + msg);
}

}  // namespace

std::string_view to_string(LogicalKind k) {
  return kLogicalNames[static_cast<std::size_t>(k)];
}

std::string_view to_string(PhysicalKind k) {
  return kPhysicalNames[static_cast<std::size_t>(k)];
}

std::optional<LogicalKind> parse_logical(std::string_view s) {
  for (std::size_t i = 0; i < kLogicalNames.size(); ++i)
    if (kLogicalNames[i] == s) return static_cast<LogicalKind>(i);
  return std::nullopt;
}

std::optional<PhysicalKind> parse_physical(std::string_view s) {
  for (std::size_t i = 0; i < kPhysicalNames.size(); ++i)
    if (kPhysicalNames[i] == s) return static_cast<PhysicalKind>(i);
  return std::nullopt;
}

std::optional<LogicalKind> logical_of(PhysicalKind k) {
  switch (k) {
    case PhysicalKind::Extract: return LogicalKind::Get;
    case PhysicalKind::FilterExec: return LogicalKind::Filter;
    case PhysicalKind::ProjectExec: return LogicalKind::Project;
    case PhysicalKind::HashJoin:
    case PhysicalKind::MergeJoin: return LogicalKind::Join;
    case PhysicalKind::HashAgg:
    case PhysicalKind::StreamAgg: return LogicalKind::GroupAgg;
    case PhysicalKind::SortExec: return LogicalKind::Sort;
    case PhysicalKind::UdfExec: return LogicalKind::Udf;
    case PhysicalKind::OutputExec: return LogicalKind::Output;
    case PhysicalKind::Exchange: return std::nullopt;
  }
  return std::nullopt;
}

std::string_view PlanNode::op_name() const {
  return is_physical() ? to_string(physical()) : to_string(logical());
}

std::unique_ptr<PlanNode> PlanNode::clone() const {
  auto copy = std::make_unique<PlanNode>();
  copy->op = op;
  copy->stats = stats;
  copy->params = params;
  copy->inputs = inputs;
  copy->partition_count = partition_count;
  copy->required_partition = required_partition;
  copy->actual_latency_ms = actual_latency_ms;
  copy->cost_table = cost_table;
  copy->children.reserve(children.size());
  for (const auto& c : children) copy->children.push_back(c->clone());
  return copy;
}

// ---------------------------------------------------------------------------
// Document parsing

std::unique_ptr<PlanNode> build_plan(const nlohmann::json& doc) {
  if (!doc.is_object()) fail("node must be a JSON object");
  auto node = std::make_unique<PlanNode>();

  if (!doc.contains("op") || !doc["op"].is_string()) fail("missing \"op\"");
  const std::string op = doc["op"].get<std::string>();
  if (auto p = parse_physical(op)) {
    node->op = *p;
  } else if (auto l = parse_logical(op)) {
    node->op = *l;
  } else {
    fail("unknown operator kind \"" + op + "\"");
  }

  if (!doc.contains("stats") || !doc["stats"].is_object())
    fail("missing \"stats\" on " + op);
  const auto& st = doc["stats"];
  auto num = [&](const char* key, double fallback,
                 bool required) -> double {
    if (!st.contains(key)) {
      if (required) fail(std::string("stats missing \"") + key + "\"");
      return fallback;
    }
    if (!st[key].is_number()) fail(std::string("stats field \"") + key + "\" must be a number");
    return st[key].get<double>();
  };
  node->stats.base_card = num("B", 0.0, true);
  node->stats.output_card = num("C", 0.0, true);
  node->stats.input_card = num("I", node->stats.base_card, false);
  node->stats.avg_row_len = num("L", 1.0, true);
  const Stats& s = node->stats;
  if (!std::isfinite(s.input_card) || !std::isfinite(s.base_card) ||
      !std::isfinite(s.output_card) || !std::isfinite(s.avg_row_len) ||
      s.input_card < 0 || s.base_card < 0 || s.output_card < 0)
    fail("invalid statistics on " + op);
  if (s.avg_row_len <= 0) fail("invalid statistics: avg_row_len must be positive on " + op);

  if (doc.contains("partitions")) {
    int p = doc["partitions"].get<int>();
    if (p < 1) fail("partitions must be >= 1");
    node->partition_count = p;
  }
  if (doc.contains("required_partitions")) {
    int p = doc["required_partitions"].get<int>();
    if (p < 1) fail("required_partitions must be >= 1");
    node->required_partition = p;
  }
  if (doc.contains("inputs")) {
    if (!doc["inputs"].is_array()) fail("\"inputs\" must be an array");
    for (const auto& e : doc["inputs"]) node->inputs.push_back(e.get<std::string>());
  }
  if (doc.contains("params")) {
    if (!doc["params"].is_array()) fail("\"params\" must be an array");
    for (const auto& e : doc["params"]) node->params.push_back(e.get<std::string>());
  }
  if (doc.contains("actual_ms")) {
    double ms = doc["actual_ms"].get<double>();
    if (!std::isfinite(ms) || ms < 0) fail("actual_ms must be a finite non-negative number");
    node->actual_latency_ms = ms;
  }
  if (doc.contains("cost_table")) {
    if (!doc["cost_table"].is_object()) fail("\"cost_table\" must map partition counts to costs");
    for (const auto& [k, v] : doc["cost_table"].items()) {
      int p = std::stoi(k);
      if (p < 1) fail("cost_table partition counts must be >= 1");
      node->cost_table[p] = v.get<double>();
    }
  }

  if (doc.contains("children")) {
    if (!doc["children"].is_array()) fail("\"children\" must be an array");
    for (const auto& c : doc["children"]) node->children.push_back(build_plan(c));
  }

  // Input references may only hang off leaf scans.
  const bool is_scan =
      node->is_physical() ? node->physical() == PhysicalKind::Extract
                          : node->logical() == LogicalKind::Get;
  if (!node->inputs.empty() && !(is_scan && node->is_leaf()))
    fail("dangling input references on non-scan operator " + op);

  return node;
}

nlohmann::json to_document(const PlanNode& node) {
  nlohmann::json doc;
  doc["op"] = std::string(node.op_name());
  doc["stats"] = {{"I", node.stats.input_card},
                  {"B", node.stats.base_card},
                  {"C", node.stats.output_card},
                  {"L", node.stats.avg_row_len}};
  if (node.partition_count) doc["partitions"] = *node.partition_count;
  if (node.required_partition) doc["required_partitions"] = *node.required_partition;
  if (!node.inputs.empty()) doc["inputs"] = node.inputs;
  if (!node.params.empty()) doc["params"] = node.params;
  if (node.actual_latency_ms) doc["actual_ms"] = *node.actual_latency_ms;
  if (!node.cost_table.empty()) {
    nlohmann::json t = nlohmann::json::object();
    for (const auto& [p, cost] : node.cost_table) t[std::to_string(p)] = cost;
    doc["cost_table"] = t;
  }
  doc["children"] = nlohmann::json::array();
  for (const auto& c : node.children) doc["children"].push_back(to_document(*c));
  return doc;
}

// ---------------------------------------------------------------------------
// Stage decomposition

namespace {

// Returns the stage index the node belongs to, creating a stage when the node
// is itself a boundary. Children are resolved first so the left-most
// descendant stage already exists when a multi-input node asks for it.
int assign_stage(PlanNode& node, std::vector<Stage>& stages) {
  std::vector<int> child_stages;
  child_stages.reserve(node.children.size());
  for (auto& c : node.children) child_stages.push_back(assign_stage(*c, stages));

  if (!node.is_physical()) fail("decompose_stages requires a physical plan");
  PhysicalKind kind = node.physical();
  if (node.is_leaf() && kind != PhysicalKind::Extract)
    fail("physical plan leaf is not an Extract");

  int idx;
  if (is_boundary(kind)) {
    stages.push_back(Stage{});
    idx = static_cast<int>(stages.size()) - 1;
    stages[idx].boundary = &node;
  } else {
    if (child_stages.empty()) fail("non-boundary leaf in physical plan");
    idx = child_stages.front();  // left-most boundary path
  }
  stages[idx].nodes.push_back(&node);
  return idx;
}

}  // namespace

std::vector<Stage> decompose_stages(PlanNode& root) {
  std::vector<Stage> stages;
  assign_stage(root, stages);
  return stages;
}

// ---------------------------------------------------------------------------
// Input template normalization

std::string normalize_input_name(std::string_view raw) {
  std::string out;
  out.reserve(raw.size());
  std::size_t i = 0;
  while (i < raw.size()) {
    if (std::isdigit(static_cast<unsigned char>(raw[i]))) {
      out.push_back('#');
      while (i < raw.size() && std::isdigit(static_cast<unsigned char>(raw[i]))) ++i;
    } else {
      out.push_back(raw[i]);
      ++i;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Signatures

namespace {

void append_u32(std::string& buf, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& buf, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_str(std::string& buf, const std::string& s) {
  append_u32(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

// tag byte: physical kinds as-is, logical kinds offset past them
std::uint8_t kind_tag(const PlanNode& n) {
  if (n.is_physical()) return static_cast<std::uint8_t>(n.physical());
  return static_cast<std::uint8_t>(kNumPhysicalKinds) +
         static_cast<std::uint8_t>(n.logical());
}

// Logical-kind frequency table of a subtree. Exchange has no logical mapping
// and is transparent here.
using KindCounts = std::array<std::uint32_t, kNumLogicalKinds>;

struct SigWork {
  SignatureSet sigs;
  std::vector<std::string> templates;  // normalized, document order
  KindCounts counts{};                 // strict descendants + self, logical only
};

SigWork signature_pass(const PlanNode& node,
                       std::map<const PlanNode*, SignatureSet>* out) {
  SigWork w;
  std::vector<SigWork> kids;
  kids.reserve(node.children.size());
  for (const auto& c : node.children) kids.push_back(signature_pass(*c, out));

  for (const auto& k : kids) {
    for (int i = 0; i < kNumLogicalKinds; ++i) w.counts[i] += k.counts[i];
    for (const auto& t : k.templates) w.templates.push_back(t);
  }
  if (node.is_leaf())
    for (const auto& name : node.inputs)
      w.templates.push_back(normalize_input_name(name));

  std::optional<LogicalKind> self_logical =
      node.is_physical() ? logical_of(node.physical())
                         : std::optional<LogicalKind>(node.logical());
  if (self_logical)
    w.counts[static_cast<std::size_t>(*self_logical)] += 1;

  std::string buf;

  // exact subtree: kind, ordered child hashes, own templates
  buf.push_back(static_cast<char>(kind_tag(node)));
  for (const auto& k : kids) append_u64(buf, k.sigs.subgraph_sig);
  if (node.is_leaf())
    for (const auto& t : w.templates) append_str(buf, t);
  w.sigs.subgraph_sig = fnv1a64(buf.data(), buf.size());

  std::vector<std::string> sorted_templates = w.templates;
  std::sort(sorted_templates.begin(), sorted_templates.end());

  // shape-free relaxation: kind, logical-kind frequencies of strict
  // descendants, sorted templates
  buf.clear();
  buf.push_back(static_cast<char>(kind_tag(node)));
  KindCounts below = w.counts;
  if (self_logical) below[static_cast<std::size_t>(*self_logical)] -= 1;
  for (int i = 0; i < kNumLogicalKinds; ++i) {
    if (below[i] == 0) continue;
    buf.push_back(static_cast<char>(i));
    append_u32(buf, below[i]);
  }
  for (const auto& t : sorted_templates) append_str(buf, t);
  w.sigs.subgraph_approx_sig = fnv1a64(buf.data(), buf.size());

  // operator + inputs only
  buf.clear();
  buf.push_back(static_cast<char>(kind_tag(node)));
  for (const auto& t : sorted_templates) append_str(buf, t);
  w.sigs.op_input_sig = fnv1a64(buf.data(), buf.size());

  // operator only
  buf.clear();
  buf.push_back(static_cast<char>(kind_tag(node)));
  w.sigs.operator_sig = fnv1a64(buf.data(), buf.size());

  if (out) (*out)[&node] = w.sigs;
  return w;
}

}  // namespace

SignatureSet compute_signatures(const PlanNode& node) {
  return signature_pass(node, nullptr).sigs;
}

std::map<const PlanNode*, SignatureSet> compute_all_signatures(const PlanNode& root) {
  std::map<const PlanNode*, SignatureSet> out;
  signature_pass(root, &out);
  return out;
}

std::vector<std::string> subtree_input_templates(const PlanNode& node) {
  std::vector<std::string> out;
  if (node.is_leaf()) {
    for (const auto& name : node.inputs) out.push_back(normalize_input_name(name));
    return out;
  }
  for (const auto& c : node.children)
    for (auto& t : subtree_input_templates(*c)) out.push_back(std::move(t));
  return out;
}

std::string to_hex(std::uint64_t sig) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[i] = digits[sig & 0xf];
    sig >>= 4;
  }
  return s;
}

std::uint64_t from_hex(const std::string& s) {
  if (s.size() != 16) throw std::runtime_error("plan: bad signature hex \"" + s + "\"");
  std::uint64_t v = 0;
  for (char c : s) {
    v <<= 4;
    if (c >= '0' && c <= '9') v |= static_cast<std::uint64_t>(c - '0');
    else if (c >= 'a' && c <= 'f') v |= static_cast<std::uint64_t>(c - 'a' + 10);
    else throw std::runtime_error("plan: bad signature hex \"" + s + "\"");
  }
  return v;
}

}  // namespace costwise
