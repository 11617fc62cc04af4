#include "costwise/optimizer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <set>
#include <stdexcept>

#include "costwise/features.hpp"
#include "costwise/hashing.hpp"
#include "costwise/log.hpp"

namespace costwise {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("optimizer: " + msg);
}

double subtree_base_card(const PlanNode& node) {
  if (node.is_leaf()) return node.stats.base_card;
  double total = 0.0;
  for (const auto& child : node.children) total += subtree_base_card(*child);
  return total;
}

// Shared required-partition scan: the pinned value for a stage, or nullopt.
std::optional<int> stage_required(const Stage& stage) {
  std::optional<int> required;
  for (const PlanNode* n : stage.nodes) {
    if (!n->required_partition.has_value()) continue;
    if (required.has_value() && *required != *n->required_partition) {
      fail("conflicting required partition counts " + std::to_string(*required) + " and " +
           std::to_string(*n->required_partition) + " within one stage");
    }
    required = n->required_partition;
  }
  return required;
}

}  // namespace

// ---------------------------------------------------------------------------
// Cost sources

const StoreCoster::NodeCtx& StoreCoster::prepare(const PlanNode& node) {
  auto it = prepared_.find(&node);
  if (it != prepared_.end()) return it->second;
  NodeCtx ctx;
  ctx.sigs = compute_signatures(node);
  ctx.basic = basic_features(node, 1);
  ctx.ctx = context_features(node);
  return prepared_.emplace(&node, std::move(ctx)).first->second;
}

double StoreCoster::exclusive_ms(const PlanNode& node, int partitions) {
  if (partitions < 1) fail("partition count must be >= 1");
  auto key = std::make_pair(&node, partitions);
  if (auto it = cache_.find(key); it != cache_.end()) return it->second;
  const NodeCtx& ctx = prepare(node);
  BasicFeatures basic = ctx.basic;
  basic.partitions = partitions;
  std::uint64_t before = store_.lookup_count();
  Prediction pred = lookup_prepared(store_, ctx.sigs, basic, ctx.ctx);
  charge(store_.lookup_count() - before);
  cache_.emplace(key, pred.combined);
  return pred.combined;
}

std::optional<std::pair<double, double>> StoreCoster::theta_terms(const PlanNode& node) {
  const NodeCtx& ctx = prepare(node);
  auto it = store_.operator_models.find(ctx.sigs.operator_sig);
  if (it == store_.operator_models.end()) return std::nullopt;
  const LinearCostModel& model = it->second;
  auto numerators = per_partition_numerators(ctx.basic);
  double theta_p = 0.0;
  for (int j = 0; j < kPerPartitionCount; ++j) {
    theta_p += model.raw_weight(kPerPartitionFirst + j) * numerators[static_cast<std::size_t>(j)];
  }
  double theta_c = model.raw_weight(kRawPartitionIndex);
  return std::make_pair(theta_p, theta_c);
}

double TableCoster::exclusive_ms(const PlanNode& node, int partitions) {
  auto it = node.cost_table.find(partitions);
  if (it == node.cost_table.end()) {
    fail("no cost-table entry for partitions=" + std::to_string(partitions) + " on " +
         std::string(node.op_name()));
  }
  return it->second;
}

// ---------------------------------------------------------------------------
// Logical-to-physical mapping

const std::vector<PhysicalKind>& enumerate_physical(LogicalKind k) {
  static const std::vector<PhysicalKind> kGet = {PhysicalKind::Extract};
  static const std::vector<PhysicalKind> kFilter = {PhysicalKind::FilterExec};
  static const std::vector<PhysicalKind> kProject = {PhysicalKind::ProjectExec};
  static const std::vector<PhysicalKind> kJoin = {PhysicalKind::HashJoin, PhysicalKind::MergeJoin};
  static const std::vector<PhysicalKind> kAgg = {PhysicalKind::HashAgg, PhysicalKind::StreamAgg};
  static const std::vector<PhysicalKind> kSort = {PhysicalKind::SortExec};
  // A union of partitioned streams is a merge/repartition, which is exactly
  // what Exchange does; there is no dedicated union executor.
  static const std::vector<PhysicalKind> kUnion = {PhysicalKind::Exchange};
  static const std::vector<PhysicalKind> kUdf = {PhysicalKind::UdfExec};
  static const std::vector<PhysicalKind> kOutput = {PhysicalKind::OutputExec};
  switch (k) {
    case LogicalKind::Get: return kGet;
    case LogicalKind::Filter: return kFilter;
    case LogicalKind::Project: return kProject;
    case LogicalKind::Join: return kJoin;
    case LogicalKind::GroupAgg: return kAgg;
    case LogicalKind::Sort: return kSort;
    case LogicalKind::Union: return kUnion;
    case LogicalKind::Udf: return kUdf;
    case LogicalKind::Output: return kOutput;
  }
  fail("unknown logical operator kind");
}

bool repartitions_input(PhysicalKind k) {
  switch (k) {
    case PhysicalKind::HashJoin:
    case PhysicalKind::MergeJoin:
    case PhysicalKind::HashAgg:
    case PhysicalKind::StreamAgg:
    case PhysicalKind::SortExec:
      return true;
    default:
      return false;
  }
}

namespace {

std::unique_ptr<PlanNode> make_exchange(const PlanNode& child) {
  auto ex = std::make_unique<PlanNode>();
  ex->op = PhysicalKind::Exchange;
  ex->stats = child.stats;  // pass-through: an Exchange reshuffles, never filters
  return ex;
}

struct MapCtx {
  // Exactly one of coster / choose is set: the memo search prices candidate
  // kinds, a scripted mapping asks the callback.
  CostSource* coster = nullptr;
  const ChoiceFn* choose = nullptr;
  const SamplingConfig* cfg = nullptr;
  std::vector<MemoEntry>* memo = nullptr;
  // Keeps candidate trial subtrees alive for the whole optimize call so a
  // coster's per-node caches never see a recycled address.
  std::vector<std::unique_ptr<PlanNode>>* scratch = nullptr;
};

struct Mapped {
  std::unique_ptr<PlanNode> node;
  const PlanNode* boundary = nullptr;  // boundary of the stage this node joins
};

Mapped map_node(const PlanNode& logical, MapCtx& ctx) {
  if (logical.is_physical()) fail("plan is already physical; expected logical operators");
  const std::vector<PhysicalKind>& candidates = enumerate_physical(logical.logical());

  std::vector<Mapped> kids;
  kids.reserve(logical.children.size());
  for (const auto& child : logical.children) kids.push_back(map_node(*child, ctx));

  bool repart = repartitions_input(candidates.front());

  auto node = std::make_unique<PlanNode>();
  node->op = candidates.front();
  node->stats = logical.stats;
  node->params = logical.params;
  node->inputs = logical.inputs;
  node->partition_count = logical.partition_count;
  node->required_partition = logical.required_partition;
  node->cost_table = logical.cost_table;

  const PlanNode* first_child_boundary = nullptr;
  for (std::size_t i = 0; i < kids.size(); ++i) {
    std::unique_ptr<PlanNode> child = std::move(kids[i].node);
    const PlanNode* child_boundary = kids[i].boundary;
    if (repart && child->physical() != PhysicalKind::Exchange) {
      auto ex = make_exchange(*child);
      ex->children.push_back(std::move(child));
      child_boundary = ex.get();
      child = std::move(ex);
    }
    if (i == 0) first_child_boundary = child_boundary;
    node->children.push_back(std::move(child));
  }

  PhysicalKind chosen = candidates.front();
  if (candidates.size() > 1) {
    if (ctx.choose != nullptr) {
      chosen = (*ctx.choose)(logical, candidates);
      if (std::find(candidates.begin(), candidates.end(), chosen) == candidates.end()) {
        fail("choice callback returned a kind outside the candidate set");
      }
    } else {
      // Memo step: all alternatives share the children (and therefore every
      // descendant's best cost), so the group winner is the cheapest local
      // cost at the stage's heuristic partition count.
      if (first_child_boundary == nullptr) {
        fail(std::string(logical.op_name()) + " operator has no input to anchor a stage");
      }
      int p = heuristic_partitions(*first_child_boundary, ctx.cfg->p_max);
      MemoEntry entry;
      entry.logical_op = std::string(logical.op_name());
      entry.candidates = candidates;
      double best = std::numeric_limits<double>::infinity();
      for (PhysicalKind k : candidates) {
        auto trial = node->clone();
        trial->op = k;
        double local = ctx.coster->exclusive_ms(*trial, p);
        if (local < best) {
          best = local;
          chosen = k;
        }
        ctx.scratch->push_back(std::move(trial));
      }
      entry.chosen = chosen;
      entry.best_local_ms = best;
      ctx.memo->push_back(std::move(entry));
    }
  }
  node->op = chosen;

  Mapped out;
  out.boundary = is_boundary(node->physical()) ? node.get() : first_child_boundary;
  if (out.boundary == nullptr) {
    fail(std::string(node->op_name()) + " operator has no input to anchor a stage");
  }
  out.node = std::move(node);
  return out;
}

}  // namespace

std::unique_ptr<PlanNode> map_to_physical(const PlanNode& logical, const ChoiceFn& choose) {
  MapCtx ctx;
  ctx.choose = &choose;
  return map_node(logical, ctx).node;
}

// ---------------------------------------------------------------------------
// Partition candidates

int heuristic_partitions(const PlanNode& boundary, int p_max) {
  if (p_max < 1) fail("P_max must be >= 1");
  constexpr double kBytesPerPartition = 1024.0 * 1024.0 * 1024.0;
  double bytes = subtree_base_card(boundary) * boundary.stats.avg_row_len;
  double raw = std::ceil(bytes / kBytesPerPartition);
  if (!(raw >= 1.0)) return 1;
  if (raw >= static_cast<double>(p_max)) return p_max;
  return static_cast<int>(raw);
}

std::vector<int> geometric_samples(const SamplingConfig& cfg) {
  if (cfg.s < 1) fail("skipping coefficient must be >= 1");
  if (cfg.p_max < 1) fail("P_max must be >= 1");
  std::vector<int> out;
  if (cfg.p_max >= 1) out.push_back(1);
  long long x = 2;
  while (x <= cfg.p_max) {
    out.push_back(static_cast<int>(x));
    x += (x + cfg.s - 1) / cfg.s;  // x = ceil(x + x/s)
  }
  std::erase_if(out, [&](int v) { return v < cfg.p_min; });
  return out;
}

std::vector<int> sample_partitions(const SamplingConfig& cfg) {
  if (cfg.p_min < 1 || cfg.p_max < cfg.p_min) fail("invalid partition bounds");
  switch (cfg.strategy) {
    case SampleStrategy::Geometric:
      return geometric_samples(cfg);
    case SampleStrategy::Uniform: {
      if (cfg.k < 1) fail("sample count must be >= 1");
      std::set<int> picks;
      if (cfg.k == 1) {
        picks.insert(cfg.p_min);
      } else {
        for (int i = 0; i < cfg.k; ++i) {
          double t = static_cast<double>(i) / static_cast<double>(cfg.k - 1);
          picks.insert(static_cast<int>(
              std::llround(cfg.p_min + t * static_cast<double>(cfg.p_max - cfg.p_min))));
        }
      }
      return {picks.begin(), picks.end()};
    }
    case SampleStrategy::Random: {
      if (cfg.k < 1) fail("sample count must be >= 1");
      Rng rng(cfg.seed);
      std::set<int> picks;
      for (int i = 0; i < cfg.k; ++i) {
        picks.insert(static_cast<int>(rng.uniform_int(cfg.p_min, cfg.p_max)));
      }
      return {picks.begin(), picks.end()};
    }
  }
  fail("unknown sampling strategy");
}

// ---------------------------------------------------------------------------
// Stage-level selection

std::pair<int, double> explore_stage(const Stage& stage, CostSource& coster,
                                     std::span<const int> candidates) {
  if (candidates.empty()) fail("empty sample set");
  std::vector<int> sorted(candidates.begin(), candidates.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  if (sorted.front() < 1) fail("partition candidates must be positive");

  int best_p = sorted.front();
  double best_cost = std::numeric_limits<double>::infinity();
  for (int p : sorted) {
    double cost = 0.0;
    for (PlanNode* n : stage.nodes) cost += coster.exclusive_ms(*n, p);
    if (cost < best_cost) {
      best_cost = cost;
      best_p = p;
    }
  }
  return {best_p, best_cost};
}

std::pair<int, double> explore_stage_sampling(const Stage& stage, const CostModelStore& store,
                                              const SamplingConfig& cfg) {
  StoreCoster coster(store);
  std::vector<int> candidates = sample_partitions(cfg);
  return explore_stage(stage, coster, candidates);
}

int analytical_partition(double theta_p_sum, double theta_c_sum, int p_min, int p_max,
                         int fallback) {
  if (p_min < 1 || p_max < p_min) fail("invalid partition bounds");
  if (theta_p_sum == 0.0 && theta_c_sum == 0.0) {
    log_warn("analytical partition selection degenerate (both slope sums zero); "
             "falling back to the boundary heuristic");
    return std::clamp(fallback, p_min, p_max);
  }
  if (theta_p_sum > 0.0 && theta_c_sum <= 0.0) return p_max;
  if (theta_p_sum <= 0.0 && theta_c_sum > 0.0) return p_min;
  // Same sign: the stationary point of theta_p/P + theta_c*P, settled to an
  // integer by comparing the restricted cost at floor and ceil.
  double star = std::sqrt(theta_p_sum / theta_c_sum);
  int lo = std::clamp(static_cast<int>(std::floor(star)), p_min, p_max);
  int hi = std::clamp(static_cast<int>(std::ceil(star)), p_min, p_max);
  auto restricted = [&](int p) {
    return theta_p_sum / static_cast<double>(p) + theta_c_sum * static_cast<double>(p);
  };
  return restricted(lo) <= restricted(hi) ? lo : hi;
}

namespace {

int analytical_stage_partition(const Stage& stage, CostSource& coster,
                               const SamplingConfig& cfg) {
  ResourceContext rc;
  rc.p_min = cfg.p_min;
  rc.p_max = cfg.p_max;
  double sum_p = 0.0;
  double sum_c = 0.0;
  for (PlanNode* n : stage.nodes) {
    ResourceContext::Entry entry;
    entry.node = n;
    if (auto terms = coster.theta_terms(*n)) {
      entry.theta_p = terms->first;
      entry.theta_c = terms->second;
    }
    sum_p += entry.theta_p;
    sum_c += entry.theta_c;
    rc.entries.push_back(std::move(entry));
  }
  int fallback = heuristic_partitions(*stage.boundary, cfg.p_max);
  return analytical_partition(sum_p, sum_c, rc.p_min, rc.p_max, fallback);
}

}  // namespace

int optimize_stage_analytical(const Stage& stage, const CostModelStore& store,
                              const SamplingConfig& cfg) {
  StoreCoster coster(store);
  return analytical_stage_partition(stage, coster, cfg);
}

void derive_stage_partitions(Stage& stage, int p_star) {
  if (p_star < 1) fail("partition count must be >= 1");
  int p = stage_required(stage).value_or(p_star);
  for (PlanNode* n : stage.nodes) n->partition_count = p;
}

std::uint64_t count_lookups(int ops_per_stage, int n_stages, int p_max, CountMode mode,
                            const SamplingConfig& cfg) {
  if (ops_per_stage < 1 || n_stages < 1 || p_max < 1) fail("counting parameters must be positive");
  const std::uint64_t per_node = 5;  // four granularities plus the combined ensemble
  std::uint64_t m = static_cast<std::uint64_t>(ops_per_stage) * static_cast<std::uint64_t>(n_stages);
  switch (mode) {
    case CountMode::Naive:
      return per_node * m * static_cast<std::uint64_t>(p_max);
    case CountMode::Sampling: {
      SamplingConfig c = cfg;
      c.p_max = p_max;
      return per_node * m * sample_partitions(c).size();
    }
    case CountMode::Analytical:
      return per_node * m;
  }
  fail("unknown counting mode");
}

// ---------------------------------------------------------------------------
// Whole-plan optimization

OptimizedPlan optimize_with(const PlanNode& logical_plan, CostSource& coster,
                            const SamplingConfig& cfg, OptimizeMode mode) {
  if (cfg.p_min < 1 || cfg.p_max < cfg.p_min) fail("invalid partition bounds");
  std::uint64_t lookups_before = coster.lookups();

  OptimizedPlan out;
  out.mode = mode;
  std::vector<std::unique_ptr<PlanNode>> scratch;
  MapCtx ctx;
  ctx.coster = &coster;
  ctx.cfg = &cfg;
  ctx.memo = &out.memo;
  ctx.scratch = &scratch;
  out.root = map_node(logical_plan, ctx).node;

  std::vector<Stage> stages = decompose_stages(*out.root);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    Stage& stage = stages[i];
    StageSelection sel;
    sel.stage_index = static_cast<int>(i) + 1;
    sel.boundary_op = std::string(stage.boundary->op_name());

    std::optional<int> required = stage_required(stage);
    int p_star = 1;
    if (required.has_value()) {
      p_star = *required;
      if (p_star < 1) fail("required partition count must be >= 1");
      sel.pinned = true;
    } else {
      switch (mode) {
        case OptimizeMode::FixedPartitions:
          p_star = heuristic_partitions(*stage.boundary, cfg.p_max);
          break;
        case OptimizeMode::Sampling: {
          std::vector<int> candidates = sample_partitions(cfg);
          p_star = explore_stage(stage, coster, candidates).first;
          break;
        }
        case OptimizeMode::Analytical:
          p_star = analytical_stage_partition(stage, coster, cfg);
          break;
      }
    }
    derive_stage_partitions(stage, p_star);
    sel.partitions = stage.nodes.front()->partition_count.value();
    out.stages.push_back(std::move(sel));
  }

  double total = 0.0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    double stage_ms = 0.0;
    for (PlanNode* n : stages[i].nodes) stage_ms += coster.exclusive_ms(*n, *n->partition_count);
    out.stages[i].stage_cost_ms = stage_ms;
    total += stage_ms;
  }
  out.predicted_cost_ms = total;
  out.lookup_count = coster.lookups() - lookups_before;
  return out;
}

namespace {

void collect_reachable_kinds(const PlanNode& logical, std::set<PhysicalKind>& kinds) {
  const auto& candidates = enumerate_physical(logical.logical());
  kinds.insert(candidates.begin(), candidates.end());
  if (repartitions_input(candidates.front())) kinds.insert(PhysicalKind::Exchange);
  for (const auto& child : logical.children) collect_reachable_kinds(*child, kinds);
}

}  // namespace

OptimizedPlan optimize(const PlanNode& logical_plan, const CostModelStore& store,
                       const SamplingConfig& cfg, OptimizeMode mode) {
  if (logical_plan.is_physical()) fail("plan is already physical; expected logical operators");
  std::set<PhysicalKind> kinds;
  collect_reachable_kinds(logical_plan, kinds);
  for (PhysicalKind k : kinds) {
    if (!store.covers_kind(k)) {
      fail("store does not cover operator kind " + std::string(to_string(k)));
    }
  }
  StoreCoster coster(store);
  return optimize_with(logical_plan, coster, cfg, mode);
}

OptimizedPlan optimize(const PlanNode* logical_plan, const CostModelStore& store,
                       const SamplingConfig& cfg, OptimizeMode mode) {
  if (logical_plan == nullptr) fail("empty plan");
  return optimize(*logical_plan, store, cfg, mode);
}

OptimizedPlan optimize_tables(const PlanNode& physical_plan) {
  OptimizedPlan out;
  out.mode = OptimizeMode::Sampling;
  out.root = physical_plan.clone();
  TableCoster coster;

  std::vector<Stage> stages = decompose_stages(*out.root);
  for (std::size_t i = 0; i < stages.size(); ++i) {
    Stage& stage = stages[i];
    StageSelection sel;
    sel.stage_index = static_cast<int>(i) + 1;
    sel.boundary_op = std::string(stage.boundary->op_name());

    std::set<int> keys;
    for (const PlanNode* n : stage.nodes) {
      for (const auto& [p, ms] : n->cost_table) keys.insert(p);
    }
    std::optional<int> required = stage_required(stage);
    int p_star = 1;
    if (required.has_value()) {
      p_star = *required;
      sel.pinned = true;
    } else {
      if (keys.empty()) {
        fail("stage " + std::to_string(i + 1) + " has no cost tables to explore");
      }
      std::vector<int> candidates(keys.begin(), keys.end());
      p_star = explore_stage(stage, coster, candidates).first;
    }
    derive_stage_partitions(stage, p_star);
    sel.partitions = stage.nodes.front()->partition_count.value();
    out.stages.push_back(std::move(sel));
  }

  double total = 0.0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    double stage_ms = 0.0;
    for (PlanNode* n : stages[i].nodes) stage_ms += coster.exclusive_ms(*n, *n->partition_count);
    out.stages[i].stage_cost_ms = stage_ms;
    total += stage_ms;
  }
  out.predicted_cost_ms = total;
  out.lookup_count = coster.lookups();
  return out;
}

nlohmann::json optimized_to_json(const OptimizedPlan& plan) {
  nlohmann::json doc = to_document(*plan.root);
  doc["predicted_ms"] = plan.predicted_cost_ms;
  nlohmann::json partitions = nlohmann::json::array();
  for (const StageSelection& sel : plan.stages) partitions.push_back(sel.partitions);
  doc["partitions"] = partitions;
  doc["lookups"] = plan.lookup_count;
  doc["mode"] = std::string(to_string(plan.mode));
  return doc;
}

std::string_view to_string(OptimizeMode mode) {
  switch (mode) {
    case OptimizeMode::FixedPartitions: return "FixedPartitions";
    case OptimizeMode::Sampling: return "Sampling";
    case OptimizeMode::Analytical: return "Analytical";
  }
  return "?";
}

std::optional<OptimizeMode> parse_mode(std::string_view s) {
  std::string lower(s);
  for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  if (lower == "fixed" || lower == "fixedpartitions" || lower == "fixed-partitions") {
    return OptimizeMode::FixedPartitions;
  }
  if (lower == "sampling" || lower == "sample") return OptimizeMode::Sampling;
  if (lower == "analytical" || lower == "analytic") return OptimizeMode::Analytical;
  return std::nullopt;
}

}  // namespace costwise
