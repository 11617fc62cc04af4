#include "costwise/workbench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include "costwise/features.hpp"
#include "costwise/log.hpp"
#include "costwise/metrics.hpp"
#include "costwise/parallel.hpp"

namespace costwise {

namespace {

[[noreturn]] void fail(const std::string& msg) {
  throw std::runtime_error("workbench: " + msg);
}

// Role tags separating the RNG streams drawn from one workload seed.
constexpr std::uint64_t kStreamTemplates = 0x11;
constexpr std::uint64_t kStreamOracle = 0x22;
constexpr std::uint64_t kStreamInstance = 0x33;
constexpr std::uint64_t kStreamPartitions = 0x44;
constexpr std::uint64_t kStreamNoise = 0x55;
constexpr std::uint64_t kStreamBench = 0x66;

// Three-letter tag so generated names carry no digits; digit runs are
// reserved for the varying parts that normalization folds away.
std::string letters3(int i) {
  std::string s(3, 'A');
  s[2] = static_cast<char>('A' + i % 26);
  s[1] = static_cast<char>('A' + (i / 26) % 26);
  s[0] = static_cast<char>('A' + (i / 676) % 26);
  return s;
}

struct DatasetInfo {
  std::string name;
  double base_card = 0.0;
  double row_len = 0.0;
};

struct TmplNode {
  LogicalKind kind = LogicalKind::Get;
  PhysicalKind pinned = PhysicalKind::Extract;  // the plan the job actually runs
  double sel = 1.0;                             // output rows per input row
  double row_len = 100.0;
  std::string param;
  int dataset = -1;  // leaves only
  std::vector<int> children;
};

struct JobTemplate {
  std::string tag;
  bool adhoc = false;
  std::vector<TmplNode> nodes;  // root last
};

PhysicalKind canonical_physical(LogicalKind k) { return enumerate_physical(k).front(); }

double kind_selectivity(LogicalKind k, Rng& rng) {
  switch (k) {
    case LogicalKind::Filter: return rng.uniform(0.05, 0.6);
    case LogicalKind::Udf: return rng.uniform(0.3, 1.0);
    case LogicalKind::GroupAgg: return rng.uniform(0.01, 0.25);
    case LogicalKind::Join: return rng.uniform(0.05, 0.9);
    default: return 1.0;
  }
}

std::string kind_param(LogicalKind k, Rng& rng) {
  int tag = static_cast<int>(rng.uniform_int(0, 26 * 26 * 26 - 1));
  switch (k) {
    case LogicalKind::Filter: return "pred=" + letters3(tag);
    case LogicalKind::Project: return "cols=" + letters3(tag);
    case LogicalKind::Udf: return "script=" + letters3(tag);
    case LogicalKind::GroupAgg:
    case LogicalKind::Sort:
    case LogicalKind::Join: return "keys=" + letters3(tag);
    default: return {};
  }
}

int add_leaf(JobTemplate& t, const std::vector<DatasetInfo>& pool, int dataset) {
  TmplNode n;
  n.kind = LogicalKind::Get;
  n.pinned = PhysicalKind::Extract;
  n.dataset = dataset;
  n.row_len = pool[static_cast<std::size_t>(dataset)].row_len;
  t.nodes.push_back(std::move(n));
  return static_cast<int>(t.nodes.size()) - 1;
}

int add_unary(JobTemplate& t, LogicalKind k, int child, Rng& rng) {
  TmplNode n;
  n.kind = k;
  n.pinned = canonical_physical(k);
  if (k == LogicalKind::GroupAgg) {
    n.pinned = rng.bernoulli(0.5) ? PhysicalKind::HashAgg : PhysicalKind::StreamAgg;
  }
  n.sel = kind_selectivity(k, rng);
  n.param = kind_param(k, rng);
  double len_factor = (k == LogicalKind::Project || k == LogicalKind::Udf)
                          ? rng.uniform(0.6, 1.2)
                          : 1.0;
  n.row_len = t.nodes[static_cast<std::size_t>(child)].row_len * len_factor;
  n.children = {child};
  t.nodes.push_back(std::move(n));
  return static_cast<int>(t.nodes.size()) - 1;
}

int add_binary(JobTemplate& t, LogicalKind k, int left, int right, Rng& rng) {
  TmplNode n;
  n.kind = k;
  n.pinned = canonical_physical(k);
  if (k == LogicalKind::Join) {
    n.pinned = rng.bernoulli(0.5) ? PhysicalKind::HashJoin : PhysicalKind::MergeJoin;
  }
  n.sel = kind_selectivity(k, rng);
  n.param = kind_param(k, rng);
  double ll = t.nodes[static_cast<std::size_t>(left)].row_len;
  double rl = t.nodes[static_cast<std::size_t>(right)].row_len;
  n.row_len = 0.5 * (ll + rl) * (k == LogicalKind::Join ? rng.uniform(0.7, 1.3) : 1.0);
  n.children = {left, right};
  t.nodes.push_back(std::move(n));
  return static_cast<int>(t.nodes.size()) - 1;
}

int add_output(JobTemplate& t, int child) {
  TmplNode n;
  n.kind = LogicalKind::Output;
  n.pinned = PhysicalKind::OutputExec;
  n.row_len = t.nodes[static_cast<std::size_t>(child)].row_len;
  n.children = {child};
  t.nodes.push_back(std::move(n));
  return static_cast<int>(t.nodes.size()) - 1;
}

LogicalKind draw_unary_kind(Rng& rng) {
  double r = rng.next_double();
  if (r < 0.28) return LogicalKind::Filter;
  if (r < 0.55) return LogicalKind::Project;
  if (r < 0.70) return LogicalKind::Udf;
  if (r < 0.88) return LogicalKind::GroupAgg;
  return LogicalKind::Sort;
}

// Random left-deep template of 2..10 logical operators.
JobTemplate random_template(const std::string& tag, bool adhoc,
                            const std::vector<DatasetInfo>& pool, Rng& rng) {
  JobTemplate t;
  t.tag = tag;
  t.adhoc = adhoc;
  int total_ops = static_cast<int>(rng.uniform_int(2, 10));
  int leaves = 1;
  if (total_ops >= 6 && rng.bernoulli(0.25)) leaves = 3;
  else if (total_ops >= 4 && rng.bernoulli(0.45)) leaves = 2;
  int unary_budget = total_ops - leaves - (leaves - 1) - 1;

  auto draw_dataset = [&] { return static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1)); };
  auto spend_unaries = [&](int root, int count) {
    for (int i = 0; i < count; ++i) root = add_unary(t, draw_unary_kind(rng), root, rng);
    return root;
  };

  int root = add_leaf(t, pool, draw_dataset());
  int below_first = (leaves > 1 && unary_budget > 0)
                        ? static_cast<int>(rng.uniform_int(0, unary_budget))
                        : (leaves > 1 ? 0 : unary_budget);
  root = spend_unaries(root, leaves > 1 ? below_first : unary_budget);
  int remaining = unary_budget - (leaves > 1 ? below_first : unary_budget);

  for (int l = 1; l < leaves; ++l) {
    int leaf = add_leaf(t, pool, draw_dataset());
    LogicalKind combiner = rng.bernoulli(0.8) ? LogicalKind::Join : LogicalKind::Union;
    root = add_binary(t, combiner, root, leaf, rng);
  }
  root = spend_unaries(root, remaining);
  add_output(t, root);
  return t;
}

// Two fixed templates that jointly exercise every physical operator kind, so
// any trained store covers the full rule table.
JobTemplate coverage_template_a(const std::string& tag, const std::vector<DatasetInfo>& pool,
                                Rng& rng) {
  JobTemplate t;
  t.tag = tag;
  int a = add_leaf(t, pool, 0);
  int b = add_leaf(t, pool, 1 % static_cast<int>(pool.size()));
  int j = add_binary(t, LogicalKind::Join, a, b, rng);
  t.nodes[static_cast<std::size_t>(j)].pinned = PhysicalKind::HashJoin;
  int f = add_unary(t, LogicalKind::Filter, j, rng);
  int g = add_unary(t, LogicalKind::GroupAgg, f, rng);
  t.nodes[static_cast<std::size_t>(g)].pinned = PhysicalKind::HashAgg;
  int s = add_unary(t, LogicalKind::Sort, g, rng);
  add_output(t, s);
  return t;
}

JobTemplate coverage_template_b(const std::string& tag, const std::vector<DatasetInfo>& pool,
                                Rng& rng) {
  JobTemplate t;
  t.tag = tag;
  int a = add_leaf(t, pool, 2 % static_cast<int>(pool.size()));
  int b = add_leaf(t, pool, 3 % static_cast<int>(pool.size()));
  int u = add_binary(t, LogicalKind::Union, a, b, rng);
  int c = add_leaf(t, pool, 4 % static_cast<int>(pool.size()));
  int j = add_binary(t, LogicalKind::Join, c, u, rng);
  t.nodes[static_cast<std::size_t>(j)].pinned = PhysicalKind::MergeJoin;
  int g = add_unary(t, LogicalKind::GroupAgg, j, rng);
  t.nodes[static_cast<std::size_t>(g)].pinned = PhysicalKind::StreamAgg;
  int d = add_unary(t, LogicalKind::Udf, g, rng);
  int p = add_unary(t, LogicalKind::Project, d, rng);
  add_output(t, p);
  return t;
}

struct InstanceStats {
  double scale = 1.0;
  int day = 1;
  int instance = 1;
};

// Builds one instantiated plan from a template, bottom-up. `physical` selects
// the executed plan (pinned kinds plus Exchange insertion); otherwise the
// logical tree is produced for the optimizer.
std::unique_ptr<PlanNode> build_node(const JobTemplate& t, const std::vector<DatasetInfo>& pool,
                                     const InstanceStats& inst, Rng& rng, int idx,
                                     bool physical) {
  const TmplNode& tn = t.nodes[static_cast<std::size_t>(idx)];
  auto node = std::make_unique<PlanNode>();
  if (physical) {
    node->op = tn.pinned;
  } else {
    node->op = tn.kind;
  }
  node->stats.avg_row_len = tn.row_len;
  if (!tn.param.empty()) node->params.push_back(tn.param);

  if (tn.children.empty()) {
    const DatasetInfo& ds = pool[static_cast<std::size_t>(tn.dataset)];
    double base = ds.base_card * inst.scale * rng.uniform(0.9, 1.1);
    node->stats.base_card = base;
    node->stats.input_card = base;
    node->stats.output_card = base;
    node->inputs.push_back(ds.name + "_" + std::to_string(20190800 + inst.day) + "_" +
                           std::to_string(inst.instance) + ".tsv");
    return node;
  }

  double input_sum = 0.0;
  double base_sum = 0.0;
  bool repart = physical && repartitions_input(tn.pinned);
  for (int ci : tn.children) {
    auto child = build_node(t, pool, inst, rng, ci, physical);
    input_sum += child->stats.output_card;
    base_sum += child->stats.base_card;
    if (repart && child->physical() != PhysicalKind::Exchange) {
      auto ex = std::make_unique<PlanNode>();
      ex->op = PhysicalKind::Exchange;
      ex->stats = child->stats;
      ex->children.push_back(std::move(child));
      child = std::move(ex);
    }
    node->children.push_back(std::move(child));
  }
  node->stats.input_card = input_sum;
  node->stats.base_card = base_sum;
  node->stats.output_card = tn.sel * input_sum;
  return node;
}

std::unique_ptr<PlanNode> instantiate(const JobTemplate& t, const std::vector<DatasetInfo>& pool,
                                      const WorkloadConfig& cfg, int day, int instance,
                                      bool physical) {
  Rng rng(mix_stream({cfg.seed, kStreamInstance, fnv1a64(t.tag),
                      static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(instance)}));
  InstanceStats inst;
  inst.scale = std::pow(1.0 + cfg.input_growth, day - 1) * std::exp2(rng.uniform(-1.0, 1.0));
  inst.day = day;
  inst.instance = instance;
  return build_node(t, pool, inst, rng, static_cast<int>(t.nodes.size()) - 1, physical);
}

void stamp_latencies(PlanNode& node, const OracleParams& oracle, const std::string& tag,
                     Rng& noise, double noise_cv) {
  for (auto& child : node.children) stamp_latencies(*child, oracle, tag, noise, noise_cv);
  node.actual_latency_ms =
      oracle_latency(node, node.partition_count.value(), oracle, tag, &noise, noise_cv);
}

// The partition count a stage has historically been run at: the balance
// point of its true cost curve. Recurring jobs get hand-tuned over time, so
// logged history clusters around workable operating points rather than the
// byte-count default.
int tuned_stage_partitions(const Stage& st, const OracleParams& oracle, const std::string& tag,
                           int p_max) {
  double theta_p = 0.0, theta_c = 0.0;
  for (const PlanNode* n : st.nodes) {
    auto it = oracle.coeffs.find({n->physical(), tag});
    if (it == oracle.coeffs.end()) fail("no oracle coefficients for tuning");
    BasicFeatures b = basic_features(*n, 1);
    theta_p += it->second.b * b.input_card * b.avg_row_len +
               it->second.c * b.output_card * b.avg_row_len;
    theta_c += it->second.d;
  }
  if (theta_p <= 0.0 || theta_c <= 0.0) return 1;
  return std::clamp(static_cast<int>(std::llround(std::sqrt(theta_p / theta_c))), 1, p_max);
}

// Executes one instantiated physical plan: picks jittered tuned partition
// counts per stage and stamps oracle latencies.
void run_instance(PlanNode& root, const std::string& tag, int day, int instance,
                  const WorkloadConfig& cfg, const OracleParams& oracle) {
  Rng prng(mix_stream({cfg.seed, kStreamPartitions, fnv1a64(tag),
                       static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(instance)}));
  std::vector<Stage> stages = decompose_stages(root);
  for (Stage& st : stages) {
    // Spread around the tuned operating point so both branches of the cost
    // bowl show up in the logs; resource learning has nothing to latch onto
    // when every run of a stage uses one partition count.
    int t = tuned_stage_partitions(st, oracle, tag, cfg.p_max);
    double factor = std::exp2(prng.uniform(-2.0, 2.0));
    int p = std::clamp(static_cast<int>(std::llround(t * factor)), 1, cfg.p_max);
    derive_stage_partitions(st, p);
  }
  Rng nrng(mix_stream({cfg.seed, kStreamNoise, fnv1a64(tag),
                       static_cast<std::uint64_t>(day), static_cast<std::uint64_t>(instance)}));
  stamp_latencies(root, oracle, tag, nrng, cfg.noise_cv);
}

OracleCoeffs draw_coeffs(std::uint64_t seed, const std::string& tag, PhysicalKind kind) {
  Rng rng(mix_stream({seed, kStreamOracle, fnv1a64(tag), static_cast<std::uint64_t>(kind)}));
  OracleCoeffs k;
  k.a = rng.uniform(5.0, 50.0);
  k.b = rng.uniform(5e-8, 3e-7);
  k.c = rng.uniform(2e-8, 1e-7);
  k.d = rng.uniform(8.0, 30.0);
  k.e = rng.uniform(0.0, 0.03);
  return k;
}

void validate(const WorkloadConfig& cfg) {
  if (cfg.n_templates < 1 || cfg.instances_per_template < 1 || cfg.days < 1)
    fail("workload counts must be positive");
  if (!(cfg.adhoc_fraction >= 0.0 && cfg.adhoc_fraction < 1.0))
    fail("adhoc_fraction must lie in [0, 1)");
  if (!(cfg.noise_cv >= 0.0)) fail("noise_cv must be >= 0");
  if (!(cfg.input_growth > -1.0)) fail("input_growth must be > -1");
  if (cfg.p_max < 1) fail("p_max must be >= 1");
}

}  // namespace

Workload gen_workload(const WorkloadConfig& cfg) {
  validate(cfg);
  Workload wl;
  wl.oracle.hard_mode = cfg.hard_mode;

  Rng trng(mix_stream({cfg.seed, kStreamTemplates}));

  // A shared dataset pool: independent jobs scanning the same tables is what
  // makes the coarser signature families pool observations across templates.
  int n_pool = std::max(5, cfg.n_templates / 2 + 2);
  std::vector<DatasetInfo> pool;
  pool.reserve(static_cast<std::size_t>(n_pool));
  for (int i = 0; i < n_pool; ++i) {
    DatasetInfo ds;
    ds.name = "ds" + letters3(i);
    ds.base_card = trng.uniform(2e8, 6e8);
    ds.row_len = trng.uniform(200.0, 600.0);
    pool.push_back(std::move(ds));
  }

  int per_day_recurring = cfg.n_templates * cfg.instances_per_template;
  int adhoc_per_day = 0;
  if (cfg.adhoc_fraction > 0.0) {
    adhoc_per_day = static_cast<int>(std::llround(
        per_day_recurring * cfg.adhoc_fraction / (1.0 - cfg.adhoc_fraction)));
  }

  std::vector<JobTemplate> templates;
  std::set<std::uint64_t> shapes;
  auto shape_of = [&](const JobTemplate& t) {
    auto probe = instantiate(t, pool, cfg, 1, 1, true);
    return compute_signatures(*probe).subgraph_sig;
  };
  auto push_unique = [&](JobTemplate&& t) {
    shapes.insert(shape_of(t));
    templates.push_back(std::move(t));
  };

  push_unique(coverage_template_a("tmpl" + letters3(0), pool, trng));
  if (cfg.n_templates > 1) push_unique(coverage_template_b("tmpl" + letters3(1), pool, trng));
  for (int i = static_cast<int>(templates.size()); i < cfg.n_templates; ++i) {
    JobTemplate t;
    for (int tries = 0; tries < 30; ++tries) {
      t = random_template("tmpl" + letters3(i), false, pool, trng);
      if (!shapes.contains(shape_of(t))) break;
    }
    push_unique(std::move(t));
  }
  int n_recurring = static_cast<int>(templates.size());
  for (int d = 1; d <= cfg.days; ++d) {
    for (int k = 0; k < adhoc_per_day; ++k) {
      int idx = (d - 1) * adhoc_per_day + k;
      JobTemplate t;
      for (int tries = 0; tries < 30; ++tries) {
        t = random_template("adhoc" + letters3(idx), true, pool, trng);
        if (!shapes.contains(shape_of(t))) break;
      }
      push_unique(std::move(t));
    }
  }

  // Hidden coefficients for every (kind, template) pair, alternatives
  // included, so any plan the optimizer can emit is measurable.
  for (const JobTemplate& t : templates) {
    for (int k = 0; k < kNumPhysicalKinds; ++k) {
      PhysicalKind kind = static_cast<PhysicalKind>(k);
      wl.oracle.coeffs[{kind, t.tag}] = draw_coeffs(cfg.seed, t.tag, kind);
    }
  }

  struct Slot {
    const JobTemplate* tmpl = nullptr;
    int day = 0;
    int instance = 0;
  };
  std::vector<Slot> slots;
  for (int d = 1; d <= cfg.days; ++d) {
    for (int ti = 0; ti < n_recurring; ++ti) {
      for (int i = 1; i <= cfg.instances_per_template; ++i) {
        slots.push_back({&templates[static_cast<std::size_t>(ti)], d, i});
      }
    }
    for (int k = 0; k < adhoc_per_day; ++k) {
      int idx = n_recurring + (d - 1) * adhoc_per_day + k;
      slots.push_back({&templates[static_cast<std::size_t>(idx)], d, 1});
    }
  }

  wl.plans.resize(slots.size());
  parallel_for(slots.size(), cfg.jobs, [&](std::size_t si) {
    const Slot& s = slots[si];
    LoggedPlan lp;
    lp.template_tag = s.tmpl->tag;
    lp.day = s.day;
    lp.adhoc = s.tmpl->adhoc;
    lp.job_id = s.tmpl->tag + "-d" + std::to_string(s.day) + "-i" + std::to_string(s.instance);
    lp.root = instantiate(*s.tmpl, pool, cfg, s.day, s.instance, true);
    run_instance(*lp.root, s.tmpl->tag, s.day, s.instance, cfg, wl.oracle);
    wl.plans[si] = std::move(lp);
  });

  for (int ti = 0; ti < n_recurring; ++ti) {
    SuitePlan sp;
    sp.template_tag = templates[static_cast<std::size_t>(ti)].tag;
    sp.logical = instantiate(templates[static_cast<std::size_t>(ti)], pool, cfg,
                             cfg.days + 1, 1, false);
    wl.suite.push_back(std::move(sp));
  }
  return wl;
}

double oracle_latency(const PlanNode& node, int partitions, const OracleParams& params,
                      const std::string& template_tag, Rng* noise, double noise_cv) {
  if (!node.is_physical()) fail("oracle requires physical plan nodes");
  if (partitions < 1) fail("oracle requires partitions >= 1");
  auto it = params.coeffs.find({node.physical(), template_tag});
  if (it == params.coeffs.end()) {
    fail("no oracle coefficients for (" + std::string(node.op_name()) + ", " + template_tag +
         ")");
  }
  const OracleCoeffs& k = it->second;
  BasicFeatures basic = basic_features(node, partitions);
  double i_card = basic.input_card;
  double c_card = basic.output_card;
  double l = basic.avg_row_len;
  double p = static_cast<double>(partitions);
  double ms = k.a + k.b * i_card * l / p + k.c * c_card * l / p + k.d * p +
              k.e * std::sqrt(i_card);
  if (params.hard_mode) ms += 0.01 * i_card * lg(c_card) * lg(c_card);
  if (noise != nullptr && noise_cv > 0.0) ms *= noise->lognormal_factor(noise_cv);
  return ms;
}

namespace {

void accumulate_oracle(const PlanNode& node, const OracleParams& params, const std::string& tag,
                       double& latency, double& processing) {
  for (const auto& child : node.children) {
    accumulate_oracle(*child, params, tag, latency, processing);
  }
  if (!node.partition_count.has_value()) fail("plan node has no partition count");
  double ms = oracle_latency(node, *node.partition_count, params, tag, nullptr, 0.0);
  latency += ms;
  processing += ms * static_cast<double>(*node.partition_count);
}

}  // namespace

double oracle_plan_latency(const PlanNode& root, const OracleParams& params,
                           const std::string& template_tag) {
  double latency = 0.0, processing = 0.0;
  accumulate_oracle(root, params, template_tag, latency, processing);
  return latency;
}

double oracle_plan_processing(const PlanNode& root, const OracleParams& params,
                              const std::string& template_tag) {
  double latency = 0.0, processing = 0.0;
  accumulate_oracle(root, params, template_tag, latency, processing);
  return processing;
}

double default_cost(const PlanNode& node) {
  if (!node.is_physical()) fail("default cost requires physical plan nodes");
  // Fixed per-kind constants times output cardinality. The magnitudes are
  // intentionally off: wide scans rated cheap, trivial projections rated
  // expensive, partitioning invisible.
  double k = 0.0;
  switch (node.physical()) {
    case PhysicalKind::Extract: k = 2e-6; break;
    case PhysicalKind::FilterExec: k = 1.5e-4; break;
    case PhysicalKind::ProjectExec: k = 4e-7; break;
    case PhysicalKind::HashJoin: k = 2.5e-5; break;
    case PhysicalKind::MergeJoin: k = 9e-5; break;
    case PhysicalKind::HashAgg: k = 1.1e-4; break;
    case PhysicalKind::StreamAgg: k = 7e-6; break;
    case PhysicalKind::SortExec: k = 5e-7; break;
    case PhysicalKind::Exchange: k = 6e-5; break;
    case PhysicalKind::UdfExec: k = 8e-7; break;
    case PhysicalKind::OutputExec: k = 2.8e-4; break;
  }
  return k * node.stats.output_card;
}

// ---------------------------------------------------------------------------
// Evaluation

namespace {

const std::vector<std::string>& family_names() {
  static const std::vector<std::string> kFamilies = {"subgraph", "approx",   "op_input",
                                                     "operator", "combined", "default"};
  return kFamilies;
}

std::optional<double> family_prediction(const std::string& family, const RowPrediction& rp,
                                        const TrainingRow& row) {
  if (family == "subgraph") return rp.subgraph;
  if (family == "approx") return rp.approx;
  if (family == "op_input") return rp.input;
  if (family == "operator") return rp.op;
  if (family == "combined") return rp.combined;
  // default baseline: covered everywhere by construction
  double c = row.features.values[2];
  PlanNode probe;
  probe.op = row.kind;
  probe.stats.output_card = c;
  return default_cost(probe);
}

}  // namespace

EvalReport evaluate(const CostModelStore& store, const std::vector<LoggedPlan>& test_logs) {
  if (test_logs.empty()) fail("empty test set");

  int max_train = 0;
  for (int d : store.meta.train_days) max_train = std::max(max_train, d);
  if (store.meta.combined_day.has_value()) max_train = std::max(max_train, *store.meta.combined_day);

  std::map<int, std::vector<TrainingRow>> by_day;
  for (const LoggedPlan& lp : test_logs) {
    if (lp.day <= max_train) {
      log_warn("evaluating on day " + std::to_string(lp.day) +
               ", which the store already saw in training");
      break;
    }
  }
  for (const LoggedPlan& lp : test_logs) {
    for (TrainingRow& row : extract_training_rows(*lp.root, lp.job_id, lp.day)) {
      by_day[lp.day].push_back(std::move(row));
    }
  }

  EvalReport report;
  for (const auto& [day, rows] : by_day) {
    std::vector<RowPrediction> preds(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) preds[i] = predict_row(store, rows[i]);

    for (const std::string& family : family_names()) {
      std::vector<double> p, a;
      for (std::size_t i = 0; i < rows.size(); ++i) {
        std::optional<double> v = family_prediction(family, preds[i], rows[i]);
        if (!v.has_value()) continue;
        p.push_back(*v);
        a.push_back(rows[i].actual_ms);
      }
      EvalRow er;
      er.family = family;
      er.day = day;
      er.coverage = rows.empty() ? 0.0 : static_cast<double>(p.size()) / static_cast<double>(rows.size());
      if (p.size() >= 2) {
        er.pearson = pearson(p, a);
        er.median_err = median_rel_error(p, a);
        er.p95_err = percentile_rel_error(p, a, 0.95);
      } else if (p.size() == 1) {
        er.median_err = relative_error(p[0], a[0]);
        er.p95_err = er.median_err;
      }
      report.rows.push_back(std::move(er));
    }
  }
  return report;
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "family,day,pearson,median_err,p95_err,coverage\n";
  char buf[160];
  for (const EvalRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%.6g,%.6g,%.6g,%.6g\n", r.family.c_str(), r.day,
                  r.pearson, r.median_err, r.p95_err, r.coverage);
    out << buf;
  }
  return out.str();
}

const EvalRow* EvalReport::find(const std::string& family, int day) const {
  for (const EvalRow& r : rows) {
    if (r.family == family && r.day == day) return &r;
  }
  return nullptr;
}

PlanChangeReport compare_plans(const std::vector<SuitePlan>& suite, const CostModelStore& store,
                               const OracleParams& oracle, const SamplingConfig& cfg) {
  PlanChangeReport rep;
  for (const SuitePlan& sp : suite) {
    DefaultCoster baseline;
    OptimizedPlan def = optimize_with(*sp.logical, baseline, cfg, OptimizeMode::FixedPartitions);
    OptimizedPlan lrn = optimize(*sp.logical, store, cfg, OptimizeMode::Analytical);

    double def_lat = oracle_plan_latency(*def.root, oracle, sp.template_tag);
    double lrn_lat = oracle_plan_latency(*lrn.root, oracle, sp.template_tag);
    rep.total += 1;
    rep.default_latency_ms += def_lat;
    rep.learned_latency_ms += lrn_lat;
    rep.default_processing += oracle_plan_processing(*def.root, oracle, sp.template_tag);
    rep.learned_processing += oracle_plan_processing(*lrn.root, oracle, sp.template_tag);

    if (to_document(*def.root) != to_document(*lrn.root)) {
      rep.changed += 1;
      if (lrn_lat < def_lat) rep.improved += 1;
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Log serialization

void write_jsonl(const std::vector<LoggedPlan>& plans, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail("cannot open " + path + " for writing");
  for (const LoggedPlan& lp : plans) {
    nlohmann::json j;
    j["job_id"] = lp.job_id;
    j["template"] = lp.template_tag;
    j["day"] = lp.day;
    j["adhoc"] = lp.adhoc;
    j["plan"] = to_document(*lp.root);
    out << j.dump() << '\n';
  }
  if (!out) fail("failed while writing " + path);
}

std::vector<LoggedPlan> read_jsonl(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail("cannot open " + path);
  std::vector<LoggedPlan> plans;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("plan")) {
      fail("malformed log line " + std::to_string(line_no) + " in " + path);
    }
    LoggedPlan lp;
    lp.job_id = j.value("job_id", std::string{});
    lp.template_tag = j.value("template", std::string{});
    lp.day = j.value("day", 0);
    lp.adhoc = j.value("adhoc", false);
    lp.root = build_plan(j.at("plan"));
    plans.push_back(std::move(lp));
  }
  return plans;
}

// ---------------------------------------------------------------------------
// Exploration benchmark

namespace {

struct BenchNode {
  BasicFeatures basic;
  const LinearCostModel* model = nullptr;
};

struct BenchStage {
  std::vector<BenchNode> nodes;
  int grid_best_p = 1;
  double grid_best_cost = 0.0;
};

double stage_cost(const BenchStage& st, int p) {
  double total = 0.0;
  for (const BenchNode& n : st.nodes) {
    BasicFeatures b = n.basic;
    b.partitions = p;
    total += predict_linear(*n.model, derived_features(b).values);
  }
  return total;
}

std::pair<double, double> stage_theta(const BenchStage& st) {
  double sum_p = 0.0, sum_c = 0.0;
  for (const BenchNode& n : st.nodes) {
    auto numerators = per_partition_numerators(n.basic);
    for (int j = 0; j < kPerPartitionCount; ++j) {
      sum_p += n.model->raw_weight(kPerPartitionFirst + j) * numerators[static_cast<std::size_t>(j)];
    }
    sum_c += n.model->raw_weight(kRawPartitionIndex);
  }
  return {sum_p, sum_c};
}

double median_of(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

std::vector<BenchRow> bench_explore(const CostModelStore& store, int n_stages,
                                    const SamplingConfig& base_cfg, std::uint64_t seed) {
  if (n_stages < 1) fail("bench needs at least one stage");
  std::vector<std::pair<PhysicalKind, const LinearCostModel*>> trained;
  for (int k = 0; k < kNumPhysicalKinds; ++k) {
    PlanNode probe;
    probe.op = static_cast<PhysicalKind>(k);
    auto sig = compute_signatures(probe).operator_sig;
    auto it = store.operator_models.find(sig);
    if (it != store.operator_models.end()) {
      trained.emplace_back(static_cast<PhysicalKind>(k), &it->second);
    }
  }
  if (trained.empty()) fail("store has no operator models to benchmark");

  int p_min = std::max(1, base_cfg.p_min);
  int p_max = base_cfg.p_max;
  if (p_max < p_min) fail("invalid partition bounds");

  // Random single-operator probes: every strategy searches the same
  // one-dimensional cost curve, so the gap isolates how the partition count
  // was chosen. Boundary-optimum draws are re-rolled so there is something
  // to find.
  std::vector<BenchStage> stages;
  for (int si = 0; si < n_stages; ++si) {
    Rng rng(mix_stream({seed, kStreamBench, static_cast<std::uint64_t>(si)}));
    BenchStage st;
    bool ok = false;
    for (int tries = 0; tries < 80 && !ok; ++tries) {
      st.nodes.clear();
      BenchNode n;
      const auto& pick = trained[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(trained.size()) - 1))];
      n.model = pick.second;
      double base = rng.uniform(1e8, 8e8);
      n.basic.base_card = base;
      n.basic.input_card = base;
      n.basic.output_card = base * rng.uniform(0.05, 0.9);
      n.basic.avg_row_len = rng.uniform(200.0, 600.0);
      st.nodes.push_back(std::move(n));
      st.grid_best_p = p_min;
      st.grid_best_cost = std::numeric_limits<double>::infinity();
      for (int p = p_min; p <= p_max; ++p) {
        double c = stage_cost(st, p);
        if (c < st.grid_best_cost) {
          st.grid_best_cost = c;
          st.grid_best_p = p;
        }
      }
      ok = st.grid_best_p > p_min && st.grid_best_p < p_max && st.grid_best_cost > 0.0;
    }
    if (!ok) fail("could not draw a stage with an interior optimum");
    stages.push_back(std::move(st));
  }

  auto gap_of = [&](const BenchStage& st, int p) {
    return stage_cost(st, p) / st.grid_best_cost - 1.0;
  };
  auto sampled_row = [&](const std::string& name, const SamplingConfig& cfg) {
    std::vector<int> samples = sample_partitions(cfg);
    std::vector<double> gaps;
    std::uint64_t lookups = 0;
    for (const BenchStage& st : stages) {
      int best_p = samples.front();
      double best = std::numeric_limits<double>::infinity();
      for (int p : samples) {
        double c = stage_cost(st, p);
        if (c < best) {
          best = c;
          best_p = p;
        }
      }
      gaps.push_back(gap_of(st, best_p));
      lookups += 5ull * st.nodes.size() * samples.size();
    }
    BenchRow row;
    row.strategy = name;
    row.samples = static_cast<int>(samples.size());
    row.lookups = lookups;
    row.median_gap = median_of(gaps);
    return row;
  };

  std::vector<BenchRow> rows;
  for (int s : {1, 2, 4}) {
    SamplingConfig cfg = base_cfg;
    cfg.strategy = SampleStrategy::Geometric;
    cfg.s = s;
    rows.push_back(sampled_row("geometric(s=" + std::to_string(s) + ")", cfg));
  }
  for (int k : {5, 10, 15, 20}) {
    SamplingConfig cfg = base_cfg;
    cfg.strategy = SampleStrategy::Uniform;
    cfg.k = k;
    rows.push_back(sampled_row("uniform(k=" + std::to_string(k) + ")", cfg));
  }
  for (int k : {5, 10, 15, 20}) {
    SamplingConfig cfg = base_cfg;
    cfg.strategy = SampleStrategy::Random;
    cfg.k = k;
    cfg.seed = mix_stream({seed, kStreamBench, 0x1000 + static_cast<std::uint64_t>(k)});
    rows.push_back(sampled_row("random(k=" + std::to_string(k) + ")", cfg));
  }

  {
    std::vector<double> gaps;
    std::uint64_t lookups = 0;
    for (const BenchStage& st : stages) {
      auto [sum_p, sum_c] = stage_theta(st);
      double bytes = 0.0;
      for (const BenchNode& n : st.nodes) bytes += n.basic.base_card * n.basic.avg_row_len;
      int fallback = std::clamp(static_cast<int>(std::ceil(bytes / (1024.0 * 1024.0 * 1024.0))),
                                p_min, p_max);
      int p = analytical_partition(sum_p, sum_c, p_min, p_max, fallback);
      gaps.push_back(gap_of(st, p));
      lookups += 5ull * st.nodes.size();
    }
    BenchRow row;
    row.strategy = "analytical";
    row.samples = 0;
    row.lookups = lookups;
    row.median_gap = median_of(gaps);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string bench_to_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "strategy,samples,lookups,median_gap\n";
  char buf[160];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%d,%llu,%.6g\n", r.strategy.c_str(), r.samples,
                  static_cast<unsigned long long>(r.lookups), r.median_gap);
    out << buf;
  }
  return out.str();
}

}  // namespace costwise
