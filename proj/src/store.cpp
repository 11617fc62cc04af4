#include "costwise/store.hpp"

#include <fstream>
#include <functional>
#include <stdexcept>

#include "costwise/hashing.hpp"
#include "costwise/parallel.hpp"

namespace costwise {

namespace {

constexpr int kSchemaVersion = 1;

std::vector<double> with_context(const FeatureVector& fv, const ContextFeatures& ctx) {
  std::vector<double> x = fv.values;
  x.push_back(ctx.logical_count);
  x.push_back(ctx.depth);
  return x;
}

}  // namespace

std::vector<std::string> base_feature_ids() { return feature_names(); }

std::vector<std::string> input_family_feature_ids() {
  std::vector<std::string> ids = feature_names();
  ids.push_back("CL");
  ids.push_back("D");
  return ids;
}

bool CostModelStore::covers_kind(PhysicalKind k) const {
  PlanNode probe;
  probe.op = k;
  std::uint64_t sig = compute_signatures(probe).operator_sig;
  return operator_models.count(sig) > 0 && combined_models.count(sig) > 0;
}

std::vector<TrainingRow> extract_training_rows(const PlanNode& root,
                                               const std::string& job_id, int day) {
  auto sigs = compute_all_signatures(root);
  std::vector<TrainingRow> rows;
  std::function<void(const PlanNode&)> walk = [&](const PlanNode& node) {
    for (const auto& c : node.children) walk(*c);
    if (!node.is_physical())
      throw std::runtime_error("store: training plans must be physical");
    if (!node.actual_latency_ms)
      throw std::runtime_error("store: training node missing actual_ms");
    TrainingRow row;
    row.signatures = sigs.at(&node);
    row.kind = node.physical();
    row.features = derived_features(basic_features(node));
    row.context = context_features(node);
    row.actual_ms = *node.actual_latency_ms;
    row.job_id = job_id;
    row.day = day;
    rows.push_back(std::move(row));
  };
  walk(root);
  return rows;
}

namespace {

using Groups = std::map<std::uint64_t, std::vector<const TrainingRow*>>;

Groups group_by(const std::vector<TrainingRow>& rows,
                std::uint64_t SignatureSet::*member) {
  Groups g;
  for (const auto& r : rows) g[r.signatures.*member].push_back(&r);
  return g;
}

// Fits one family of linear models in parallel over its groups. The output
// map order is the (sorted) signature order, independent of scheduling.
void fit_family(const Groups& groups, const TrainConfig& cfg, bool with_ctx,
                std::map<std::uint64_t, LinearCostModel>& out, int& fitted,
                int& skipped) {
  std::vector<std::pair<std::uint64_t, const std::vector<const TrainingRow*>*>> work;
  for (const auto& [sig, members] : groups) {
    if (static_cast<int>(members.size()) < cfg.min_occurrences) {
      ++skipped;
      continue;
    }
    work.emplace_back(sig, &members);
  }
  std::vector<LinearCostModel> results(work.size());
  parallel_for(work.size(), cfg.jobs, [&](std::size_t i) {
    const auto& members = *work[i].second;
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    X.reserve(members.size());
    y.reserve(members.size());
    for (const TrainingRow* r : members) {
      X.push_back(with_ctx ? with_context(r->features, r->context)
                           : r->features.values);
      y.push_back(r->actual_ms);
    }
    results[i] = fit_elastic_net(
        X, y, cfg.fit, with_ctx ? input_family_feature_ids() : base_feature_ids());
  });
  for (std::size_t i = 0; i < work.size(); ++i) {
    out[work[i].first] = std::move(results[i]);
    ++fitted;
  }
}

}  // namespace

CostModelStore group_and_fit(const std::vector<TrainingRow>& rows, const TrainConfig& cfg) {
  CostModelStore store;
  auto& c = store.meta.counts;
  fit_family(group_by(rows, &SignatureSet::subgraph_sig), cfg, false,
             store.subgraph_models, c.subgraph_models, c.skipped_small_groups);
  fit_family(group_by(rows, &SignatureSet::subgraph_approx_sig), cfg, false,
             store.approx_models, c.approx_models, c.skipped_small_groups);
  fit_family(group_by(rows, &SignatureSet::op_input_sig), cfg, true,
             store.input_models, c.input_models, c.skipped_small_groups);
  fit_family(group_by(rows, &SignatureSet::operator_sig), cfg, false,
             store.operator_models, c.operator_models, c.skipped_small_groups);

  std::map<int, bool> seen_days;
  for (const auto& r : rows) seen_days[r.day] = true;
  for (const auto& [day, _] : seen_days) store.meta.train_days.push_back(day);
  return store;
}

namespace {

Prediction individual_predictions(const CostModelStore& store, const SignatureSet& sigs,
                                  const FeatureVector& fv, const ContextFeatures& ctx) {
  Prediction p;
  if (auto it = store.subgraph_models.find(sigs.subgraph_sig);
      it != store.subgraph_models.end())
    p.subgraph = predict_linear(it->second, fv.values);
  if (auto it = store.approx_models.find(sigs.subgraph_approx_sig);
      it != store.approx_models.end())
    p.approx = predict_linear(it->second, fv.values);
  if (auto it = store.input_models.find(sigs.op_input_sig); it != store.input_models.end())
    p.input = predict_linear(it->second, with_context(fv, ctx));
  if (auto it = store.operator_models.find(sigs.operator_sig);
      it != store.operator_models.end())
    p.op = predict_linear(it->second, fv.values);
  return p;
}

}  // namespace

void fit_combined(CostModelStore& store, const std::vector<TrainingRow>& rows_next_day,
                  const TrainConfig& cfg) {
  if (rows_next_day.empty())
    throw std::runtime_error("store: no rows for combined training");
  int max_train_day = 0;
  for (int d : store.meta.train_days) max_train_day = std::max(max_train_day, d);
  for (const auto& r : rows_next_day)
    if (r.day <= max_train_day)
      throw std::runtime_error(
          "store: combined training rows must come from a later day than the "
          "individual models");

  // meta-feature rows per operator kind
  std::map<std::uint64_t, std::vector<std::size_t>> by_kind;
  for (std::size_t i = 0; i < rows_next_day.size(); ++i)
    by_kind[rows_next_day[i].signatures.operator_sig].push_back(i);

  std::vector<std::pair<std::uint64_t, const std::vector<std::size_t>*>> work;
  for (const auto& [sig, members] : by_kind) work.emplace_back(sig, &members);

  std::vector<GbtCostModel> results(work.size());
  parallel_for(work.size(), cfg.jobs, [&](std::size_t w) {
    const auto& [sig, members] = work[w];
    std::vector<std::vector<double>> X;
    std::vector<double> y;
    X.reserve(members->size());
    y.reserve(members->size());
    for (std::size_t i : *members) {
      const TrainingRow& r = rows_next_day[i];
      auto op_it = store.operator_models.find(r.signatures.operator_sig);
      if (op_it == store.operator_models.end())
        throw std::runtime_error(
            "store: no operator-level model for kind " +
            std::string(to_string(r.kind)) + "; combined training needs one");
      Prediction ind = individual_predictions(store, r.signatures, r.features, r.context);
      BasicFeatures basic;
      basic.input_card = r.features.values[0];
      basic.base_card = r.features.values[1];
      basic.output_card = r.features.values[2];
      basic.avg_row_len = r.features.values[3];
      basic.partitions = static_cast<int>(r.features.values[kRawPartitionIndex]);
      MetaFeatures mf = meta_features(ind.subgraph, ind.approx, ind.input, *ind.op, basic);
      X.push_back(mf.to_vector());
      y.push_back(r.actual_ms);
    }
    FitConfig fit_cfg = cfg.fit;
    fit_cfg.seed = mix_stream({cfg.fit.seed, sig});
    results[w] = fit_gbt(X, y, fit_cfg, MetaFeatures::names());
  });

  for (std::size_t w = 0; w < work.size(); ++w) {
    store.combined_models[work[w].first] = std::move(results[w]);
    ++store.meta.counts.combined_models;
  }
  store.meta.combined_day = rows_next_day.front().day;
}

RowPrediction predict_row(const CostModelStore& store, const TrainingRow& row) {
  Prediction ind = individual_predictions(store, row.signatures, row.features, row.context);
  RowPrediction out;
  out.subgraph = ind.subgraph;
  out.approx = ind.approx;
  out.input = ind.input;
  out.op = ind.op;
  auto cit = store.combined_models.find(row.signatures.operator_sig);
  if (ind.op.has_value() && cit != store.combined_models.end()) {
    BasicFeatures basic;
    basic.input_card = row.features.values[0];
    basic.base_card = row.features.values[1];
    basic.output_card = row.features.values[2];
    basic.avg_row_len = row.features.values[3];
    basic.partitions = static_cast<int>(row.features.values[kRawPartitionIndex]);
    MetaFeatures mf = meta_features(ind.subgraph, ind.approx, ind.input, *ind.op, basic);
    out.combined = predict_gbt(cit->second, mf.to_vector());
  }
  return out;
}

Prediction lookup_prepared(const CostModelStore& store, const SignatureSet& sigs,
                           const BasicFeatures& basic, const ContextFeatures& ctx) {
  FeatureVector fv = derived_features(basic);
  Prediction p = individual_predictions(store, sigs, fv, ctx);
  if (!p.op)
    throw std::runtime_error("store: operator kind not covered by the store");
  auto cit = store.combined_models.find(sigs.operator_sig);
  if (cit == store.combined_models.end())
    throw std::runtime_error("store: no combined model for operator kind");
  MetaFeatures mf = meta_features(p.subgraph, p.approx, p.input, *p.op, basic);
  p.combined = predict_gbt(cit->second, mf.to_vector());

  std::uint64_t evals = 2;  // operator-level + combined, always evaluated
  if (p.subgraph) ++evals;
  if (p.approx) ++evals;
  if (p.input) ++evals;
  store.add_lookups(evals);
  return p;
}

Prediction lookup(const CostModelStore& store, const PlanNode& node,
                  std::optional<int> partition_override) {
  if (!node.is_physical())
    throw std::runtime_error("store: lookup requires a physical plan node");
  if (!store.covers_kind(node.physical()))
    throw std::runtime_error("store: operator kind " +
                             std::string(to_string(node.physical())) +
                             " not covered by the store");
  SignatureSet sigs = compute_signatures(node);
  BasicFeatures basic = basic_features(node, partition_override);
  return lookup_prepared(store, sigs, basic, context_features(node));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

nlohmann::json family_to_json(const std::map<std::uint64_t, LinearCostModel>& family) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [sig, model] : family) j[to_hex(sig)] = model.to_json();
  return j;
}

void family_from_json(const nlohmann::json& j,
                      std::map<std::uint64_t, LinearCostModel>& family) {
  for (const auto& [key, value] : j.items())
    family[from_hex(key)] = LinearCostModel::from_json(value);
}

}  // namespace

nlohmann::json store_to_json(const CostModelStore& store) {
  nlohmann::json combined = nlohmann::json::object();
  for (const auto& [sig, model] : store.combined_models)
    combined[to_hex(sig)] = model.to_json();

  nlohmann::json meta = {
      {"train_days", store.meta.train_days},
      {"counts",
       {{"subgraph", store.meta.counts.subgraph_models},
        {"approx", store.meta.counts.approx_models},
        {"input", store.meta.counts.input_models},
        {"operator", store.meta.counts.operator_models},
        {"combined", store.meta.counts.combined_models},
        {"skipped_small_groups", store.meta.counts.skipped_small_groups}}}};
  if (store.meta.combined_day) meta["combined_day"] = *store.meta.combined_day;

  return {{"schema", kSchemaVersion},
          {"meta", std::move(meta)},
          {"subgraph", family_to_json(store.subgraph_models)},
          {"approx", family_to_json(store.approx_models)},
          {"input", family_to_json(store.input_models)},
          {"operator", family_to_json(store.operator_models)},
          {"combined", std::move(combined)}};
}

CostModelStore store_from_json(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("schema"))
    throw std::runtime_error("store: not a model store document");
  if (j["schema"].get<int>() != kSchemaVersion)
    throw std::runtime_error("store: unsupported schema version " +
                             j["schema"].dump() + ", expected " +
                             std::to_string(kSchemaVersion));
  CostModelStore store;
  family_from_json(j.at("subgraph"), store.subgraph_models);
  family_from_json(j.at("approx"), store.approx_models);
  family_from_json(j.at("input"), store.input_models);
  family_from_json(j.at("operator"), store.operator_models);
  for (const auto& [key, value] : j.at("combined").items())
    store.combined_models[from_hex(key)] = GbtCostModel::from_json(value);

  const auto& meta = j.at("meta");
  store.meta.train_days = meta.at("train_days").get<std::vector<int>>();
  if (meta.contains("combined_day"))
    store.meta.combined_day = meta["combined_day"].get<int>();
  const auto& counts = meta.at("counts");
  store.meta.counts.subgraph_models = counts.at("subgraph").get<int>();
  store.meta.counts.approx_models = counts.at("approx").get<int>();
  store.meta.counts.input_models = counts.at("input").get<int>();
  store.meta.counts.operator_models = counts.at("operator").get<int>();
  store.meta.counts.combined_models = counts.at("combined").get<int>();
  store.meta.counts.skipped_small_groups = counts.at("skipped_small_groups").get<int>();
  return store;
}

void save_store(const CostModelStore& store, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("store: cannot open " + path + " for writing");
  out << store_to_json(store).dump(1, '\t') << '\n';
  if (!out) throw std::runtime_error("store: failed writing " + path);
}

CostModelStore load_store(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("store: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("store: truncated or invalid JSON in " + path + ": " + e.what());
  }
  return store_from_json(j);
}

}  // namespace costwise
