#pragma once

// Shared plan-building and store-rigging helpers for the unit tests.

#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "costwise/features.hpp"
#include "costwise/plan.hpp"
#include "costwise/store.hpp"

namespace testutil {

using namespace costwise;

inline std::unique_ptr<PlanNode> leaf(double card, std::string input,
                                      double row_len = 100.0) {
  auto n = std::make_unique<PlanNode>();
  n->op = PhysicalKind::Extract;
  n->stats.base_card = card;
  n->stats.input_card = card;
  n->stats.output_card = card;
  n->stats.avg_row_len = row_len;
  n->inputs.push_back(std::move(input));
  return n;
}

inline std::unique_ptr<PlanNode> unary(PhysicalKind k, double out_card,
                                       std::unique_ptr<PlanNode> child,
                                       double row_len = 100.0) {
  auto n = std::make_unique<PlanNode>();
  n->op = k;
  n->stats.input_card = child->stats.output_card;
  n->stats.base_card = child->stats.base_card;
  n->stats.output_card = out_card;
  n->stats.avg_row_len = row_len;
  n->children.push_back(std::move(child));
  return n;
}

inline std::unique_ptr<PlanNode> binary(PhysicalKind k, double out_card,
                                        std::unique_ptr<PlanNode> l,
                                        std::unique_ptr<PlanNode> r,
                                        double row_len = 100.0) {
  auto n = std::make_unique<PlanNode>();
  n->op = k;
  n->stats.input_card = l->stats.output_card + r->stats.output_card;
  n->stats.base_card = l->stats.base_card + r->stats.base_card;
  n->stats.output_card = out_card;
  n->stats.avg_row_len = row_len;
  n->children.push_back(std::move(l));
  n->children.push_back(std::move(r));
  return n;
}

inline std::unique_ptr<PlanNode> logical_leaf(double card, std::string input,
                                              double row_len = 100.0) {
  auto n = leaf(card, std::move(input), row_len);
  n->op = LogicalKind::Get;
  return n;
}

inline std::unique_ptr<PlanNode> logical_unary(LogicalKind k, double out_card,
                                               std::unique_ptr<PlanNode> child,
                                               double row_len = 100.0) {
  auto n = unary(PhysicalKind::FilterExec, out_card, std::move(child), row_len);
  n->op = k;
  return n;
}

inline std::unique_ptr<PlanNode> logical_binary(LogicalKind k, double out_card,
                                                std::unique_ptr<PlanNode> l,
                                                std::unique_ptr<PlanNode> r,
                                                double row_len = 100.0) {
  auto n = binary(PhysicalKind::HashJoin, out_card, std::move(l), std::move(r), row_len);
  n->op = k;
  return n;
}

// Linear model that predicts a constant regardless of features.
inline LinearCostModel constant_linear(double ms, std::size_t dims) {
  LinearCostModel m;
  const auto& names = feature_names();
  for (std::size_t j = 0; j < dims; ++j) {
    m.feature_ids.push_back(j < names.size() ? names[j] : "ctx" + std::to_string(j));
  }
  m.weights.assign(dims, 0.0);
  m.means.assign(dims, 0.0);
  m.stds.assign(dims, 0.0);  // constant columns, weight pinned to zero
  m.intercept = std::log1p(ms);
  return m;
}

inline GbtCostModel constant_gbt(double ms) {
  GbtCostModel g;
  g.feature_ids = MetaFeatures::names();
  g.base_score = std::log1p(ms);
  return g;
}

// Store whose every model family predicts a fixed per-kind cost, fully
// covering the given physical plan (each node's four signatures plus the
// per-kind ensembles). Lookups against it cost the full five evaluations.
inline void rig_full_store(CostModelStore& store, const PlanNode& physical,
                           const std::map<PhysicalKind, double>& cost_by_kind) {
  SignatureSet sigs = compute_signatures(physical);
  double ms = cost_by_kind.at(physical.physical());
  store.subgraph_models.emplace(sigs.subgraph_sig, constant_linear(ms, kFeatureDim));
  store.approx_models.emplace(sigs.subgraph_approx_sig, constant_linear(ms, kFeatureDim));
  store.input_models.emplace(sigs.op_input_sig, constant_linear(ms, kFeatureDim + 2));
  store.operator_models.emplace(sigs.operator_sig, constant_linear(ms, kFeatureDim));
  store.combined_models.emplace(sigs.operator_sig, constant_gbt(ms));
  for (const auto& c : physical.children) rig_full_store(store, *c, cost_by_kind);
}

// Operator-level-only store: constant predictions per kind, covering every
// kind in the table. Lookup charges are 2 per probe (operator + combined).
inline CostModelStore rig_kind_store(const std::map<PhysicalKind, double>& cost_by_kind) {
  CostModelStore store;
  for (const auto& [kind, ms] : cost_by_kind) {
    PlanNode probe;
    probe.op = kind;
    auto sig = compute_signatures(probe).operator_sig;
    store.operator_models.emplace(sig, constant_linear(ms, kFeatureDim));
    store.combined_models.emplace(sig, constant_gbt(ms));
  }
  return store;
}

inline int count_nodes(const PlanNode& n) {
  int c = 1;
  for (const auto& ch : n.children) c += count_nodes(*ch);
  return c;
}

}  // namespace testutil
