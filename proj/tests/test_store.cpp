#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "costwise/metrics.hpp"
#include "costwise/store.hpp"
#include "costwise/workbench.hpp"
#include "helpers.hpp"

using namespace costwise;
using namespace testutil;

namespace {

// Small two-day workload shared by the training tests.
Workload small_workload(std::uint64_t seed = 17, int days = 2) {
  WorkloadConfig cfg;
  cfg.n_templates = 8;
  cfg.instances_per_template = 6;
  cfg.days = days;
  cfg.noise_cv = 0.05;
  cfg.seed = seed;
  return gen_workload(cfg);
}

std::vector<TrainingRow> rows_of_day(const Workload& wl, int day) {
  std::vector<TrainingRow> rows;
  for (const LoggedPlan& lp : wl.plans) {
    if (lp.day != day) continue;
    auto r = extract_training_rows(*lp.root, lp.job_id, lp.day);
    rows.insert(rows.end(), std::make_move_iterator(r.begin()),
                std::make_move_iterator(r.end()));
  }
  return rows;
}

CostModelStore train_small(const Workload& wl) {
  TrainConfig cfg;
  cfg.fit.alpha = 0.01;
  CostModelStore store = group_and_fit(rows_of_day(wl, 1), cfg);
  fit_combined(store, rows_of_day(wl, 2), cfg);
  return store;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("training row extraction") {
  SUBCASE("one row per node") {
    auto plan = unary(PhysicalKind::OutputExec, 5.0,
                      binary(PhysicalKind::HashJoin, 50.0, leaf(100, "a.tsv"),
                             unary(PhysicalKind::FilterExec, 80.0, leaf(1000, "b_01.tsv"))));
    std::vector<PlanNode*> stack{plan.get()};
    while (!stack.empty()) {
      PlanNode* n = stack.back();
      stack.pop_back();
      n->partition_count = 4;
      n->actual_latency_ms = 10.0;
      for (auto& c : n->children) stack.push_back(c.get());
    }
    auto rows = extract_training_rows(*plan, "job-1", 1);
    CHECK(rows.size() == 5);
    for (const auto& r : rows) {
      CHECK(r.job_id == "job-1");
      CHECK(r.day == 1);
      CHECK(r.actual_ms == 10.0);
    }
  }

  SUBCASE("missing latency is rejected") {
    auto plan = leaf(100, "a.tsv");
    plan->partition_count = 1;
    CHECK_THROWS_AS(extract_training_rows(*plan, "job", 1), std::runtime_error);
  }

  SUBCASE("row count over a generated day equals the node count") {
    Workload wl = small_workload();
    long nodes = 0;
    for (const LoggedPlan& lp : wl.plans) {
      if (lp.day == 1) nodes += count_nodes(*lp.root);
    }
    CHECK(static_cast<long>(rows_of_day(wl, 1).size()) == nodes);
  }
}

TEST_CASE("grouping threshold") {
  // five instances of one shape, four of another
  auto make_instance = [](double card, const char* input) {
    auto n = unary(PhysicalKind::FilterExec, card * 0.5, leaf(card, input));
    n->partition_count = 2;
    n->actual_latency_ms = card * 0.01;
    n->children[0]->partition_count = 2;
    n->children[0]->actual_latency_ms = card * 0.02;
    return n;
  };
  std::vector<TrainingRow> rows;
  for (int i = 0; i < 5; ++i) {
    auto plan = make_instance(1000.0 + i, "common_1.tsv");
    auto r = extract_training_rows(*plan, "a", 1);
    rows.insert(rows.end(), r.begin(), r.end());
  }
  for (int i = 0; i < 4; ++i) {
    auto plan = make_instance(2000.0 + i, "rare_1.tsv");
    auto r = extract_training_rows(*plan, "b", 1);
    rows.insert(rows.end(), r.begin(), r.end());
  }

  TrainConfig cfg;
  cfg.fit.alpha = 0.01;
  CostModelStore store = group_and_fit(rows, cfg);

  auto common = compute_signatures(*make_instance(1500, "common_2.tsv"));
  auto rare = compute_signatures(*make_instance(1500, "rare_9.tsv"));
  CHECK(store.subgraph_models.count(common.subgraph_sig) == 1);
  CHECK(store.subgraph_models.count(rare.subgraph_sig) == 0);
  CHECK(store.meta.counts.skipped_small_groups > 0);

  // operator-level groups pool both shapes: 9 rows each for Filter and Extract
  CHECK(store.operator_models.count(common.operator_sig) == 1);
  CHECK(store.meta.counts.operator_models == 2);
}

TEST_CASE("combined model training") {
  Workload wl = small_workload();

  SUBCASE("happy path covers every trained kind") {
    CostModelStore store = train_small(wl);
    CHECK(store.combined_models.size() == store.operator_models.size());
    CHECK(store.meta.counts.combined_models == static_cast<int>(store.combined_models.size()));
    for (int k = 0; k < kNumPhysicalKinds; ++k) {
      CHECK(store.covers_kind(static_cast<PhysicalKind>(k)));
    }
  }

  SUBCASE("a brand-new operator kind on the combined day is an error") {
    TrainConfig cfg;
    cfg.fit.alpha = 0.01;
    // train individuals only on rows that contain no MergeJoin
    std::vector<TrainingRow> day1;
    for (TrainingRow& r : rows_of_day(wl, 1)) {
      if (r.kind != PhysicalKind::MergeJoin) day1.push_back(std::move(r));
    }
    CostModelStore store = group_and_fit(day1, cfg);
    std::vector<TrainingRow> day2 = rows_of_day(wl, 2);
    bool has_merge = false;
    for (const auto& r : day2) has_merge |= r.kind == PhysicalKind::MergeJoin;
    REQUIRE(has_merge);
    CHECK_THROWS_WITH_AS(fit_combined(store, day2, cfg), doctest::Contains("MergeJoin"),
                         std::runtime_error);
  }

  SUBCASE("combined training rows must come from a later day") {
    TrainConfig cfg;
    cfg.fit.alpha = 0.01;
    CostModelStore store = group_and_fit(rows_of_day(wl, 1), cfg);
    store.meta.train_days = {1};
    auto day1_again = rows_of_day(wl, 1);
    CHECK_THROWS_AS(fit_combined(store, day1_again, cfg), std::runtime_error);
  }

  SUBCASE("combined beats the bare operator models on its training day") {
    CostModelStore store = train_small(wl);
    auto day2 = rows_of_day(wl, 2);
    std::map<PhysicalKind, std::pair<std::vector<double>, std::vector<double>>> per_kind_combined;
    std::map<PhysicalKind, std::pair<std::vector<double>, std::vector<double>>> per_kind_op;
    for (const TrainingRow& r : day2) {
      RowPrediction p = predict_row(store, r);
      REQUIRE(p.combined.has_value());
      REQUIRE(p.op.has_value());
      per_kind_combined[r.kind].first.push_back(*p.combined);
      per_kind_combined[r.kind].second.push_back(r.actual_ms);
      per_kind_op[r.kind].first.push_back(*p.op);
      per_kind_op[r.kind].second.push_back(r.actual_ms);
    }
    for (const auto& [kind, pa] : per_kind_combined) {
      const auto& op = per_kind_op[kind];
      CHECK(msle(pa.first, pa.second) <= msle(op.first, op.second) + 1e-9);
    }
  }
}

TEST_CASE("lookup") {
  Workload wl = small_workload();
  CostModelStore store = train_small(wl);

  SUBCASE("recurring node hits every granularity") {
    // day-2 instance of a recurring template: same signatures as day 1
    const LoggedPlan* lp = nullptr;
    for (const auto& p : wl.plans) {
      if (p.day == 2 && !p.adhoc) {
        lp = &p;
        break;
      }
    }
    REQUIRE(lp != nullptr);
    store.reset_lookup_count();
    Prediction p = lookup(store, *lp->root);
    CHECK(p.combined >= 0.0);
    CHECK(p.op.has_value());
    CHECK(p.subgraph.has_value());
    CHECK(store.lookup_count() == 5);
  }

  SUBCASE("fresh shape over known inputs falls back to coarser families") {
    // a shape the generator never produces: five stacked filters
    auto n = leaf(5e8, "dsAAA_20190803_1.tsv");
    n->partition_count = 8;
    std::unique_ptr<PlanNode> plan = std::move(n);
    for (int i = 0; i < 5; ++i) {
      double halved = plan->stats.output_card * 0.5;
      plan = unary(PhysicalKind::FilterExec, halved, std::move(plan));
      plan->partition_count = 8;
    }
    Prediction p = lookup(store, *plan);
    CHECK_FALSE(p.subgraph.has_value());
    CHECK(p.op.has_value());
    CHECK(p.combined >= 0.0);
  }

  SUBCASE("unknown operator kind is rejected") {
    CostModelStore empty;
    auto n = leaf(100, "t.tsv");
    n->partition_count = 1;
    CHECK_THROWS_AS(lookup(empty, *n), std::runtime_error);
  }

  SUBCASE("logical nodes are rejected") {
    auto n = logical_leaf(100, "t.tsv");
    n->partition_count = 1;
    CHECK_THROWS_AS(lookup(store, *n), std::runtime_error);
  }

  SUBCASE("partial stores charge fewer evaluations") {
    CostModelStore kinds = rig_kind_store({{PhysicalKind::Extract, 5.0}});
    auto n = leaf(100, "t.tsv");
    n->partition_count = 1;
    kinds.reset_lookup_count();
    lookup(kinds, *n);
    CHECK(kinds.lookup_count() == 2);  // operator + combined only
  }
}

TEST_CASE("store serialization") {
  Workload wl = small_workload();
  CostModelStore store = train_small(wl);

  SUBCASE("save and load preserve every prediction") {
    std::string path = temp_path("costwise_store_roundtrip.json");
    save_store(store, path);
    CostModelStore loaded = load_store(path);
    auto day2 = rows_of_day(wl, 2);
    REQUIRE(!day2.empty());
    int checked = 0;
    for (std::size_t i = 0; i < day2.size(); i += 7) {
      RowPrediction a = predict_row(store, day2[i]);
      RowPrediction b = predict_row(loaded, day2[i]);
      CHECK(a.combined == b.combined);
      CHECK(a.subgraph == b.subgraph);
      CHECK(a.approx == b.approx);
      CHECK(a.input == b.input);
      CHECK(a.op == b.op);
      ++checked;
    }
    CHECK(checked >= 20);
    std::remove(path.c_str());
  }

  SUBCASE("serialized form is deterministic") {
    CHECK(store_to_json(store).dump() == store_to_json(train_small(wl)).dump());
  }

  SUBCASE("parallel training matches serial training byte for byte") {
    TrainConfig serial, parallel;
    serial.fit.alpha = parallel.fit.alpha = 0.01;
    parallel.jobs = 4;
    auto day1 = rows_of_day(wl, 1);
    auto day2 = rows_of_day(wl, 2);
    CostModelStore a = group_and_fit(day1, serial);
    fit_combined(a, day2, serial);
    CostModelStore b = group_and_fit(day1, parallel);
    fit_combined(b, day2, parallel);
    CHECK(store_to_json(a).dump() == store_to_json(b).dump());
  }

  SUBCASE("unsupported schema version is rejected") {
    nlohmann::json j = store_to_json(store);
    j["schema"] = 999;
    CHECK_THROWS_AS(store_from_json(j), std::runtime_error);
  }

  SUBCASE("truncated file is rejected") {
    std::string path = temp_path("costwise_store_truncated.json");
    {
      std::ofstream out(path);
      out << "{\"schema\": 1, \"meta\": ";
    }
    CHECK_THROWS_AS(load_store(path), std::runtime_error);
    std::remove(path.c_str());
  }
}
