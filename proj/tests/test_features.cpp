#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "costwise/features.hpp"
#include "costwise/hashing.hpp"
#include "costwise/workbench.hpp"
#include "helpers.hpp"

using namespace costwise;
using namespace testutil;

namespace {

int feature_index(const std::string& name) {
  const auto& names = feature_names();
  auto it = std::find(names.begin(), names.end(), name);
  REQUIRE(it != names.end());
  return static_cast<int>(it - names.begin());
}

// Straight re-evaluation of the numeric column formulas, kept independent of
// the production code on purpose.
std::vector<double> reference_numerics(const BasicFeatures& b) {
  double I = b.input_card, B = b.base_card, C = b.output_card, L = b.avg_row_len;
  double P = static_cast<double>(b.partitions);
  auto lgx = [](double x) { return std::log(1.0 + x); };
  return {I,
          B,
          C,
          L,
          P,
          std::sqrt(I),
          std::sqrt(B),
          L * I,
          L * B,
          L * lgx(B),
          L * lgx(I),
          L * lgx(C),
          B * C,
          I * C,
          B * lgx(C),
          I * lgx(C),
          lgx(I) * lgx(C),
          lgx(B) * lgx(C),
          I / P,
          C / P,
          I * L / P,
          C * L / P,
          std::sqrt(I) / P,
          std::sqrt(C) / P,
          lgx(I) / P};
}

}  // namespace

TEST_CASE("basic feature extraction") {
  SUBCASE("leaf carries its raw cardinality twice") {
    auto n = leaf(1000, "t.tsv");
    n->stats.output_card = 900;
    n->partition_count = 4;
    BasicFeatures b = basic_features(*n);
    CHECK(b.input_card == 1000);
    CHECK(b.base_card == 1000);
    CHECK(b.output_card == 900);
    CHECK(b.partitions == 4);
  }

  SUBCASE("filter over extract composes I from child output") {
    auto scan = leaf(1000, "t.tsv");
    scan->stats.output_card = 400;
    auto filter = unary(PhysicalKind::FilterExec, 100.0, std::move(scan));
    filter->partition_count = 1;
    BasicFeatures b = basic_features(*filter);
    CHECK(b.input_card == 400);
    CHECK(b.base_card == 1000);
    CHECK(b.output_card == 100);
  }

  SUBCASE("base cardinality sums the subtree leaves") {
    auto j1 = binary(PhysicalKind::HashJoin, 50.0, leaf(111, "a.tsv"), leaf(222, "b.tsv"));
    auto j2 = binary(PhysicalKind::MergeJoin, 20.0, std::move(j1), leaf(333, "c.tsv"));
    j2->partition_count = 1;

    // brute-force leaf scan
    double leaf_sum = 0.0;
    std::vector<const PlanNode*> todo{j2.get()};
    while (!todo.empty()) {
      const PlanNode* n = todo.back();
      todo.pop_back();
      if (n->is_leaf()) leaf_sum += n->stats.base_card;
      for (const auto& c : n->children) todo.push_back(c.get());
    }
    CHECK(basic_features(*j2).base_card == leaf_sum);
    CHECK(leaf_sum == 666.0);
  }

  SUBCASE("missing partition count throws without an override") {
    auto n = leaf(10, "t.tsv");
    CHECK_THROWS_AS(basic_features(*n), std::runtime_error);
    CHECK(basic_features(*n, 8).partitions == 8);
  }

  SUBCASE("input templates are normalized") {
    auto n = leaf(10, "clicks_2019_08_01.tsv");
    n->partition_count = 1;
    BasicFeatures b = basic_features(*n);
    REQUIRE(b.input_templates.size() == 1);
    CHECK(b.input_templates[0] == "clicks_#_#_#.tsv");
  }
}

TEST_CASE("derived features") {
  SUBCASE("worked example") {
    BasicFeatures b;
    b.input_card = 100;
    b.output_card = 10;
    b.base_card = 100;
    b.avg_row_len = 8;
    b.partitions = 4;
    FeatureVector fv = derived_features(b);
    CHECK(fv.values[static_cast<std::size_t>(feature_index("I_per_P"))] == doctest::Approx(25.0));
    CHECK(fv.values[static_cast<std::size_t>(feature_index("C_per_P"))] == doctest::Approx(2.5));
    CHECK(fv.values[static_cast<std::size_t>(feature_index("sqrt_I"))] == doctest::Approx(10.0));
    CHECK(fv.values[static_cast<std::size_t>(feature_index("IL_per_P"))] == doctest::Approx(200.0));
    CHECK(fv.values[static_cast<std::size_t>(feature_index("CL_per_P"))] == doctest::Approx(20.0));
  }

  SUBCASE("zero input cardinality stays finite") {
    BasicFeatures b;
    b.input_card = 0;
    b.base_card = 0;
    b.output_card = 0;
    b.avg_row_len = 1;
    b.partitions = 1;
    FeatureVector fv = derived_features(b);
    for (double v : fv.values) CHECK(std::isfinite(v));
    CHECK(fv.values[static_cast<std::size_t>(feature_index("sqrt_I"))] == 0.0);
    CHECK(fv.values[static_cast<std::size_t>(feature_index("I_per_P"))] == 0.0);
  }

  SUBCASE("every numeric column matches independent recomputation") {
    Rng rng(99);
    for (int trial = 0; trial < 200; ++trial) {
      BasicFeatures b;
      b.input_card = rng.uniform(0, 1e9);
      b.base_card = rng.uniform(0, 1e9);
      b.output_card = rng.uniform(0, 1e9);
      b.avg_row_len = rng.uniform(1, 1e4);
      b.partitions = static_cast<int>(rng.uniform_int(1, 3000));
      FeatureVector fv = derived_features(b);
      REQUIRE(static_cast<int>(fv.values.size()) == kFeatureDim);
      std::vector<double> ref = reference_numerics(b);
      for (int j = 0; j < kNumericFeatureCount; ++j) {
        CHECK(fv.values[static_cast<std::size_t>(j)] ==
              doctest::Approx(ref[static_cast<std::size_t>(j)]).epsilon(1e-12));
      }
    }
  }

  SUBCASE("per-partition numerators match their columns") {
    BasicFeatures b;
    b.input_card = 12345;
    b.base_card = 23456;
    b.output_card = 3456;
    b.avg_row_len = 77;
    b.partitions = 13;
    FeatureVector fv = derived_features(b);
    auto nums = per_partition_numerators(b);
    for (int j = 0; j < kPerPartitionCount; ++j) {
      CHECK(nums[static_cast<std::size_t>(j)] / 13.0 ==
            doctest::Approx(fv.values[static_cast<std::size_t>(kPerPartitionFirst + j)])
                .epsilon(1e-12));
    }
  }

  SUBCASE("monotone in input cardinality") {
    BasicFeatures lo, hi;
    lo.input_card = 1000;
    hi.input_card = 2000;
    lo.base_card = hi.base_card = 500;
    lo.output_card = hi.output_card = 100;
    lo.avg_row_len = hi.avg_row_len = 64;
    lo.partitions = hi.partitions = 4;
    FeatureVector a = derived_features(lo), b = derived_features(hi);
    for (const char* name : {"I", "sqrt_I", "L_I", "I_per_P", "IL_per_P"}) {
      int j = feature_index(name);
      CHECK(a.values[static_cast<std::size_t>(j)] < b.values[static_cast<std::size_t>(j)]);
    }
  }

  SUBCASE("hashed buckets are one-hot per template and param") {
    BasicFeatures b;
    b.input_card = 10;
    b.base_card = 10;
    b.output_card = 10;
    b.avg_row_len = 10;
    b.partitions = 1;
    b.input_templates = {"x_#.tsv"};
    b.params = {"pred=a"};
    FeatureVector fv = derived_features(b);
    double in_sum = 0.0, pm_sum = 0.0;
    for (int j = 0; j < kInputBuckets; ++j)
      in_sum += fv.values[static_cast<std::size_t>(kNumericFeatureCount + j)];
    for (int j = 0; j < kParamBuckets; ++j)
      pm_sum += fv.values[static_cast<std::size_t>(kNumericFeatureCount + kInputBuckets + j)];
    CHECK(in_sum == 1.0);
    CHECK(pm_sum == 1.0);
  }
}

TEST_CASE("context features") {
  SUBCASE("leaf") {
    auto n = leaf(10, "t.tsv");
    ContextFeatures c = context_features(*n);
    CHECK(c.logical_count == 1.0);
    CHECK(c.depth == 1.0);
  }

  SUBCASE("chain of four") {
    auto plan = unary(PhysicalKind::OutputExec, 1.0,
                      unary(PhysicalKind::ProjectExec, 5.0,
                            unary(PhysicalKind::FilterExec, 10.0, leaf(100, "t.tsv"))));
    ContextFeatures c = context_features(*plan);
    CHECK(c.logical_count == 4.0);
    CHECK(c.depth == 4.0);
  }

  SUBCASE("balanced seven-operator join tree") {
    auto half = [](const char* a, const char* b) {
      return binary(PhysicalKind::HashJoin, 10.0, leaf(100, a), leaf(100, b));
    };
    auto root = binary(PhysicalKind::MergeJoin, 5.0, half("a.tsv", "b.tsv"),
                       half("c.tsv", "d.tsv"));
    ContextFeatures c = context_features(*root);
    CHECK(c.logical_count == 7.0);
    CHECK(c.depth == 3.0);
  }

  SUBCASE("exchange nodes are transparent") {
    auto plain = unary(PhysicalKind::FilterExec, 10.0, leaf(100, "t.tsv"));
    auto shuffled = unary(PhysicalKind::FilterExec, 10.0,
                          unary(PhysicalKind::Exchange, 100.0, leaf(100, "t.tsv")));
    ContextFeatures a = context_features(*plain);
    ContextFeatures b = context_features(*shuffled);
    CHECK(a.logical_count == b.logical_count);
    CHECK(a.depth == b.depth);

    // ...but an Exchange asked about directly still counts itself.
    ContextFeatures own = context_features(*shuffled->children[0]);
    CHECK(own.logical_count == 2.0);
  }
}

TEST_CASE("meta features") {
  BasicFeatures b;
  b.input_card = 100;
  b.base_card = 200;
  b.output_card = 40;
  b.avg_row_len = 8;
  b.partitions = 4;

  SUBCASE("all predictions present") {
    MetaFeatures m = meta_features(10.0, 12.0, 11.0, 20.0, b);
    CHECK(m.pred_subgraph == 10.0);
    CHECK(m.pred_approx == 12.0);
    CHECK(m.pred_input == 11.0);
    CHECK(m.pred_operator == 20.0);
    CHECK(m.has_subgraph);
    CHECK(m.has_approx);
    CHECK(m.has_input);
  }

  SUBCASE("missing predictions are imputed from the operator model") {
    MetaFeatures m = meta_features(std::nullopt, std::nullopt, std::nullopt, 20.0, b);
    CHECK(m.pred_subgraph == 20.0);
    CHECK(m.pred_approx == 20.0);
    CHECK(m.pred_input == 20.0);
    CHECK_FALSE(m.has_subgraph);
    CHECK_FALSE(m.has_approx);
    CHECK_FALSE(m.has_input);
  }

  SUBCASE("vector layout matches the hand computation") {
    MetaFeatures m = meta_features(10.0, 12.0, 11.0, 20.0, b);
    std::vector<double> expected = {10, 12, 11, 20, 1, 1, 1, 1,
                                    100, 200, 40, 25, 50, 10, 4};
    std::vector<double> got = m.to_vector();
    REQUIRE(got.size() == MetaFeatures::names().size());
    REQUIRE(got.size() == expected.size());
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expected[i]);
  }

  SUBCASE("non-finite operator prediction is rejected") {
    CHECK_THROWS_AS(
        meta_features(std::nullopt, std::nullopt, std::nullopt,
                      std::numeric_limits<double>::quiet_NaN(), b),
        std::runtime_error);
  }
}

TEST_CASE("feature csv round-trip is bit exact") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    BasicFeatures b;
    b.input_card = rng.uniform(0, 1e8);
    b.base_card = rng.uniform(0, 1e8);
    b.output_card = rng.uniform(0, 1e8);
    b.avg_row_len = rng.uniform(1, 500);
    b.partitions = static_cast<int>(rng.uniform_int(1, 512));
    b.input_templates = {"t_#.tsv"};
    FeatureVector fv = derived_features(b);
    FeatureVector back = from_csv_row(to_csv_row(fv));
    REQUIRE(back.values.size() == fv.values.size());
    for (std::size_t i = 0; i < fv.values.size(); ++i) CHECK(back.values[i] == fv.values[i]);
  }
}

TEST_CASE("extraction succeeds on every generated node") {
  WorkloadConfig cfg;
  cfg.n_templates = 6;
  cfg.instances_per_template = 2;
  cfg.days = 1;
  cfg.seed = 3;
  Workload wl = gen_workload(cfg);
  int nodes = 0;
  for (const LoggedPlan& lp : wl.plans) {
    std::vector<const PlanNode*> todo{lp.root.get()};
    while (!todo.empty()) {
      const PlanNode* n = todo.back();
      todo.pop_back();
      ++nodes;
      FeatureVector fv = derived_features(basic_features(*n));
      for (double v : fv.values) REQUIRE(std::isfinite(v));
      context_features(*n);
      for (const auto& c : n->children) todo.push_back(c.get());
    }
  }
  CHECK(nodes > 0);
}
