// costwise command-line driver: workload generation, model training,
// evaluation, plan optimization, and the exploration benchmark.
//
// Exit codes: 0 success, 1 usage error, 2 data error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "costwise/log.hpp"
#include "costwise/optimizer.hpp"
#include "costwise/store.hpp"
#include "costwise/workbench.hpp"

namespace {

using namespace costwise;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << text;
  if (!out) throw std::runtime_error("failed while writing " + path);
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("malformed JSON in " + path);
  return j;
}

struct GenArgs {
  WorkloadConfig cfg;
  std::string out_dir = ".";
};

int cmd_gen(const GenArgs& a) {
  std::filesystem::create_directories(a.out_dir);
  Workload wl = gen_workload(a.cfg);
  std::map<int, std::vector<LoggedPlan>> by_day;
  for (LoggedPlan& lp : wl.plans) by_day[lp.day].push_back(std::move(lp));

  long total = 0, adhoc = 0;
  for (auto& [day, plans] : by_day) {
    std::string path = a.out_dir + "/day" + std::to_string(day) + ".jsonl";
    write_jsonl(plans, path);
    long day_adhoc = 0;
    for (const LoggedPlan& lp : plans) day_adhoc += lp.adhoc ? 1 : 0;
    total += static_cast<long>(plans.size());
    adhoc += day_adhoc;
    std::printf("wrote %s: %zu plans (%ld ad-hoc)\n", path.c_str(), plans.size(), day_adhoc);
  }
  double share = total == 0 ? 0.0 : static_cast<double>(adhoc) / static_cast<double>(total);
  std::printf("total plans: %ld, ad-hoc share: %.4f\n", total, share);
  return 0;
}

struct TrainArgs {
  std::vector<std::string> logs;
  std::string out = "store.json";
  TrainConfig cfg;
};

int cmd_train(const TrainArgs& a) {
  auto t0 = std::chrono::steady_clock::now();

  std::map<int, std::vector<TrainingRow>> rows_by_day;
  for (const std::string& path : a.logs) {
    for (const LoggedPlan& lp : read_jsonl(path)) {
      auto rows = extract_training_rows(*lp.root, lp.job_id, lp.day);
      auto& bucket = rows_by_day[lp.day];
      bucket.insert(bucket.end(), std::make_move_iterator(rows.begin()),
                    std::make_move_iterator(rows.end()));
    }
  }
  if (rows_by_day.size() < 2) {
    throw std::runtime_error(
        "training needs at least two distinct days (individual models, then the combined "
        "ensembles on a later day)");
  }

  // Last day is held for the combined ensembles; everything earlier feeds the
  // per-signature models.
  int combined_day = rows_by_day.rbegin()->first;
  std::vector<TrainingRow> individual_rows;
  std::vector<int> individual_days;
  for (auto& [day, rows] : rows_by_day) {
    if (day == combined_day) continue;
    individual_days.push_back(day);
    individual_rows.insert(individual_rows.end(), std::make_move_iterator(rows.begin()),
                           std::make_move_iterator(rows.end()));
  }

  CostModelStore store = group_and_fit(individual_rows, a.cfg);
  store.meta.train_days = individual_days;
  fit_combined(store, rows_by_day[combined_day], a.cfg);
  store.meta.combined_day = combined_day;
  save_store(store, a.out);

  const StoreCounts& c = store.meta.counts;
  std::printf("subgraph models: %d\n", c.subgraph_models);
  std::printf("approx models: %d\n", c.approx_models);
  std::printf("op-input models: %d\n", c.input_models);
  std::printf("operator models: %d\n", c.operator_models);
  std::printf("combined models: %d\n", c.combined_models);
  std::printf("skipped small groups: %d\n", c.skipped_small_groups);

  auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - t0)
                .count();
  log_info("trained in " + std::to_string(ms) + " ms");
  return 0;
}

struct EvalArgs {
  std::string store_path;
  std::vector<std::string> logs;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  CostModelStore store = load_store(a.store_path);
  std::vector<LoggedPlan> test;
  for (const std::string& path : a.logs) {
    for (LoggedPlan& lp : read_jsonl(path)) test.push_back(std::move(lp));
  }
  EvalReport report = evaluate(store, test);
  std::string csv = report.to_csv();
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text(a.out, csv);
    std::printf("wrote %s (%zu rows)\n", a.out.c_str(), report.rows.size());
  }
  return 0;
}

struct OptimizeArgs {
  std::string store_path;
  std::string plan_path;
  std::string mode = "analytical";
  std::string out;
  SamplingConfig cfg;
};

bool has_cost_tables(const PlanNode& node) {
  if (!node.cost_table.empty()) return true;
  for (const auto& child : node.children) {
    if (has_cost_tables(*child)) return true;
  }
  return false;
}

int cmd_optimize(const OptimizeArgs& a) {
  auto doc = read_json_file(a.plan_path);
  std::unique_ptr<PlanNode> plan = build_plan(doc);

  OptimizedPlan result;
  if (plan->is_physical() && has_cost_tables(*plan)) {
    // Pre-costed physical plan: explore the encoded tables directly.
    result = optimize_tables(*plan);
  } else {
    auto mode = parse_mode(a.mode);
    if (!mode.has_value()) throw std::runtime_error("unknown mode '" + a.mode + "'");
    if (a.store_path.empty()) throw std::runtime_error("missing store (--store)");
    CostModelStore store = load_store(a.store_path);
    result = optimize(plan.get(), store, a.cfg, *mode);
  }

  for (const StageSelection& st : result.stages) {
    std::printf("stage %d: partitions=%d cost=%.6g%s\n", st.stage_index, st.partitions,
                st.stage_cost_ms, st.pinned ? " (pinned)" : "");
  }
  std::printf("predicted total: %.6g ms, lookups: %llu, mode: %s\n", result.predicted_cost_ms,
              static_cast<unsigned long long>(result.lookup_count),
              std::string(to_string(result.mode)).c_str());
  if (!a.out.empty()) {
    write_text(a.out, optimized_to_json(result).dump(2) + "\n");
    std::printf("wrote %s\n", a.out.c_str());
  }
  return 0;
}

struct BenchArgs {
  std::string store_path;
  int stages = 40;
  std::uint64_t seed = 0;
  std::string out;
  SamplingConfig cfg;
};

int cmd_bench(const BenchArgs& a) {
  CostModelStore store = load_store(a.store_path);
  std::vector<BenchRow> rows = bench_explore(store, a.stages, a.cfg, a.seed);
  std::string csv = bench_to_csv(rows);
  if (a.out.empty()) {
    std::fputs(csv.c_str(), stdout);
  } else {
    write_text(a.out, csv);
    std::printf("wrote %s (%zu strategies)\n", a.out.c_str(), rows.size());
  }
  return 0;
}

void add_sampling_flags(CLI::App* cmd, SamplingConfig& cfg) {
  cmd->add_option("--s", cfg.s, "geometric skipping coefficient");
  cmd->add_option("--k", cfg.k, "sample count for uniform/random strategies");
  cmd->add_option("--p-min", cfg.p_min, "minimum partition count");
  cmd->add_option("--p-max", cfg.p_max, "maximum partition count");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"costwise: learned cost models and partition tuning for staged query plans"};
  app.require_subcommand(1);

  GenArgs gen;
  CLI::App* cgen = app.add_subcommand("gen", "generate a synthetic workload as JSONL day files");
  cgen->add_option("--templates", gen.cfg.n_templates, "number of recurring job templates");
  cgen->add_option("--instances", gen.cfg.instances_per_template, "instances per template per day");
  cgen->add_option("--days", gen.cfg.days, "number of days");
  cgen->add_option("--adhoc", gen.cfg.adhoc_fraction, "ad-hoc share of all plans, in [0,1)");
  cgen->add_option("--growth", gen.cfg.input_growth, "daily input growth rate");
  cgen->add_option("--noise", gen.cfg.noise_cv, "lognormal latency noise sigma");
  cgen->add_flag("--hard-mode", gen.cfg.hard_mode, "add the non-linear oracle term");
  cgen->add_option("--p-max", gen.cfg.p_max, "maximum partition count");
  cgen->add_option("--seed", gen.cfg.seed, "RNG seed");
  cgen->add_option("--jobs", gen.cfg.jobs, "worker threads");
  cgen->add_option("--out", gen.out_dir, "output directory");

  TrainArgs train;
  // At desk scale the per-group log-target spread is well under 1, so the
  // library default alpha=1.0 would shrink every coefficient to zero. Keep a
  // light touch by default; the flag restores any strength.
  train.cfg.fit.alpha = 0.01;
  CLI::App* ctrain = app.add_subcommand("train", "fit cost models from day logs");
  ctrain->add_option("--logs", train.logs, "day JSONL files (two or more days)")
      ->required()
      ->expected(-1);
  ctrain->add_option("--out", train.out, "store output path");
  ctrain->add_option("--min-occurrences", train.cfg.min_occurrences,
                     "minimum rows per signature group");
  ctrain->add_option("--alpha", train.cfg.fit.alpha, "elastic net regularization strength");
  ctrain->add_option("--l1-ratio", train.cfg.fit.l1_ratio, "elastic net l1 mixing weight");
  ctrain->add_option("--seed", train.cfg.fit.seed, "RNG seed for the boosted ensembles");
  ctrain->add_option("--jobs", train.cfg.jobs, "worker threads");

  EvalArgs eval;
  CLI::App* ceval = app.add_subcommand("eval", "score a store against held-out day logs");
  ceval->add_option("--store", eval.store_path, "trained store JSON")->required();
  ceval->add_option("--logs", eval.logs, "test day JSONL files")->required()->expected(-1);
  ceval->add_option("--out", eval.out, "report CSV path (stdout when omitted)");

  OptimizeArgs opt;
  CLI::App* copt = app.add_subcommand("optimize", "pick physical operators and partition counts");
  copt->add_option("--store", opt.store_path, "trained store JSON");
  copt->add_option("--plan", opt.plan_path, "plan JSON document")->required();
  copt->add_option("--mode", opt.mode, "fixed | sampling | analytical");
  copt->add_option("--seed", opt.cfg.seed, "RNG seed for random sampling");
  add_sampling_flags(copt, opt.cfg);
  copt->add_option("--out", opt.out, "annotated plan output path");

  BenchArgs bench;
  CLI::App* cbench = app.add_subcommand("bench-explore",
                                        "compare partition exploration strategies on a store");
  cbench->add_option("--store", bench.store_path, "trained store JSON")->required();
  cbench->add_option("--stages", bench.stages, "number of random single-operator stages");
  cbench->add_option("--seed", bench.seed, "RNG seed");
  add_sampling_flags(cbench, bench.cfg);
  cbench->add_option("--out", bench.out, "CSV output path (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (cgen->parsed()) return cmd_gen(gen);
    if (ctrain->parsed()) return cmd_train(train);
    if (ceval->parsed()) return cmd_eval(eval);
    if (copt->parsed()) return cmd_optimize(opt);
    if (cbench->parsed()) return cmd_bench(bench);
  } catch (const std::exception& e) {
    costwise::log_error(e.what());
    return 2;
  }
  return 1;
}
