#include <doctest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "costwise/features.hpp"
#include "costwise/plan.hpp"
#include "costwise/store.hpp"
#include "helpers.hpp"

using namespace costwise;
using namespace testutil;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Runs the installed binary with stdout/stderr captured to files.
RunResult run_cli(const std::string& args, const std::string& scratch) {
  std::string out_path = scratch + "/stdout.txt";
  std::string err_path = scratch + "/stderr.txt";
  std::string cmd = std::string(COSTWISE_CLI_PATH) + " " + args + " > " + out_path + " 2> " +
                    err_path;
  int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out_path);
  r.err = slurp(err_path);
  return r;
}

std::string make_scratch() {
  std::string tmpl = (std::filesystem::temp_directory_path() / "costwise_cli_XXXXXX").string();
  std::vector<char> buf(tmpl.begin(), tmpl.end());
  buf.push_back('\0');
  char* got = mkdtemp(buf.data());
  REQUIRE(got != nullptr);
  return std::string(got);
}

long count_lines(const std::string& text) {
  return std::count(text.begin(), text.end(), '\n');
}

// A small logical plan document for store-backed optimization.
nlohmann::json logical_plan_doc() {
  return nlohmann::json{
      {"op", "Output"},
      {"stats", {{"I", 1000000.0}, {"B", 50000000.0}, {"C", 1000000.0}, {"L", 120.0}}},
      {"children",
       nlohmann::json::array(
           {{{"op", "Filter"},
             {"stats", {{"I", 50000000.0}, {"B", 50000000.0}, {"C", 1000000.0}, {"L", 120.0}}},
             {"params", nlohmann::json::array({"pred=active"})},
             {"children",
              nlohmann::json::array(
                  {{{"op", "Get"},
                    {"stats",
                     {{"I", 50000000.0}, {"B", 50000000.0}, {"C", 50000000.0}, {"L", 120.0}}},
                    {"inputs", nlohmann::json::array({"events_20190804_1.tsv"})},
                    {"children", nlohmann::json::array()}}})}}})}};
}

std::string gen_small(const std::string& scratch, const std::string& extra = "") {
  std::string dir = scratch + "/logs";
  std::filesystem::create_directory(dir);
  RunResult r = run_cli("gen --templates 6 --instances 6 --days 3 --noise 0.05 --seed 9 --out " +
                            dir + " " + extra,
                        scratch);
  REQUIRE(r.exit_code == 0);
  return dir;
}

}  // namespace

TEST_CASE("cli help and usage errors") {
  std::string scratch = make_scratch();
  CHECK(run_cli("--help", scratch).exit_code == 0);
  CHECK(run_cli("--help", scratch).out.find("costwise") != std::string::npos);
  CHECK(run_cli("", scratch).exit_code == 1);              // a subcommand is required
  CHECK(run_cli("gen --bogus 1", scratch).exit_code == 1);  // unknown flag
  CHECK(run_cli("optimize", scratch).exit_code == 1);       // --plan is required
  CHECK(run_cli("frobnicate", scratch).exit_code == 1);
}

TEST_CASE("cli gen") {
  std::string scratch = make_scratch();

  SUBCASE("writes one JSONL file per day") {
    std::string dir = gen_small(scratch);
    for (int d = 1; d <= 3; ++d) {
      std::string path = dir + "/day" + std::to_string(d) + ".jsonl";
      CHECK(std::filesystem::exists(path));
      CHECK(count_lines(slurp(path)) == 36);  // 6 templates x 6 instances
    }
    RunResult again = run_cli("gen --templates 6 --instances 6 --days 3 --noise 0.05 --seed 9 "
                              "--out " + scratch,
                              scratch);
    CHECK(again.out.find("total plans: 108") != std::string::npos);
  }

  SUBCASE("reruns and thread counts do not change the bytes") {
    std::string a = gen_small(scratch);
    std::string scratch_b = make_scratch();
    std::string b = gen_small(scratch_b);
    std::string scratch_c = make_scratch();
    std::string c = gen_small(scratch_c, "--jobs 4");
    for (int d = 1; d <= 3; ++d) {
      std::string name = "/day" + std::to_string(d) + ".jsonl";
      CHECK(slurp(a + name) == slurp(b + name));
      CHECK(slurp(a + name) == slurp(c + name));
    }
  }

  SUBCASE("ad-hoc share lands near the requested fraction") {
    std::string dir = scratch + "/mix";
    std::filesystem::create_directory(dir);
    RunResult r = run_cli(
        "gen --templates 5 --instances 4 --days 2 --adhoc 0.2 --seed 3 --out " + dir, scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("ad-hoc share: 0.2") != std::string::npos);
    CHECK(count_lines(slurp(dir + "/day1.jsonl")) == 25);  // 20 recurring + 5 one-offs
  }

  SUBCASE("bad arguments exit with a data error") {
    CHECK(run_cli("gen --templates 0 --out " + scratch, scratch).exit_code == 2);
    CHECK(run_cli("gen --adhoc 1.0 --out " + scratch, scratch).exit_code == 2);
  }
}

TEST_CASE("cli train") {
  std::string scratch = make_scratch();
  std::string dir = gen_small(scratch);

  SUBCASE("fits a store from two days and reports model counts") {
    RunResult r = run_cli("train --logs " + dir + "/day1.jsonl " + dir + "/day2.jsonl --out " +
                              scratch + "/store.json",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("operator models: 11") != std::string::npos);
    CHECK(r.out.find("combined models: 11") != std::string::npos);
    CHECK(r.out.find("subgraph models:") != std::string::npos);
    CHECK(std::filesystem::exists(scratch + "/store.json"));

    nlohmann::json j = nlohmann::json::parse(slurp(scratch + "/store.json"));
    CHECK(j["meta"]["train_days"] == nlohmann::json::array({1}));
    CHECK(j["meta"]["combined_day"] == 2);
  }

  SUBCASE("a single day is not enough") {
    RunResult r = run_cli("train --logs " + dir + "/day1.jsonl --out " + scratch + "/s.json",
                          scratch);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("two distinct days") != std::string::npos);
  }

  SUBCASE("training is byte-stable across reruns and thread counts") {
    std::string logs = dir + "/day1.jsonl " + dir + "/day2.jsonl";
    REQUIRE(run_cli("train --logs " + logs + " --out " + scratch + "/s1.json", scratch)
                .exit_code == 0);
    REQUIRE(run_cli("train --logs " + logs + " --out " + scratch + "/s2.json", scratch)
                .exit_code == 0);
    REQUIRE(run_cli("train --logs " + logs + " --jobs 4 --out " + scratch + "/s3.json", scratch)
                .exit_code == 0);
    std::string s1 = slurp(scratch + "/s1.json");
    CHECK(s1 == slurp(scratch + "/s2.json"));
    CHECK(s1 == slurp(scratch + "/s3.json"));
    CHECK(!s1.empty());
  }
}

TEST_CASE("cli eval") {
  std::string scratch = make_scratch();
  std::string dir = gen_small(scratch);
  REQUIRE(run_cli("train --logs " + dir + "/day1.jsonl " + dir + "/day2.jsonl --out " + scratch +
                      "/store.json",
                  scratch)
              .exit_code == 0);

  SUBCASE("prints the report to stdout") {
    RunResult r = run_cli("eval --store " + scratch + "/store.json --logs " + dir + "/day3.jsonl",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("family,day,pearson,median_err,p95_err,coverage\n", 0) == 0);
    CHECK(count_lines(r.out) == 7);
    CHECK(r.out.find("combined,3,") != std::string::npos);
  }

  SUBCASE("writes the report to a file") {
    RunResult r = run_cli("eval --store " + scratch + "/store.json --logs " + dir +
                              "/day3.jsonl --out " + scratch + "/report.csv",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("wrote") != std::string::npos);
    CHECK(slurp(scratch + "/report.csv").rfind("family,day,", 0) == 0);
  }

  SUBCASE("an empty log set is a data error") {
    std::string empty = scratch + "/empty.jsonl";
    std::ofstream(empty).close();
    RunResult r = run_cli("eval --store " + scratch + "/store.json --logs " + empty, scratch);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("empty test set") != std::string::npos);
  }

  SUBCASE("a missing store is a data error") {
    RunResult r = run_cli("eval --store " + scratch + "/nope.json --logs " + dir + "/day3.jsonl",
                          scratch);
    CHECK(r.exit_code == 2);
  }
}

TEST_CASE("cli optimize") {
  std::string scratch = make_scratch();

  SUBCASE("pre-costed plans use their tables") {
    std::string plan = std::string(COSTWISE_FIXTURE_DIR) + "/two_stage_plan.json";
    RunResult r = run_cli("optimize --plan " + plan, scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("stage 1: partitions=32 cost=120") != std::string::npos);
    CHECK(r.out.find("stage 2: partitions=16 cost=125") != std::string::npos);
    CHECK(r.out.find("predicted total: 245 ms") != std::string::npos);
    CHECK(r.out.find("mode: Sampling") != std::string::npos);

    RunResult w = run_cli("optimize --plan " + plan + " --out " + scratch + "/annotated.json",
                          scratch);
    REQUIRE(w.exit_code == 0);
    nlohmann::json doc = nlohmann::json::parse(slurp(scratch + "/annotated.json"));
    CHECK(doc["partitions"] == nlohmann::json::array({32, 16}));
    CHECK(doc["predicted_ms"].get<double>() == doctest::Approx(245.0));
  }

  SUBCASE("logical plans need a trained store") {
    std::string plan_path = scratch + "/logical.json";
    std::ofstream(plan_path) << logical_plan_doc().dump();
    RunResult r = run_cli("optimize --plan " + plan_path, scratch);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("missing store") != std::string::npos);
  }

  SUBCASE("optimizes a logical plan against a store") {
    std::string dir = gen_small(scratch);
    REQUIRE(run_cli("train --logs " + dir + "/day1.jsonl " + dir + "/day2.jsonl --out " +
                        scratch + "/store.json",
                    scratch)
                .exit_code == 0);
    std::string plan_path = scratch + "/logical.json";
    std::ofstream(plan_path) << logical_plan_doc().dump();

    RunResult r = run_cli("optimize --plan " + plan_path + " --store " + scratch + "/store.json",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("stage 1: partitions=") != std::string::npos);
    CHECK(r.out.find("mode: Analytical") != std::string::npos);

    RunResult s = run_cli("optimize --plan " + plan_path + " --store " + scratch +
                              "/store.json --mode sampling",
                          scratch);
    REQUIRE(s.exit_code == 0);
    CHECK(s.out.find("mode: Sampling") != std::string::npos);

    RunResult bad = run_cli("optimize --plan " + plan_path + " --store " + scratch +
                                "/store.json --mode telepathy",
                            scratch);
    CHECK(bad.exit_code == 2);
    CHECK(bad.err.find("unknown mode") != std::string::npos);
  }
}

TEST_CASE("cli bench-explore") {
  std::string scratch = make_scratch();

  // Hand-built store with a known interior-optimum cost surface, so the
  // benchmark's stage rejection loop always succeeds.
  CostModelStore store;
  {
    LinearCostModel m = constant_linear(10.0, kFeatureDim);
    m.stds.assign(kFeatureDim, 1.0);
    const auto& names = feature_names();
    auto it = std::find(names.begin(), names.end(), "IL_per_P");
    REQUIRE(it != names.end());
    m.weights[static_cast<std::size_t>(kRawPartitionIndex)] = 1e-3;
    m.weights[static_cast<std::size_t>(it - names.begin())] = 1e-10;
    m.intercept = 2.0;

    PlanNode probe;
    probe.op = PhysicalKind::FilterExec;
    auto sig = compute_signatures(probe).operator_sig;
    store.operator_models.emplace(sig, std::move(m));
    store.combined_models.emplace(sig, constant_gbt(10.0));
  }
  save_store(store, scratch + "/rigged.json");

  SUBCASE("prints the strategy table") {
    RunResult r = run_cli("bench-explore --store " + scratch + "/rigged.json --stages 3 --seed 5",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.rfind("strategy,samples,lookups,median_gap\n", 0) == 0);
    CHECK(count_lines(r.out) == 13);
    CHECK(r.out.find("geometric(s=2),19,") != std::string::npos);
    CHECK(r.out.find("analytical,0,") != std::string::npos);
  }

  SUBCASE("writes the table to a file") {
    RunResult r = run_cli("bench-explore --store " + scratch + "/rigged.json --stages 3 --seed 5"
                          " --out " + scratch + "/bench.csv",
                          scratch);
    REQUIRE(r.exit_code == 0);
    CHECK(r.out.find("wrote") != std::string::npos);
    CHECK(slurp(scratch + "/bench.csv").rfind("strategy,", 0) == 0);
  }
}
