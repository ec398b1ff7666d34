#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "vlm3d/commands.hpp"
#include "vlm3d/fixtures.hpp"

using namespace vlm3d;
namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

std::string temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

int count_lines(const std::string& path) {
  std::ifstream is(path);
  int n = 0;
  std::string line;
  while (std::getline(is, line))
    if (!line.empty()) ++n;
  return n;
}

}  // namespace

TEST_CASE("missing config file fails cleanly with no outputs") {
  std::ostringstream out, err;
  const std::string missing = temp_dir("vlm3d_cli_missing") + "/nope.json";
  const std::string out_dir = temp_dir("vlm3d_cli_missing_out") + "/run";
  const int code = cmd_distill(missing, {}, out_dir, std::nullopt, out, err);
  CHECK(code == kExitConfigError);
  CHECK_FALSE(fs::exists(out_dir));
  CHECK(err.str().find("config error") != std::string::npos);
}

TEST_CASE("config validation reports the offending field path") {
  const std::string dir = temp_dir("vlm3d_cli_badfield");
  write_fixture("determinism", dir, 1);
  std::ostringstream out, err;
  const int code =
      cmd_distill(dir + "/config.json", {"distill.learning_rate=-2"},
                  dir + "/run", std::nullopt, out, err);
  CHECK(code == kExitConfigError);
  CHECK(err.str().find("distill") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("smoke run writes the audited artifacts and one row per step") {
  const std::string dir = temp_dir("vlm3d_cli_smoke");
  write_fixture("determinism", dir, 3);
  const std::string run_dir = dir + "/run";
  std::ostringstream out, err;
  const int code = cmd_distill(
      dir + "/config.json",
      {"distill.total_steps=20", "distill.anneal.anneal_steps=15",
       "distill.anneal.hold_steps=5"},
      run_dir, std::nullopt, out, err);
  INFO(err.str());
  CHECK(code == kExitOk);
  CHECK(audit_run_dir(run_dir).empty());
  CHECK(count_lines(run_dir + "/metrics.jsonl") == 20);
  CHECK(out.str().find("distill done") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("dotted-path overrides reach the metrics log") {
  const std::string dir = temp_dir("vlm3d_cli_override");
  write_fixture("determinism", dir, 4);
  const std::string run_dir = dir + "/run";
  std::ostringstream out, err;
  const int code = cmd_distill(
      dir + "/config.json",
      {"distill.total_steps=3", "distill.anneal.anneal_steps=2",
       "distill.anneal.hold_steps=1", "distill.anneal.lambda_start=500"},
      run_dir, std::nullopt, out, err);
  INFO(err.str());
  REQUIRE(code == kExitOk);
  std::ifstream is(run_dir + "/metrics.jsonl");
  std::string first;
  std::getline(is, first);
  const json row = json::parse(first);
  CHECK(row.at("step").get<int>() == 0);
  CHECK(row.at("lambda").get<double>() == 500.0);

  // The snapshot records the effective (overridden) configuration.
  const json snap = json::parse(std::ifstream(run_dir + "/config.json"));
  CHECK(snap.at("distill").at("anneal").at("lambda_start").get<double>() ==
        500.0);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck command prints per-op errors and is repeatable") {
  std::ostringstream out1, out2, err;
  const int c1 = cmd_gradcheck("preprocess", 11, out1, err);
  const int c2 = cmd_gradcheck("preprocess", 11, out2, err);
  CHECK(c1 == kExitOk);
  CHECK(out1.str() == out2.str());
  CHECK(out1.str().find("preprocess.apply_vjp") != std::string::npos);
  CHECK(out1.str().find("PASS") != std::string::npos);
}

TEST_CASE("gradcheck rejects unknown selectors") {
  std::ostringstream out, err;
  const int code = cmd_gradcheck("bogus", 0, out, err);
  CHECK(code == kExitConfigError);
  CHECK(err.str().find("usage error") != std::string::npos);
}

TEST_CASE("arena command rates declared methods with empty records") {
  const std::string dir = temp_dir("vlm3d_cli_arena");
  const std::string records = dir + "/records.jsonl";
  std::ofstream(records).close();
  const std::string csv = dir + "/ratings.csv";
  std::ostringstream out, err;
  const int code = cmd_arena(records, "elo", "base", 32.0, csv,
                             {"base", "new"}, out, err);
  INFO(err.str());
  CHECK(code == kExitOk);
  std::ifstream is(csv);
  std::string content((std::istreambuf_iterator<char>(is)), {});
  CHECK(content.find("overall,base,1000.000000") != std::string::npos);
  CHECK(content.find("overall,new,1000.000000") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("arena command reproduces the 3-1 rating gap") {
  const std::string dir = temp_dir("vlm3d_cli_arena31");
  const std::string records = dir + "/records.jsonl";
  {
    std::ofstream os(records);
    for (int i = 0; i < 3; ++i)
      os << R"({"method_a":"new","method_b":"base","metric":"overall","outcome":"a-wins"})"
         << "\n";
    os << R"({"method_a":"new","method_b":"base","metric":"overall","outcome":"b-wins"})"
       << "\n";
  }
  const std::string csv = dir + "/ratings.csv";
  std::ostringstream out, err;
  const int code = cmd_arena(records, "bt", "base", 32.0, csv, {}, out, err);
  INFO(err.str());
  CHECK(code == kExitOk);
  // Gap is 400*log10(3) = 190.85; the winner tops the printed table.
  CHECK(out.str().find("new,1190.8") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("arena command cites the malformed line") {
  const std::string dir = temp_dir("vlm3d_cli_arena_bad");
  const std::string records = dir + "/records.jsonl";
  {
    std::ofstream os(records);
    for (int i = 0; i < 6; ++i)
      os << R"({"method_a":"a","method_b":"b","metric":"m","outcome":"a-wins"})"
         << "\n";
    os << "oops\n";
  }
  std::ostringstream out, err;
  const int code =
      cmd_arena(records, "elo", "a", 32.0, dir + "/r.csv", {}, out, err);
  CHECK(code == kExitConfigError);
  CHECK(err.str().find("line 7") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("ablate rejects unknown axes") {
  std::ostringstream out, err;
  const int code = cmd_ablate("does-not-matter.json", "typo", {}, "",
                              std::nullopt, out, err);
  CHECK(code == kExitConfigError);
  CHECK(err.str().find("usage error") != std::string::npos);
}

TEST_CASE("ablate runs base and variant and writes the comparison") {
  const std::string dir = temp_dir("vlm3d_cli_ablate");
  write_fixture("determinism", dir, 5);
  const std::string run_dir = dir + "/ablate";
  std::ostringstream out, err;
  const int code = cmd_ablate(
      dir + "/config.json", "single-view",
      {"distill.total_steps=6", "distill.anneal.anneal_steps=4",
       "distill.anneal.hold_steps=2"},
      run_dir, std::nullopt, out, err);
  INFO(err.str());
  REQUIRE(code == kExitOk);
  CHECK(fs::exists(run_dir + "/base/metrics.jsonl"));
  CHECK(fs::exists(run_dir + "/ablated/metrics.jsonl"));
  const json cmp =
      json::parse(std::ifstream(run_dir + "/ablate_comparison.json"));
  CHECK(cmp.at("axis") == "single-view");
  CHECK(cmp.at("base").contains("geometry_V"));
  CHECK(cmp.at("ablated").contains("geometry_V"));
  fs::remove_all(dir);
}

TEST_CASE("geometry-query ablation requires a geometry criterion") {
  const std::string dir = temp_dir("vlm3d_cli_ablate_geo");
  write_fixture("determinism", dir, 6);
  // Strip the geometry criterion from the fixture config.
  const std::string cfg_path = dir + "/config.json";
  json doc = json::parse(std::ifstream(cfg_path));
  auto& criteria = doc["prompt"]["criteria"];
  json kept = json::array();
  for (const auto& c : criteria)
    if (c.at("kind") != "geometry-consistency") kept.push_back(c);
  doc["prompt"]["criteria"] = kept;
  std::ofstream(cfg_path) << doc.dump(2);

  std::ostringstream out, err;
  const int code = cmd_ablate(cfg_path, "geometry-query", {}, dir + "/run",
                              std::nullopt, out, err);
  CHECK(code == kExitConfigError);
  fs::remove_all(dir);
}

TEST_CASE("configs round-trip through serialization") {
  const std::string dir = temp_dir("vlm3d_cli_roundtrip");
  write_fixture("determinism", dir, 7);
  const RunConfig first = load_run_config(dir + "/config.json");
  const json serialized = run_config_to_json(first);
  const RunConfig second = parse_run_config(serialized, dir);
  CHECK(run_config_to_json(second) == serialized);
  CHECK(second.seed == first.seed);
  CHECK(second.distill.total_steps == first.distill.total_steps);
  CHECK(second.context.prompt.criteria.size() ==
        first.context.prompt.criteria.size());
  fs::remove_all(dir);
}

TEST_CASE("fixture command validates its kind") {
  std::ostringstream out, err;
  CHECK(cmd_fixture("not-a-kind", temp_dir("vlm3d_cli_fx"), 0, out, err) ==
        kExitConfigError);
}

TEST_CASE("run directory audit flags missing artifacts") {
  const std::string dir = temp_dir("vlm3d_cli_audit");
  CHECK(audit_run_dir(dir).size() == 4);
  std::ofstream(dir + "/config.json") << "{}";
  std::ofstream(dir + "/metrics.jsonl") << "";
  const auto missing = audit_run_dir(dir);
  CHECK(missing.size() == 2);
  fs::remove_all(dir);
}
