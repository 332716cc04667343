#include <doctest.h>

#include <map>
#include <set>

#include "pipeline.hpp"
#include "support/oracles.hpp"

using namespace mcqd;
namespace fs = std::filesystem;

namespace {

// A scaled-down version of the bundled synthetic config.
json small_config() {
  return {{"seed", 11},
          {"filtering",
           {{"min_responses_per_question", 40},
            {"min_attempts_per_student", 10},
            {"estimation_min_responses", 20},
            {"overlap_rule", "hash_split"}}},
          {"lca", {{"k_min", 1}, {"k_max", 4}, {"restarts", 4}}},
          {"profiling", {{"min_support", 5}, {"per_side", 4}}},
          {"provider", {{"provider", "mock"}, {"mock_seed", 3}, {"mock_truth", "${out_dir}/truth.json"}, {"concurrency", 2}}},
          {"regression", {{"n_folds", 5}, {"inner_folds", 3}}},
          {"synth", {{"n_students", 500}, {"n_items", 90}, {"missing_rate", 0.2}}}};
}

PipelineConfig load(const oracle::TempDir& dir, const json& doc) {
  oracle::write_text(dir / "config.json", doc.dump(2));
  return load_pipeline_config(dir / "config.json");
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    out[fs::relative(e.path(), root).string()] = oracle::read_text(e.path());
  }
  return out;
}

}  // namespace

TEST_CASE("stage names parse and print") {
  for (const char* name : {"ingest", "fit-irt", "fit-lca", "profile", "personas", "simulate", "features", "evaluate",
                           "synth", "all"}) {
    const auto s = parse_stage(name);
    REQUIRE(s);
    CHECK(to_string(*s) == name);
  }
  CHECK_FALSE(parse_stage("fit_irt"));
}

TEST_CASE("pipeline config round-trips losslessly") {
  oracle::TempDir dir;
  const PipelineConfig c = load(dir, small_config());
  CHECK(c.seed == 11);
  CHECK(c.lca.seed == 11);
  CHECK(c.regression.seed == 11);
  CHECK(c.synth.seed == 11);
  CHECK(c.synth.n_items == 90);
  CHECK(c.partition.overlap_rule == OverlapRule::HashSplit);
  CHECK(c.base_dir == fs::absolute(dir.path()));
  const json once = to_json(c);
  const json twice = to_json(pipeline_config_from_json(once));
  CHECK(once == twice);
  CHECK(config_hash(c) == config_hash(pipeline_config_from_json(once)));
}

TEST_CASE("the bundled synthetic config loads and round-trips") {
  const PipelineConfig c = load_pipeline_config(fs::path(MCQD_SOURCE_DIR) / "data/synthetic/pipeline.json");
  CHECK(c.provider.provider == ProviderConfig::Kind::Mock);
  CHECK(to_json(pipeline_config_from_json(to_json(c))) == to_json(c));
}

TEST_CASE("config rejects unknown keys and invalid values") {
  CHECK_THROWS_AS(pipeline_config_from_json({{"sed", 1}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"lca", {{"restart", 3}}}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"lca", {{"k_min", 3}, {"k_max", 2}}}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"regression", {{"lambda_grid", {1.0, -1.0}}}}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"filtering", {{"overlap_rule", "both"}}}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"profiling", {{"personas", "robots"}}}}), UsageError);
  CHECK_THROWS_AS(pipeline_config_from_json({{"seed", "eleven"}}), UsageError);
  CHECK_THROWS_AS(load_pipeline_config("/nonexistent/config.json"), UsageError);
}

TEST_CASE("config hash ignores paths but not settings") {
  PipelineConfig a;
  PipelineConfig b = a;
  b.paths.interactions = "/elsewhere/x.jsonl";
  b.provider.mock_truth = "/elsewhere/truth.json";
  CHECK(config_hash(a) == config_hash(b));
  b.set_seed(99);
  CHECK(config_hash(a) != config_hash(b));
}

TEST_CASE("a second pipeline on the same directory is rejected until the first closes") {
  oracle::TempDir dir;
  {
    Pipeline first(PipelineConfig{}, dir / "out");
    CHECK(fs::exists(dir / "out" / ".lock"));
    CHECK_THROWS_AS(Pipeline(PipelineConfig{}, dir / "out"), UsageError);
  }
  CHECK_FALSE(fs::exists(dir / "out" / ".lock"));
  CHECK_NOTHROW(Pipeline(PipelineConfig{}, dir / "out"));
}

TEST_CASE("missing upstream artifacts name the stage to run") {
  oracle::TempDir dir;
  Pipeline p(PipelineConfig{}, dir / "out");
  auto message = [&](Stage s) {
    try {
      p.run(s);
    } catch (const UsageError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message(Stage::Evaluate).find("run `features` first") != std::string::npos);
  CHECK(message(Stage::Features).find("run `simulate` first") != std::string::npos);
  CHECK(message(Stage::FitIrt).find("run `ingest` first") != std::string::npos);
  CHECK(message(Stage::Personas).find("run `fit-lca` first") != std::string::npos);
  CHECK_THROWS_AS(p.run(Stage::Ingest), DataError);
}

TEST_CASE("resolve substitutes out_dir and anchors relative paths at the config directory") {
  oracle::TempDir dir;
  PipelineConfig c;
  c.base_dir = "/base";
  Pipeline p(c, dir / "out");
  CHECK(p.resolve("${out_dir}/a.json") == fs::absolute(dir / "out") / "a.json");
  CHECK(p.resolve("data/x.jsonl") == fs::path("/base/data/x.jsonl"));
  CHECK(p.resolve("/abs/y") == fs::path("/abs/y"));
}

TEST_CASE("end to end: staged runs equal `all`, artifacts carry manifest hashes, warm cache is free") {
  oracle::TempDir dir;
  const PipelineConfig config = load(dir, small_config());

  std::vector<std::string> log_all;
  {
    Pipeline p(config, dir / "all", [&](const std::string& m) { log_all.push_back(m); });
    p.run(Stage::Synth);
    p.run(Stage::All);
  }
  {
    Pipeline p(config, dir / "staged");
    for (Stage s : {Stage::Synth, Stage::Ingest, Stage::FitIrt, Stage::FitLca, Stage::Profile, Stage::Personas,
                    Stage::Simulate, Stage::Features, Stage::Evaluate}) {
      p.run(s);
    }
  }
  const auto a = snapshot(dir / "all");
  const auto b = snapshot(dir / "staged");
  REQUIRE(a.count("eval_report.json"));
  CHECK(a.size() == b.size());
  for (const auto& [name, content] : a) {
    INFO(name);
    REQUIRE(b.count(name));
    CHECK(b.at(name) == content);
  }

  // Every artifact embeds the hash recorded in its stage manifest.
  std::size_t checked = 0;
  for (const auto& [name, content] : a) {
    if (name.rfind("manifests/", 0) != 0) continue;
    const json m = json::parse(content);
    const std::string h = m.at("manifest_hash");
    CHECK(h.size() == 64);
    for (const auto& [out, sha] : m.at("outputs").items()) {
      INFO(out);
      CHECK(a.at(out).find(h) != std::string::npos);
      ++checked;
    }
  }
  CHECK(checked >= 17);

  const json report = json::parse(a.at("eval_report.json"));
  CHECK(report["folds"].size() == 5);
  CHECK(report["n_items"].get<std::size_t>() >= 10);
  CHECK(report["aggregate"]["r2_mean"].get<double>() > 0.5);

  // Rerun simulate: all answers come from the cache.
  const std::string before = a.at("simulation_matrices.jsonl");
  std::vector<std::string> log2;
  {
    Pipeline p(config, dir / "all", [&](const std::string& m) { log2.push_back(m); });
    p.run(Stage::Simulate);
  }
  bool zero_calls = false;
  for (const auto& line : log2) zero_calls = zero_calls || line.find(" 0 provider calls") != std::string::npos;
  CHECK(zero_calls);
  CHECK(oracle::read_text(dir / "all" / "simulation_matrices.jsonl") == before);
}

TEST_CASE("manual personas must match the selected number of classes") {
  oracle::TempDir dir;
  json doc = small_config();
  doc["profiling"]["personas"] = "manual";
  doc["paths"] = {{"manual_personas", "personas.json"}};
  oracle::write_text(dir / "personas.json",
                     R"([{"cluster": 1, "name": "Only One", "description": "A single persona."}])");
  const PipelineConfig config = load(dir, doc);
  Pipeline p(config, dir / "out");
  p.run(Stage::Synth);
  for (Stage s : {Stage::Ingest, Stage::FitLca}) p.run(s);
  CHECK_THROWS_AS(p.run(Stage::Personas), DataError);
}
