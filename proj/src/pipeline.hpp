#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "io.hpp"
#include "irt.hpp"
#include "lca.hpp"
#include "provider.hpp"
#include "regression.hpp"
#include "synthetic.hpp"

namespace mcqd {

enum class Stage { Ingest, FitIrt, FitLca, Profile, Personas, Simulate, Features, Evaluate, Synth, All };

std::optional<Stage> parse_stage(std::string_view name);
std::string_view to_string(Stage stage);

enum class PersonaSource { Llm, Manual };

// Every path may contain ${out_dir}; relative paths resolve against the
// directory of the config file.
struct PipelinePaths {
  std::string interactions = "${out_dir}/interactions.jsonl";
  std::string items = "${out_dir}/items.jsonl";
  std::string prompts_dir;  // empty: built-in templates
  std::string cache_dir = "${out_dir}/cache";
  std::string manual_personas;
  std::string baseline_features;  // optional external table for the LR baseline
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  PipelinePaths paths;
  PartitionConfig partition;  // its seed is taken from `seed`
  IrtFitConfig irt;
  std::size_t k_min = 1;
  std::size_t k_max = 10;
  LcaConfig lca;  // its seed is taken from `seed`
  std::size_t min_support = 5;
  std::size_t per_side = 5;
  PersonaSource personas = PersonaSource::Llm;
  ProviderConfig provider;
  CvConfig regression;        // its seed is taken from `seed`
  PersonaWorldConfig synth;   // its seed is taken from `seed`

  // Directory the config was read from; not serialized.
  std::filesystem::path base_dir = ".";

  void set_seed(std::uint64_t s);
};

json to_json(const PipelineConfig& config);
// Unknown keys are rejected so typos surface as usage errors.
PipelineConfig pipeline_config_from_json(const json& j, const std::filesystem::path& base_dir = ".");
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Hash of the canonical config with all path entries removed, so the same
// settings give the same hash wherever the files live.
std::string config_hash(const PipelineConfig& config);

using LogFn = std::function<void(const std::string&)>;

// Runs stages against one output directory. Stages talk only through files in
// that directory. The constructor takes the directory lock.
class Pipeline {
 public:
  Pipeline(PipelineConfig config, std::filesystem::path out_dir, LogFn log = {});
  ~Pipeline();
  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  void run(Stage stage);

  const std::filesystem::path& out_dir() const { return out_dir_; }
  const PipelineConfig& config() const { return config_; }
  std::filesystem::path resolve(const std::string& path) const;

 private:
  struct Manifest;

  void ingest();
  void fit_irt();
  void fit_lca();
  void profile();
  void personas();
  void simulate();
  void features();
  void evaluate();
  void synth();

  std::filesystem::path artifact(const std::string& name) const { return out_dir_ / name; }
  // Path of an upstream artifact; a missing file names the producing stage.
  std::filesystem::path require(const std::string& name, Stage producer) const;
  Manifest begin(Stage stage);
  const std::string& seal(Manifest& manifest) const;
  void finish(Manifest& manifest);
  void log(const std::string& msg) const;

  PipelineConfig config_;
  std::filesystem::path out_dir_;
  LogFn log_;
  std::filesystem::path lock_path_;
};

}  // namespace mcqd
