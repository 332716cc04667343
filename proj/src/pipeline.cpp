#include "pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <map>
#include <set>

#include "features.hpp"
#include "hashing.hpp"
#include "llm_client.hpp"
#include "profiling.hpp"
#include "simulation.hpp"

namespace mcqd {

namespace fs = std::filesystem;

namespace {

constexpr std::pair<Stage, std::string_view> kStageNames[] = {
    {Stage::Ingest, "ingest"},     {Stage::FitIrt, "fit-irt"},   {Stage::FitLca, "fit-lca"},
    {Stage::Profile, "profile"},   {Stage::Personas, "personas"}, {Stage::Simulate, "simulate"},
    {Stage::Features, "features"}, {Stage::Evaluate, "evaluate"}, {Stage::Synth, "synth"},
    {Stage::All, "all"},
};

constexpr Stage kAllChain[] = {Stage::Ingest,   Stage::FitIrt,   Stage::FitLca,   Stage::Profile,
                               Stage::Personas, Stage::Simulate, Stage::Features, Stage::Evaluate};

// Rejects keys that the defaults do not have.
void check_keys(const json& j, const json& defaults, const std::string& section) {
  if (!j.is_object()) throw UsageError("config: '" + section + "' must be an object");
  for (const auto& [key, _] : j.items()) {
    if (!defaults.contains(key)) throw UsageError("config: unknown key '" + key + "' in '" + section + "'");
  }
}

json section(const json& j, const char* name) { return j.contains(name) ? j.at(name) : json::object(); }

std::string jsonl_header(const std::string& hash) { return json{{kManifestKey, hash}}.dump() + "\n"; }

std::string pretty(json doc) { return doc.dump(2) + "\n"; }

DatasetPartition read_partition(const fs::path& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");
  try {
    DatasetPartition p;
    p.profiling_questions = doc.at("profiling_questions").get<std::vector<std::string>>();
    p.profiling_students = doc.at("profiling_students").get<std::vector<std::string>>();
    p.estimation_questions = doc.at("estimation_questions").get<std::vector<std::string>>();
    return p;
  } catch (const json::exception& e) {
    throw DataError(path.filename().string() + ": " + e.what());
  }
}

json read_json(const fs::path& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");
  return doc;
}

std::string prompts_digest(const PromptTemplates& t) {
  return sha256_hex(json{t.persona_system, t.persona_user, t.simulate_system, t.simulate_user, t.reprompt}.dump());
}

}  // namespace

std::optional<Stage> parse_stage(std::string_view name) {
  for (const auto& [s, n] : kStageNames) {
    if (n == name) return s;
  }
  return std::nullopt;
}

std::string_view to_string(Stage stage) {
  for (const auto& [s, n] : kStageNames) {
    if (s == stage) return n;
  }
  return "?";
}

void PipelineConfig::set_seed(std::uint64_t s) {
  seed = s;
  partition.seed = s;
  lca.seed = s;
  regression.seed = s;
  synth.seed = s;
}

json to_json(const PipelineConfig& c) {
  json synth = to_json(c.synth);
  synth.erase("seed");
  return {
      {"seed", c.seed},
      {"paths",
       {{"interactions", c.paths.interactions},
        {"items", c.paths.items},
        {"prompts_dir", c.paths.prompts_dir},
        {"cache_dir", c.paths.cache_dir},
        {"manual_personas", c.paths.manual_personas},
        {"baseline_features", c.paths.baseline_features}}},
      {"filtering",
       {{"min_responses_per_question", c.partition.profiling.min_responses_per_question},
        {"min_attempts_per_student", c.partition.profiling.min_attempts_per_student},
        {"estimation_min_responses", c.partition.estimation_min_responses},
        {"overlap_rule", c.partition.overlap_rule == OverlapRule::HashSplit ? "hash_split" : "profiling_first"}}},
      {"irt",
       {{"quadrature_nodes", c.irt.quadrature_nodes},
        {"tolerance", c.irt.tolerance},
        {"max_iterations", c.irt.max_iterations},
        {"degenerate_penalty", c.irt.degenerate_penalty},
        {"max_newton_steps", c.irt.max_newton_steps}}},
      {"lca",
       {{"k_min", c.k_min},
        {"k_max", c.k_max},
        {"restarts", c.lca.restarts},
        {"max_iterations", c.lca.max_iterations},
        {"tolerance", c.lca.tolerance},
        {"rho_floor", c.lca.rho_floor}}},
      {"profiling",
       {{"min_support", c.min_support},
        {"per_side", c.per_side},
        {"personas", c.personas == PersonaSource::Manual ? "manual" : "llm"}}},
      {"provider", to_json(c.provider)},
      {"regression",
       {{"lambda_grid", c.regression.grid}, {"n_folds", c.regression.n_folds}, {"inner_folds", c.regression.inner_folds}}},
      {"synth", std::move(synth)},
  };
}

PipelineConfig pipeline_config_from_json(const json& j, const fs::path& base_dir) {
  const PipelineConfig d;
  const json dj = to_json(d);
  check_keys(j, dj, "config");
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    const json paths = section(j, "paths");
    check_keys(paths, dj["paths"], "paths");
    c.paths.interactions = paths.value("interactions", d.paths.interactions);
    c.paths.items = paths.value("items", d.paths.items);
    c.paths.prompts_dir = paths.value("prompts_dir", d.paths.prompts_dir);
    c.paths.cache_dir = paths.value("cache_dir", d.paths.cache_dir);
    c.paths.manual_personas = paths.value("manual_personas", d.paths.manual_personas);
    c.paths.baseline_features = paths.value("baseline_features", d.paths.baseline_features);

    const json f = section(j, "filtering");
    check_keys(f, dj["filtering"], "filtering");
    c.partition.profiling.min_responses_per_question =
        f.value("min_responses_per_question", d.partition.profiling.min_responses_per_question);
    c.partition.profiling.min_attempts_per_student =
        f.value("min_attempts_per_student", d.partition.profiling.min_attempts_per_student);
    c.partition.estimation_min_responses = f.value("estimation_min_responses", d.partition.estimation_min_responses);
    const auto rule = f.value("overlap_rule", std::string("profiling_first"));
    if (rule == "hash_split") {
      c.partition.overlap_rule = OverlapRule::HashSplit;
    } else if (rule != "profiling_first") {
      throw UsageError("config: filtering.overlap_rule must be profiling_first or hash_split");
    }

    const json irt = section(j, "irt");
    check_keys(irt, dj["irt"], "irt");
    c.irt.quadrature_nodes = irt.value("quadrature_nodes", d.irt.quadrature_nodes);
    c.irt.tolerance = irt.value("tolerance", d.irt.tolerance);
    c.irt.max_iterations = irt.value("max_iterations", d.irt.max_iterations);
    c.irt.degenerate_penalty = irt.value("degenerate_penalty", d.irt.degenerate_penalty);
    c.irt.max_newton_steps = irt.value("max_newton_steps", d.irt.max_newton_steps);

    const json lca = section(j, "lca");
    check_keys(lca, dj["lca"], "lca");
    c.k_min = lca.value("k_min", d.k_min);
    c.k_max = lca.value("k_max", d.k_max);
    c.lca.restarts = lca.value("restarts", d.lca.restarts);
    c.lca.max_iterations = lca.value("max_iterations", d.lca.max_iterations);
    c.lca.tolerance = lca.value("tolerance", d.lca.tolerance);
    c.lca.rho_floor = lca.value("rho_floor", d.lca.rho_floor);

    const json prof = section(j, "profiling");
    check_keys(prof, dj["profiling"], "profiling");
    c.min_support = prof.value("min_support", d.min_support);
    c.per_side = prof.value("per_side", d.per_side);
    const auto source = prof.value("personas", std::string("llm"));
    if (source == "manual") {
      c.personas = PersonaSource::Manual;
    } else if (source != "llm") {
      throw UsageError("config: profiling.personas must be llm or manual");
    }

    const json prov = section(j, "provider");
    check_keys(prov, dj["provider"], "provider");
    c.provider = provider_config_from_json(prov);

    const json reg = section(j, "regression");
    check_keys(reg, dj["regression"], "regression");
    c.regression.grid = reg.value("lambda_grid", d.regression.grid);
    c.regression.n_folds = reg.value("n_folds", d.regression.n_folds);
    c.regression.inner_folds = reg.value("inner_folds", d.regression.inner_folds);

    const json syn = section(j, "synth");
    check_keys(syn, dj["synth"], "synth");
    c.synth = persona_world_config_from_json(syn);

    c.set_seed(j.value("seed", d.seed));
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }

  if (c.k_min < 1 || c.k_max < c.k_min) throw UsageError("config: need 1 <= lca.k_min <= lca.k_max");
  if (c.lca.restarts < 1) throw UsageError("config: lca.restarts must be >= 1");
  if (c.per_side < 1) throw UsageError("config: profiling.per_side must be >= 1");
  if (c.min_support < 1) throw UsageError("config: profiling.min_support must be >= 1");
  if (c.regression.n_folds < 2 || c.regression.inner_folds < 2) throw UsageError("config: folds must be >= 2");
  if (c.regression.grid.empty()) throw UsageError("config: regression.lambda_grid is empty");
  for (double l : c.regression.grid) {
    if (!(l >= 0.0)) throw UsageError("config: lambda values must be >= 0");
  }
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("config file not found: " + path.string());
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw UsageError(path.string() + ": invalid JSON");
  return pipeline_config_from_json(doc, fs::absolute(path).parent_path());
}

std::string config_hash(const PipelineConfig& config) {
  json j = to_json(config);
  j.erase("paths");
  j["provider"].erase("mock_truth");
  return sha256_hex(j.dump());
}

// Inputs are fixed before any output is written, so the hash can be embedded
// in every artifact of the stage.
struct Pipeline::Manifest {
  Stage stage = Stage::Ingest;
  json inputs = json::object();
  json outputs = json::object();
  std::string hash;

  void input(const std::string& name, const fs::path& path) { inputs[name] = sha256_file(path); }
  void input_digest(const std::string& name, const std::string& digest) { inputs[name] = digest; }
};

Pipeline::Pipeline(PipelineConfig config, fs::path out_dir, LogFn log)
    : config_(std::move(config)), out_dir_(fs::absolute(std::move(out_dir))), log_(std::move(log)) {
  std::error_code ec;
  fs::create_directories(out_dir_, ec);
  if (ec) throw UsageError("cannot create output directory " + out_dir_.string() + ": " + ec.message());
  lock_path_ = out_dir_ / ".lock";
  const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
  if (fd < 0) {
    const int err = errno;
    lock_path_.clear();
    if (err == EEXIST) {
      throw UsageError("output directory is in use by another run (" + (out_dir_ / ".lock").string() +
                       " exists; remove it if no other run is active)");
    }
    throw UsageError("cannot create lock file in " + out_dir_.string() + ": " + std::strerror(err));
  }
  const std::string pid = std::to_string(::getpid()) + "\n";
  [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
  ::close(fd);
}

Pipeline::~Pipeline() {
  if (!lock_path_.empty()) {
    std::error_code ec;
    fs::remove(lock_path_, ec);
  }
}

fs::path Pipeline::resolve(const std::string& path) const {
  std::string p = path;
  static constexpr std::string_view kOut = "${out_dir}";
  for (auto pos = p.find(kOut); pos != std::string::npos; pos = p.find(kOut)) p.replace(pos, kOut.size(), out_dir_.string());
  fs::path out(p);
  if (out.is_relative()) out = config_.base_dir / out;
  return out.lexically_normal();
}

fs::path Pipeline::require(const std::string& name, Stage producer) const {
  const fs::path p = artifact(name);
  if (!fs::exists(p)) {
    throw UsageError("missing " + name + " in " + out_dir_.string() + "; run `" + std::string(to_string(producer)) +
                     "` first");
  }
  return p;
}

void Pipeline::log(const std::string& msg) const {
  if (log_) log_(msg);
}

Pipeline::Manifest Pipeline::begin(Stage stage) {
  Manifest m;
  m.stage = stage;
  return m;
}

void Pipeline::finish(Manifest& m) {
  json doc = {{"stage", to_string(m.stage)},
              {"version", kVersion},
              {"seed", config_.seed},
              {"config_hash", config_hash(config_)},
              {"inputs", m.inputs},
              {"manifest_hash", m.hash},
              {"outputs", m.outputs}};
  write_file_atomic(out_dir_ / "manifests" / (std::string(to_string(m.stage)) + ".json"), pretty(std::move(doc)));
}

// The hash covers stage, version, seed, config and inputs.
const std::string& Pipeline::seal(Manifest& m) const {
  m.hash = sha256_hex(json{{"stage", to_string(m.stage)},
                           {"version", kVersion},
                           {"seed", config_.seed},
                           {"config_hash", config_hash(config_)},
                           {"inputs", m.inputs}}
                          .dump());
  return m.hash;
}

void Pipeline::run(Stage stage) {
  fs::create_directories(out_dir_ / "manifests");
  switch (stage) {
    case Stage::Ingest: return ingest();
    case Stage::FitIrt: return fit_irt();
    case Stage::FitLca: return fit_lca();
    case Stage::Profile: return profile();
    case Stage::Personas: return personas();
    case Stage::Simulate: return simulate();
    case Stage::Features: return features();
    case Stage::Evaluate: return evaluate();
    case Stage::Synth: return synth();
    case Stage::All:
      for (Stage s : kAllChain) run(s);
      return;
  }
}

void Pipeline::ingest() {
  Manifest m = begin(Stage::Ingest);
  const fs::path rec_path = resolve(config_.paths.interactions);
  const fs::path item_path = resolve(config_.paths.items);
  for (const auto& p : {rec_path, item_path}) {
    if (!fs::exists(p)) {
      throw DataError("input file not found: " + p.string() +
                      " (set paths.interactions / paths.items, or run `synth` for a synthetic world)");
    }
  }
  m.input("interactions", rec_path);
  m.input("items", item_path);
  IngestResult r = mcqd::ingest(rec_path, item_path);
  PartitionConfig pc = config_.partition;
  const DatasetPartition part = partition(r.records, pc);
  const std::string& h = seal(m);

  json pdoc = {{kManifestKey, h},
               {"overlap_rule", pc.overlap_rule == OverlapRule::HashSplit ? "hash_split" : "profiling_first"},
               {"n_records", r.records.size()},
               {"dropped_image_only", r.dropped_image_only},
               {"profiling_questions", part.profiling_questions},
               {"profiling_students", part.profiling_students},
               {"estimation_questions", part.estimation_questions}};
  write_file_atomic(artifact("partition.json"), pretty(std::move(pdoc)));
  write_file_atomic(artifact("interactions.clean.jsonl"), jsonl_header(h) + serialize_interactions(r.records));
  write_file_atomic(artifact("items.clean.jsonl"), jsonl_header(h) + serialize_items(r.items));
  for (const char* name : {"partition.json", "interactions.clean.jsonl", "items.clean.jsonl"}) {
    m.outputs[name] = sha256_file(artifact(name));
  }
  finish(m);
  log("ingest: " + std::to_string(r.records.size()) + " records (" + std::to_string(r.dropped_image_only) +
      " on image-only items dropped); profiling " + std::to_string(part.profiling_questions.size()) + " questions x " +
      std::to_string(part.profiling_students.size()) + " students, estimation " +
      std::to_string(part.estimation_questions.size()) + " questions");
}

void Pipeline::fit_irt() {
  Manifest m = begin(Stage::FitIrt);
  const fs::path part_path = require("partition.json", Stage::Ingest);
  const fs::path rec_path = require("interactions.clean.jsonl", Stage::Ingest);
  m.input("partition", part_path);
  m.input("interactions", rec_path);
  const DatasetPartition part = read_partition(part_path);
  const auto records = read_interactions(rec_path);
  const auto est = select_records(records, part.estimation_questions);
  const IrtFit fit = fit_2pl(est, config_.irt);
  const std::string& h = seal(m);

  json params = to_json(fit.params);
  params[kManifestKey] = h;
  json report = to_json(fit.report);
  report[kManifestKey] = h;
  write_file_atomic(artifact("irt_params.json"), pretty(std::move(params)));
  write_file_atomic(artifact("irt_report.json"), pretty(std::move(report)));
  for (const char* name : {"irt_params.json", "irt_report.json"}) m.outputs[name] = sha256_file(artifact(name));
  finish(m);
  log("fit-irt: " + std::to_string(fit.params.item_count()) + " items, " + std::to_string(fit.params.student_count()) +
      " students, " + std::to_string(fit.report.n_iterations) + " EM iterations" +
      (fit.report.converged ? "" : " (not converged)"));
}

void Pipeline::fit_lca() {
  Manifest m = begin(Stage::FitLca);
  const fs::path part_path = require("partition.json", Stage::Ingest);
  const fs::path rec_path = require("interactions.clean.jsonl", Stage::Ingest);
  m.input("partition", part_path);
  m.input("interactions", rec_path);
  const DatasetPartition part = read_partition(part_path);
  const auto records = read_interactions(rec_path);
  const auto prof = select_records(records, part.profiling_questions, &part.profiling_students);
  const ResponseMatrix matrix = ResponseMatrix::from_records(prof);
  const std::size_t k_max = std::min(config_.k_max, matrix.students());
  if (k_max < config_.k_min) throw DataError("fit-lca: fewer profiling students than lca.k_min");
  const ModelSelection sel = sweep_k(matrix, config_.k_min, k_max, config_.lca);
  const ClassAssignment assignment = assign_classes(sel.best(), matrix);
  const LatentClassModel model = relabel(sel.best(), assignment.label_order);
  const std::string& h = seal(m);

  json mdoc = to_json(model, matrix.item_ids());
  mdoc[kManifestKey] = h;
  mdoc["selected_k"] = sel.best_k;
  write_file_atomic(artifact("model_selection.csv"), "# manifest_hash=" + h + "\n" + model_selection_csv(sel.curve));
  write_file_atomic(artifact("lca_model.json"), pretty(std::move(mdoc)));
  write_file_atomic(artifact("assignments.jsonl"), jsonl_header(h) + assignments_jsonl(assignment));
  for (const char* name : {"model_selection.csv", "lca_model.json", "assignments.jsonl"}) {
    m.outputs[name] = sha256_file(artifact(name));
  }
  finish(m);
  log("fit-lca: BIC selects k = " + std::to_string(sel.best_k) + " over k = " + std::to_string(config_.k_min) + ".." +
      std::to_string(k_max) + " (" + std::to_string(matrix.students()) + " students x " +
      std::to_string(matrix.items()) + " items)");
}

void Pipeline::profile() {
  Manifest m = begin(Stage::Profile);
  const fs::path part_path = require("partition.json", Stage::Ingest);
  const fs::path rec_path = require("interactions.clean.jsonl", Stage::Ingest);
  const fs::path item_path = require("items.clean.jsonl", Stage::Ingest);
  const fs::path assign_path = require("assignments.jsonl", Stage::FitLca);
  m.input("partition", part_path);
  m.input("interactions", rec_path);
  m.input("items", item_path);
  m.input("assignments", assign_path);
  const DatasetPartition part = read_partition(part_path);
  const auto records = read_interactions(rec_path);
  const ItemBank items = read_items(item_path);
  const ClassAssignment assignment = read_assignments(assign_path);
  const auto prof = select_records(records, part.profiling_questions, &part.profiling_students);
  const AccuracyMatrix acc = cluster_accuracies(prof, assignment, config_.min_support);
  const auto scores = deviation_scores(acc);
  const auto extremes = select_extremes(scores, assignment.k, config_.per_side);
  json requests = json::array();
  for (std::size_t c = 0; c < assignment.k; ++c) requests.push_back(to_json(build_persona_request(c, extremes[c], items, acc)));
  const std::string& h = seal(m);

  write_file_atomic(artifact("deviations.csv"), "# manifest_hash=" + h + "\n" + deviations_csv(scores));
  write_file_atomic(artifact("persona_requests.json"),
                    pretty({{kManifestKey, h}, {"k", assignment.k}, {"requests", std::move(requests)}}));
  for (const char* name : {"deviations.csv", "persona_requests.json"}) m.outputs[name] = sha256_file(artifact(name));
  finish(m);
  log("profile: " + std::to_string(scores.size() / std::max<std::size_t>(assignment.k, 1)) +
      " complete-case questions scored for " + std::to_string(assignment.k) + " clusters");
}

void Pipeline::personas() {
  Manifest m = begin(Stage::Personas);
  const fs::path assign_path = require("assignments.jsonl", Stage::FitLca);
  m.input("assignments", assign_path);
  const std::size_t k = read_assignments(assign_path).k;
  std::vector<PersonaProfile> result;
  std::vector<Exchange> exchanges;

  if (config_.personas == PersonaSource::Manual) {
    if (config_.paths.manual_personas.empty()) {
      throw UsageError("profiling.personas is manual but paths.manual_personas is not set");
    }
    const fs::path src = resolve(config_.paths.manual_personas);
    if (!fs::exists(src)) throw DataError("manual personas file not found: " + src.string());
    m.input("manual_personas", src);
    result = read_personas(src);
    if (result.size() != k) {
      throw DataError(src.filename().string() + ": " + std::to_string(result.size()) + " personas but the class model has k = " +
                      std::to_string(k));
    }
  } else {
    const fs::path req_path = require("persona_requests.json", Stage::Profile);
    m.input("persona_requests", req_path);
    const json doc = read_json(req_path);
    std::vector<PersonaSynthesisRequest> requests;
    for (const auto& r : doc.at("requests")) requests.push_back(persona_request_from_json(r));
    if (requests.size() != k) throw DataError("persona_requests.json does not match assignments.jsonl; rerun `profile`");

    ProviderConfig pc = config_.provider;
    if (!pc.mock_truth.empty()) {
      pc.mock_truth = resolve(pc.mock_truth).string();
      m.input("mock_truth", pc.mock_truth);
    }
    const auto prompts = config_.paths.prompts_dir.empty() ? PromptTemplates::defaults()
                                                           : PromptTemplates::load(resolve(config_.paths.prompts_dir));
    m.input_digest("prompts", prompts_digest(prompts));
    auto provider = make_provider(pc, config_.base_dir);
    LlmClient client(*provider, pc, prompts);
    for (const auto& req : requests) {
      Exchange ex;
      try {
        result.push_back(client.synthesize_persona(req, &ex));
      } catch (const ProviderError& e) {
        throw ProviderError("persona synthesis for cluster " + std::to_string(req.cluster + 1) + " failed: " + e.what());
      }
      ex.record["cluster"] = req.cluster + 1;
      exchanges.push_back(std::move(ex));
    }
  }
  const std::string& h = seal(m);

  json list = json::array();
  for (const auto& p : result) list.push_back(to_json(p));
  write_file_atomic(artifact("personas.json"), pretty({{kManifestKey, h}, {"personas", std::move(list)}}));
  m.outputs["personas.json"] = sha256_file(artifact("personas.json"));
  if (config_.personas == PersonaSource::Llm) {
    std::string raw = jsonl_header(h);
    for (const auto& ex : exchanges) raw += ex.record.dump() + "\n";
    write_file_atomic(artifact("personas_raw.jsonl"), raw);
    m.outputs["personas_raw.jsonl"] = sha256_file(artifact("personas_raw.jsonl"));
  }
  finish(m);
  std::string names;
  for (const auto& p : result) names += (names.empty() ? "" : ", ") + p.name;
  log("personas: " + std::to_string(result.size()) + " (" + names + ")");
}

void Pipeline::simulate() {
  Manifest m = begin(Stage::Simulate);
  const fs::path persona_path = require("personas.json", Stage::Personas);
  const fs::path part_path = require("partition.json", Stage::Ingest);
  const fs::path item_path = require("items.clean.jsonl", Stage::Ingest);
  m.input("personas", persona_path);
  m.input("partition", part_path);
  m.input("items", item_path);
  const auto personas = read_personas(persona_path);
  const DatasetPartition part = read_partition(part_path);
  const ItemBank bank = read_items(item_path);
  std::vector<Question> items;
  for (const auto& qid : part.estimation_questions) {
    const Question* q = bank.find(qid);
    if (!q) throw DataError("estimation question " + qid + " missing from items.clean.jsonl; rerun `ingest`");
    items.push_back(*q);
  }

  ProviderConfig pc = config_.provider;
  if (!pc.mock_truth.empty()) {
    pc.mock_truth = resolve(pc.mock_truth).string();
    m.input("mock_truth", pc.mock_truth);
  }
  const auto prompts = config_.paths.prompts_dir.empty() ? PromptTemplates::defaults()
                                                         : PromptTemplates::load(resolve(config_.paths.prompts_dir));
  m.input_digest("prompts", prompts_digest(prompts));
  const std::string& h = seal(m);

  auto provider = make_provider(pc, config_.base_dir);
  LlmClient client(*provider, pc, prompts);
  SimulationCache cache(resolve(config_.paths.cache_dir));
  const BatchReport report = batch_simulate(client, items, personas, &cache);

  const std::size_t k = personas.size();
  std::vector<SimulationMatrix> matrices;
  json failed = json::array();
  json dropped = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    std::vector<PersonaRow> rows;
    bool ok = true;
    for (std::size_t c = 0; c < k; ++c) {
      const SimulationResult& r = report.results[i * k + c];
      if (!r.probs) {
        failed.push_back({{"question_id", r.question_id}, {"cluster", r.cluster + 1}, {"error", r.error}});
        ok = false;
        continue;
      }
      try {
        rows.push_back({r.cluster, normalize_row(*r.probs)});
      } catch (const DataError& e) {
        failed.push_back({{"question_id", r.question_id}, {"cluster", r.cluster + 1}, {"error", e.what()}});
        ok = false;
      }
    }
    if (ok) {
      matrices.push_back(assemble_matrix(items[i].question_id, rows, k));
      validate_matrix(matrices.back(), k);
    } else {
      dropped.push_back(items[i].question_id);
    }
  }

  std::string raw = jsonl_header(h);
  for (const auto& ex : report.exchanges) raw += ex.record.dump() + "\n";
  write_file_atomic(artifact("simulation_matrices.jsonl"), jsonl_header(h) + simulation_matrices_jsonl(matrices));
  write_file_atomic(artifact("simulation_raw.jsonl"), raw);
  write_file_atomic(artifact("simulation_failures.json"), pretty({{kManifestKey, h},
                                                                  {"n_questions", items.size()},
                                                                  {"n_complete", matrices.size()},
                                                                  {"failed_pairs", failed},
                                                                  {"dropped_questions", dropped}}));
  for (const char* name : {"simulation_matrices.jsonl", "simulation_raw.jsonl", "simulation_failures.json"}) {
    m.outputs[name] = sha256_file(artifact(name));
  }
  finish(m);
  log("simulate: " + std::to_string(items.size()) + " questions x " + std::to_string(k) + " personas, " +
      std::to_string(report.provider_calls) + " provider calls, " + std::to_string(report.cache_hits) + " cache hits, " +
      std::to_string(failed.size()) + " failed pairs");
  if (!failed.empty()) {
    log("simulate: dropped " + std::to_string(dropped.size()) + " questions with failed pairs; see simulation_failures.json");
  }
  if (matrices.empty()) throw ProviderError("no question has a complete simulation matrix; see simulation_failures.json");
}

void Pipeline::features() {
  Manifest m = begin(Stage::Features);
  const fs::path mat_path = require("simulation_matrices.jsonl", Stage::Simulate);
  const fs::path item_path = require("items.clean.jsonl", Stage::Ingest);
  const fs::path irt_path = require("irt_params.json", Stage::FitIrt);
  const fs::path persona_path = require("personas.json", Stage::Personas);
  m.input("simulation_matrices", mat_path);
  m.input("items", item_path);
  m.input("irt_params", irt_path);
  m.input("personas", persona_path);
  const auto matrices = read_simulation_matrices(mat_path);
  const ItemBank bank = read_items(item_path);
  const IrtParameters irt = irt_parameters_from_json(read_json(irt_path));
  const std::size_t k = read_personas(persona_path).size();
  std::map<std::string, double> beta;
  for (std::size_t i = 0; i < irt.item_count(); ++i) beta[irt.item_ids[i]] = irt.beta[i];

  std::vector<ItemFeatureVector> rows;
  std::vector<double> targets;
  std::size_t skipped = 0;
  for (const auto& mat : matrices) {
    const Question* q = bank.find(mat.question_id);
    const auto b = beta.find(mat.question_id);
    if (!q || b == beta.end()) {
      ++skipped;
      continue;
    }
    validate_matrix(mat, k);
    rows.push_back(extract_features(mat, *q, k));
    targets.push_back(b->second);
  }
  if (rows.empty()) throw DataError("features: no simulated question has a fitted difficulty");
  const std::string& h = seal(m);
  write_file_atomic(artifact("features.csv"), features_csv(rows, targets, h));
  m.outputs["features.csv"] = sha256_file(artifact("features.csv"));
  finish(m);
  log("features: " + std::to_string(rows.size()) + " items x " + std::to_string(feature_names(k).size()) + " features" +
      (skipped ? " (" + std::to_string(skipped) + " without a difficulty skipped)" : ""));
}

void Pipeline::evaluate() {
  Manifest m = begin(Stage::Evaluate);
  const fs::path feat_path = require("features.csv", Stage::Features);
  m.input("features", feat_path);
  fs::path base_path;
  if (!config_.paths.baseline_features.empty()) {
    base_path = resolve(config_.paths.baseline_features);
    if (!fs::exists(base_path)) throw DataError("baseline feature table not found: " + base_path.string());
    m.input("baseline_features", base_path);
  }
  const FeatureTable table = read_feature_table(feat_path);
  const EvaluationReport report = cross_validate(table.x, table.numeric, table.y, config_.regression);
  std::optional<EvaluationReport> baseline;
  if (!base_path.empty()) {
    const FeatureTable bt = read_feature_table(base_path);
    baseline = lr_baseline(bt.x, bt.numeric, bt.y, config_.regression);
  }
  const std::string& h = seal(m);

  json doc = to_json(report);
  doc[kManifestKey] = h;
  doc["n_items"] = table.row_ids.size();
  doc["features"] = table.columns;
  write_file_atomic(artifact("eval_report.json"), pretty(std::move(doc)));
  m.outputs["eval_report.json"] = sha256_file(artifact("eval_report.json"));
  if (baseline) {
    json bdoc = to_json(*baseline);
    bdoc[kManifestKey] = h;
    write_file_atomic(artifact("baseline_report.json"), pretty(std::move(bdoc)));
    m.outputs["baseline_report.json"] = sha256_file(artifact("baseline_report.json"));
  }
  finish(m);
  log("evaluate: ridge MSE " + format_double(report.mse_mean) + " (sd " + format_double(report.mse_sd) + "), R2 " +
      format_double(report.r2_mean) + " (sd " + format_double(report.r2_sd) + ") over " + std::to_string(report.n_folds) +
      " folds");
  if (baseline) {
    log("evaluate: LR baseline MSE " + format_double(baseline->mse_mean) + ", R2 " + format_double(baseline->r2_mean));
  }
}

void Pipeline::synth() {
  Manifest m = begin(Stage::Synth);
  const std::string& h = seal(m);
  const PersonaWorld world = generate_persona_world(config_.synth);
  json truth = truth_json(world);
  truth[kManifestKey] = h;
  write_file_atomic(artifact("interactions.jsonl"), jsonl_header(h) + serialize_interactions(world.records));
  write_file_atomic(artifact("items.jsonl"), jsonl_header(h) + serialize_items(world.items));
  write_file_atomic(artifact("truth.json"), truth.dump() + "\n");
  for (const char* name : {"interactions.jsonl", "items.jsonl", "truth.json"}) m.outputs[name] = sha256_file(artifact(name));
  finish(m);
  log("synth: " + std::to_string(world.truth.items.student_count()) + " students, " +
      std::to_string(world.truth.items.item_count()) + " items, " + std::to_string(world.records.size()) + " records, " +
      std::to_string(world.truth.success.size()) + " classes");
}

}  // namespace mcqd
