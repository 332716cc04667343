// Command-line front end. Talks to the library only through the C API.
#include <mcqd/mcqd.h>

#include <CLI11.hpp>
#include <cstdio>
#include <string>

namespace {

constexpr const char* kStages[][2] = {
    {"ingest", "Validate raw data, partition profiling/estimation sets"},
    {"fit-irt", "Fit the 2PL model on the estimation set"},
    {"fit-lca", "Latent class sweep, BIC selection and class assignment"},
    {"profile", "Deviation scores and persona synthesis requests"},
    {"personas", "Synthesize personas (or copy a manual set)"},
    {"simulate", "Persona-conditioned option probabilities per item"},
    {"features", "Item feature table with IRT difficulty targets"},
    {"evaluate", "Cross-validated ridge regression report"},
    {"synth", "Generate a synthetic persona world into the output directory"},
    {"all", "ingest through evaluate"},
};

int exit_code(mcqd_status s) {
  switch (s) {
    case MCQD_OK: return 0;
    case MCQD_ERR_USAGE: return 1;
    case MCQD_ERR_PROVIDER: return 3;
    default: return 2;
  }
}

void log_line(const char* msg, void*) { std::fprintf(stderr, "%s\n", msg); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mcqdiff: predict multiple-choice item difficulty from simulated learner personas"};
  app.set_version_flag("--version", std::string(mcqd_version()));
  app.require_subcommand(1);

  std::string config_path, out_dir = "out";
  std::uint64_t seed = 0;
  bool print_config = false;
  app.add_option("--config", config_path, "Pipeline config (JSON)")->check(CLI::ExistingFile);
  app.add_option("--out-dir", out_dir, "Output directory")->capture_default_str();
  auto* seed_opt = app.add_option("--seed", seed, "Override the config seed");
  app.add_flag("--print-config", print_config, "Print the effective config before running");

  for (const auto& [name, help] : kStages) app.add_subcommand(name, help)->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }
  const std::string stage = app.get_subcommands().front()->get_name();

  mcqd_pipeline_options opts{};
  opts.config_path = config_path.empty() ? nullptr : config_path.c_str();
  opts.out_dir = out_dir.c_str();
  opts.override_seed = seed_opt->count() > 0;
  opts.seed = seed;
  opts.log = log_line;

  mcqd_pipeline* p = nullptr;
  mcqd_status st = mcqd_pipeline_open(&opts, &p);
  if (st == MCQD_OK && print_config) {
    std::size_t needed = 0;
    mcqd_pipeline_config_json(p, nullptr, 0, &needed);
    std::string buf(needed + 1, '\0');
    mcqd_pipeline_config_json(p, buf.data(), buf.size(), &needed);
    std::printf("%s\n", buf.c_str());
  }
  if (st == MCQD_OK) st = mcqd_pipeline_run(p, stage.c_str());
  if (st != MCQD_OK) std::fprintf(stderr, "error: %s\n", mcqd_last_error());
  mcqd_pipeline_close(p);
  return exit_code(st);
}
