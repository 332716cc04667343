#include <mcqd/mcqd.h>

#include <cstring>
#include <memory>
#include <string>

#include "pipeline.hpp"
#include "profiling.hpp"
#include "regression.hpp"
#include "simulation.hpp"

struct mcqd_pipeline {
  std::unique_ptr<mcqd::Pipeline> impl;
};

namespace {

thread_local std::string g_last_error;

template <class F>
mcqd_status guarded(F&& f) {
  try {
    g_last_error.clear();
    f();
    return MCQD_OK;
  } catch (const mcqd::UsageError& e) {
    g_last_error = e.what();
    return MCQD_ERR_USAGE;
  } catch (const mcqd::DataError& e) {
    g_last_error = e.what();
    return MCQD_ERR_DATA;
  } catch (const mcqd::ProviderError& e) {
    g_last_error = e.what();
    return MCQD_ERR_PROVIDER;
  } catch (const mcqd::NumericalError& e) {
    g_last_error = e.what();
    return MCQD_ERR_NUMERICAL;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal error: ") + e.what();
    return MCQD_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal error";
    return MCQD_ERR_INTERNAL;
  }
}

}  // namespace

extern "C" {

const char* mcqd_version(void) { return mcqd::kVersion; }

const char* mcqd_last_error(void) { return g_last_error.c_str(); }

int mcqd_is_stage(const char* name) { return name && mcqd::parse_stage(name) ? 1 : 0; }

mcqd_status mcqd_pipeline_open(const mcqd_pipeline_options* options, mcqd_pipeline** out) {
  return guarded([&] {
    if (!options || !out) throw mcqd::UsageError("mcqd_pipeline_open: null argument");
    *out = nullptr;
    if (!options->out_dir || !*options->out_dir) throw mcqd::UsageError("an output directory is required");
    mcqd::PipelineConfig config = options->config_path ? mcqd::load_pipeline_config(options->config_path)
                                                       : mcqd::pipeline_config_from_json(mcqd::json::object(), ".");
    if (options->override_seed) config.set_seed(options->seed);
    mcqd::LogFn log;
    if (options->log) {
      log = [fn = options->log, user = options->log_user](const std::string& msg) { fn(msg.c_str(), user); };
    }
    auto handle = std::make_unique<mcqd_pipeline>();
    handle->impl = std::make_unique<mcqd::Pipeline>(std::move(config), options->out_dir, std::move(log));
    *out = handle.release();
  });
}

mcqd_status mcqd_pipeline_run(mcqd_pipeline* pipeline, const char* stage) {
  return guarded([&] {
    if (!pipeline || !stage) throw mcqd::UsageError("mcqd_pipeline_run: null argument");
    const auto s = mcqd::parse_stage(stage);
    if (!s) throw mcqd::UsageError(std::string("unknown stage '") + stage + "'");
    pipeline->impl->run(*s);
  });
}

void mcqd_pipeline_close(mcqd_pipeline* pipeline) { delete pipeline; }

mcqd_status mcqd_pipeline_config_json(const mcqd_pipeline* pipeline, char* buf, size_t size, size_t* needed) {
  return guarded([&] {
    if (!pipeline) throw mcqd::UsageError("mcqd_pipeline_config_json: null pipeline");
    const std::string text = mcqd::to_json(pipeline->impl->config()).dump(2);
    if (needed) *needed = text.size();
    if (buf && size > 0) {
      const std::size_t n = std::min(size - 1, text.size());
      std::memcpy(buf, text.data(), n);
      buf[n] = '\0';
    }
  });
}

double mcqd_irt_probability(double theta, double alpha, double beta) { return mcqd::irt_probability(theta, alpha, beta); }

mcqd_status mcqd_deviation_scores(const double* accuracy, size_t k, double* out) {
  return guarded([&] {
    if (!accuracy || !out || k == 0) throw mcqd::UsageError("mcqd_deviation_scores: empty input");
    const auto d = mcqd::deviations({accuracy, k});
    std::copy(d.begin(), d.end(), out);
  });
}

mcqd_status mcqd_normalize_row(const double raw[4], double out[4]) {
  return guarded([&] {
    if (!raw || !out) throw mcqd::UsageError("mcqd_normalize_row: null argument");
    const auto r = mcqd::normalize_row({raw[0], raw[1], raw[2], raw[3]});
    std::copy(r.begin(), r.end(), out);
  });
}

mcqd_status mcqd_ridge_fit(const double* x, const double* y, size_t n, size_t p, double lambda, double* weights,
                           double* intercept) {
  return guarded([&] {
    if (!x || !y || !weights || !intercept || n == 0 || p == 0) throw mcqd::UsageError("mcqd_ridge_fit: empty input");
    const Eigen::MatrixXd xm = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        x, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y, static_cast<Eigen::Index>(n));
    const auto m = mcqd::fit_ridge(xm, yv, lambda);
    for (size_t j = 0; j < p; ++j) weights[j] = m.weights(static_cast<Eigen::Index>(j));
    *intercept = m.intercept;
  });
}

}  // extern "C"
