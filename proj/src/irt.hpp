#pragma once

#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "io.hpp"

namespace mcqd {

// 2PL response probability sigma(alpha * (theta - beta)).
double irt_probability(double theta, double alpha, double beta);

// Numerically stable log sigma(z).
double log_sigmoid(double z);

struct IrtParameters {
  std::vector<std::string> item_ids;
  std::vector<double> alpha;  // > 0
  std::vector<double> beta;
  std::vector<std::string> student_ids;
  std::vector<double> theta;

  std::size_t item_count() const { return item_ids.size(); }
  std::size_t student_count() const { return student_ids.size(); }
};

struct IrtFitConfig {
  std::size_t quadrature_nodes = 41;
  // Stop when the absolute change in the objective drops below this.
  double tolerance = 1e-6;
  std::size_t max_iterations = 500;
  // Ridge strength on beta and log(alpha) for all-correct / all-incorrect items.
  double degenerate_penalty = 1e-2;
  std::size_t max_newton_steps = 25;
};

struct IrtFitReport {
  // Marginal log-likelihood minus the degenerate-item penalty, at the returned
  // parameters.
  double log_likelihood = 0.0;
  std::size_t n_iterations = 0;
  bool converged = false;
  double tolerance_used = 0.0;
  // Objective before each M-step, plus the final evaluation.
  std::vector<double> log_likelihood_trace;
  std::vector<std::string> degenerate_items;
};

struct IrtFit {
  IrtParameters params;
  IrtFitReport report;
};

// Marginal maximum likelihood via EM over a fixed Gauss-Hermite grid with a
// standard-normal ability prior. Abilities are EAP estimates; the returned
// parameters are anchored (see anchor_scale). Repeated attempts by the same
// student on the same item keep the first one.
IrtFit fit_2pl(std::span<const InteractionRecord> records, const IrtFitConfig& config = {});

// Standardizes theta to mean 0, sd 1 (population) and maps alpha, beta so every
// predicted probability is unchanged. Throws NumericalError on zero variance.
IrtParameters anchor_scale(const IrtParameters& params);

json to_json(const IrtParameters& params);
IrtParameters irt_parameters_from_json(const json& j);
json to_json(const IrtFitReport& report);

}  // namespace mcqd
