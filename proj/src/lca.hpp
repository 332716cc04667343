#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "io.hpp"

namespace mcqd {

// Students x items binary matrix with a missing mask.
class ResponseMatrix {
 public:
  static constexpr std::int8_t kMissing = -1;

  ResponseMatrix() = default;
  ResponseMatrix(std::vector<std::string> student_ids, std::vector<std::string> item_ids);

  // Rows are the sorted unique students, columns the sorted unique questions.
  // Repeated attempts keep the first one.
  static ResponseMatrix from_records(std::span<const InteractionRecord> records);

  std::size_t students() const { return student_ids_.size(); }
  std::size_t items() const { return item_ids_.size(); }
  std::int8_t at(std::size_t u, std::size_t i) const { return cells_[u * items() + i]; }
  void set(std::size_t u, std::size_t i, std::int8_t v) { cells_[u * items() + i] = v; }

  const std::vector<std::string>& student_ids() const { return student_ids_; }
  const std::vector<std::string>& item_ids() const { return item_ids_; }

  // Fraction correct among observed cells of a row; NaN when the row is empty.
  double row_accuracy(std::size_t u) const;

 private:
  std::vector<std::string> student_ids_;
  std::vector<std::string> item_ids_;
  std::vector<std::int8_t> cells_;
};

struct LatentClassModel {
  std::size_t k = 0;
  std::size_t n_items = 0;
  std::vector<double> class_weights;
  // Class-conditional correctness probability, item-major: rho[i * k + c].
  std::vector<double> rho;
  double log_likelihood = 0.0;
  std::size_t n_iterations = 0;
  bool converged = false;
  std::vector<double> log_likelihood_trace;

  double rho_at(std::size_t item, std::size_t cls) const { return rho[item * k + cls]; }
};

struct LcaConfig {
  std::size_t restarts = 20;
  std::size_t max_iterations = 1000;
  double tolerance = 1e-6;
  double rho_floor = 1e-6;
  std::uint64_t seed = 0;
};

// EM for a mixture of independent Bernoullis. Missing cells contribute
// nothing. Best log-likelihood over seeded restarts wins, ties to the lower
// restart index.
LatentClassModel fit_lca(const ResponseMatrix& matrix, std::size_t k, const LcaConfig& config = {});

// Single EM run from the given restart index. Exposed for testing.
LatentClassModel fit_lca_once(const ResponseMatrix& matrix, std::size_t k, const LcaConfig& config,
                              std::size_t restart);

std::size_t lca_parameter_count(std::size_t k, std::size_t n_items);

struct InformationCriteria {
  double bic = 0.0;
  double aic = 0.0;
  std::size_t n_parameters = 0;
};

InformationCriteria information_criteria(const LatentClassModel& model, std::size_t n_students);
InformationCriteria information_criteria(double log_likelihood, std::size_t n_parameters,
                                         std::size_t n_students);

struct ModelSelectionRow {
  std::size_t k = 0;
  double log_likelihood = 0.0;
  std::size_t n_parameters = 0;
  double aic = 0.0;
  double bic = 0.0;
};

using ModelSelectionCurve = std::vector<ModelSelectionRow>;

// Argmin of BIC, ties to the smaller k.
std::size_t select_k(const ModelSelectionCurve& curve);

struct ModelSelection {
  ModelSelectionCurve curve;
  std::vector<LatentClassModel> models;  // parallel to curve
  std::size_t best_k = 0;

  const LatentClassModel& best() const;
};

ModelSelection sweep_k(const ResponseMatrix& matrix, std::size_t k_min, std::size_t k_max,
                       const LcaConfig& config = {});

// Per-student posterior over classes in the model's own labelling, row-major
// students x k.
std::vector<double> class_posteriors(const LatentClassModel& model, const ResponseMatrix& matrix);

struct ClassAssignment {
  std::size_t k = 0;
  std::vector<std::string> student_ids;
  std::vector<std::size_t> cls;     // 0-based, after relabelling
  std::vector<double> posterior;    // row-major students x k, after relabelling
  // label_order[new] = class index in the input model.
  std::vector<std::size_t> label_order;
  std::vector<double> class_mean_accuracy;  // by new label
};

// Bayes posteriors, argmax (ties to the lowest index), then relabelling in
// ascending order of the mean accuracy of assigned students.
ClassAssignment assign_classes(const LatentClassModel& model, const ResponseMatrix& matrix);

// Permutes weights and rho columns into the assignment's label order.
LatentClassModel relabel(const LatentClassModel& model, std::span<const std::size_t> label_order);

json to_json(const LatentClassModel& model, std::span<const std::string> item_ids);
std::string model_selection_csv(const ModelSelectionCurve& curve);
// One line per student: {"student_id", "class" (1-based), "posterior"}.
std::string assignments_jsonl(const ClassAssignment& assignment);
// Reads assignments_jsonl output back; classes are returned 0-based.
ClassAssignment read_assignments(const std::filesystem::path& path);

}  // namespace mcqd
