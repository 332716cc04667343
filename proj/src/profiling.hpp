#pragma once

#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "io.hpp"
#include "lca.hpp"

namespace mcqd {

struct AccuracyCell {
  std::size_t correct = 0;
  std::size_t attempts = 0;
};

// Question x cluster accuracy with support counts. A cell counts as observed
// when it has at least `min_support` attempts (and at least one).
struct AccuracyMatrix {
  std::vector<std::string> question_ids;  // sorted
  std::size_t k = 0;
  std::size_t min_support = 5;
  std::vector<AccuracyCell> cells;  // question-major

  const AccuracyCell& cell(std::size_t q, std::size_t c) const { return cells[q * k + c]; }
  bool observed(std::size_t q, std::size_t c) const;
  double accuracy(std::size_t q, std::size_t c) const;  // NaN if unobserved
  std::size_t index_of(const std::string& question_id) const;  // npos if absent
};

// Throws DataError if a record's student has no assignment.
AccuracyMatrix cluster_accuracies(std::span<const InteractionRecord> records,
                                  const ClassAssignment& assignment, std::size_t min_support = 5);

// Deviation of each cluster from the unweighted cross-cluster mean.
std::vector<double> deviations(std::span<const double> accuracies);

struct DeviationScore {
  std::string question_id;
  std::size_t cluster = 0;  // 0-based
  double accuracy = 0.0;
  double delta = 0.0;
  std::size_t support = 0;
};

// Complete-case: questions with any unobserved cluster are skipped entirely.
// Ordered by question, then cluster.
std::vector<DeviationScore> deviation_scores(const AccuracyMatrix& matrix);

struct ExtremeSelection {
  std::size_t cluster = 0;
  std::vector<std::string> strengths;   // delta descending
  std::vector<std::string> weaknesses;  // delta ascending
};

// Per cluster, the `per_side` largest and most negative deltas; ties go to the
// lower question_id. Needs 2 * per_side scored questions per cluster so the
// two sides are disjoint.
std::vector<ExtremeSelection> select_extremes(std::span<const DeviationScore> scores, std::size_t k,
                                              std::size_t per_side = 5);

struct QuestionBlock {
  std::string question_id;
  std::string role;  // "strength" or "weakness"
  std::string text;
  Topic topic = Topic::Number;
  std::vector<double> cluster_accuracy;  // per cluster, 0-based order
  double delta = 0.0;                    // for the requesting cluster

  bool operator==(const QuestionBlock&) const = default;
};

struct PersonaSynthesisRequest {
  std::size_t cluster = 0;
  std::size_t k = 0;
  std::vector<QuestionBlock> questions;
  std::string instruction;

  bool operator==(const PersonaSynthesisRequest&) const = default;
};

PersonaSynthesisRequest build_persona_request(std::size_t cluster, const ExtremeSelection& extremes,
                                              const ItemBank& items, const AccuracyMatrix& accuracy);

json to_json(const PersonaSynthesisRequest& request);
PersonaSynthesisRequest persona_request_from_json(const json& j);

enum class Provenance { LlmGenerated, Manual };

struct PersonaProfile {
  std::size_t cluster = 0;  // 0-based; serialized 1-based
  std::string name;
  std::string description;
  std::vector<std::string> strengths;
  std::vector<std::string> weaknesses;
  Provenance provenance = Provenance::Manual;

  bool operator==(const PersonaProfile&) const = default;
};

json to_json(const PersonaProfile& persona);
PersonaProfile persona_from_json(const json& j);
// Reads a personas.json document: either a list or {"personas": [...]}.
// Sorted by cluster; clusters must be 0..K-1 without gaps.
std::vector<PersonaProfile> read_personas(const std::filesystem::path& path);

std::string deviations_csv(std::span<const DeviationScore> scores);

}  // namespace mcqd
