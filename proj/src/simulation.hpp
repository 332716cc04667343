#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "io.hpp"

namespace mcqd {

// Divides by the row sum. Throws DataError for negative or non-finite entries
// and for all-zero rows.
OptionProbs normalize_row(const OptionProbs& raw);

struct PersonaRow {
  std::size_t cluster = 0;  // 0-based
  OptionProbs probs{};
};

// K personas x 4 options for one question; rows ordered by cluster.
struct SimulationMatrix {
  std::string question_id;
  std::vector<OptionProbs> rows;

  std::size_t personas() const { return rows.size(); }
  bool operator==(const SimulationMatrix&) const = default;
};

// Tolerance on row sums of stored matrices.
inline constexpr double kRowSumTolerance = 1e-9;

// Normalizes every row and orders them by cluster. Exactly one row per
// cluster 0..k-1 is required; otherwise DataError.
SimulationMatrix assemble_matrix(const std::string& question_id, std::span<const PersonaRow> raw_rows,
                                 std::size_t k);

// Throws DataError unless every row is a probability vector summing to 1
// within kRowSumTolerance and the row count is k.
void validate_matrix(const SimulationMatrix& m, std::size_t k);

json to_json(const SimulationMatrix& m);
SimulationMatrix simulation_matrix_from_json(const json& j);
std::string simulation_matrices_jsonl(std::span<const SimulationMatrix> matrices);
std::vector<SimulationMatrix> read_simulation_matrices(const std::filesystem::path& path);

}  // namespace mcqd
