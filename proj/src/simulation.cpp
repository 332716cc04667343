#include "simulation.hpp"

#include <cmath>

namespace mcqd {

OptionProbs normalize_row(const OptionProbs& raw) {
  double sum = 0.0;
  for (double v : raw) {
    if (!std::isfinite(v) || v < 0.0) throw DataError("normalize_row: entries must be finite and non-negative");
    sum += v;
  }
  if (!(sum > 0.0)) throw DataError("normalize_row: all-zero row");
  OptionProbs out;
  for (std::size_t o = 0; o < kNumOptions; ++o) out[o] = raw[o] / sum;
  return out;
}

SimulationMatrix assemble_matrix(const std::string& question_id, std::span<const PersonaRow> raw_rows, std::size_t k) {
  std::vector<const PersonaRow*> slot(k, nullptr);
  for (const auto& row : raw_rows) {
    if (row.cluster >= k) {
      throw DataError(question_id + ": persona " + std::to_string(row.cluster + 1) + " outside 1.." + std::to_string(k));
    }
    if (slot[row.cluster]) throw DataError(question_id + ": duplicate row for persona " + std::to_string(row.cluster + 1));
    slot[row.cluster] = &row;
  }
  SimulationMatrix m;
  m.question_id = question_id;
  for (std::size_t c = 0; c < k; ++c) {
    if (!slot[c]) throw DataError(question_id + ": missing row for persona " + std::to_string(c + 1));
    m.rows.push_back(normalize_row(slot[c]->probs));
  }
  return m;
}

void validate_matrix(const SimulationMatrix& m, std::size_t k) {
  if (m.rows.size() != k) {
    throw DataError(m.question_id + ": expected " + std::to_string(k) + " persona rows, got " + std::to_string(m.rows.size()));
  }
  for (std::size_t c = 0; c < k; ++c) {
    double sum = 0.0;
    for (double v : m.rows[c]) {
      if (!(v >= 0.0 && v <= 1.0)) throw DataError(m.question_id + ": probability outside [0, 1]");
      sum += v;
    }
    if (std::abs(sum - 1.0) > kRowSumTolerance) {
      throw DataError(m.question_id + ": row " + std::to_string(c + 1) + " sums to " + format_double(sum));
    }
  }
}

json to_json(const SimulationMatrix& m) {
  json personas = json::array();
  for (std::size_t c = 0; c < m.rows.size(); ++c) {
    json probs = json::object();
    for (Option o : kAllOptions) probs[std::string(to_string(o))] = m.rows[c][index_of(o)];
    personas.push_back({{"cluster", c + 1}, {"probs", std::move(probs)}});
  }
  return {{"question_id", m.question_id}, {"personas", std::move(personas)}};
}

SimulationMatrix simulation_matrix_from_json(const json& j) {
  std::vector<PersonaRow> rows;
  std::string qid;
  try {
    qid = j.at("question_id").get<std::string>();
    for (const auto& p : j.at("personas")) {
      PersonaRow row;
      const auto cluster = p.at("cluster").get<std::size_t>();
      if (cluster < 1) throw DataError("cluster must be >= 1");
      row.cluster = cluster - 1;
      for (Option o : kAllOptions) row.probs[index_of(o)] = p.at("probs").at(std::string(to_string(o))).get<double>();
      rows.push_back(row);
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("simulation matrix: ") + e.what());
  }
  SimulationMatrix m;
  m.question_id = qid;
  std::vector<const PersonaRow*> slot(rows.size(), nullptr);
  for (const auto& r : rows) {
    if (r.cluster >= rows.size() || slot[r.cluster]) throw DataError(qid + ": persona clusters must be 1..K");
    slot[r.cluster] = &r;
  }
  for (const auto* r : slot) m.rows.push_back(r->probs);
  validate_matrix(m, m.rows.size());
  return m;
}

std::string simulation_matrices_jsonl(std::span<const SimulationMatrix> matrices) {
  std::string out;
  for (const auto& m : matrices) {
    out += to_json(m).dump();
    out += '\n';
  }
  return out;
}

std::vector<SimulationMatrix> read_simulation_matrices(const std::filesystem::path& path) {
  std::vector<SimulationMatrix> out;
  for_each_jsonl(path, [&](std::size_t line, const json& obj) {
    try {
      out.push_back(simulation_matrix_from_json(obj));
    } catch (const DataError& e) {
      throw DataError(path.filename().string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  return out;
}

}  // namespace mcqd
