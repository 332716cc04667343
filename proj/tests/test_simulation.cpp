#include <doctest.h>

#include <cmath>
#include <limits>
#include <random>

#include "simulation.hpp"
#include "support/oracles.hpp"

using namespace mcqd;

TEST_CASE("normalize_row divides by the row sum") {
  const OptionProbs p = normalize_row({2, 1, 1, 0});
  CHECK(p == OptionProbs{0.5, 0.25, 0.25, 0.0});
  CHECK(normalize_row({0.25, 0.25, 0.25, 0.25}) == OptionProbs{0.25, 0.25, 0.25, 0.25});
  CHECK(normalize_row({0, 0, 3e-300, 0}) == OptionProbs{0, 0, 1, 0});
}

TEST_CASE("normalize_row rejects invalid rows") {
  CHECK_THROWS_AS(normalize_row({0, 0, 0, 0}), DataError);
  CHECK_THROWS_AS(normalize_row({-0.1, 0.5, 0.3, 0.3}), DataError);
  CHECK_THROWS_AS(normalize_row({std::numeric_limits<double>::quiet_NaN(), 1, 1, 1}), DataError);
  CHECK_THROWS_AS(normalize_row({std::numeric_limits<double>::infinity(), 1, 1, 1}), DataError);
}

TEST_CASE("normalized rows sum to one within tolerance for random inputs") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> mag(-200, 200);
  for (int t = 0; t < 2000; ++t) {
    OptionProbs raw;
    for (double& v : raw) v = u(rng) * std::ldexp(1.0, mag(rng));
    if (raw[0] + raw[1] + raw[2] + raw[3] == 0.0) continue;
    const OptionProbs p = normalize_row(raw);
    long double s = 0;
    for (double v : p) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
      s += v;
    }
    CHECK(std::fabs(static_cast<double>(s) - 1.0) <= kRowSumTolerance);
    // Scale invariance.
    OptionProbs scaled = raw;
    for (double& v : scaled) v *= 3.0;
    const OptionProbs q = normalize_row(scaled);
    for (std::size_t o = 0; o < 4; ++o) CHECK(q[o] == doctest::Approx(p[o]).epsilon(1e-14));
  }
}

TEST_CASE("assemble_matrix orders rows by cluster and requires one per cluster") {
  const std::vector<PersonaRow> rows = {{2, {1, 1, 1, 1}}, {0, {1, 0, 0, 0}}, {1, {0, 2, 2, 0}}};
  const SimulationMatrix m = assemble_matrix("q1", rows, 3);
  REQUIRE(m.personas() == 3);
  CHECK(m.rows[0] == OptionProbs{1, 0, 0, 0});
  CHECK(m.rows[1] == OptionProbs{0, 0.5, 0.5, 0});
  CHECK(m.rows[2] == OptionProbs{0.25, 0.25, 0.25, 0.25});
  validate_matrix(m, 3);

  const std::vector<PersonaRow> missing = {{0, {1, 0, 0, 0}}, {2, {1, 0, 0, 0}}};
  CHECK_THROWS_AS(assemble_matrix("q", missing, 3), DataError);
  const std::vector<PersonaRow> dup = {{0, {1, 0, 0, 0}}, {0, {1, 0, 0, 0}}};
  CHECK_THROWS_AS(assemble_matrix("q", dup, 2), DataError);
  const std::vector<PersonaRow> out = {{5, {1, 0, 0, 0}}};
  CHECK_THROWS_AS(assemble_matrix("q", out, 1), DataError);
}

TEST_CASE("validate_matrix enforces shape and row sums") {
  SimulationMatrix m;
  m.question_id = "q";
  m.rows = {{0.5, 0.5, 0, 0}, {0.25, 0.25, 0.25, 0.25}};
  validate_matrix(m, 2);
  CHECK_THROWS_AS(validate_matrix(m, 3), DataError);
  m.rows[1][0] += 1e-8;
  CHECK_THROWS_AS(validate_matrix(m, 2), DataError);
  m.rows[1][0] -= 1e-8;
  m.rows[1][0] += 1e-11;
  validate_matrix(m, 2);
  m.rows[0] = {1.5, -0.5, 0, 0};
  CHECK_THROWS_AS(validate_matrix(m, 2), DataError);
}

TEST_CASE("simulation matrices round-trip through JSONL") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<SimulationMatrix> ms;
  for (int q = 0; q < 4; ++q) {
    std::vector<PersonaRow> rows;
    for (std::size_t c = 0; c < 5; ++c) rows.push_back({c, {u(rng), u(rng), u(rng), u(rng)}});
    ms.push_back(assemble_matrix("q" + std::to_string(q), rows, 5));
  }
  oracle::TempDir dir;
  oracle::write_text(dir / "m.jsonl", simulation_matrices_jsonl(ms));
  const auto back = read_simulation_matrices(dir / "m.jsonl");
  REQUIRE(back.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back[i] == ms[i]);
    CHECK(back[i].rows.size() == 5);
  }
  const json j = to_json(ms[0]);
  CHECK(j["personas"][0]["cluster"] == 1);
  CHECK(j["personas"][0]["probs"].size() == 4);
}

TEST_CASE("reading a malformed matrix names the line") {
  oracle::TempDir dir;
  oracle::write_text(dir / "bad.jsonl",
                     R"({"question_id": "q", "personas": [{"cluster": 1, "probs": {"A": 1, "B": 0, "C": 0, "D": 0}}]})"
                     "\n"
                     R"({"question_id": "r", "personas": [{"cluster": 1, "probs": {"A": 0.7, "B": 0, "C": 0, "D": 0}}]})"
                     "\n");
  try {
    read_simulation_matrices(dir / "bad.jsonl");
    FAIL("expected DataError");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("bad.jsonl:2") != std::string::npos);
  }
}
