#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "features.hpp"
#include "regression.hpp"
#include "support/oracles.hpp"

using namespace mcqd;

namespace {

Question question(const std::string& id, Option correct, Topic topic) {
  Question q;
  q.question_id = id;
  q.text = "t";
  q.options = {"a", "b", "c", "d"};
  q.correct_option = correct;
  q.topic = topic;
  return q;
}

std::vector<std::vector<double>> to_rows(const Eigen::MatrixXd& x) {
  std::vector<std::vector<double>> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) out[static_cast<std::size_t>(r)].push_back(x(r, c));
  }
  return out;
}

std::vector<double> to_vec(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

struct Fixture {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

Fixture random_fixture(std::uint64_t seed, Eigen::Index n = 60, Eigen::Index p = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Fixture f;
  f.x.resize(n, p);
  f.y.resize(n);
  Eigen::VectorXd w(p);
  for (Eigen::Index j = 0; j < p; ++j) w(j) = z(rng);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index j = 0; j < p; ++j) f.x(r, j) = z(rng) * (1.0 + static_cast<double>(j));
  }
  f.y = f.x * w;
  for (Eigen::Index r = 0; r < n; ++r) f.y(r) += 0.5 * z(rng) + 1.7;
  return f;
}

}  // namespace

TEST_CASE("extract_features computes per-persona and aggregate features") {
  SimulationMatrix m;
  m.question_id = "q1";
  m.rows = {{0.1, 0.2, 0.3, 0.4}, {0.0, 0.6, 0.2, 0.2}, {0.25, 0.25, 0.25, 0.25}};
  const ItemFeatureVector f = extract_features(m, question("q1", Option::B, Topic::Algebra), 3);
  CHECK(f.p_correct == std::vector<double>{0.2, 0.6, 0.25});
  CHECK(f.mean == doctest::Approx(0.35).epsilon(1e-15));
  const double var = ((0.2 - 0.35) * (0.2 - 0.35) + (0.6 - 0.35) * (0.6 - 0.35) + (0.25 - 0.35) * (0.25 - 0.35)) / 3.0;
  CHECK(f.variance == doctest::Approx(var).epsilon(1e-14));
  CHECK(f.range == doctest::Approx(0.4).epsilon(1e-15));
  CHECK(f.topic == std::array<double, 3>{0, 1, 0});
  CHECK(f.values().size() == feature_names(3).size());
  CHECK(numeric_mask(3) == std::vector<bool>{true, true, true, true, true, true, false, false, false});
}

TEST_CASE("extract_features rejects incomplete matrices") {
  SimulationMatrix m;
  m.question_id = "q1";
  m.rows = {{0.25, 0.25, 0.25, 0.25}};
  CHECK_THROWS_AS(extract_features(m, question("q1", Option::A, Topic::Number), 2), DataError);
  CHECK_THROWS_AS(extract_features(m, question("q2", Option::A, Topic::Number), 1), DataError);
}

TEST_CASE("features.csv round-trips through read_feature_table") {
  SimulationMatrix m;
  m.question_id = "q1";
  m.rows = {{0.1, 0.2, 0.3, 0.4}, {0.0, 0.6, 0.2, 0.2}};
  const auto f1 = extract_features(m, question("q1", Option::D, Topic::GeometryAndMeasure), 2);
  m.question_id = "q2";
  const auto f2 = extract_features(m, question("q2", Option::A, Topic::Number), 2);
  const std::vector<ItemFeatureVector> fs = {f1, f2};
  const std::vector<double> beta = {-0.5, 1.0 / 3.0};
  oracle::TempDir dir;
  oracle::write_text(dir / "f.csv", features_csv(fs, beta, "abc"));
  const FeatureTable t = read_feature_table(dir / "f.csv");
  CHECK(t.row_ids == std::vector<std::string>{"q1", "q2"});
  CHECK(t.columns == feature_names(2));
  CHECK(t.numeric == numeric_mask(2));
  CHECK(t.y(1) == 1.0 / 3.0);
  for (std::size_t j = 0; j < f1.values().size(); ++j) CHECK(t.x(0, static_cast<Eigen::Index>(j)) == f1.values()[j]);
  CHECK_THROWS_AS(read_feature_table(dir / "f.csv", "alpha"), DataError);
}

TEST_CASE("standardizer uses training statistics and leaves indicators alone") {
  Eigen::MatrixXd train(4, 3);
  train << 1, 5, 1,  //
      2, 5, 0,       //
      3, 5, 1,       //
      4, 5, 0;
  const auto [s, z] = standardize(train, {true, true, false});
  CHECK(z.col(0).mean() == doctest::Approx(0.0));
  CHECK(std::sqrt(z.col(0).array().square().mean()) == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(z.col(1).isZero());
  CHECK(s.zero_variance == std::vector<bool>{false, true, false});
  CHECK(z.col(2) == train.col(2));
  Eigen::MatrixXd test(1, 3);
  test << 10, 7, 1;
  const Eigen::MatrixXd zt = s.transform(test);
  CHECK(zt(0, 0) == doctest::Approx((10 - 2.5) / std::sqrt(1.25)));
  CHECK(zt(0, 1) == 2.0);
  CHECK(zt(0, 2) == 1.0);
  CHECK_THROWS_AS(standardize(train.topRows(1), {true, true, false}), DataError);
}

TEST_CASE("ridge solution matches the long double normal equations and zeroes the gradient") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Fixture f = random_fixture(seed);
    const auto rows = to_rows(f.x);
    const auto y = to_vec(f.y);
    for (double lambda : {0.0, 0.1, 1.0, 10.0, 500.0}) {
      const RidgeModel m = fit_ridge(f.x, f.y, lambda);
      const auto ref = oracle::ridge_normal_equations(rows, y, lambda);
      CHECK(m.intercept == doctest::Approx(static_cast<double>(ref[0])).epsilon(1e-9));
      for (Eigen::Index j = 0; j < f.x.cols(); ++j) {
        CHECK(m.weights(j) == doctest::Approx(static_cast<double>(ref[static_cast<std::size_t>(j) + 1])).epsilon(1e-9));
      }
      const auto g = oracle::ridge_gradient(rows, y, to_vec(m.weights), m.intercept, lambda);
      long double gmax = 0;
      for (auto v : g) gmax = std::max(gmax, std::fabs(v));
      CHECK(static_cast<double>(gmax) <= 1e-8);
    }
  }
}

TEST_CASE("ridge weight norm shrinks as lambda grows") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Fixture f = random_fixture(seed + 100);
    double prev = std::numeric_limits<double>::infinity();
    for (double lambda : kDefaultLambdaGrid) {
      const double norm = fit_ridge(f.x, f.y, lambda).weights.norm();
      CHECK(norm <= prev);
      prev = norm;
    }
  }
}

TEST_CASE("lambda = 0 reproduces ordinary least squares and rejects a singular design") {
  const Fixture f = random_fixture(7, 40, 3);
  Eigen::MatrixXd design(40, 4);
  design.col(0).setOnes();
  design.rightCols(3) = f.x;
  const Eigen::VectorXd ols = design.colPivHouseholderQr().solve(f.y);
  const RidgeModel m = fit_ridge(f.x, f.y, 0.0);
  CHECK(m.intercept == doctest::Approx(ols(0)).epsilon(1e-10));
  for (int j = 0; j < 3; ++j) CHECK(m.weights(j) == doctest::Approx(ols(j + 1)).epsilon(1e-10));

  Eigen::MatrixXd dup(40, 2);
  dup.col(0) = f.x.col(0);
  dup.col(1) = 2.0 * f.x.col(0);
  CHECK_THROWS_AS(fit_ridge(dup, f.y, 0.0), NumericalError);
  CHECK_NOTHROW(fit_ridge(dup, f.y, 1.0));
  CHECK_THROWS_AS(fit_ridge(dup, f.y, -1.0), UsageError);
}

TEST_CASE("the intercept is not penalized") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(10, 2);
  Eigen::VectorXd y = Eigen::VectorXd::Constant(10, 42.0);
  const RidgeModel m = fit_ridge(x, y, 1e6);
  CHECK(m.intercept == 42.0);
  CHECK(m.weights.isZero());
}

TEST_CASE("kfold_indices partitions rows with near-equal folds") {
  const auto folds = kfold_indices(23, 5, 9);
  REQUIRE(folds.size() == 5);
  std::set<std::size_t> seen;
  for (std::size_t f = 0; f < 5; ++f) {
    CHECK(folds[f].size() == (f < 3 ? 5u : 4u));
    for (auto i : folds[f]) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 23);
  CHECK(kfold_indices(23, 5, 9) == folds);
  CHECK(kfold_indices(23, 5, 10) != folds);
  CHECK_THROWS_AS(kfold_indices(3, 5, 0), DataError);
  CHECK_THROWS_AS(kfold_indices(10, 1, 0), UsageError);
}

TEST_CASE("metrics: MSE and R2 on hand examples") {
  Eigen::VectorXd y(4), p(4);
  y << 1, 2, 3, 4;
  p << 1, 2, 3, 5;
  CHECK(mean_squared_error(y, p) == 0.25);
  CHECK(r_squared(y, p) == doctest::Approx(1.0 - 1.0 / 5.0).epsilon(1e-15));
  CHECK(r_squared(y, y) == 1.0);
  CHECK(r_squared(y, Eigen::VectorXd::Constant(4, 2.5)) == 0.0);
  const Eigen::VectorXd c = Eigen::VectorXd::Constant(3, 1.0);
  CHECK(r_squared(c, c) == 1.0);
  CHECK(r_squared(c, Eigen::VectorXd::Constant(3, 2.0)) == 0.0);
}

TEST_CASE("CV harness: perfect and mean predictors, aggregates are fold means") {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> z(0.0, 1.0);
  Eigen::VectorXd y(37);
  for (auto& v : y) v = z(rng);

  const EvaluationReport perfect = cross_validate_with(
      y, 5, 1, [&](std::span<const std::size_t>, std::span<const std::size_t> test, FoldMetrics&) {
        Eigen::VectorXd p(static_cast<Eigen::Index>(test.size()));
        for (std::size_t i = 0; i < test.size(); ++i) p(static_cast<Eigen::Index>(i)) = y(static_cast<Eigen::Index>(test[i]));
        return p;
      });
  REQUIRE(perfect.folds.size() == 5);
  for (const auto& f : perfect.folds) {
    CHECK(f.mse == 0.0);
    CHECK(f.r2 == 1.0);
  }

  const EvaluationReport mean = cross_validate_with(
      y, 5, 1, [&](std::span<const std::size_t>, std::span<const std::size_t> test, FoldMetrics&) {
        double m = 0;
        for (auto i : test) m += y(static_cast<Eigen::Index>(i));
        return Eigen::VectorXd::Constant(static_cast<Eigen::Index>(test.size()), m / static_cast<double>(test.size()))
            .eval();
      });
  for (const auto& f : mean.folds) CHECK(std::abs(f.r2) <= 1e-12);

  const EvaluationReport noisy = cross_validate_with(
      y, 5, 2, [&](std::span<const std::size_t>, std::span<const std::size_t> test, FoldMetrics&) {
        Eigen::VectorXd p(static_cast<Eigen::Index>(test.size()));
        for (std::size_t i = 0; i < test.size(); ++i) p(static_cast<Eigen::Index>(i)) = 0.5 * y(static_cast<Eigen::Index>(test[i]));
        return p;
      });
  long double mse = 0, r2 = 0;
  for (const auto& f : noisy.folds) mse += f.mse, r2 += f.r2;
  CHECK(std::abs(noisy.mse_mean - static_cast<double>(mse / 5)) <= 1e-12);
  CHECK(std::abs(noisy.r2_mean - static_cast<double>(r2 / 5)) <= 1e-12);
  long double sd = 0;
  for (const auto& f : noisy.folds) sd += (f.mse - mse / 5) * (f.mse - mse / 5);
  CHECK(noisy.mse_sd == doctest::Approx(static_cast<double>(std::sqrt(sd / 5))).epsilon(1e-12));
}

TEST_CASE("select_lambda picks the grid point with the smallest CV error") {
  const Fixture f = random_fixture(3, 80, 5);
  const std::vector<double> grid = {0.1, 1.0, 10.0, 100.0, 500.0};
  const LambdaSelection sel = select_lambda(f.x, f.y, grid, 5, 0);
  REQUIRE(sel.cv_mse.size() == grid.size());
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (sel.cv_mse[g] < sel.cv_mse[best]) best = g;
  }
  CHECK(sel.lambda == grid[best]);
  // Low-noise linear data prefers light shrinkage.
  CHECK(sel.lambda <= 10.0);
  CHECK(select_lambda(f.x, f.y, std::vector<double>{3.0}).lambda == 3.0);
}

TEST_CASE("cross_validate recovers a linear signal and is seed-deterministic") {
  const Fixture f = random_fixture(11, 120, 6);
  const std::vector<bool> numeric(6, true);
  CvConfig cfg;
  cfg.seed = 5;
  const EvaluationReport a = cross_validate(f.x, numeric, f.y, cfg);
  const EvaluationReport b = cross_validate(f.x, numeric, f.y, cfg);
  CHECK(to_json(a).dump() == to_json(b).dump());
  CHECK(a.r2_mean > 0.9);
  CHECK(a.model == "ridge");
  for (const auto& fold : a.folds) {
    CHECK(std::find(cfg.grid.begin(), cfg.grid.end(), fold.lambda) != cfg.grid.end());
    CHECK(fold.n_train + fold.n_test == 120);
  }
  const EvaluationReport lr = lr_baseline(f.x, numeric, f.y, cfg);
  CHECK(lr.model == "linear_regression");
  for (const auto& fold : lr.folds) CHECK(fold.lambda == 0.0);
  CHECK(lr.r2_mean > 0.9);
  const json j = to_json(a);
  CHECK(j["folds"].size() == 5);
  CHECK(j["aggregate"].contains("r2_sd"));
}
