#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "features.hpp"
#include "io.hpp"

namespace mcqd {

// Ridge fit of y ~ X w + b minimizing ||y - X w - b||^2 + lambda ||w||^2.
// The intercept is not penalized.
struct RidgeModel {
  Eigen::VectorXd weights;
  double intercept = 0.0;
  double lambda = 0.0;
  std::optional<Standardizer> standardizer;  // set when fitted on raw features

  Eigen::VectorXd predict(const Eigen::MatrixXd& x) const;
};

// Closed-form normal equations on centered data. At lambda = 0 a rank-deficient
// design raises NumericalError.
RidgeModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda);

inline const std::vector<double> kDefaultLambdaGrid = {0.1, 1.0, 10.0, 100.0, 500.0};

// Test-fold indices for a seeded shuffled k-fold split. The first n % k folds
// get one extra row.
std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t n_folds, std::uint64_t seed);

double mean_squared_error(const Eigen::VectorXd& y, const Eigen::VectorXd& predicted);
// 1 - SS_res / SS_tot about the mean of y. A constant y gives 1 for a perfect
// prediction and 0 otherwise.
double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& predicted);

struct LambdaSelection {
  double lambda = 0.0;
  std::vector<double> grid;
  std::vector<double> cv_mse;  // parallel to grid
};

// Inner k-fold CV over already-prepared features; smallest mean validation
// MSE wins, ties to the smaller lambda.
LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> grid,
                              std::size_t n_folds = 5, std::uint64_t seed = 0);

struct FoldMetrics {
  std::size_t index = 0;  // 0-based fold position
  double mse = 0.0;
  double r2 = 0.0;
  double lambda = 0.0;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
};

struct EvaluationReport {
  std::string model;
  std::size_t n_folds = 0;
  std::uint64_t seed = 0;
  std::vector<FoldMetrics> folds;
  double mse_mean = 0.0;
  double mse_sd = 0.0;  // population sd across folds
  double r2_mean = 0.0;
  double r2_sd = 0.0;
};

// Fits on `train` and returns predictions for `test`. May record the chosen
// lambda in `fold`.
using FoldPredictor = std::function<Eigen::VectorXd(std::span<const std::size_t> train,
                                                    std::span<const std::size_t> test, FoldMetrics& fold)>;

// Generic harness: split, predict each held-out fold, score and aggregate.
EvaluationReport cross_validate_with(const Eigen::VectorXd& y, std::size_t n_folds, std::uint64_t seed,
                                     const FoldPredictor& predictor, std::string model = "custom");

struct CvConfig {
  std::size_t n_folds = 5;
  std::uint64_t seed = 0;
  std::vector<double> grid = kDefaultLambdaGrid;
  std::size_t inner_folds = 5;
};

// Per outer fold: standardize on train, pick lambda by inner CV on train, fit,
// predict the held-out rows.
EvaluationReport cross_validate(const Eigen::MatrixXd& x, const std::vector<bool>& numeric, const Eigen::VectorXd& y,
                                const CvConfig& config = {});

// Unpenalized linear regression under the same harness.
EvaluationReport lr_baseline(const Eigen::MatrixXd& x, const std::vector<bool>& numeric, const Eigen::VectorXd& y,
                             const CvConfig& config = {});

json to_json(const EvaluationReport& report);

}  // namespace mcqd
