#include "regression.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace mcqd {

Eigen::VectorXd RidgeModel::predict(const Eigen::MatrixXd& x) const {
  const Eigen::MatrixXd z = standardizer ? standardizer->transform(x) : x;
  return (z * weights).array() + intercept;
}

RidgeModel fit_ridge(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, double lambda) {
  if (x.rows() != y.size()) throw DataError("fit_ridge: row count mismatch");
  if (x.rows() < 1) throw DataError("fit_ridge: no rows");
  if (!(lambda >= 0.0)) throw UsageError("fit_ridge: lambda must be >= 0");
  const Eigen::RowVectorXd x_mean = x.colwise().mean();
  const double y_mean = y.mean();
  const Eigen::MatrixXd xc = x.rowwise() - x_mean;
  const Eigen::VectorXd yc = y.array() - y_mean;

  RidgeModel m;
  m.lambda = lambda;
  if (lambda == 0.0) {
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(xc);
    qr.setThreshold(1e-10);
    if (qr.rank() < x.cols()) {
      throw NumericalError("fit_ridge: singular design at lambda = 0 (rank " + std::to_string(qr.rank()) + " < " +
                           std::to_string(x.cols()) + ")");
    }
    m.weights = qr.solve(yc);
  } else {
    Eigen::MatrixXd a = xc.transpose() * xc;
    a.diagonal().array() += lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) throw NumericalError("fit_ridge: factorization failed");
    m.weights = llt.solve(xc.transpose() * yc);
  }
  m.intercept = y_mean - x_mean.dot(m.weights);
  return m;
}

std::vector<std::vector<std::size_t>> kfold_indices(std::size_t n, std::size_t n_folds, std::uint64_t seed) {
  if (n_folds < 2) throw UsageError("k-fold: need at least 2 folds");
  if (n < n_folds) throw DataError("k-fold: " + std::to_string(n) + " rows cannot fill " + std::to_string(n_folds) + " folds");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> folds(n_folds);
  std::size_t pos = 0;
  for (std::size_t f = 0; f < n_folds; ++f) {
    const std::size_t size = n / n_folds + (f < n % n_folds ? 1 : 0);
    folds[f].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + size));
    std::sort(folds[f].begin(), folds[f].end());
    pos += size;
  }
  return folds;
}

double mean_squared_error(const Eigen::VectorXd& y, const Eigen::VectorXd& predicted) {
  return (y - predicted).squaredNorm() / static_cast<double>(y.size());
}

double r_squared(const Eigen::VectorXd& y, const Eigen::VectorXd& predicted) {
  const double ss_res = (y - predicted).squaredNorm();
  const double ss_tot = (y.array() - y.mean()).square().sum();
  if (ss_tot == 0.0) return ss_res == 0.0 ? 1.0 : 0.0;
  return 1.0 - ss_res / ss_tot;
}

namespace {

Eigen::MatrixXd rows_of(const Eigen::MatrixXd& x, std::span<const std::size_t> idx) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) out.row(static_cast<Eigen::Index>(r)) = x.row(static_cast<Eigen::Index>(idx[r]));
  return out;
}

Eigen::VectorXd rows_of(const Eigen::VectorXd& y, std::span<const std::size_t> idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t r = 0; r < idx.size(); ++r) out(static_cast<Eigen::Index>(r)) = y(static_cast<Eigen::Index>(idx[r]));
  return out;
}

std::vector<std::size_t> complement(std::size_t n, std::span<const std::size_t> test) {
  std::vector<std::size_t> out;
  std::size_t t = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (t < test.size() && test[t] == i) {
      ++t;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

std::uint64_t inner_seed(std::uint64_t seed, std::size_t fold) {
  return seed * 0x9E3779B97F4A7C15ULL + fold + 1;
}

}  // namespace

LambdaSelection select_lambda(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, std::span<const double> grid,
                              std::size_t n_folds, std::uint64_t seed) {
  if (grid.empty()) throw UsageError("select_lambda: empty grid");
  LambdaSelection sel;
  sel.grid.assign(grid.begin(), grid.end());
  if (grid.size() == 1) {
    sel.lambda = grid[0];
    sel.cv_mse.assign(1, std::numeric_limits<double>::quiet_NaN());
    return sel;
  }
  const std::size_t n = static_cast<std::size_t>(x.rows());
  if (n < 2) throw DataError("select_lambda: need at least 2 rows");
  const auto folds = kfold_indices(n, std::min(n_folds, n), seed);
  sel.cv_mse.assign(grid.size(), 0.0);
  for (const auto& test : folds) {
    const auto train = complement(n, test);
    const Eigen::MatrixXd xtr = rows_of(x, train), xte = rows_of(x, test);
    const Eigen::VectorXd ytr = rows_of(y, train), yte = rows_of(y, test);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const RidgeModel m = fit_ridge(xtr, ytr, grid[g]);
      sel.cv_mse[g] += mean_squared_error(yte, m.predict(xte)) / static_cast<double>(folds.size());
    }
  }
  std::size_t best = 0;
  for (std::size_t g = 1; g < grid.size(); ++g) {
    if (sel.cv_mse[g] < sel.cv_mse[best] || (sel.cv_mse[g] == sel.cv_mse[best] && grid[g] < grid[best])) best = g;
  }
  sel.lambda = grid[best];
  return sel;
}

EvaluationReport cross_validate_with(const Eigen::VectorXd& y, std::size_t n_folds, std::uint64_t seed,
                                     const FoldPredictor& predictor, std::string model) {
  const std::size_t n = static_cast<std::size_t>(y.size());
  const auto folds = kfold_indices(n, n_folds, seed);
  EvaluationReport rep;
  rep.model = std::move(model);
  rep.n_folds = n_folds;
  rep.seed = seed;
  for (std::size_t f = 0; f < folds.size(); ++f) {
    const auto& test = folds[f];
    if (test.size() < 2) throw DataError("cross_validate: fold " + std::to_string(f + 1) + " has fewer than 2 rows");
    const auto train = complement(n, test);
    FoldMetrics fm;
    fm.index = f;
    fm.n_train = train.size();
    fm.n_test = test.size();
    const Eigen::VectorXd pred = predictor(train, test, fm);
    const Eigen::VectorXd yte = rows_of(y, test);
    fm.mse = mean_squared_error(yte, pred);
    fm.r2 = r_squared(yte, pred);
    rep.folds.push_back(fm);
  }
  const double k = static_cast<double>(rep.folds.size());
  for (const auto& fm : rep.folds) {
    rep.mse_mean += fm.mse;
    rep.r2_mean += fm.r2;
  }
  rep.mse_mean /= k;
  rep.r2_mean /= k;
  for (const auto& fm : rep.folds) {
    rep.mse_sd += (fm.mse - rep.mse_mean) * (fm.mse - rep.mse_mean);
    rep.r2_sd += (fm.r2 - rep.r2_mean) * (fm.r2 - rep.r2_mean);
  }
  rep.mse_sd = std::sqrt(rep.mse_sd / k);
  rep.r2_sd = std::sqrt(rep.r2_sd / k);
  return rep;
}

namespace {

EvaluationReport evaluate_ridge(const Eigen::MatrixXd& x, const std::vector<bool>& numeric, const Eigen::VectorXd& y,
                                const CvConfig& config, std::span<const double> grid, std::string model) {
  if (x.rows() != y.size()) throw DataError("cross_validate: row count mismatch");
  return cross_validate_with(
      y, config.n_folds, config.seed,
      [&](std::span<const std::size_t> train, std::span<const std::size_t> test, FoldMetrics& fm) {
        const Eigen::MatrixXd xtr_raw = rows_of(x, train);
        auto [stdz, xtr] = standardize(xtr_raw, numeric);
        const Eigen::VectorXd ytr = rows_of(y, train);
        const auto sel = select_lambda(xtr, ytr, grid, config.inner_folds, inner_seed(config.seed, fm.index));
        RidgeModel m = fit_ridge(xtr, ytr, sel.lambda);
        m.standardizer = std::move(stdz);
        fm.lambda = sel.lambda;
        return m.predict(rows_of(x, test));
      },
      std::move(model));
}

}  // namespace

EvaluationReport cross_validate(const Eigen::MatrixXd& x, const std::vector<bool>& numeric, const Eigen::VectorXd& y,
                                const CvConfig& config) {
  return evaluate_ridge(x, numeric, y, config, config.grid, "ridge");
}

EvaluationReport lr_baseline(const Eigen::MatrixXd& x, const std::vector<bool>& numeric, const Eigen::VectorXd& y,
                             const CvConfig& config) {
  static constexpr double kZero[] = {0.0};
  return evaluate_ridge(x, numeric, y, config, kZero, "linear_regression");
}

json to_json(const EvaluationReport& r) {
  json folds = json::array();
  for (std::size_t f = 0; f < r.folds.size(); ++f) {
    const auto& fm = r.folds[f];
    folds.push_back({{"fold", f + 1},
                     {"mse", fm.mse},
                     {"r2", fm.r2},
                     {"lambda", fm.lambda},
                     {"n_train", fm.n_train},
                     {"n_test", fm.n_test}});
  }
  return {{"model", r.model},
          {"n_folds", r.n_folds},
          {"seed", r.seed},
          {"folds", std::move(folds)},
          {"aggregate", {{"mse_mean", r.mse_mean}, {"mse_sd", r.mse_sd}, {"r2_mean", r.r2_mean}, {"r2_sd", r.r2_sd}}}};
}

}  // namespace mcqd
