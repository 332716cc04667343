#pragma once

#include <Eigen/Dense>
#include <array>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "simulation.hpp"

namespace mcqd {

// Per-persona correct-option probability, its cross-persona mean, population
// variance and range, and the topic one-hot (Number, Algebra,
// GeometryAndMeasure).
struct ItemFeatureVector {
  std::string question_id;
  std::vector<double> p_correct;
  double mean = 0.0;
  double variance = 0.0;
  double range = 0.0;
  std::array<double, kNumTopics> topic{};

  std::vector<double> values() const;
};

ItemFeatureVector extract_features(const SimulationMatrix& matrix, const Question& question, std::size_t k);

std::vector<std::string> feature_names(std::size_t k);
// The p_correct and aggregate columns are numeric; the one-hot columns are not.
std::vector<bool> numeric_mask(std::size_t k);

// Rows of features with targets, as read from features.csv or a baseline table.
struct FeatureTable {
  std::vector<std::string> row_ids;
  std::vector<std::string> columns;
  std::vector<bool> numeric;
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

std::string features_csv(std::span<const ItemFeatureVector> features, std::span<const double> targets,
                         const std::string& manifest_hash = {});
// Reads `question_id`, feature columns and a target column. Columns named
// topic_* are treated as indicators; everything else as numeric.
FeatureTable read_feature_table(const std::filesystem::path& path, const std::string& target = "beta");

// Column-wise standardization fitted on training rows only.
struct Standardizer {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
  std::vector<bool> scaled;         // numeric columns
  std::vector<bool> zero_variance;  // numeric columns that were only centered

  Eigen::MatrixXd transform(const Eigen::MatrixXd& x) const;
};

// Numeric columns are scaled to mean 0 and population sd 1; indicator columns
// pass through. A constant numeric column becomes zeros and is flagged.
Standardizer fit_standardizer(const Eigen::MatrixXd& train, const std::vector<bool>& numeric);
std::pair<Standardizer, Eigen::MatrixXd> standardize(const Eigen::MatrixXd& train, const std::vector<bool>& numeric);

}  // namespace mcqd
