#include "features.hpp"

#include <algorithm>
#include <cmath>

namespace mcqd {

std::vector<double> ItemFeatureVector::values() const {
  std::vector<double> v = p_correct;
  v.push_back(mean);
  v.push_back(variance);
  v.push_back(range);
  v.insert(v.end(), topic.begin(), topic.end());
  return v;
}

ItemFeatureVector extract_features(const SimulationMatrix& matrix, const Question& question, std::size_t k) {
  if (matrix.rows.size() != k) {
    throw DataError(matrix.question_id + ": incomplete simulation matrix (" + std::to_string(matrix.rows.size()) +
                    " of " + std::to_string(k) + " personas)");
  }
  if (matrix.question_id != question.question_id) throw DataError("extract_features: question mismatch");
  ItemFeatureVector f;
  f.question_id = question.question_id;
  for (const auto& row : matrix.rows) f.p_correct.push_back(row[index_of(question.correct_option)]);
  double sum = 0.0;
  for (double p : f.p_correct) sum += p;
  f.mean = sum / static_cast<double>(k);
  double ss = 0.0;
  for (double p : f.p_correct) ss += (p - f.mean) * (p - f.mean);
  f.variance = ss / static_cast<double>(k);
  const auto [lo, hi] = std::minmax_element(f.p_correct.begin(), f.p_correct.end());
  f.range = *hi - *lo;
  f.topic[index_of(question.topic)] = 1.0;
  return f;
}

std::vector<std::string> feature_names(std::size_t k) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < k; ++c) names.push_back("p_correct_" + std::to_string(c + 1));
  names.insert(names.end(), {"p_correct_mean", "p_correct_var", "p_correct_range", "topic_number", "topic_algebra",
                             "topic_geometry_measure"});
  return names;
}

std::vector<bool> numeric_mask(std::size_t k) {
  std::vector<bool> m(k + 3, true);
  m.insert(m.end(), kNumTopics, false);
  return m;
}

std::string features_csv(std::span<const ItemFeatureVector> features, std::span<const double> targets,
                         const std::string& manifest_hash) {
  if (features.size() != targets.size()) throw Error("features_csv: target count mismatch");
  std::string out;
  if (!manifest_hash.empty()) out += "# manifest_hash=" + manifest_hash + "\n";
  const std::size_t k = features.empty() ? 0 : features.front().p_correct.size();
  out += "question_id";
  for (const auto& n : feature_names(k)) out += "," + n;
  out += ",beta\n";
  for (std::size_t r = 0; r < features.size(); ++r) {
    out += csv_escape(features[r].question_id);
    for (double v : features[r].values()) out += "," + format_double(v);
    out += "," + format_double(targets[r]) + "\n";
  }
  return out;
}

FeatureTable read_feature_table(const std::filesystem::path& path, const std::string& target) {
  const CsvTable csv = read_csv(path);
  FeatureTable t;
  std::size_t id_col = csv.header.size(), y_col = csv.header.size();
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < csv.header.size(); ++j) {
    if (csv.header[j] == "question_id") {
      id_col = j;
    } else if (csv.header[j] == target) {
      y_col = j;
    } else {
      cols.push_back(j);
      t.columns.push_back(csv.header[j]);
      t.numeric.push_back(csv.header[j].rfind("topic_", 0) != 0);
    }
  }
  if (id_col == csv.header.size()) throw DataError(path.filename().string() + ": missing question_id column");
  if (y_col == csv.header.size()) throw DataError(path.filename().string() + ": missing target column '" + target + "'");
  if (cols.empty()) throw DataError(path.filename().string() + ": no feature columns");
  t.x.resize(static_cast<Eigen::Index>(csv.rows.size()), static_cast<Eigen::Index>(cols.size()));
  t.y.resize(static_cast<Eigen::Index>(csv.rows.size()));
  for (std::size_t r = 0; r < csv.rows.size(); ++r) {
    const auto ctx = path.filename().string() + " row " + std::to_string(r + 1);
    t.row_ids.push_back(csv.rows[r][id_col]);
    for (std::size_t j = 0; j < cols.size(); ++j) {
      t.x(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = parse_double(csv.rows[r][cols[j]], ctx);
    }
    t.y(static_cast<Eigen::Index>(r)) = parse_double(csv.rows[r][y_col], ctx);
  }
  return t;
}

Eigen::MatrixXd Standardizer::transform(const Eigen::MatrixXd& x) const {
  if (x.cols() != mean.size()) throw DataError("standardizer: column count mismatch");
  Eigen::MatrixXd out = x;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    if (!scaled[static_cast<std::size_t>(j)]) continue;
    out.col(j).array() = (out.col(j).array() - mean(j)) / sd(j);
  }
  return out;
}

Standardizer fit_standardizer(const Eigen::MatrixXd& train, const std::vector<bool>& numeric) {
  if (train.rows() < 2) throw DataError("standardize: need at least 2 training rows");
  if (static_cast<Eigen::Index>(numeric.size()) != train.cols()) throw DataError("standardize: mask size mismatch");
  Standardizer s;
  s.mean = Eigen::VectorXd::Zero(train.cols());
  s.sd = Eigen::VectorXd::Ones(train.cols());
  s.scaled = numeric;
  s.zero_variance.assign(numeric.size(), false);
  const double n = static_cast<double>(train.rows());
  for (Eigen::Index j = 0; j < train.cols(); ++j) {
    if (!numeric[static_cast<std::size_t>(j)]) continue;
    const double m = train.col(j).mean();
    const double var = (train.col(j).array() - m).square().sum() / n;
    s.mean(j) = m;
    if (var > 0.0) {
      s.sd(j) = std::sqrt(var);
    } else {
      s.zero_variance[static_cast<std::size_t>(j)] = true;
    }
  }
  return s;
}

std::pair<Standardizer, Eigen::MatrixXd> standardize(const Eigen::MatrixXd& train, const std::vector<bool>& numeric) {
  Standardizer s = fit_standardizer(train, numeric);
  Eigen::MatrixXd x = s.transform(train);
  return {std::move(s), std::move(x)};
}

}  // namespace mcqd
