#include "lca.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <set>
#include <unordered_map>

namespace mcqd {

ResponseMatrix::ResponseMatrix(std::vector<std::string> student_ids, std::vector<std::string> item_ids)
    : student_ids_(std::move(student_ids)),
      item_ids_(std::move(item_ids)),
      cells_(student_ids_.size() * item_ids_.size(), kMissing) {}

ResponseMatrix ResponseMatrix::from_records(std::span<const InteractionRecord> records) {
  std::set<std::string> students, items;
  for (const auto& r : records) {
    students.insert(r.student_id);
    items.insert(r.question_id);
  }
  ResponseMatrix m({students.begin(), students.end()}, {items.begin(), items.end()});
  std::unordered_map<std::string_view, std::size_t> si, ii;
  for (std::size_t u = 0; u < m.students(); ++u) si[m.student_ids_[u]] = u;
  for (std::size_t i = 0; i < m.items(); ++i) ii[m.item_ids_[i]] = i;
  for (const auto& r : records) {
    const std::size_t u = si[r.student_id], i = ii[r.question_id];
    if (m.at(u, i) == kMissing) m.set(u, i, r.is_correct ? 1 : 0);
  }
  return m;
}

double ResponseMatrix::row_accuracy(std::size_t u) const {
  double correct = 0.0, seen = 0.0;
  for (std::size_t i = 0; i < items(); ++i) {
    const auto v = at(u, i);
    if (v == kMissing) continue;
    seen += 1.0;
    correct += v;
  }
  return seen > 0.0 ? correct / seen : std::numeric_limits<double>::quiet_NaN();
}

namespace {

constexpr double kWeightFloor = 1e-12;

// Fills post (students x k) and returns the log-likelihood.
double e_step(const LatentClassModel& m, const ResponseMatrix& x, std::vector<double>& post) {
  const std::size_t k = m.k, n = x.students(), p = x.items();
  std::vector<double> log_rho(p * k), log_1m(p * k), log_w(k), ll(k);
  for (std::size_t j = 0; j < p * k; ++j) {
    log_rho[j] = std::log(m.rho[j]);
    log_1m[j] = std::log1p(-m.rho[j]);
  }
  for (std::size_t c = 0; c < k; ++c) log_w[c] = std::log(m.class_weights[c]);
  post.assign(n * k, 0.0);
  double total = 0.0;
  for (std::size_t u = 0; u < n; ++u) {
    ll = log_w;
    for (std::size_t i = 0; i < p; ++i) {
      const auto v = x.at(u, i);
      if (v == ResponseMatrix::kMissing) continue;
      const double* row = (v ? log_rho.data() : log_1m.data()) + i * k;
      for (std::size_t c = 0; c < k; ++c) ll[c] += row[c];
    }
    const double mx = *std::max_element(ll.begin(), ll.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      post[u * k + c] = std::exp(ll[c] - mx);
      sum += post[u * k + c];
    }
    for (std::size_t c = 0; c < k; ++c) post[u * k + c] /= sum;
    total += mx + std::log(sum);
  }
  return total;
}

void m_step(LatentClassModel& m, const ResponseMatrix& x, const std::vector<double>& post, double floor) {
  const std::size_t k = m.k, n = x.students(), p = x.items();
  std::vector<double> num(p * k, 0.0), den(p * k, 0.0), mass(k, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const double* pu = post.data() + u * k;
    for (std::size_t c = 0; c < k; ++c) mass[c] += pu[c];
    for (std::size_t i = 0; i < p; ++i) {
      const auto v = x.at(u, i);
      if (v == ResponseMatrix::kMissing) continue;
      for (std::size_t c = 0; c < k; ++c) {
        den[i * k + c] += pu[c];
        if (v) num[i * k + c] += pu[c];
      }
    }
  }
  double total = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    m.class_weights[c] = std::max(mass[c] / static_cast<double>(n), kWeightFloor);
    total += m.class_weights[c];
  }
  for (double& w : m.class_weights) w /= total;
  for (std::size_t j = 0; j < p * k; ++j) {
    const double r = den[j] > 0.0 ? num[j] / den[j] : 0.5;
    m.rho[j] = std::clamp(r, floor, 1.0 - floor);
  }
}

}  // namespace

LatentClassModel fit_lca_once(const ResponseMatrix& matrix, std::size_t k, const LcaConfig& config,
                              std::size_t restart) {
  const std::size_t n = matrix.students();
  LatentClassModel m;
  m.k = k;
  m.n_items = matrix.items();
  m.class_weights.assign(k, 1.0 / static_cast<double>(k));
  m.rho.assign(m.n_items * k, 0.5);

  std::seed_seq seq{static_cast<std::uint32_t>(config.seed), static_cast<std::uint32_t>(config.seed >> 32),
                    static_cast<std::uint32_t>(restart), static_cast<std::uint32_t>(k)};
  std::mt19937_64 rng(seq);
  std::exponential_distribution<double> expo(1.0);
  std::vector<double> post(n * k);
  for (std::size_t u = 0; u < n; ++u) {
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += post[u * k + c] = expo(rng);
    for (std::size_t c = 0; c < k; ++c) post[u * k + c] /= sum;
  }
  m_step(m, matrix, post, config.rho_floor);

  double ll = e_step(m, matrix, post);
  m.log_likelihood_trace.push_back(ll);
  while (m.n_iterations < config.max_iterations) {
    m_step(m, matrix, post, config.rho_floor);
    ++m.n_iterations;
    const double next = e_step(m, matrix, post);
    m.log_likelihood_trace.push_back(next);
    const double change = std::abs(next - ll);
    ll = next;
    if (change < config.tolerance) {
      m.converged = true;
      break;
    }
  }
  m.log_likelihood = ll;
  return m;
}

LatentClassModel fit_lca(const ResponseMatrix& matrix, std::size_t k, const LcaConfig& config) {
  if (k < 1) throw UsageError("fit_lca: k must be >= 1");
  if (k > matrix.students()) {
    throw DataError("fit_lca: k = " + std::to_string(k) + " exceeds the student count " +
                    std::to_string(matrix.students()));
  }
  for (std::size_t u = 0; u < matrix.students(); ++u) {
    if (std::isnan(matrix.row_accuracy(u))) {
      throw DataError("fit_lca: student '" + matrix.student_ids()[u] + "' has no observed responses");
    }
  }
  const std::size_t restarts = std::max<std::size_t>(config.restarts, 1);
  LatentClassModel best;
  for (std::size_t r = 0; r < restarts; ++r) {
    LatentClassModel m = fit_lca_once(matrix, k, config, r);
    if (r == 0 || m.log_likelihood > best.log_likelihood) best = std::move(m);
    if (k == 1) break;  // deterministic closed form
  }
  return best;
}

std::size_t lca_parameter_count(std::size_t k, std::size_t n_items) { return (k - 1) + k * n_items; }

InformationCriteria information_criteria(double log_likelihood, std::size_t n_parameters,
                                         std::size_t n_students) {
  const double p = static_cast<double>(n_parameters);
  return {-2.0 * log_likelihood + p * std::log(static_cast<double>(n_students)),
          -2.0 * log_likelihood + 2.0 * p, n_parameters};
}

InformationCriteria information_criteria(const LatentClassModel& model, std::size_t n_students) {
  return information_criteria(model.log_likelihood, lca_parameter_count(model.k, model.n_items), n_students);
}

std::size_t select_k(const ModelSelectionCurve& curve) {
  if (curve.empty()) throw DataError("select_k: empty model-selection curve");
  const ModelSelectionRow* best = &curve.front();
  for (const auto& row : curve) {
    if (row.bic < best->bic || (row.bic == best->bic && row.k < best->k)) best = &row;
  }
  return best->k;
}

const LatentClassModel& ModelSelection::best() const {
  for (std::size_t j = 0; j < curve.size(); ++j) {
    if (curve[j].k == best_k) return models[j];
  }
  throw Error("ModelSelection: best_k not in curve");
}

ModelSelection sweep_k(const ResponseMatrix& matrix, std::size_t k_min, std::size_t k_max,
                       const LcaConfig& config) {
  if (k_min < 1 || k_max < k_min) throw UsageError("sweep_k: invalid k range");
  ModelSelection out;
  for (std::size_t k = k_min; k <= k_max && k <= matrix.students(); ++k) {
    LatentClassModel m = fit_lca(matrix, k, config);
    const auto ic = information_criteria(m, matrix.students());
    out.curve.push_back({k, m.log_likelihood, ic.n_parameters, ic.aic, ic.bic});
    out.models.push_back(std::move(m));
  }
  out.best_k = select_k(out.curve);
  return out;
}

std::vector<double> class_posteriors(const LatentClassModel& model, const ResponseMatrix& matrix) {
  if (model.n_items != matrix.items()) throw DataError("class_posteriors: item count mismatch");
  std::vector<double> post;
  e_step(model, matrix, post);
  return post;
}

ClassAssignment assign_classes(const LatentClassModel& model, const ResponseMatrix& matrix) {
  const std::size_t k = model.k, n = matrix.students();
  const std::vector<double> post = class_posteriors(model, matrix);
  std::vector<std::size_t> raw(n);
  for (std::size_t u = 0; u < n; ++u) {
    const double* pu = post.data() + u * k;
    raw[u] = static_cast<std::size_t>(std::max_element(pu, pu + k) - pu);  // first max wins
  }

  std::vector<double> acc_sum(k, 0.0), count(k, 0.0), mean_acc(k, 0.0);
  for (std::size_t u = 0; u < n; ++u) {
    const double a = matrix.row_accuracy(u);
    if (std::isnan(a)) continue;
    acc_sum[raw[u]] += a;
    count[raw[u]] += 1.0;
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (count[c] > 0.0) {
      mean_acc[c] = acc_sum[c] / count[c];
    } else {
      double s = 0.0;
      for (std::size_t i = 0; i < model.n_items; ++i) s += model.rho_at(i, c);
      mean_acc[c] = model.n_items ? s / static_cast<double>(model.n_items) : 0.0;
    }
  }
  ClassAssignment out;
  out.k = k;
  out.student_ids = matrix.student_ids();
  out.label_order.resize(k);
  std::iota(out.label_order.begin(), out.label_order.end(), 0);
  std::stable_sort(out.label_order.begin(), out.label_order.end(),
                   [&](std::size_t a, std::size_t b) { return mean_acc[a] < mean_acc[b]; });
  std::vector<std::size_t> new_label(k);
  for (std::size_t c = 0; c < k; ++c) new_label[out.label_order[c]] = c;

  out.cls.resize(n);
  out.posterior.resize(n * k);
  for (std::size_t u = 0; u < n; ++u) {
    out.cls[u] = new_label[raw[u]];
    for (std::size_t c = 0; c < k; ++c) out.posterior[u * k + c] = post[u * k + out.label_order[c]];
  }
  out.class_mean_accuracy.resize(k);
  for (std::size_t c = 0; c < k; ++c) out.class_mean_accuracy[c] = mean_acc[out.label_order[c]];
  return out;
}

LatentClassModel relabel(const LatentClassModel& model, std::span<const std::size_t> label_order) {
  LatentClassModel out = model;
  for (std::size_t c = 0; c < model.k; ++c) {
    const std::size_t from = label_order[c];
    out.class_weights[c] = model.class_weights[from];
    for (std::size_t i = 0; i < model.n_items; ++i) out.rho[i * model.k + c] = model.rho_at(i, from);
  }
  return out;
}

json to_json(const LatentClassModel& model, std::span<const std::string> item_ids) {
  json rho = json::array();
  for (std::size_t i = 0; i < model.n_items; ++i) {
    std::vector<double> row(model.rho.begin() + static_cast<std::ptrdiff_t>(i * model.k),
                            model.rho.begin() + static_cast<std::ptrdiff_t>((i + 1) * model.k));
    rho.push_back({{"question_id", item_ids[i]}, {"rho", row}});
  }
  return {{"k", model.k},
          {"class_weights", model.class_weights},
          {"rho", std::move(rho)},
          {"log_likelihood", model.log_likelihood},
          {"n_iterations", model.n_iterations},
          {"converged", model.converged}};
}

std::string model_selection_csv(const ModelSelectionCurve& curve) {
  std::string out = "k,logL,p,AIC,BIC\n";
  for (const auto& row : curve) {
    out += std::to_string(row.k) + "," + format_double(row.log_likelihood) + "," +
           std::to_string(row.n_parameters) + "," + format_double(row.aic) + "," + format_double(row.bic) + "\n";
  }
  return out;
}

std::string assignments_jsonl(const ClassAssignment& a) {
  std::string out;
  for (std::size_t u = 0; u < a.student_ids.size(); ++u) {
    std::vector<double> post(a.posterior.begin() + static_cast<std::ptrdiff_t>(u * a.k),
                             a.posterior.begin() + static_cast<std::ptrdiff_t>((u + 1) * a.k));
    json line = {{"student_id", a.student_ids[u]}, {"class", a.cls[u] + 1}, {"posterior", post}};
    out += line.dump();
    out += '\n';
  }
  return out;
}

ClassAssignment read_assignments(const std::filesystem::path& path) {
  ClassAssignment a;
  for_each_jsonl(path, [&](std::size_t line, const json& obj) {
    try {
      const auto post = obj.at("posterior").get<std::vector<double>>();
      const auto cls = obj.at("class").get<std::size_t>();
      if (a.k == 0) a.k = post.size();
      if (post.size() != a.k || cls < 1 || cls > a.k) throw DataError("inconsistent class/posterior");
      a.student_ids.push_back(obj.at("student_id").get<std::string>());
      a.cls.push_back(cls - 1);
      a.posterior.insert(a.posterior.end(), post.begin(), post.end());
    } catch (const std::exception& e) {
      throw DataError(path.filename().string() + ":" + std::to_string(line) + ": " + e.what());
    }
  });
  a.label_order.resize(a.k);
  std::iota(a.label_order.begin(), a.label_order.end(), 0);
  return a;
}

}  // namespace mcqd
