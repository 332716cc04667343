#include "irt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

#include "quadrature.hpp"

namespace mcqd {

double log_sigmoid(double z) {
  return z >= 0.0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

double irt_probability(double theta, double alpha, double beta) {
  // Clamped so the result stays strictly inside (0, 1) in double precision.
  static const double kLo = std::numeric_limits<double>::min();
  static const double kHi = std::nextafter(1.0, 0.0);
  const double z = alpha * (theta - beta);
  if (z >= 0.0) return std::min(1.0 / (1.0 + std::exp(-z)), kHi);
  const double e = std::exp(z);
  return std::max(e / (1.0 + e), kLo);
}

namespace {

struct Response {
  std::size_t item;
  bool correct;
};

// Expected counts at the quadrature nodes for one item.
struct ItemStats {
  std::vector<double> n;  // expected respondents per node
  std::vector<double> r;  // expected correct per node
};

struct ItemObjective {
  const std::vector<double>& nodes;
  const ItemStats& stats;
  double penalty;  // 0 unless degenerate

  double value(double log_alpha, double beta) const {
    const double alpha = std::exp(log_alpha);
    double f = 0.0;
    for (std::size_t q = 0; q < nodes.size(); ++q) {
      const double z = alpha * (nodes[q] - beta);
      f += stats.r[q] * log_sigmoid(z) + (stats.n[q] - stats.r[q]) * log_sigmoid(-z);
    }
    return f - 0.5 * penalty * (beta * beta + log_alpha * log_alpha);
  }
};

// Fisher scoring in (log alpha, beta) with backtracking, so the item objective
// never decreases.
void maximize_item(const ItemObjective& obj, double& log_alpha, double& beta, std::size_t max_steps) {
  double current = obj.value(log_alpha, beta);
  for (std::size_t step = 0; step < max_steps; ++step) {
    const double alpha = std::exp(log_alpha);
    double ga = 0.0, gb = 0.0, iaa = 0.0, iab = 0.0, ibb = 0.0;
    for (std::size_t q = 0; q < obj.nodes.size(); ++q) {
      const double z = alpha * (obj.nodes[q] - beta);
      const double p = irt_probability(obj.nodes[q], alpha, beta);
      const double g = obj.stats.r[q] - obj.stats.n[q] * p;
      const double h = obj.stats.n[q] * p * (1.0 - p);
      ga += g * z;
      gb -= g * alpha;
      iaa += h * z * z;
      iab -= h * z * alpha;
      ibb += h * alpha * alpha;
    }
    ga -= obj.penalty * log_alpha;
    gb -= obj.penalty * beta;
    iaa += obj.penalty;
    ibb += obj.penalty;
    // Levenberg damping keeps the system positive definite when the
    // information is nearly singular (e.g. alpha unidentified).
    const double damp = 1e-8 * (1.0 + iaa + ibb);
    iaa += damp;
    ibb += damp;
    const double det = iaa * ibb - iab * iab;
    double da, db;
    if (det > 1e-300) {
      da = (ibb * ga - iab * gb) / det;
      db = (iaa * gb - iab * ga) / det;
    } else {
      da = ga / iaa;
      db = gb / ibb;
    }
    // Cap the step in log(alpha) and beta.
    const double scale = std::max({1.0, std::abs(da) / 1.0, std::abs(db) / 2.0});
    da /= scale;
    db /= scale;

    bool accepted = false;
    double t = 1.0;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      const double na = log_alpha + t * da;
      const double nb = beta + t * db;
      const double candidate = obj.value(na, nb);
      if (std::isfinite(candidate) && candidate >= current) {
        const double gain = candidate - current;
        log_alpha = na;
        beta = nb;
        current = candidate;
        accepted = true;
        if (gain < 1e-12 && std::max(std::abs(t * da), std::abs(t * db)) < 1e-9) return;
        break;
      }
    }
    if (!accepted) return;
    if (std::max(std::abs(t * da), std::abs(t * db)) < 1e-10) return;
  }
}

}  // namespace

IrtFit fit_2pl(std::span<const InteractionRecord> records, const IrtFitConfig& config) {
  if (records.empty()) throw DataError("fit_2pl: no records");
  if (config.tolerance <= 0.0) throw UsageError("fit_2pl: tolerance must be > 0");

  std::set<std::string> item_set, student_set;
  for (const auto& r : records) {
    item_set.insert(r.question_id);
    student_set.insert(r.student_id);
  }
  IrtParameters params;
  params.item_ids.assign(item_set.begin(), item_set.end());
  params.student_ids.assign(student_set.begin(), student_set.end());
  std::unordered_map<std::string_view, std::size_t> item_index, student_index;
  for (std::size_t i = 0; i < params.item_ids.size(); ++i) item_index[params.item_ids[i]] = i;
  for (std::size_t u = 0; u < params.student_ids.size(); ++u) student_index[params.student_ids[u]] = u;

  const std::size_t n_items = params.item_ids.size();
  const std::size_t n_students = params.student_ids.size();
  std::vector<std::vector<Response>> responses(n_students);
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<double> n_obs(n_items, 0.0), n_correct(n_items, 0.0);
  for (const auto& r : records) {
    const std::size_t i = item_index[r.question_id];
    const std::size_t u = student_index[r.student_id];
    if (!seen.emplace(u, i).second) continue;
    responses[u].push_back({i, r.is_correct});
    n_obs[i] += 1.0;
    n_correct[i] += r.is_correct ? 1.0 : 0.0;
  }

  IrtFitReport report;
  report.tolerance_used = config.tolerance;
  std::vector<double> penalty(n_items, 0.0);
  std::vector<double> log_alpha(n_items, 0.0), beta(n_items, 0.0);
  for (std::size_t i = 0; i < n_items; ++i) {
    if (n_correct[i] == 0.0 || n_correct[i] == n_obs[i]) {
      penalty[i] = config.degenerate_penalty;
      report.degenerate_items.push_back(params.item_ids[i]);
    }
    const double p = std::clamp(n_correct[i] / n_obs[i], 0.02, 0.98);
    // Marginal logit is attenuated by roughly 1/sqrt(1 + pi^2/8) at alpha = 1.
    beta[i] = -std::log(p / (1.0 - p)) * 1.49;
  }

  const QuadratureRule rule = gauss_hermite_normal(config.quadrature_nodes);
  const std::size_t n_nodes = rule.nodes.size();
  std::vector<double> log_weight(n_nodes);
  for (std::size_t q = 0; q < n_nodes; ++q) log_weight[q] = std::log(rule.weights[q]);

  std::vector<double> log_p(n_items * n_nodes), log_q(n_items * n_nodes);
  std::vector<ItemStats> stats(n_items, ItemStats{std::vector<double>(n_nodes), std::vector<double>(n_nodes)});
  std::vector<double> eap(n_students, 0.0), ll_nodes(n_nodes), post(n_nodes);

  auto e_step = [&]() {
    for (std::size_t i = 0; i < n_items; ++i) {
      const double alpha = std::exp(log_alpha[i]);
      for (std::size_t q = 0; q < n_nodes; ++q) {
        const double z = alpha * (rule.nodes[q] - beta[i]);
        log_p[i * n_nodes + q] = log_sigmoid(z);
        log_q[i * n_nodes + q] = log_sigmoid(-z);
      }
      std::fill(stats[i].n.begin(), stats[i].n.end(), 0.0);
      std::fill(stats[i].r.begin(), stats[i].r.end(), 0.0);
    }
    double total = 0.0;
    for (std::size_t u = 0; u < n_students; ++u) {
      ll_nodes = log_weight;
      for (const Response& resp : responses[u]) {
        const double* row = (resp.correct ? log_p.data() : log_q.data()) + resp.item * n_nodes;
        for (std::size_t q = 0; q < n_nodes; ++q) ll_nodes[q] += row[q];
      }
      const double mx = *std::max_element(ll_nodes.begin(), ll_nodes.end());
      double sum = 0.0;
      for (std::size_t q = 0; q < n_nodes; ++q) {
        post[q] = std::exp(ll_nodes[q] - mx);
        sum += post[q];
      }
      total += mx + std::log(sum);
      double mean = 0.0;
      for (std::size_t q = 0; q < n_nodes; ++q) {
        post[q] /= sum;
        mean += post[q] * rule.nodes[q];
      }
      eap[u] = mean;
      for (const Response& resp : responses[u]) {
        auto& s = stats[resp.item];
        for (std::size_t q = 0; q < n_nodes; ++q) {
          s.n[q] += post[q];
          if (resp.correct) s.r[q] += post[q];
        }
      }
    }
    for (std::size_t i = 0; i < n_items; ++i) {
      total -= 0.5 * penalty[i] * (beta[i] * beta[i] + log_alpha[i] * log_alpha[i]);
    }
    return total;
  };

  double objective = e_step();
  report.log_likelihood_trace.push_back(objective);
  while (report.n_iterations < config.max_iterations) {
    for (std::size_t i = 0; i < n_items; ++i) {
      ItemObjective obj{rule.nodes, stats[i], penalty[i]};
      maximize_item(obj, log_alpha[i], beta[i], config.max_newton_steps);
    }
    ++report.n_iterations;
    const double next = e_step();
    report.log_likelihood_trace.push_back(next);
    const double change = std::abs(next - objective);
    objective = next;
    if (change < config.tolerance) {
      report.converged = true;
      break;
    }
  }
  report.log_likelihood = objective;

  params.alpha.resize(n_items);
  params.beta = beta;
  for (std::size_t i = 0; i < n_items; ++i) params.alpha[i] = std::exp(log_alpha[i]);
  params.theta = eap;
  return {anchor_scale(params), std::move(report)};
}

IrtParameters anchor_scale(const IrtParameters& params) {
  const std::size_t n = params.theta.size();
  if (n == 0) throw NumericalError("anchor_scale: no abilities");
  double mean = 0.0;
  for (double t : params.theta) mean += t;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double t : params.theta) var += (t - mean) * (t - mean);
  var /= static_cast<double>(n);
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12)) throw NumericalError("anchor_scale: zero ability variance");

  IrtParameters out = params;
  for (double& t : out.theta) t = (t - mean) / sd;
  for (std::size_t i = 0; i < out.item_count(); ++i) {
    out.beta[i] = (out.beta[i] - mean) / sd;
    out.alpha[i] = out.alpha[i] * sd;
  }
  return out;
}

json to_json(const IrtParameters& params) {
  json items = json::array();
  for (std::size_t i = 0; i < params.item_count(); ++i) {
    items.push_back({{"question_id", params.item_ids[i]}, {"alpha", params.alpha[i]}, {"beta", params.beta[i]}});
  }
  json students = json::array();
  for (std::size_t u = 0; u < params.student_count(); ++u) {
    students.push_back({{"student_id", params.student_ids[u]}, {"theta", params.theta[u]}});
  }
  return {{"items", std::move(items)}, {"students", std::move(students)}};
}

IrtParameters irt_parameters_from_json(const json& j) {
  IrtParameters p;
  try {
    for (const auto& it : j.at("items")) {
      p.item_ids.push_back(it.at("question_id").get<std::string>());
      p.alpha.push_back(it.at("alpha").get<double>());
      p.beta.push_back(it.at("beta").get<double>());
    }
    for (const auto& st : j.at("students")) {
      p.student_ids.push_back(st.at("student_id").get<std::string>());
      p.theta.push_back(st.at("theta").get<double>());
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("irt_params.json: ") + e.what());
  }
  return p;
}

json to_json(const IrtFitReport& report) {
  return {{"log_likelihood", report.log_likelihood},
          {"n_iterations", report.n_iterations},
          {"converged", report.converged},
          {"tolerance_used", report.tolerance_used},
          {"log_likelihood_trace", report.log_likelihood_trace},
          {"degenerate_items", report.degenerate_items}};
}

}  // namespace mcqd
