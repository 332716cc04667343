#include "synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

namespace mcqd {

namespace {

std::string padded(const char* prefix, std::size_t i, std::size_t width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s%0*zu", prefix, static_cast<int>(width), i + 1);
  return buf;
}

std::size_t width_for(std::size_t n) { return std::max<std::size_t>(4, std::to_string(n).size()); }

Question make_question(std::size_t i, std::size_t n_items, Topic topic, std::mt19937_64& rng) {
  Question q;
  q.question_id = padded("q", i, width_for(n_items));
  q.text = "Synthetic item " + std::to_string(i + 1) + " (" + std::string(to_string(topic)) + ")";
  for (Option o : kAllOptions) q.options[index_of(o)] = "choice " + std::string(to_string(o));
  q.correct_option = static_cast<Option>(std::uniform_int_distribution<int>(0, 3)(rng));
  q.topic = topic;
  return q;
}

Option pick_answer(const Question& q, bool correct, std::mt19937_64& rng) {
  if (correct) return q.correct_option;
  const int skip = std::uniform_int_distribution<int>(0, 2)(rng);
  int seen = 0;
  for (Option o : kAllOptions) {
    if (o == q.correct_option) continue;
    if (seen++ == skip) return o;
  }
  return q.correct_option;
}

void check_rate(double missing_rate) {
  if (!(missing_rate >= 0.0 && missing_rate < 1.0)) throw UsageError("synthetic: missing_rate must be in [0, 1)");
}

}  // namespace

IrtWorld generate_irt_world(const IrtWorldConfig& c) {
  check_rate(c.missing_rate);
  if (c.alpha_min > c.alpha_max || c.beta_min > c.beta_max) throw UsageError("synthetic: invalid parameter range");
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> ua(c.alpha_min, std::nextafter(c.alpha_max, c.alpha_max + 1.0));
  std::uniform_real_distribution<double> ub(c.beta_min, std::nextafter(c.beta_max, c.beta_max + 1.0));
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_real_distribution<double> u01(0.0, 1.0);

  IrtWorld w;
  for (std::size_t i = 0; i < c.n_items; ++i) {
    Question q = make_question(i, c.n_items, kAllTopics[i % kNumTopics], rng);
    w.truth.item_ids.push_back(q.question_id);
    w.truth.alpha.push_back(c.alpha_min == c.alpha_max ? c.alpha_min : ua(rng));
    w.truth.beta.push_back(c.beta_min == c.beta_max ? c.beta_min : ub(rng));
    w.items.add(std::move(q));
  }
  for (std::size_t u = 0; u < c.n_students; ++u) {
    w.truth.student_ids.push_back(padded("s", u, width_for(c.n_students)));
    w.truth.theta.push_back(norm(rng));
  }
  for (std::size_t u = 0; u < c.n_students; ++u) {
    for (std::size_t i = 0; i < c.n_items; ++i) {
      const double miss = u01(rng);
      const double draw = u01(rng);
      if (miss < c.missing_rate) continue;
      const Question& q = w.items.all()[i];
      const bool correct = draw < irt_probability(w.truth.theta[u], w.truth.alpha[i], w.truth.beta[i]);
      w.records.push_back({w.truth.student_ids[u], q.question_id, pick_answer(q, correct, rng), correct});
    }
  }
  return w;
}

LcaWorld generate_lca_world(const LcaWorldConfig& c) {
  check_rate(c.missing_rate);
  if (c.k_true < 1) throw UsageError("synthetic: k_true must be >= 1");
  std::vector<double> weights = c.class_weights;
  if (weights.empty()) weights.assign(c.k_true, 1.0 / static_cast<double>(c.k_true));
  if (weights.size() != c.k_true) throw UsageError("synthetic: class_weights size must equal k_true");
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0), mid(0.2, 0.8);
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());

  LcaWorld w;
  w.truth.k = c.k_true;
  w.truth.n_items = c.n_items;
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  for (double v : weights) w.truth.class_weights.push_back(v / total);
  w.truth.rho.resize(c.n_items * c.k_true);
  for (std::size_t i = 0; i < c.n_items; ++i) {
    for (std::size_t k = 0; k < c.k_true; ++k) {
      const double pole = u01(rng) < 0.5 ? 0.05 : 0.95;
      w.truth.rho[i * c.k_true + k] = c.separation * pole + (1.0 - c.separation) * mid(rng);
    }
  }
  std::vector<std::string> students, items;
  for (std::size_t u = 0; u < c.n_students; ++u) students.push_back(padded("s", u, width_for(c.n_students)));
  for (std::size_t i = 0; i < c.n_items; ++i) items.push_back(padded("q", i, width_for(c.n_items)));
  w.matrix = ResponseMatrix(students, items);
  for (std::size_t u = 0; u < c.n_students; ++u) {
    const std::size_t cls = c.k_true == 1 ? 0 : pick(rng);
    w.assignments.push_back(cls);
    bool any = false;
    for (std::size_t i = 0; i < c.n_items; ++i) {
      const double miss = u01(rng);
      const double draw = u01(rng);
      // Keep at least one observed cell per student.
      if (miss < c.missing_rate && (any || i + 1 < c.n_items)) continue;
      w.matrix.set(u, i, draw < w.truth.rho_at(i, cls) ? 1 : 0);
      any = true;
    }
  }
  return w;
}

PersonaWorld generate_persona_world(const PersonaWorldConfig& c) {
  check_rate(c.missing_rate);
  const std::size_t k = c.class_weights.size();
  if (k < 1 || c.class_ability.size() != k || c.topic_shift.size() != k) {
    throw UsageError("synthetic: class_weights, class_ability and topic_shift must have one entry per class");
  }
  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> ua(c.alpha_min, c.alpha_max), ub(c.beta_min, c.beta_max), u01(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::discrete_distribution<std::size_t> pick(c.class_weights.begin(), c.class_weights.end());

  PersonaWorld w;
  IrtParameters& items = w.truth.items;
  for (std::size_t i = 0; i < c.n_items; ++i) {
    Question q = make_question(i, c.n_items, kAllTopics[i % kNumTopics], rng);
    items.item_ids.push_back(q.question_id);
    items.alpha.push_back(ua(rng));
    items.beta.push_back(ub(rng));
    w.items.add(std::move(q));
  }

  // Class-conditional success, averaging over within-class noise by quadrature
  // when it is present.
  auto success = [&](std::size_t cls, std::size_t i) {
    const double loc = c.class_ability[cls] + c.topic_shift[cls][i % kNumTopics];
    if (c.within_class_sd <= 0.0) return irt_probability(loc, items.alpha[i], items.beta[i]);
    static const std::array<double, 5> x = {-2.8569700138728, -1.3556261799742, 0.0, 1.3556261799742, 2.8569700138728};
    static const std::array<double, 5> wq = {0.011257411327721, 0.22207592200561, 0.53333333333333,
                                             0.22207592200561, 0.011257411327721};
    double s = 0.0;
    for (std::size_t q = 0; q < x.size(); ++q) s += wq[q] * irt_probability(loc + c.within_class_sd * x[q], items.alpha[i], items.beta[i]);
    return s;
  };

  std::vector<double> mean_success(k, 0.0);
  std::vector<std::vector<double>> raw(k, std::vector<double>(c.n_items));
  for (std::size_t cls = 0; cls < k; ++cls) {
    for (std::size_t i = 0; i < c.n_items; ++i) mean_success[cls] += raw[cls][i] = success(cls, i);
  }
  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return mean_success[a] < mean_success[b]; });
  std::vector<std::size_t> rank(k);
  for (std::size_t r = 0; r < k; ++r) rank[order[r]] = r;
  const double wsum = std::accumulate(c.class_weights.begin(), c.class_weights.end(), 0.0);
  for (std::size_t r = 0; r < k; ++r) {
    w.truth.success.push_back(raw[order[r]]);
    w.truth.class_weights.push_back(c.class_weights[order[r]] / wsum);
  }

  for (std::size_t u = 0; u < c.n_students; ++u) {
    const std::size_t cls = pick(rng);
    const double theta = c.class_ability[cls] + (c.within_class_sd > 0.0 ? c.within_class_sd * noise(rng) : 0.0);
    const std::string sid = padded("s", u, width_for(c.n_students));
    items.student_ids.push_back(sid);
    items.theta.push_back(theta);
    w.truth.student_class.push_back(rank[cls]);
    for (std::size_t i = 0; i < c.n_items; ++i) {
      const double miss = u01(rng);
      const double draw = u01(rng);
      if (miss < c.missing_rate) continue;
      const Question& q = w.items.all()[i];
      const double p = irt_probability(theta + c.topic_shift[cls][i % kNumTopics], items.alpha[i], items.beta[i]);
      const bool correct = draw < p;
      w.records.push_back({sid, q.question_id, pick_answer(q, correct, rng), correct});
    }
  }
  return w;
}

json to_json(const IrtWorldConfig& c) {
  return {{"n_students", c.n_students}, {"n_items", c.n_items}, {"seed", c.seed},
          {"alpha_min", c.alpha_min},   {"alpha_max", c.alpha_max}, {"beta_min", c.beta_min},
          {"beta_max", c.beta_max},     {"missing_rate", c.missing_rate}};
}

IrtWorldConfig irt_world_config_from_json(const json& j) {
  IrtWorldConfig c;
  c.n_students = j.value("n_students", c.n_students);
  c.n_items = j.value("n_items", c.n_items);
  c.seed = j.value("seed", c.seed);
  c.alpha_min = j.value("alpha_min", c.alpha_min);
  c.alpha_max = j.value("alpha_max", c.alpha_max);
  c.beta_min = j.value("beta_min", c.beta_min);
  c.beta_max = j.value("beta_max", c.beta_max);
  c.missing_rate = j.value("missing_rate", c.missing_rate);
  return c;
}

json to_json(const PersonaWorldConfig& c) {
  json shifts = json::array();
  for (const auto& s : c.topic_shift) shifts.push_back(std::vector<double>(s.begin(), s.end()));
  return {{"n_students", c.n_students},
          {"n_items", c.n_items},
          {"seed", c.seed},
          {"class_weights", c.class_weights},
          {"class_ability", c.class_ability},
          {"topic_shift", std::move(shifts)},
          {"within_class_sd", c.within_class_sd},
          {"alpha_min", c.alpha_min},
          {"alpha_max", c.alpha_max},
          {"beta_min", c.beta_min},
          {"beta_max", c.beta_max},
          {"missing_rate", c.missing_rate}};
}

PersonaWorldConfig persona_world_config_from_json(const json& j) {
  PersonaWorldConfig c;
  try {
    c.n_students = j.value("n_students", c.n_students);
    c.n_items = j.value("n_items", c.n_items);
    c.seed = j.value("seed", c.seed);
    c.class_weights = j.value("class_weights", c.class_weights);
    c.class_ability = j.value("class_ability", c.class_ability);
    if (j.contains("topic_shift")) {
      c.topic_shift.clear();
      for (const auto& row : j.at("topic_shift")) {
        const auto v = row.get<std::vector<double>>();
        if (v.size() != kNumTopics) throw UsageError("topic_shift rows need 3 values");
        c.topic_shift.push_back({v[0], v[1], v[2]});
      }
    }
    c.within_class_sd = j.value("within_class_sd", c.within_class_sd);
    c.alpha_min = j.value("alpha_min", c.alpha_min);
    c.alpha_max = j.value("alpha_max", c.alpha_max);
    c.beta_min = j.value("beta_min", c.beta_min);
    c.beta_max = j.value("beta_max", c.beta_max);
    c.missing_rate = j.value("missing_rate", c.missing_rate);
  } catch (const json::exception& e) {
    throw UsageError(std::string("persona world config: ") + e.what());
  }
  return c;
}

json truth_json(const IrtWorld& w) {
  json doc = to_json(w.truth);
  doc["kind"] = "irt_world";
  return doc;
}

json truth_json(const PersonaWorld& w) {
  json classes = json::array();
  for (std::size_t c = 0; c < w.truth.success.size(); ++c) {
    json items = json::object();
    for (std::size_t i = 0; i < w.truth.items.item_ids.size(); ++i) items[w.truth.items.item_ids[i]] = w.truth.success[c][i];
    classes.push_back({{"class", c + 1}, {"weight", w.truth.class_weights[c]}, {"items", std::move(items)}});
  }
  json students = json::array();
  for (std::size_t u = 0; u < w.truth.student_class.size(); ++u) {
    students.push_back({{"student_id", w.truth.items.student_ids[u]}, {"class", w.truth.student_class[u] + 1}});
  }
  json items = json::array();
  for (std::size_t i = 0; i < w.truth.items.item_ids.size(); ++i) {
    items.push_back({{"question_id", w.truth.items.item_ids[i]}, {"alpha", w.truth.items.alpha[i]}, {"beta", w.truth.items.beta[i]}});
  }
  return {{"kind", "persona_world"}, {"class_success", std::move(classes)}, {"students", std::move(students)}, {"items", std::move(items)}};
}

}  // namespace mcqd
