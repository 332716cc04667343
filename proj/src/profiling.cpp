#include "profiling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>
#include <unordered_map>

namespace mcqd {

bool AccuracyMatrix::observed(std::size_t q, std::size_t c) const {
  const auto& cl = cell(q, c);
  return cl.attempts > 0 && cl.attempts >= min_support;
}

double AccuracyMatrix::accuracy(std::size_t q, std::size_t c) const {
  if (!observed(q, c)) return std::numeric_limits<double>::quiet_NaN();
  const auto& cl = cell(q, c);
  return static_cast<double>(cl.correct) / static_cast<double>(cl.attempts);
}

std::size_t AccuracyMatrix::index_of(const std::string& question_id) const {
  auto it = std::lower_bound(question_ids.begin(), question_ids.end(), question_id);
  if (it == question_ids.end() || *it != question_id) return std::string::npos;
  return static_cast<std::size_t>(it - question_ids.begin());
}

AccuracyMatrix cluster_accuracies(std::span<const InteractionRecord> records,
                                  const ClassAssignment& assignment, std::size_t min_support) {
  std::unordered_map<std::string_view, std::size_t> cls;
  for (std::size_t u = 0; u < assignment.student_ids.size(); ++u) cls[assignment.student_ids[u]] = assignment.cls[u];

  AccuracyMatrix m;
  m.k = assignment.k;
  m.min_support = min_support;
  std::set<std::string> qs;
  for (const auto& r : records) qs.insert(r.question_id);
  m.question_ids.assign(qs.begin(), qs.end());
  m.cells.assign(m.question_ids.size() * m.k, {});
  for (const auto& r : records) {
    auto it = cls.find(r.student_id);
    if (it == cls.end()) throw DataError("cluster_accuracies: student '" + r.student_id + "' has no class assignment");
    auto& cell = m.cells[m.index_of(r.question_id) * m.k + it->second];
    ++cell.attempts;
    if (r.is_correct) ++cell.correct;
  }
  return m;
}

std::vector<double> deviations(std::span<const double> accuracies) {
  double mean = 0.0;
  for (double a : accuracies) mean += a;
  mean /= static_cast<double>(accuracies.size());
  std::vector<double> out(accuracies.size());
  for (std::size_t c = 0; c < accuracies.size(); ++c) out[c] = accuracies[c] - mean;
  return out;
}

std::vector<DeviationScore> deviation_scores(const AccuracyMatrix& matrix) {
  std::vector<DeviationScore> out;
  std::vector<double> acc(matrix.k);
  for (std::size_t q = 0; q < matrix.question_ids.size(); ++q) {
    bool complete = true;
    for (std::size_t c = 0; c < matrix.k && complete; ++c) complete = matrix.observed(q, c);
    if (!complete) continue;
    for (std::size_t c = 0; c < matrix.k; ++c) acc[c] = matrix.accuracy(q, c);
    const auto delta = deviations(acc);
    for (std::size_t c = 0; c < matrix.k; ++c) {
      out.push_back({matrix.question_ids[q], c, acc[c], delta[c], matrix.cell(q, c).attempts});
    }
  }
  return out;
}

std::vector<ExtremeSelection> select_extremes(std::span<const DeviationScore> scores, std::size_t k,
                                              std::size_t per_side) {
  std::vector<std::vector<const DeviationScore*>> by_cluster(k);
  for (const auto& s : scores) {
    if (s.cluster >= k) throw DataError("select_extremes: cluster index out of range");
    by_cluster[s.cluster].push_back(&s);
  }
  std::vector<ExtremeSelection> out;
  for (std::size_t c = 0; c < k; ++c) {
    auto& v = by_cluster[c];
    if (v.size() < 2 * per_side) {
      throw DataError("select_extremes: cluster " + std::to_string(c + 1) + " has " + std::to_string(v.size()) +
                      " scored questions, needs " + std::to_string(2 * per_side) + " (short by " +
                      std::to_string(2 * per_side - v.size()) + ")");
    }
    ExtremeSelection sel;
    sel.cluster = c;
    auto top = v;
    std::sort(top.begin(), top.end(), [](const DeviationScore* a, const DeviationScore* b) {
      return a->delta != b->delta ? a->delta > b->delta : a->question_id < b->question_id;
    });
    // Weaknesses come from what is left, so ties cannot put a question on both sides.
    std::vector<const DeviationScore*> bottom(top.begin() + static_cast<std::ptrdiff_t>(per_side), top.end());
    std::sort(bottom.begin(), bottom.end(), [](const DeviationScore* a, const DeviationScore* b) {
      return a->delta != b->delta ? a->delta < b->delta : a->question_id < b->question_id;
    });
    for (std::size_t j = 0; j < per_side; ++j) {
      sel.strengths.push_back(top[j]->question_id);
      sel.weaknesses.push_back(bottom[j]->question_id);
    }
    out.push_back(std::move(sel));
  }
  return out;
}

namespace {

constexpr const char* kPersonaInstruction =
    "The questions below are the ones this group of students answers unusually well (strengths) and "
    "unusually poorly (weaknesses) compared with the other groups. Give the group a short persona name "
    "and a one-paragraph description of the cognitive gap between what these students can and cannot "
    "do. Reply with a JSON object {\"name\": \"...\", \"description\": \"...\"}.";

}  // namespace

PersonaSynthesisRequest build_persona_request(std::size_t cluster, const ExtremeSelection& extremes,
                                              const ItemBank& items, const AccuracyMatrix& accuracy) {
  PersonaSynthesisRequest req;
  req.cluster = cluster;
  req.k = accuracy.k;
  req.instruction = kPersonaInstruction;
  auto add = [&](const std::string& qid, const char* role) {
    const Question* q = items.find(qid);
    if (!q) throw DataError("build_persona_request: question '" + qid + "' not in item bank");
    if (q->text.empty()) throw DataError("build_persona_request: question '" + qid + "' has no text");
    const std::size_t row = accuracy.index_of(qid);
    if (row == std::string::npos) throw DataError("build_persona_request: no accuracy for '" + qid + "'");
    QuestionBlock b;
    b.question_id = qid;
    b.role = role;
    b.text = q->text;
    b.topic = q->topic;
    for (std::size_t c = 0; c < accuracy.k; ++c) b.cluster_accuracy.push_back(accuracy.accuracy(row, c));
    b.delta = deviations(b.cluster_accuracy)[cluster];
    req.questions.push_back(std::move(b));
  };
  for (const auto& q : extremes.strengths) add(q, "strength");
  for (const auto& q : extremes.weaknesses) add(q, "weakness");
  return req;
}

json to_json(const PersonaSynthesisRequest& r) {
  json qs = json::array();
  for (const auto& b : r.questions) {
    qs.push_back({{"question_id", b.question_id},
                  {"role", b.role},
                  {"text", b.text},
                  {"topic", to_string(b.topic)},
                  {"cluster_accuracy", b.cluster_accuracy},
                  {"delta", b.delta}});
  }
  return {{"cluster", r.cluster + 1}, {"k", r.k}, {"instruction", r.instruction}, {"questions", std::move(qs)}};
}

PersonaSynthesisRequest persona_request_from_json(const json& j) {
  PersonaSynthesisRequest r;
  try {
    r.cluster = j.at("cluster").get<std::size_t>() - 1;
    r.k = j.at("k").get<std::size_t>();
    r.instruction = j.at("instruction").get<std::string>();
    for (const auto& q : j.at("questions")) {
      QuestionBlock b;
      b.question_id = q.at("question_id").get<std::string>();
      b.role = q.at("role").get<std::string>();
      b.text = q.at("text").get<std::string>();
      auto t = parse_topic(q.at("topic").get<std::string>());
      if (!t) throw DataError("bad topic");
      b.topic = *t;
      b.cluster_accuracy = q.at("cluster_accuracy").get<std::vector<double>>();
      b.delta = q.at("delta").get<double>();
      r.questions.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("persona request: ") + e.what());
  }
  return r;
}

json to_json(const PersonaProfile& p) {
  return {{"cluster", p.cluster + 1},
          {"name", p.name},
          {"description", p.description},
          {"strengths", p.strengths},
          {"weaknesses", p.weaknesses},
          {"provenance", p.provenance == Provenance::LlmGenerated ? "llm_generated" : "manual"}};
}

PersonaProfile persona_from_json(const json& j) {
  PersonaProfile p;
  try {
    const auto cluster = j.at("cluster").get<std::size_t>();
    if (cluster < 1) throw DataError("cluster must be >= 1");
    p.cluster = cluster - 1;
    p.name = j.at("name").get<std::string>();
    p.description = j.at("description").get<std::string>();
    p.strengths = j.value("strengths", std::vector<std::string>{});
    p.weaknesses = j.value("weaknesses", std::vector<std::string>{});
    const auto prov = j.value("provenance", std::string("manual"));
    if (prov == "llm_generated") {
      p.provenance = Provenance::LlmGenerated;
    } else if (prov == "manual") {
      p.provenance = Provenance::Manual;
    } else {
      throw DataError("unknown provenance '" + prov + "'");
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("persona: ") + e.what());
  }
  if (p.name.empty()) throw DataError("persona: empty name");
  return p;
}

std::vector<PersonaProfile> read_personas(const std::filesystem::path& path) {
  json doc = json::parse(read_file(path), nullptr, false);
  if (doc.is_discarded()) throw DataError(path.filename().string() + ": invalid JSON");
  const json& list = doc.is_object() ? doc.value("personas", json::array()) : doc;
  if (!list.is_array() || list.empty()) throw DataError(path.filename().string() + ": no personas");
  std::vector<PersonaProfile> out;
  for (const auto& p : list) out.push_back(persona_from_json(p));
  std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.cluster < b.cluster; });
  for (std::size_t c = 0; c < out.size(); ++c) {
    if (out[c].cluster != c) throw DataError(path.filename().string() + ": persona clusters must be 1..K without gaps");
  }
  return out;
}

std::string deviations_csv(std::span<const DeviationScore> scores) {
  std::string out = "question_id,cluster,a,delta,support\n";
  for (const auto& s : scores) {
    out += csv_escape(s.question_id) + "," + std::to_string(s.cluster + 1) + "," + format_double(s.accuracy) + "," +
           format_double(s.delta) + "," + std::to_string(s.support) + "\n";
  }
  return out;
}

}  // namespace mcqd
