#include "data.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "hashing.hpp"
#include "io.hpp"

namespace mcqd {

namespace fs = std::filesystem;

void ItemBank::add(Question q) {
  if (index_.count(q.question_id)) throw DataError("duplicate question_id: " + q.question_id);
  index_.emplace(q.question_id, questions_.size());
  questions_.push_back(std::move(q));
}

const Question* ItemBank::find(const std::string& question_id) const {
  auto it = index_.find(question_id);
  if (it == index_.end()) return nullptr;
  const Question& q = questions_[it->second];
  return q.image_only ? nullptr : &q;
}

bool ItemBank::is_excluded(const std::string& question_id) const {
  auto it = index_.find(question_id);
  return it != index_.end() && questions_[it->second].image_only;
}

std::size_t ItemBank::active_count() const {
  return static_cast<std::size_t>(
      std::count_if(questions_.begin(), questions_.end(), [](const Question& q) { return !q.image_only; }));
}

namespace {

[[noreturn]] void field_error(const fs::path& path, std::size_t line, std::string_view field,
                              const std::string& what) {
  throw DataError(path.filename().string() + ":" + std::to_string(line) + ": field '" +
                  std::string(field) + "': " + what);
}

const json& require(const json& obj, const fs::path& path, std::size_t line, const char* key) {
  auto it = obj.find(key);
  if (it == obj.end()) field_error(path, line, key, "missing");
  return *it;
}

std::string require_string(const json& obj, const fs::path& path, std::size_t line,
                           const char* key, bool allow_empty = false) {
  const json& v = require(obj, path, line, key);
  if (!v.is_string()) field_error(path, line, key, "expected string");
  auto s = v.get<std::string>();
  if (!allow_empty && s.empty()) field_error(path, line, key, "must not be empty");
  return s;
}

Option require_option(const json& obj, const fs::path& path, std::size_t line, const char* key) {
  const json& v = require(obj, path, line, key);
  if (v.is_string()) {
    if (auto o = parse_option(v.get<std::string>())) return *o;
  }
  field_error(path, line, key, "expected one of A, B, C, D, got " + v.dump());
}

}  // namespace

ItemBank read_items(const fs::path& path) {
  ItemBank bank;
  for_each_jsonl(path, [&](std::size_t line, const json& obj) {
    Question q;
    q.question_id = require_string(obj, path, line, "question_id");
    q.text = require_string(obj, path, line, "text", /*allow_empty=*/true);
    const json& opts = require(obj, path, line, "options");
    if (!opts.is_object() || opts.size() != kNumOptions) {
      field_error(path, line, "options", "expected an object with exactly the keys A, B, C, D");
    }
    for (Option o : kAllOptions) {
      auto it = opts.find(std::string(to_string(o)));
      if (it == opts.end() || !it->is_string()) {
        field_error(path, line, "options", "missing or non-string option " + std::string(to_string(o)));
      }
      q.options[index_of(o)] = it->get<std::string>();
    }
    q.correct_option = require_option(obj, path, line, "correct_option");
    const json& topic = require(obj, path, line, "topic");
    std::optional<Topic> t;
    if (topic.is_string()) t = parse_topic(topic.get<std::string>());
    if (!t) field_error(path, line, "topic", "expected Number, Algebra or GeometryAndMeasure, got " + topic.dump());
    q.topic = *t;
    if (auto it = obj.find("image_only"); it != obj.end()) {
      if (!it->is_boolean()) field_error(path, line, "image_only", "expected boolean");
      q.image_only = it->get<bool>();
    }
    if (q.text.empty()) q.image_only = true;
    try {
      bank.add(std::move(q));
    } catch (const DataError& e) {
      field_error(path, line, "question_id", e.what());
    }
  });
  return bank;
}

std::vector<InteractionRecord> read_interactions(const fs::path& path,
                                                std::vector<std::size_t>* line_numbers) {
  std::vector<InteractionRecord> records;
  for_each_jsonl(path, [&](std::size_t line, const json& obj) {
    InteractionRecord r;
    r.student_id = require_string(obj, path, line, "student_id");
    r.question_id = require_string(obj, path, line, "question_id");
    r.selected_option = require_option(obj, path, line, "selected_option");
    const json& c = require(obj, path, line, "is_correct");
    if (!c.is_boolean()) field_error(path, line, "is_correct", "expected boolean");
    r.is_correct = c.get<bool>();
    records.push_back(std::move(r));
    if (line_numbers) line_numbers->push_back(line);
  });
  return records;
}

IngestResult ingest(const fs::path& records_path, const fs::path& items_path) {
  if (!fs::exists(items_path)) throw DataError("missing items file: " + items_path.string());
  if (!fs::exists(records_path)) throw DataError("missing interactions file: " + records_path.string());
  IngestResult out;
  out.items = read_items(items_path);
  std::vector<std::size_t> lines;
  auto raw = read_interactions(records_path, &lines);
  out.records.reserve(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) {
    auto& r = raw[i];
    if (out.items.is_excluded(r.question_id)) {
      ++out.dropped_image_only;
      continue;
    }
    const Question* q = out.items.find(r.question_id);
    const std::string where = records_path.filename().string() + ":" + std::to_string(lines[i]);
    if (!q) throw DataError(where + ": unknown question_id '" + r.question_id + "'");
    if (r.is_correct != (r.selected_option == q->correct_option)) {
      throw DataError(where + ": is_correct=" + (r.is_correct ? "true" : "false") +
                      " contradicts selected_option " + std::string(to_string(r.selected_option)) +
                      " vs correct_option " + std::string(to_string(q->correct_option)));
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

std::string serialize_items(const ItemBank& items) {
  std::string out;
  for (const Question& q : items.all()) {
    json opts = json::object();
    for (Option o : kAllOptions) opts[std::string(to_string(o))] = q.options[index_of(o)];
    json obj = {{"question_id", q.question_id},
                {"text", q.text},
                {"options", std::move(opts)},
                {"correct_option", to_string(q.correct_option)},
                {"topic", to_string(q.topic)}};
    if (q.image_only) obj["image_only"] = true;
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::string serialize_interactions(std::span<const InteractionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    json obj = {{"student_id", r.student_id},
                {"question_id", r.question_id},
                {"selected_option", to_string(r.selected_option)},
                {"is_correct", r.is_correct}};
    out += obj.dump();
    out += '\n';
  }
  return out;
}

std::vector<InteractionRecord> filter_dense_core(std::span<const InteractionRecord> records,
                                                 const DenseCoreThresholds& thresholds) {
  if (thresholds.min_responses_per_question < 1 || thresholds.min_attempts_per_student < 1) {
    throw UsageError("dense-core thresholds must be >= 1");
  }
  std::vector<char> alive(records.size(), 1);
  bool changed = true;
  while (changed) {
    changed = false;
    std::unordered_map<std::string_view, std::size_t> per_question, per_student;
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!alive[i]) continue;
      ++per_question[records[i].question_id];
      ++per_student[records[i].student_id];
    }
    for (std::size_t i = 0; i < records.size(); ++i) {
      if (!alive[i]) continue;
      if (per_question[records[i].question_id] < thresholds.min_responses_per_question ||
          per_student[records[i].student_id] < thresholds.min_attempts_per_student) {
        alive[i] = 0;
        changed = true;
      }
    }
  }
  std::vector<InteractionRecord> out;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (alive[i]) out.push_back(records[i]);
  }
  if (out.empty()) {
    throw DataError("dense-core filter removed every record (thresholds " +
                    std::to_string(thresholds.min_responses_per_question) + " responses/question, " +
                    std::to_string(thresholds.min_attempts_per_student) +
                    " attempts/student are too strict for this data)");
  }
  return out;
}

bool hash_assigns_to_profiling(const std::string& question_id, std::uint64_t seed) {
  return stable_hash64(std::to_string(seed) + ":" + question_id) % 2 == 0;
}

namespace {

std::vector<std::string> sorted_unique_questions(std::span<const InteractionRecord> records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.question_id);
  return {s.begin(), s.end()};
}

std::vector<std::string> sorted_unique_students(std::span<const InteractionRecord> records) {
  std::set<std::string> s;
  for (const auto& r : records) s.insert(r.student_id);
  return {s.begin(), s.end()};
}

}  // namespace

DatasetPartition partition(std::span<const InteractionRecord> records, const PartitionConfig& config) {
  if (records.empty()) throw DataError("partition: no records");
  auto core = filter_dense_core(records, config.profiling);
  if (config.overlap_rule == OverlapRule::HashSplit) {
    std::vector<std::string> share;
    for (const auto& q : sorted_unique_questions(core)) {
      if (hash_assigns_to_profiling(q, config.seed)) share.push_back(q);
    }
    if (share.empty()) throw DataError("partition: hash split left the profiling set empty");
    core = filter_dense_core(select_records(core, share), config.profiling);
  }

  DatasetPartition out;
  out.profiling_questions = sorted_unique_questions(core);
  out.profiling_students = sorted_unique_students(core);

  std::map<std::string, std::size_t> counts;
  for (const auto& r : records) ++counts[r.question_id];
  for (const auto& [q, n] : counts) {
    if (n < config.estimation_min_responses) continue;
    if (std::binary_search(out.profiling_questions.begin(), out.profiling_questions.end(), q)) continue;
    out.estimation_questions.push_back(q);
  }
  if (out.estimation_questions.empty()) {
    throw DataError("partition: estimation set is empty (every question with >= " +
                    std::to_string(config.estimation_min_responses) +
                    " responses went to profiling; consider the hash_split overlap rule)");
  }
  return out;
}

std::vector<InteractionRecord> select_records(std::span<const InteractionRecord> records,
                                              std::span<const std::string> question_ids,
                                              const std::vector<std::string>* student_ids) {
  std::vector<InteractionRecord> out;
  for (const auto& r : records) {
    if (!std::binary_search(question_ids.begin(), question_ids.end(), r.question_id)) continue;
    if (student_ids && !std::binary_search(student_ids->begin(), student_ids->end(), r.student_id)) continue;
    out.push_back(r);
  }
  return out;
}

}  // namespace mcqd
