#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "common.hpp"

namespace mcqd {

// One student x question attempt.
struct InteractionRecord {
  std::string student_id;
  std::string question_id;
  Option selected_option = Option::A;
  bool is_correct = false;

  bool operator==(const InteractionRecord&) const = default;
};

struct Question {
  std::string question_id;
  std::string text;
  std::array<std::string, kNumOptions> options;
  Option correct_option = Option::A;
  Topic topic = Topic::Number;
  // Items without extracted text. Kept in the bank for round-tripping but
  // excluded from every downstream stage.
  bool image_only = false;

  bool operator==(const Question&) const = default;
};

class ItemBank {
 public:
  // Throws DataError on a duplicate question_id.
  void add(Question q);

  // Looks up an item that is not image-only.
  const Question* find(const std::string& question_id) const;
  bool is_excluded(const std::string& question_id) const;

  const std::vector<Question>& all() const { return questions_; }
  std::size_t active_count() const;

 private:
  std::vector<Question> questions_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct IngestResult {
  std::vector<InteractionRecord> records;
  ItemBank items;
  // Records that pointed at image-only items and were dropped.
  std::size_t dropped_image_only = 0;
};

// Schema-level readers. Errors name the file, line and field.
ItemBank read_items(const std::filesystem::path& path);
// `line_numbers`, when given, receives the source line of each record.
std::vector<InteractionRecord> read_interactions(const std::filesystem::path& path,
                                                std::vector<std::size_t>* line_numbers = nullptr);

// Reads both files and checks referential integrity and correctness flags.
IngestResult ingest(const std::filesystem::path& records_path,
                    const std::filesystem::path& items_path);

// Canonical JSONL text: one compact object per line, keys sorted.
std::string serialize_items(const ItemBank& items);
std::string serialize_interactions(std::span<const InteractionRecord> records);

struct DenseCoreThresholds {
  std::size_t min_responses_per_question = 50;
  std::size_t min_attempts_per_student = 10;
};

// Iterates to the fixed point where every remaining question and student meets
// its threshold. Preserves the input order of surviving records.
std::vector<InteractionRecord> filter_dense_core(std::span<const InteractionRecord> records,
                                                 const DenseCoreThresholds& thresholds = {});

enum class OverlapRule {
  // Dense-core questions go to profiling; estimation takes the rest.
  ProfilingFirst,
  // Dense-core questions are split by a seeded hash of question_id, then the
  // profiling core is recomputed on its share.
  HashSplit,
};

struct PartitionConfig {
  DenseCoreThresholds profiling;
  std::size_t estimation_min_responses = 20;
  OverlapRule overlap_rule = OverlapRule::ProfilingFirst;
  std::uint64_t seed = 0;
};

struct DatasetPartition {
  std::vector<std::string> profiling_questions;  // sorted
  std::vector<std::string> profiling_students;   // sorted
  std::vector<std::string> estimation_questions; // sorted
};

DatasetPartition partition(std::span<const InteractionRecord> records,
                           const PartitionConfig& config = {});

// True when the seeded hash puts a core question into the profiling share.
bool hash_assigns_to_profiling(const std::string& question_id, std::uint64_t seed);

// Records whose question is in `question_ids` (sorted) and, when `student_ids`
// is non-null, whose student is in it (sorted).
std::vector<InteractionRecord> select_records(std::span<const InteractionRecord> records,
                                              std::span<const std::string> question_ids,
                                              const std::vector<std::string>* student_ids = nullptr);

}  // namespace mcqd
