#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace mcqd {

using json = nlohmann::json;

// Key of the optional header line that pipeline-written JSONL files carry.
inline constexpr const char* kManifestKey = "_manifest_hash";

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view content);

// Calls fn(line_number, object) for every non-blank line. Line numbers are
// 1-based. A line that is not a JSON object raises DataError naming the line.
// Manifest header lines are skipped.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const json&)>& fn);

// Shortest decimal form that parses back to the same double.
std::string format_double(double v);

std::string csv_escape(std::string_view field);
std::vector<std::string> csv_split(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

// Lines starting with '#' are comments.
CsvTable read_csv(const std::filesystem::path& path);
double parse_double(std::string_view s, std::string_view context);

}  // namespace mcqd
