#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace mcqd {

inline constexpr const char* kVersion = "0.1.0";

// Error hierarchy. The C API maps each class onto a status code, and the CLI
// onto an exit code: usage 1, data 2, provider 3.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ProviderError : public Error {
 public:
  using Error::Error;
};

class NumericalError : public Error {
 public:
  using Error::Error;
};

enum class Option : int { A = 0, B = 1, C = 2, D = 3 };
inline constexpr std::size_t kNumOptions = 4;
inline constexpr std::array<Option, kNumOptions> kAllOptions = {Option::A, Option::B, Option::C,
                                                               Option::D};

enum class Topic : int { Number = 0, Algebra = 1, GeometryAndMeasure = 2 };
inline constexpr std::size_t kNumTopics = 3;
inline constexpr std::array<Topic, kNumTopics> kAllTopics = {Topic::Number, Topic::Algebra,
                                                            Topic::GeometryAndMeasure};

inline constexpr std::size_t index_of(Option o) { return static_cast<std::size_t>(o); }
inline constexpr std::size_t index_of(Topic t) { return static_cast<std::size_t>(t); }

std::string_view to_string(Option o);
std::string_view to_string(Topic t);
std::optional<Option> parse_option(std::string_view s);
// Accepts "GeometryAndMeasure" as well as the spaced form "Geometry and Measure".
std::optional<Topic> parse_topic(std::string_view s);

// Probability over the four options, indexed by index_of(Option).
using OptionProbs = std::array<double, kNumOptions>;

}  // namespace mcqd
