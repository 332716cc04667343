#include "common.hpp"

namespace mcqd {

std::string_view to_string(Option o) {
  switch (o) {
    case Option::A: return "A";
    case Option::B: return "B";
    case Option::C: return "C";
    case Option::D: return "D";
  }
  return "?";
}

std::string_view to_string(Topic t) {
  switch (t) {
    case Topic::Number: return "Number";
    case Topic::Algebra: return "Algebra";
    case Topic::GeometryAndMeasure: return "GeometryAndMeasure";
  }
  return "?";
}

std::optional<Option> parse_option(std::string_view s) {
  if (s == "A") return Option::A;
  if (s == "B") return Option::B;
  if (s == "C") return Option::C;
  if (s == "D") return Option::D;
  return std::nullopt;
}

std::optional<Topic> parse_topic(std::string_view s) {
  if (s == "Number") return Topic::Number;
  if (s == "Algebra") return Topic::Algebra;
  if (s == "GeometryAndMeasure" || s == "Geometry and Measure") return Topic::GeometryAndMeasure;
  return std::nullopt;
}

}  // namespace mcqd
