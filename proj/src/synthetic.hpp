#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "data.hpp"
#include "io.hpp"
#include "irt.hpp"
#include "lca.hpp"

namespace mcqd {

struct IrtWorldConfig {
  std::size_t n_students = 1000;
  std::size_t n_items = 50;
  std::uint64_t seed = 0;
  double alpha_min = 0.5;
  double alpha_max = 2.5;
  double beta_min = -2.0;
  double beta_max = 2.0;
  double missing_rate = 0.0;
};

struct IrtWorld {
  std::vector<InteractionRecord> records;
  ItemBank items;
  IrtParameters truth;  // theta ~ N(0, 1), not re-anchored
};

// Bernoulli(sigma(alpha (theta - beta))) responses. Correct answers select the
// keyed option, incorrect ones a uniformly chosen distractor.
IrtWorld generate_irt_world(const IrtWorldConfig& config);

struct LcaWorldConfig {
  std::size_t n_students = 600;
  std::size_t n_items = 40;
  std::uint64_t seed = 0;
  std::size_t k_true = 3;
  std::vector<double> class_weights;  // empty = uniform
  // 1 gives rho in {0.05, 0.95}; 0 gives rho ~ U(0.2, 0.8).
  double separation = 1.0;
  double missing_rate = 0.0;
};

struct LcaWorld {
  ResponseMatrix matrix;
  std::vector<std::size_t> assignments;  // true class per student row
  LatentClassModel truth;
};

LcaWorld generate_lca_world(const LcaWorldConfig& config);

struct PersonaWorldConfig {
  std::size_t n_students = 1500;
  std::size_t n_items = 180;
  std::uint64_t seed = 0;
  std::vector<double> class_weights = {0.3, 0.4, 0.3};
  // Ability location of each class on the logit scale.
  std::vector<double> class_ability = {-1.2, 0.0, 1.2};
  // Per class, additive shift on Number, Algebra, GeometryAndMeasure items.
  // Kept smaller than the ability gaps so every item stays monotone in ability.
  std::vector<std::array<double, kNumTopics>> topic_shift = {{0.4, -0.4, 0.0}, {-0.4, 0.4, 0.0}, {0.0, -0.4, 0.4}};
  double within_class_sd = 0.4;
  double alpha_min = 0.8;
  double alpha_max = 2.0;
  double beta_min = -2.0;
  double beta_max = 2.0;
  double missing_rate = 0.2;
};

struct PersonaWorldTruth {
  // success[c][i]: class-conditional correctness probability for item i, with
  // classes ordered by ascending mean success.
  std::vector<std::vector<double>> success;
  std::vector<double> class_weights;       // same order
  std::vector<std::size_t> student_class;  // same order
  IrtParameters items;                     // alpha, beta; theta per student
};

struct PersonaWorld {
  std::vector<InteractionRecord> records;
  ItemBank items;
  PersonaWorldTruth truth;
};

// Latent-class students whose success probability on item i is
// sigma(alpha_i (ability_c + shift_c[topic_i] + noise_u - beta_i)).
// Topics cycle Number, Algebra, GeometryAndMeasure over items.
PersonaWorld generate_persona_world(const PersonaWorldConfig& config);

json to_json(const IrtWorldConfig& c);
IrtWorldConfig irt_world_config_from_json(const json& j);
json to_json(const PersonaWorldConfig& c);
PersonaWorldConfig persona_world_config_from_json(const json& j);

// truth.json documents. The persona-world form carries "class_success", which
// the mock provider reads.
json truth_json(const IrtWorld& world);
json truth_json(const PersonaWorld& world);

}  // namespace mcqd
