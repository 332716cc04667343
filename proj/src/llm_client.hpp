#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "data.hpp"
#include "profiling.hpp"
#include "provider.hpp"

namespace mcqd {

// Prompt templates with {{placeholder}} substitution. Files in a prompts
// directory override the built-in defaults one by one.
struct PromptTemplates {
  std::string persona_system;
  std::string persona_user;
  std::string simulate_system;
  std::string simulate_user;
  std::string reprompt;

  static PromptTemplates defaults();
  static PromptTemplates load(const std::filesystem::path& dir);
};

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values);

// Parses {"A": x, "B": x, "C": x, "D": x} (possibly wrapped in prose or a code
// fence). Values must be finite and non-negative; all four keys are required.
OptionProbs parse_option_probabilities(const std::string& text);
// Parses {"name": ..., "description": ...}.
std::pair<std::string, std::string> parse_persona_response(const std::string& text);

std::string persona_digest(const PersonaProfile& persona);
std::string question_digest(const Question& question);

class RateLimiter {
 public:
  explicit RateLimiter(double per_minute);
  void acquire();

 private:
  double interval_seconds_;
  std::mutex mutex_;
  std::chrono::steady_clock::time_point next_;
};

struct CallOutcome {
  std::string text;
  std::size_t attempts = 0;
};

// One provider exchange, as archived in simulation_raw.jsonl.
struct Exchange {
  json record;
};

class LlmClient {
 public:
  LlmClient(Provider& provider, ProviderConfig config, PromptTemplates prompts = PromptTemplates::defaults());

  // Sends the request, retrying transient transport failures up to max_retries.
  CallOutcome call(const ChatRequest& request);

  PersonaProfile synthesize_persona(const PersonaSynthesisRequest& request, Exchange* exchange = nullptr);
  // Raw (unnormalized) option probabilities for one question as one persona.
  OptionProbs simulate_item(const Question& question, const PersonaProfile& persona, Exchange* exchange = nullptr);

  ChatRequest persona_request(const PersonaSynthesisRequest& request) const;
  ChatRequest simulation_request(const Question& question, const PersonaProfile& persona) const;

  std::size_t provider_calls() const { return provider_calls_.load(); }
  // Digest of the simulation templates; part of the cache key.
  std::string simulation_prompt_digest() const;
  const Provider& provider() const { return provider_; }
  const ProviderConfig& config() const { return config_; }

 private:
  template <class Parse>
  auto call_and_parse(const ChatRequest& request, Parse parse, Exchange* exchange);

  Provider& provider_;
  ProviderConfig config_;
  PromptTemplates prompts_;
  RateLimiter limiter_;
  std::atomic<std::size_t> provider_calls_{0};
};

// Content-addressed cache of simulation results. Safe for concurrent readers
// and writers within a process; writes are atomic renames across processes.
class SimulationCache {
 public:
  explicit SimulationCache(std::filesystem::path dir);

  static std::string key(const std::string& provider_id, const std::string& model, const std::string& prompt_hash,
                         const std::string& persona_hash, const std::string& question_hash);

  std::optional<std::string> get(const std::string& key) const;
  void put(const std::string& key, const std::string& content);

 private:
  std::filesystem::path path_for(const std::string& key) const;

  std::filesystem::path dir_;
  mutable std::shared_mutex mutex_;
};

struct SimulationResult {
  std::string question_id;
  std::size_t cluster = 0;
  std::optional<OptionProbs> probs;
  std::string error;
  bool from_cache = false;
};

struct BatchReport {
  std::vector<SimulationResult> results;  // question-major, then persona order
  std::vector<Exchange> exchanges;        // same order, provider calls only
  std::size_t provider_calls = 0;
  std::size_t cache_hits = 0;

  std::size_t failures() const;
};

// One result or failure record per (item, persona) pair. A failing pair never
// aborts the batch. `cache` may be null.
BatchReport batch_simulate(LlmClient& client, std::span<const Question> items,
                           std::span<const PersonaProfile> personas, SimulationCache* cache);

std::string option_probs_json(const OptionProbs& probs);

}  // namespace mcqd
