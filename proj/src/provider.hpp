#pragma once

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "common.hpp"
#include "io.hpp"

namespace mcqd {

enum class RequestPurpose { PersonaSynthesis, Simulation };

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;
};

struct ChatRequest {
  RequestPurpose purpose = RequestPurpose::Simulation;
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  // Structured context for offline providers. Never sent over the wire.
  json metadata = json::object();
};

// Network failure, timeout, HTTP 429 or 5xx. Retried by the client.
class TransportError : public ProviderError {
 public:
  TransportError(const std::string& what, bool transient) : ProviderError(what), transient_(transient) {}
  bool transient() const { return transient_; }

 private:
  bool transient_;
};

// The provider answered but the payload could not be used. Carries the raw text.
class ParseError : public ProviderError {
 public:
  ParseError(const std::string& what, std::string raw) : ProviderError(what), raw_(std::move(raw)) {}
  const std::string& raw() const { return raw_; }

 private:
  std::string raw_;
};

class Provider {
 public:
  virtual ~Provider() = default;
  // Returns the assistant text. Must be safe to call from several threads.
  virtual std::string complete(const ChatRequest& request) = 0;
  // Identifies provider + model for cache keys. Contains no secrets.
  virtual std::string id() const = 0;
};

struct ProviderConfig {
  enum class Kind { HttpApi, Mock };
  Kind provider = Kind::Mock;
  std::string endpoint;
  std::string model_name = "mock";
  // Name of the environment variable holding the API key.
  std::string api_key_env = "MCQD_API_KEY";
  std::size_t max_retries = 3;
  double timeout_seconds = 60.0;
  double rate_limit_per_minute = 0.0;  // 0 = unlimited
  double retry_backoff_seconds = 1.0;
  double temperature = 0.0;
  std::size_t max_tokens = 1024;
  std::size_t concurrency = 4;
  std::uint64_t mock_seed = 0;
  // Optional truth.json for the mock (see MockProvider).
  std::string mock_truth;
};

json to_json(const ProviderConfig& c);
ProviderConfig provider_config_from_json(const json& j);

// Class-conditional success probabilities keyed by (cluster 0-based, question_id).
using TruthTable = std::map<std::pair<std::size_t, std::string>, double>;
TruthTable read_truth_table(const std::filesystem::path& truth_json);

// Deterministic offline provider. Output is a pure function of the seed, the
// request metadata and (for simulation) the optional truth table. When a truth
// entry exists for (cluster, question), the correct option gets exactly that
// probability and the distractors share the rest.
class MockProvider : public Provider {
 public:
  explicit MockProvider(std::uint64_t seed, TruthTable truth = {}, std::string truth_digest = {});
  std::string complete(const ChatRequest& request) override;
  std::string id() const override;

 private:
  std::uint64_t seed_;
  TruthTable truth_;
  std::string truth_digest_;
};

// Chat-completions style JSON over HTTP(S).
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(ProviderConfig config);
  std::string complete(const ChatRequest& request) override;
  std::string id() const override;

 private:
  ProviderConfig config_;
  std::string base_;  // scheme://host[:port]
  std::string path_;
};

// Builds the configured provider. `base_dir` resolves a relative mock_truth.
std::unique_ptr<Provider> make_provider(const ProviderConfig& config, const std::filesystem::path& base_dir);

// Extracts the assistant text from a chat-completions or messages-style body.
std::string extract_completion_text(const std::string& body);

}  // namespace mcqd
