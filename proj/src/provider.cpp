#include "provider.hpp"

#include <httplib.h>

#include <cmath>
#include <cstdlib>

#include "hashing.hpp"

namespace mcqd {

json to_json(const ProviderConfig& c) {
  return {{"provider", c.provider == ProviderConfig::Kind::Mock ? "mock" : "http_api"},
          {"endpoint", c.endpoint},
          {"model_name", c.model_name},
          {"api_key_env", c.api_key_env},
          {"max_retries", c.max_retries},
          {"timeout_seconds", c.timeout_seconds},
          {"rate_limit_per_minute", c.rate_limit_per_minute},
          {"retry_backoff_seconds", c.retry_backoff_seconds},
          {"temperature", c.temperature},
          {"max_tokens", c.max_tokens},
          {"concurrency", c.concurrency},
          {"mock_seed", c.mock_seed},
          {"mock_truth", c.mock_truth}};
}

ProviderConfig provider_config_from_json(const json& j) {
  ProviderConfig c;
  const auto kind = j.value("provider", std::string("mock"));
  if (kind == "mock") {
    c.provider = ProviderConfig::Kind::Mock;
  } else if (kind == "http_api") {
    c.provider = ProviderConfig::Kind::HttpApi;
  } else {
    throw UsageError("provider: unknown kind '" + kind + "' (expected mock or http_api)");
  }
  c.endpoint = j.value("endpoint", c.endpoint);
  c.model_name = j.value("model_name", c.model_name);
  c.api_key_env = j.value("api_key_env", c.api_key_env);
  c.max_retries = j.value("max_retries", c.max_retries);
  c.timeout_seconds = j.value("timeout_seconds", c.timeout_seconds);
  c.rate_limit_per_minute = j.value("rate_limit_per_minute", c.rate_limit_per_minute);
  c.retry_backoff_seconds = j.value("retry_backoff_seconds", c.retry_backoff_seconds);
  c.temperature = j.value("temperature", c.temperature);
  c.max_tokens = j.value("max_tokens", c.max_tokens);
  c.concurrency = j.value("concurrency", c.concurrency);
  c.mock_seed = j.value("mock_seed", c.mock_seed);
  c.mock_truth = j.value("mock_truth", c.mock_truth);
  if (!(c.timeout_seconds > 0.0)) throw UsageError("provider: timeout_seconds must be > 0");
  if (c.rate_limit_per_minute < 0.0) throw UsageError("provider: rate_limit_per_minute must be >= 0");
  if (c.provider == ProviderConfig::Kind::HttpApi && c.endpoint.empty()) {
    throw UsageError("provider: http_api needs an endpoint");
  }
  return c;
}

TruthTable read_truth_table(const std::filesystem::path& truth_json) {
  json doc = json::parse(read_file(truth_json), nullptr, false);
  if (doc.is_discarded()) throw DataError(truth_json.filename().string() + ": invalid JSON");
  TruthTable t;
  try {
    for (const auto& cls : doc.at("class_success")) {
      const auto c = cls.at("class").get<std::size_t>();
      if (c < 1) throw DataError("class must be >= 1");
      for (const auto& [qid, p] : cls.at("items").items()) t[{c - 1, qid}] = p.get<double>();
    }
  } catch (const json::exception& e) {
    throw DataError(truth_json.filename().string() + ": " + e.what());
  }
  return t;
}

namespace {

// Uniform [0,1) from 53 bits of a stable hash.
double hash_uniform(std::string_view key) {
  return static_cast<double>(stable_hash64(key) >> 11) * 0x1.0p-53;
}

constexpr const char* kAdjectives[] = {"Careful", "Hasty", "Visual", "Methodical", "Intuitive",
                                       "Literal", "Pattern-Seeking", "Cautious"};
constexpr const char* kNouns[] = {"Calculator", "Reasoner", "Memorizer", "Estimator", "Explorer", "Builder"};

}  // namespace

MockProvider::MockProvider(std::uint64_t seed, TruthTable truth, std::string truth_digest)
    : seed_(seed), truth_(std::move(truth)), truth_digest_(std::move(truth_digest)) {}

std::string MockProvider::id() const {
  std::string s = "mock:seed=" + std::to_string(seed_);
  if (!truth_digest_.empty()) s += ":truth=" + truth_digest_.substr(0, 16);
  return s;
}

std::string MockProvider::complete(const ChatRequest& request) {
  const json& md = request.metadata;
  const std::string salt = std::to_string(seed_) + "|";
  if (request.purpose == RequestPurpose::PersonaSynthesis) {
    const auto cluster = md.value("cluster", std::size_t{0});
    const std::string key = salt + "persona|" + std::to_string(cluster) + "|" + md.value("digest", std::string());
    const auto adj = kAdjectives[stable_hash64(key + "|adj") % std::size(kAdjectives)];
    const auto noun = kNouns[stable_hash64(key + "|noun") % std::size(kNouns)];
    const std::string strong = md.value("strength_topic", std::string("Number"));
    const std::string weak = md.value("weakness_topic", std::string("Number"));
    json out = {{"name", std::string("The ") + adj + " " + noun},
                {"description", "Group " + std::to_string(cluster + 1) + " is comparatively secure on " + strong +
                                    " items but loses ground on " + weak +
                                    " items, where the usual method breaks down under a change of representation."}};
    return out.dump();
  }

  const std::string qid = md.value("question_id", std::string());
  const auto cluster = md.value("cluster", std::size_t{0});
  const std::string persona = md.value("persona_digest", std::string());
  const auto correct = md.value("correct_option", std::size_t{0});
  const std::string key = salt + "sim|" + persona + "|" + qid;
  OptionProbs probs{};
  if (auto it = truth_.find({cluster, qid}); it != truth_.end()) {
    double split[kNumOptions] = {};
    double total = 0.0;
    for (std::size_t o = 0; o < kNumOptions; ++o) {
      if (o == correct) continue;
      split[o] = 0.5 + hash_uniform(key + "|" + std::to_string(o));
      total += split[o];
    }
    for (std::size_t o = 0; o < kNumOptions; ++o) {
      probs[o] = o == correct ? it->second : (1.0 - it->second) * split[o] / total;
    }
  } else {
    double total = 0.0;
    for (std::size_t o = 0; o < kNumOptions; ++o) {
      probs[o] = 0.05 + hash_uniform(key + "|" + std::to_string(o));
      total += probs[o];
    }
    for (double& p : probs) p /= total;
  }
  json out = json::object();
  for (Option o : kAllOptions) out[std::string(to_string(o))] = probs[index_of(o)];
  return out.dump();
}

HttpProvider::HttpProvider(ProviderConfig config) : config_(std::move(config)) {
  const auto scheme_end = config_.endpoint.find("://");
  if (scheme_end == std::string::npos) throw UsageError("provider: endpoint must be an http(s) URL");
  const auto path_start = config_.endpoint.find('/', scheme_end + 3);
  base_ = config_.endpoint.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : config_.endpoint.substr(path_start);
}

std::string HttpProvider::id() const { return "http_api:" + config_.model_name; }

std::string extract_completion_text(const std::string& body) {
  json doc = json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw ParseError("provider response is not JSON", body);
  try {
    if (doc.contains("choices")) return doc.at("choices").at(0).at("message").at("content").get<std::string>();
    if (doc.contains("content")) {
      std::string text;
      for (const auto& block : doc.at("content")) {
        if (block.value("type", std::string("text")) == "text") text += block.at("text").get<std::string>();
      }
      return text;
    }
  } catch (const json::exception&) {
  }
  throw ParseError("provider response has no message content", body);
}

std::string HttpProvider::complete(const ChatRequest& request) {
  httplib::Client client(base_);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);

  httplib::Headers headers;
  if (const char* key = std::getenv(config_.api_key_env.c_str()); key && *key) {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }
  json messages = json::array();
  for (const auto& m : request.messages) messages.push_back({{"role", m.role}, {"content", m.content}});
  json body = {{"model", config_.model_name},
               {"temperature", request.temperature},
               {"max_tokens", config_.max_tokens},
               {"messages", std::move(messages)}};

  auto res = client.Post(path_, headers, body.dump(), "application/json");
  if (!res) throw TransportError("HTTP request failed: " + httplib::to_string(res.error()), true);
  if (res->status == 429 || res->status >= 500) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from provider", true);
  }
  if (res->status != 200) {
    throw TransportError("HTTP " + std::to_string(res->status) + " from provider: " + res->body.substr(0, 200), false);
  }
  return extract_completion_text(res->body);
}

std::unique_ptr<Provider> make_provider(const ProviderConfig& config, const std::filesystem::path& base_dir) {
  if (config.provider == ProviderConfig::Kind::HttpApi) return std::make_unique<HttpProvider>(config);
  TruthTable truth;
  std::string digest;
  if (!config.mock_truth.empty()) {
    std::filesystem::path p = config.mock_truth;
    if (p.is_relative()) p = base_dir / p;
    truth = read_truth_table(p);
    digest = sha256_file(p);
  }
  return std::make_unique<MockProvider>(config.mock_seed, std::move(truth), std::move(digest));
}

}  // namespace mcqd
