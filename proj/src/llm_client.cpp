#include "llm_client.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <thread>

#include "hashing.hpp"

namespace mcqd {

namespace fs = std::filesystem;

PromptTemplates PromptTemplates::defaults() {
  PromptTemplates t;
  t.persona_system =
      "You are an experienced mathematics teacher who interprets assessment data about groups of students.\n";
  t.persona_user =
      "{{instruction}}\n"
      "\n"
      "Group {{cluster}} of {{k}}.\n"
      "\n"
      "{{question_blocks}}";
  t.simulate_system =
      "You are simulating one type of student.\n"
      "\n"
      "Student type: {{persona_name}}\n"
      "{{persona_description}}\n"
      "\n"
      "Do not work out the best answer yourself. Estimate, as this type of student, how likely they are to "
      "choose each answer option, including wrong options they would find convincing. Reply only with a JSON "
      "object of the form {\"A\": p, \"B\": p, \"C\": p, \"D\": p} whose values are probabilities that sum to 1.\n";
  t.simulate_user =
      "Question:\n"
      "{{question_text}}\n"
      "\n"
      "A) {{option_a}}\n"
      "B) {{option_b}}\n"
      "C) {{option_c}}\n"
      "D) {{option_d}}\n";
  t.reprompt = "Your previous reply could not be parsed. Reply with the JSON object only, and nothing else.\n";
  return t;
}

PromptTemplates PromptTemplates::load(const fs::path& dir) {
  PromptTemplates t = defaults();
  auto maybe = [&](const char* name, std::string& slot) {
    const fs::path p = dir / name;
    if (fs::exists(p)) slot = read_file(p);
  };
  if (!fs::is_directory(dir)) throw DataError("prompts directory not found: " + dir.string());
  maybe("persona_system.txt", t.persona_system);
  maybe("persona_user.txt", t.persona_user);
  maybe("simulate_system.txt", t.simulate_system);
  maybe("simulate_user.txt", t.simulate_user);
  maybe("reprompt.txt", t.reprompt);
  return t;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) break;
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) break;
    out.append(tmpl.substr(pos, open - pos));
    const std::string name(tmpl.substr(open + 2, close - open - 2));
    auto it = values.find(name);
    if (it == values.end()) throw UsageError("prompt template: unknown placeholder {{" + name + "}}");
    out += it->second;
    pos = close + 2;
  }
  out.append(tmpl.substr(pos));
  return out;
}

namespace {

json extract_json_object(const std::string& text) {
  const auto first = text.find('{');
  const auto last = text.rfind('}');
  if (first == std::string::npos || last == std::string::npos || last < first) {
    throw ParseError("no JSON object in provider reply", text);
  }
  json obj = json::parse(text.substr(first, last - first + 1), nullptr, false);
  if (obj.is_discarded() || !obj.is_object()) throw ParseError("malformed JSON object in provider reply", text);
  return obj;
}

}  // namespace

OptionProbs parse_option_probabilities(const std::string& text) {
  const json obj = extract_json_object(text);
  OptionProbs out{};
  for (Option o : kAllOptions) {
    auto it = obj.find(std::string(to_string(o)));
    if (it == obj.end()) throw ParseError("missing option key " + std::string(to_string(o)), text);
    if (!it->is_number()) throw ParseError("non-numeric value for option " + std::string(to_string(o)), text);
    const double v = it->get<double>();
    if (!std::isfinite(v) || v < 0.0) {
      throw ParseError("invalid probability for option " + std::string(to_string(o)), text);
    }
    out[index_of(o)] = v;
  }
  return out;
}

std::pair<std::string, std::string> parse_persona_response(const std::string& text) {
  const json obj = extract_json_object(text);
  auto name = obj.find("name");
  auto desc = obj.find("description");
  if (name == obj.end() || !name->is_string() || name->get<std::string>().empty() || desc == obj.end() ||
      !desc->is_string()) {
    throw ParseError("persona reply needs string fields name and description", text);
  }
  return {name->get<std::string>(), desc->get<std::string>()};
}

std::string persona_digest(const PersonaProfile& p) {
  return sha256_hex(json{{"cluster", p.cluster + 1}, {"name", p.name}, {"description", p.description}}.dump());
}

std::string question_digest(const Question& q) {
  json opts = json::array();
  for (const auto& o : q.options) opts.push_back(o);
  return sha256_hex(json{{"question_id", q.question_id},
                         {"text", q.text},
                         {"options", std::move(opts)},
                         {"correct_option", to_string(q.correct_option)},
                         {"topic", to_string(q.topic)}}
                        .dump());
}

RateLimiter::RateLimiter(double per_minute)
    : interval_seconds_(per_minute > 0.0 ? 60.0 / per_minute : 0.0), next_(std::chrono::steady_clock::now()) {}

void RateLimiter::acquire() {
  if (interval_seconds_ <= 0.0) return;
  std::chrono::steady_clock::time_point slot;
  {
    std::lock_guard lock(mutex_);
    const auto now = std::chrono::steady_clock::now();
    slot = std::max(now, next_);
    next_ = slot + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                       std::chrono::duration<double>(interval_seconds_));
  }
  std::this_thread::sleep_until(slot);
}

LlmClient::LlmClient(Provider& provider, ProviderConfig config, PromptTemplates prompts)
    : provider_(provider), config_(std::move(config)), prompts_(std::move(prompts)),
      limiter_(config_.rate_limit_per_minute) {}

CallOutcome LlmClient::call(const ChatRequest& request) {
  CallOutcome out;
  double backoff = config_.retry_backoff_seconds;
  for (;;) {
    limiter_.acquire();
    ++out.attempts;
    ++provider_calls_;
    try {
      out.text = provider_.complete(request);
      return out;
    } catch (const TransportError& e) {
      if (!e.transient() || out.attempts > config_.max_retries) {
        throw TransportError(std::string(e.what()) + " (after " + std::to_string(out.attempts) + " attempts)",
                             e.transient());
      }
    }
    if (backoff > 0.0) std::this_thread::sleep_for(std::chrono::duration<double>(backoff));
    backoff *= 2.0;
  }
}

template <class Parse>
auto LlmClient::call_and_parse(const ChatRequest& request, Parse parse, Exchange* exchange) {
  ChatRequest req = request;
  std::size_t attempts = 0;
  json replies = json::array();
  auto record = [&](const std::string& error) {
    if (!exchange) return;
    json msgs = json::array();
    for (const auto& m : request.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
    exchange->record = {{"messages", std::move(msgs)}, {"replies", replies}, {"attempts", attempts}};
    if (!error.empty()) exchange->record["error"] = error;
  };
  for (int round = 0;; ++round) {
    CallOutcome outcome;
    try {
      outcome = call(req);
    } catch (const ProviderError& e) {
      record(e.what());
      throw;
    }
    attempts += outcome.attempts;
    replies.push_back(outcome.text);
    try {
      auto value = parse(outcome.text);
      record("");
      return value;
    } catch (const ParseError& e) {
      if (round >= 1) {
        record(e.what());
        throw ParseError(std::string(e.what()) + " (after reprompt)", e.raw());
      }
      req.messages.push_back({"assistant", outcome.text});
      req.messages.push_back({"user", prompts_.reprompt});
    }
  }
}

ChatRequest LlmClient::persona_request(const PersonaSynthesisRequest& request) const {
  std::string blocks;
  std::map<Topic, double> topic_weight;
  for (const auto& b : request.questions) {
    blocks += "[" + b.role + "] " + b.question_id + " (" + std::string(to_string(b.topic)) + ")\n";
    blocks += "Text: " + b.text + "\n";
    blocks += "Accuracy by group:";
    for (std::size_t c = 0; c < b.cluster_accuracy.size(); ++c) {
      blocks += " " + std::to_string(c + 1) + "=" + format_double(std::round(b.cluster_accuracy[c] * 1000.0) / 1000.0);
    }
    blocks += "\nDeviation for this group: " + format_double(std::round(b.delta * 1000.0) / 1000.0) + "\n\n";
    topic_weight[b.topic] += b.delta;
  }
  ChatRequest req;
  req.purpose = RequestPurpose::PersonaSynthesis;
  req.temperature = config_.temperature;
  req.messages.push_back({"system", prompts_.persona_system});
  req.messages.push_back({"user", render_template(prompts_.persona_user,
                                                  {{"instruction", request.instruction},
                                                   {"cluster", std::to_string(request.cluster + 1)},
                                                   {"k", std::to_string(request.k)},
                                                   {"question_blocks", blocks}})});
  Topic strong = Topic::Number, weak = Topic::Number;
  double hi = -1e300, lo = 1e300;
  for (const auto& [t, w] : topic_weight) {
    if (w > hi) hi = w, strong = t;
    if (w < lo) lo = w, weak = t;
  }
  req.metadata = {{"cluster", request.cluster},
                  {"digest", sha256_hex(to_json(request).dump())},
                  {"strength_topic", to_string(strong)},
                  {"weakness_topic", to_string(weak)}};
  return req;
}

ChatRequest LlmClient::simulation_request(const Question& q, const PersonaProfile& persona) const {
  ChatRequest req;
  req.purpose = RequestPurpose::Simulation;
  req.temperature = config_.temperature;
  req.messages.push_back({"system", render_template(prompts_.simulate_system,
                                                    {{"persona_name", persona.name},
                                                     {"persona_description", persona.description}})});
  req.messages.push_back({"user", render_template(prompts_.simulate_user,
                                                  {{"question_text", q.text},
                                                   {"option_a", q.options[0]},
                                                   {"option_b", q.options[1]},
                                                   {"option_c", q.options[2]},
                                                   {"option_d", q.options[3]}})});
  req.metadata = {{"question_id", q.question_id},
                  {"cluster", persona.cluster},
                  {"persona_digest", persona_digest(persona)},
                  {"correct_option", index_of(q.correct_option)}};
  return req;
}

std::string LlmClient::simulation_prompt_digest() const {
  return sha256_hex(prompts_.simulate_system + "\n\x1f" + prompts_.simulate_user + "\n\x1f" + prompts_.reprompt);
}

PersonaProfile LlmClient::synthesize_persona(const PersonaSynthesisRequest& request, Exchange* exchange) {
  auto [name, description] = call_and_parse(persona_request(request), parse_persona_response, exchange);
  PersonaProfile p;
  p.cluster = request.cluster;
  p.name = std::move(name);
  p.description = std::move(description);
  p.provenance = Provenance::LlmGenerated;
  for (const auto& b : request.questions) (b.role == "strength" ? p.strengths : p.weaknesses).push_back(b.question_id);
  return p;
}

OptionProbs LlmClient::simulate_item(const Question& question, const PersonaProfile& persona, Exchange* exchange) {
  return call_and_parse(simulation_request(question, persona), parse_option_probabilities, exchange);
}

SimulationCache::SimulationCache(fs::path dir) : dir_(std::move(dir)) { fs::create_directories(dir_); }

std::string SimulationCache::key(const std::string& provider_id, const std::string& model,
                                 const std::string& prompt_hash, const std::string& persona_hash,
                                 const std::string& question_hash) {
  return sha256_hex(provider_id + "\n" + model + "\n" + prompt_hash + "\n" + persona_hash + "\n" + question_hash);
}

fs::path SimulationCache::path_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

std::optional<std::string> SimulationCache::get(const std::string& key) const {
  std::shared_lock lock(mutex_);
  const auto p = path_for(key);
  if (!fs::exists(p)) return std::nullopt;
  return read_file(p);
}

void SimulationCache::put(const std::string& key, const std::string& content) {
  std::unique_lock lock(mutex_);
  write_file_atomic(path_for(key), content);
}

std::size_t BatchReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const SimulationResult& r) { return !r.probs; }));
}

std::string option_probs_json(const OptionProbs& probs) {
  json out = json::object();
  for (Option o : kAllOptions) out[std::string(to_string(o))] = probs[index_of(o)];
  return out.dump();
}

BatchReport batch_simulate(LlmClient& client, std::span<const Question> items,
                           std::span<const PersonaProfile> personas, SimulationCache* cache) {
  if (items.empty() || personas.empty()) throw UsageError("batch_simulate: no items or no personas");
  const std::size_t total = items.size() * personas.size();
  BatchReport report;
  report.results.resize(total);
  std::vector<std::optional<Exchange>> exchanges(total);
  std::vector<std::string> persona_hashes;
  for (const auto& p : personas) persona_hashes.push_back(persona_digest(p));
  const std::string prompt_hash = client.simulation_prompt_digest();
  const std::size_t calls_before = client.provider_calls();
  std::atomic<std::size_t> next{0}, hits{0};

  auto work = [&]() {
    for (std::size_t j = next++; j < total; j = next++) {
      const Question& q = items[j / personas.size()];
      const PersonaProfile& persona = personas[j % personas.size()];
      SimulationResult& res = report.results[j];
      res.question_id = q.question_id;
      res.cluster = persona.cluster;
      const std::string key = SimulationCache::key(client.provider().id(), client.config().model_name, prompt_hash,
                                                   persona_hashes[j % personas.size()], question_digest(q));
      try {
        if (cache) {
          if (auto hit = cache->get(key)) {
            res.probs = parse_option_probabilities(*hit);
            res.from_cache = true;
            ++hits;
            continue;
          }
        }
        Exchange ex;
        try {
          res.probs = client.simulate_item(q, persona, &ex);
        } catch (...) {
          exchanges[j] = std::move(ex);
          throw;
        }
        exchanges[j] = std::move(ex);
        if (cache) cache->put(key, option_probs_json(*res.probs));
      } catch (const std::exception& e) {
        res.probs.reset();
        res.error = e.what();
      }
    }
  };

  const std::size_t n_threads = std::clamp<std::size_t>(client.config().concurrency, 1, total);
  if (n_threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(work);
    for (auto& th : pool) th.join();
  }

  for (std::size_t j = 0; j < total; ++j) {
    if (!exchanges[j]) continue;
    exchanges[j]->record["question_id"] = report.results[j].question_id;
    exchanges[j]->record["cluster"] = report.results[j].cluster + 1;
    report.exchanges.push_back(std::move(*exchanges[j]));
  }
  report.provider_calls = client.provider_calls() - calls_before;
  report.cache_hits = hits.load();
  return report;
}

}  // namespace mcqd
