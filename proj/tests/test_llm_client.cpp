#include <doctest.h>
#include <httplib.h>

#include <atomic>
#include <cmath>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include "llm_client.hpp"
#include "support/oracles.hpp"

using namespace mcqd;

namespace {

// Replays a fixed script of replies; a reply of "!transient" or "!fatal"
// raises the matching transport error.
class ScriptedProvider : public Provider {
 public:
  explicit ScriptedProvider(std::deque<std::string> script) : script_(std::move(script)) {}
  std::string complete(const ChatRequest& request) override {
    std::lock_guard lock(mutex_);
    seen.push_back(request);
    if (script_.empty()) throw TransportError("script exhausted", false);
    std::string next = script_.front();
    script_.pop_front();
    if (next == "!transient") throw TransportError("503", true);
    if (next == "!fatal") throw TransportError("401", false);
    return next;
  }
  std::string id() const override { return "scripted"; }
  std::vector<ChatRequest> seen;

 private:
  std::deque<std::string> script_;
  std::mutex mutex_;
};

// Counts calls and delegates to a mock.
class CountingProvider : public Provider {
 public:
  explicit CountingProvider(std::uint64_t seed) : inner_(seed) {}
  std::string complete(const ChatRequest& r) override {
    ++calls;
    return inner_.complete(r);
  }
  std::string id() const override { return inner_.id(); }
  std::atomic<int> calls{0};

 private:
  MockProvider inner_;
};

ProviderConfig fast_config() {
  ProviderConfig c;
  c.retry_backoff_seconds = 0.0;
  c.max_retries = 3;
  c.concurrency = 1;
  return c;
}

Question make_question(const std::string& id, Option correct = Option::B) {
  Question q;
  q.question_id = id;
  q.text = "What is 3 x 4?";
  q.options = {"7", "12", "34", "1"};
  q.correct_option = correct;
  q.topic = Topic::Number;
  return q;
}

PersonaProfile make_persona(std::size_t cluster, const std::string& name) {
  PersonaProfile p;
  p.cluster = cluster;
  p.name = name;
  p.description = "Confuses place value with concatenation.";
  return p;
}

}  // namespace

TEST_CASE("render_template substitutes placeholders and rejects unknown ones") {
  CHECK(render_template("a {{x}} b {{y}}{{x}}", {{"x", "1"}, {"y", "{{x}}"}}) == "a 1 b {{x}}1");
  CHECK(render_template("no placeholders", {}) == "no placeholders");
  CHECK(render_template("dangling {{open", {}) == "dangling {{open");
  CHECK_THROWS_AS(render_template("{{missing}}", {}), UsageError);
}

TEST_CASE("prompt directory overrides defaults file by file") {
  oracle::TempDir dir;
  oracle::write_text(dir / "reprompt.txt", "JSON ONLY\n");
  const PromptTemplates t = PromptTemplates::load(dir.path());
  const PromptTemplates d = PromptTemplates::defaults();
  CHECK(t.reprompt == "JSON ONLY\n");
  CHECK(t.simulate_user == d.simulate_user);
  CHECK_THROWS_AS(PromptTemplates::load(dir / "absent"), DataError);
}

TEST_CASE("parse_option_probabilities accepts wrapped JSON and rejects bad payloads") {
  const auto p = parse_option_probabilities("Sure!\n```json\n{\"A\": 0.1, \"B\": 0.6, \"C\": 0.2, \"D\": 0.1}\n```");
  CHECK(p == OptionProbs{0.1, 0.6, 0.2, 0.1});
  CHECK(parse_option_probabilities(R"({"D": 2, "C": 0, "B": 1, "A": 1})") == OptionProbs{1, 1, 0, 2});
  CHECK_THROWS_AS(parse_option_probabilities("no json here"), ParseError);
  CHECK_THROWS_AS(parse_option_probabilities(R"({"A": 0.5, "B": 0.5, "C": 0})"), ParseError);
  CHECK_THROWS_AS(parse_option_probabilities(R"({"A": -0.1, "B": 0.5, "C": 0.3, "D": 0.3})"), ParseError);
  CHECK_THROWS_AS(parse_option_probabilities(R"({"A": "x", "B": 0.5, "C": 0.3, "D": 0.3})"), ParseError);
  CHECK_THROWS_AS(parse_option_probabilities(R"({"A": 0.5, "B": 0.5, "C": 0.3, "D": 0.3)"), ParseError);
  try {
    parse_option_probabilities("garbage");
  } catch (const ParseError& e) {
    CHECK(e.raw() == "garbage");
  }
}

TEST_CASE("parse_persona_response requires name and description") {
  const auto [name, desc] = parse_persona_response(R"(Here: {"name": "N", "description": "D"})");
  CHECK(name == "N");
  CHECK(desc == "D");
  CHECK_THROWS_AS(parse_persona_response(R"({"name": "", "description": "D"})"), ParseError);
  CHECK_THROWS_AS(parse_persona_response(R"({"name": "N"})"), ParseError);
}

TEST_CASE("mock provider is deterministic and seed-sensitive") {
  MockProvider a(1), b(1), c(2);
  LlmClient ca(a, fast_config()), cb(b, fast_config()), cc(c, fast_config());
  const Question q = make_question("q1");
  const PersonaProfile p = make_persona(0, "P");
  const OptionProbs pa = ca.simulate_item(q, p);
  CHECK(pa == cb.simulate_item(q, p));
  CHECK(pa != cc.simulate_item(q, p));
  double s = 0;
  for (double v : pa) {
    CHECK(v > 0.0);
    s += v;
  }
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(a.id() == b.id());
  CHECK(a.id() != c.id());
}

TEST_CASE("mock provider with a truth table puts the truth on the correct option") {
  TruthTable truth = {{{1, "q1"}, 0.83}};
  MockProvider m(5, truth, "abc");
  LlmClient client(m, fast_config());
  const OptionProbs p = client.simulate_item(make_question("q1", Option::C), make_persona(1, "P"));
  CHECK(p[index_of(Option::C)] == doctest::Approx(0.83).epsilon(1e-12));
  CHECK(p[0] + p[1] + p[3] == doctest::Approx(0.17).epsilon(1e-12));
  // Other clusters fall back to hash-derived probabilities.
  const OptionProbs other = client.simulate_item(make_question("q1", Option::C), make_persona(0, "P"));
  CHECK(other[index_of(Option::C)] != doctest::Approx(0.83));
  CHECK(m.id().find("truth=") != std::string::npos);
}

TEST_CASE("read_truth_table reads class_success blocks") {
  oracle::TempDir dir;
  oracle::write_text(dir / "t.json", R"({"class_success": [{"class": 2, "weight": 0.5, "items": {"q1": 0.25}}]})");
  const TruthTable t = read_truth_table(dir / "t.json");
  REQUIRE(t.size() == 1);
  CHECK(t.at({1, "q1"}) == 0.25);
  oracle::write_text(dir / "bad.json", R"({"class_success": [{"class": 0, "items": {}}]})");
  CHECK_THROWS_AS(read_truth_table(dir / "bad.json"), DataError);
}

TEST_CASE("mock persona synthesis yields a named persona") {
  MockProvider m(3);
  LlmClient client(m, fast_config());
  PersonaSynthesisRequest req;
  req.cluster = 2;
  req.k = 3;
  req.instruction = "Describe.";
  req.questions = {{"q1", "strength", "t1", Topic::Algebra, {0.2, 0.3, 0.9}, 0.433},
                   {"q2", "weakness", "t2", Topic::Number, {0.8, 0.7, 0.1}, -0.433}};
  const PersonaProfile p = client.synthesize_persona(req);
  CHECK(p.cluster == 2);
  CHECK_FALSE(p.name.empty());
  CHECK(p.provenance == Provenance::LlmGenerated);
  CHECK(p.strengths == std::vector<std::string>{"q1"});
  CHECK(p.weaknesses == std::vector<std::string>{"q2"});
  CHECK(p.description.find("Algebra") != std::string::npos);
  MockProvider m2(3);
  LlmClient client2(m2, fast_config());
  CHECK(client2.synthesize_persona(req) == p);
}

TEST_CASE("transient transport errors are retried up to max_retries") {
  const std::string ok = R"({"A": 0.25, "B": 0.25, "C": 0.25, "D": 0.25})";
  {
    ScriptedProvider p({"!transient", "!transient", ok});
    LlmClient client(p, fast_config());
    Exchange ex;
    CHECK(client.simulate_item(make_question("q"), make_persona(0, "P"), &ex) == OptionProbs{0.25, 0.25, 0.25, 0.25});
    CHECK(client.provider_calls() == 3);
    CHECK(ex.record["attempts"] == 3);
  }
  {
    ScriptedProvider p({"!transient", "!transient", "!transient", "!transient", ok});
    LlmClient client(p, fast_config());
    CHECK_THROWS_AS(client.simulate_item(make_question("q"), make_persona(0, "P")), TransportError);
    CHECK(client.provider_calls() == 4);
  }
  {
    ScriptedProvider p({"!fatal", ok});
    LlmClient client(p, fast_config());
    CHECK_THROWS_AS(client.simulate_item(make_question("q"), make_persona(0, "P")), TransportError);
    CHECK(client.provider_calls() == 1);
  }
}

TEST_CASE("an unparseable reply triggers exactly one reprompt") {
  const std::string ok = R"({"A": 0.1, "B": 0.7, "C": 0.1, "D": 0.1})";
  {
    ScriptedProvider p({"I think B.", ok});
    LlmClient client(p, fast_config());
    Exchange ex;
    CHECK(client.simulate_item(make_question("q"), make_persona(0, "P"), &ex)[1] == 0.7);
    REQUIRE(p.seen.size() == 2);
    const auto& second = p.seen[1].messages;
    REQUIRE(second.size() == 4);
    CHECK(second[2].role == "assistant");
    CHECK(second[2].content == "I think B.");
    CHECK(second[3].content == PromptTemplates::defaults().reprompt);
    CHECK(ex.record["replies"].size() == 2);
  }
  {
    ScriptedProvider p({"I think B.", "Still B.", ok});
    LlmClient client(p, fast_config());
    Exchange ex;
    CHECK_THROWS_AS(client.simulate_item(make_question("q"), make_persona(0, "P"), &ex), ParseError);
    CHECK(p.seen.size() == 2);
    CHECK(ex.record.contains("error"));
  }
}

TEST_CASE("simulation request renders the persona and question") {
  MockProvider m(0);
  LlmClient client(m, fast_config());
  const ChatRequest r = client.simulation_request(make_question("q9"), make_persona(1, "Pattern Spotters"));
  REQUIRE(r.messages.size() == 2);
  CHECK(r.messages[0].role == "system");
  CHECK(r.messages[0].content.find("Pattern Spotters") != std::string::npos);
  CHECK(r.messages[1].content.find("B) 12") != std::string::npos);
  CHECK(r.metadata["question_id"] == "q9");
  CHECK(r.metadata["cluster"] == 1);
}

TEST_CASE("rate limiter spaces calls by 60 / rate seconds") {
  RateLimiter limiter(1200.0);  // one call every 50 ms
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) limiter.acquire();
  const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(elapsed >= 0.149);
  RateLimiter unlimited(0.0);
  unlimited.acquire();
}

TEST_CASE("cache keys separate provider, model, prompts, persona and question") {
  const auto base = SimulationCache::key("p", "m", "t", "a", "q");
  CHECK(base.size() == 64);
  CHECK(base == SimulationCache::key("p", "m", "t", "a", "q"));
  CHECK(base != SimulationCache::key("p2", "m", "t", "a", "q"));
  CHECK(base != SimulationCache::key("p", "m2", "t", "a", "q"));
  CHECK(base != SimulationCache::key("p", "m", "t2", "a", "q"));
  CHECK(base != SimulationCache::key("p", "m", "t", "a2", "q"));
  CHECK(base != SimulationCache::key("p", "m", "t", "a", "q2"));
  Question q = make_question("q");
  const auto d = question_digest(q);
  q.text += " ";
  CHECK(question_digest(q) != d);
  PersonaProfile p = make_persona(0, "A");
  const auto pd = persona_digest(p);
  p.description += ".";
  CHECK(persona_digest(p) != pd);
}

TEST_CASE("batch_simulate: warm cache makes zero provider calls and gives identical results") {
  oracle::TempDir dir;
  std::vector<Question> items;
  for (int i = 0; i < 6; ++i) items.push_back(make_question("q" + std::to_string(i)));
  const std::vector<PersonaProfile> personas = {make_persona(0, "A"), make_persona(1, "B"), make_persona(2, "C")};
  ProviderConfig cfg = fast_config();
  cfg.concurrency = 3;

  CountingProvider cold_p(11);
  LlmClient cold_client(cold_p, cfg);
  SimulationCache cache(dir / "cache");
  const BatchReport cold = batch_simulate(cold_client, items, personas, &cache);
  CHECK(cold_p.calls == 18);
  CHECK(cold.provider_calls == 18);
  CHECK(cold.cache_hits == 0);
  CHECK(cold.exchanges.size() == 18);
  CHECK(cold.failures() == 0);

  CountingProvider warm_p(11);
  LlmClient warm_client(warm_p, cfg);
  SimulationCache cache2(dir / "cache");
  const BatchReport warm = batch_simulate(warm_client, items, personas, &cache2);
  CHECK(warm_p.calls == 0);
  CHECK(warm.cache_hits == 18);
  CHECK(warm.exchanges.empty());
  for (std::size_t j = 0; j < 18; ++j) {
    CHECK(warm.results[j].question_id == cold.results[j].question_id);
    CHECK(warm.results[j].cluster == cold.results[j].cluster);
    CHECK(*warm.results[j].probs == *cold.results[j].probs);
    CHECK(warm.results[j].from_cache);
  }
  // Results are question-major regardless of thread scheduling.
  CHECK(cold.results[4].question_id == "q1");
  CHECK(cold.results[4].cluster == 1);

  // Changing the prompts invalidates the cache.
  PromptTemplates t = PromptTemplates::defaults();
  t.simulate_user += "Think carefully.\n";
  CountingProvider third_p(11);
  LlmClient third(third_p, cfg, t);
  batch_simulate(third, items, personas, &cache2);
  CHECK(third_p.calls == 18);
}

TEST_CASE("batch_simulate records failures without aborting") {
  std::vector<Question> items = {make_question("q0"), make_question("q1")};
  const std::vector<PersonaProfile> personas = {make_persona(0, "A")};
  ScriptedProvider p({R"({"A": 1, "B": 1, "C": 1, "D": 1})", "nonsense", "more nonsense"});
  LlmClient client(p, fast_config());
  const BatchReport r = batch_simulate(client, items, personas, nullptr);
  CHECK(r.failures() == 1);
  CHECK(r.results[0].probs.has_value());
  CHECK_FALSE(r.results[1].probs.has_value());
  CHECK_FALSE(r.results[1].error.empty());
  REQUIRE(r.exchanges.size() == 2);
  CHECK(r.exchanges[1].record.contains("error"));
  CHECK(r.exchanges[1].record["question_id"] == "q1");
}

TEST_CASE("extract_completion_text handles both response shapes") {
  CHECK(extract_completion_text(R"({"choices": [{"message": {"role": "assistant", "content": "hi"}}]})") == "hi");
  CHECK(extract_completion_text(R"({"content": [{"type": "text", "text": "a"}, {"type": "text", "text": "b"}]})") ==
        "ab");
  CHECK_THROWS_AS(extract_completion_text("not json"), ParseError);
  CHECK_THROWS_AS(extract_completion_text(R"({"choices": []})"), ParseError);
}

TEST_CASE("provider config parsing validates fields") {
  CHECK(provider_config_from_json(json::object()).provider == ProviderConfig::Kind::Mock);
  CHECK_THROWS_AS(provider_config_from_json({{"provider", "carrier-pigeon"}}), UsageError);
  CHECK_THROWS_AS(provider_config_from_json({{"provider", "http_api"}}), UsageError);
  CHECK_THROWS_AS(provider_config_from_json({{"timeout_seconds", 0}}), UsageError);
  ProviderConfig c;
  c.model_name = "m";
  c.concurrency = 7;
  const ProviderConfig back = provider_config_from_json(to_json(c));
  CHECK(back.model_name == "m");
  CHECK(back.concurrency == 7);
}

TEST_CASE("HTTP provider talks chat-completions JSON and retries 5xx") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string last_auth, last_model;
  server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    if (hits++ == 0) {
      res.status = 503;
      return;
    }
    last_auth = req.get_header_value("Authorization");
    last_model = json::parse(req.body).at("model").get<std::string>();
    json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", R"({"A":0,"B":1,"C":0,"D":0})"}}}}}}};
    res.set_content(reply.dump(), "application/json");
  });
  server.Post("/denied", [](const httplib::Request&, httplib::Response& res) { res.status = 401; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("MCQD_TEST_KEY", "secret", 1);
  ProviderConfig cfg = fast_config();
  cfg.provider = ProviderConfig::Kind::HttpApi;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  cfg.model_name = "test-model";
  cfg.api_key_env = "MCQD_TEST_KEY";
  cfg.timeout_seconds = 5;
  auto provider = make_provider(cfg, ".");
  LlmClient client(*provider, cfg);
  CHECK(client.simulate_item(make_question("q"), make_persona(0, "P")) == OptionProbs{0, 1, 0, 0});
  CHECK(hits == 2);
  CHECK(last_auth == "Bearer secret");
  CHECK(last_model == "test-model");
  CHECK(provider->id().find("secret") == std::string::npos);

  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/denied";
  HttpProvider denied(cfg);
  LlmClient denied_client(denied, cfg);
  CHECK_THROWS_AS(denied_client.simulate_item(make_question("q"), make_persona(0, "P")), TransportError);
  CHECK(denied_client.provider_calls() == 1);

  server.stop();
  th.join();
}

TEST_CASE("bundled prompt files match the built-in templates") {
  const PromptTemplates a = PromptTemplates::load(std::filesystem::path(MCQD_SOURCE_DIR) / "prompts/v1");
  const PromptTemplates d = PromptTemplates::defaults();
  CHECK(a.persona_system == d.persona_system);
  CHECK(a.persona_user == d.persona_user);
  CHECK(a.simulate_system == d.simulate_system);
  CHECK(a.simulate_user == d.simulate_user);
  CHECK(a.reprompt == d.reprompt);
}
