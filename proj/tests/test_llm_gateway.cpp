#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "revlens/llm_gateway.hpp"
#include "support/paths.hpp"

using namespace revlens;
using namespace revlens::llm;

namespace {

OutputSchema sentiment_schema() {
  return {{{"sentiment", FieldType::enumeration, {"positive", "negative", "neutral"}, true}}};
}

PromptTemplate classify_template(std::string id = "classify", std::size_t examples = 0) {
  PromptTemplate t;
  t.template_id = std::move(id);
  t.role_preamble = "You are an analyst.";
  t.instructions = "Classify: {text}";
  t.output_schema = sentiment_schema();
  const char* inputs[] = {"love it", "hate it", "it exists"};
  const char* labels[] = {"positive", "negative", "neutral"};
  for (std::size_t i = 0; i < examples; ++i) t.few_shot_examples.push_back({inputs[i % 3], {{"sentiment", labels[i % 3]}}});
  return t;
}

std::shared_ptr<StubBackend> stub_for(const PromptTemplate& t, const std::map<std::string, std::string>& answers) {
  auto s = std::make_shared<StubBackend>();
  for (const auto& [text, reply] : answers) s->add(render_prompt(t, {{"text", text}}), reply);
  return s;
}

RetryPolicy fast_retry(int budget) { return {budget, std::chrono::milliseconds(1), 2.0, std::chrono::milliseconds(5)}; }

}  // namespace

TEST_CASE("render_prompt assembles preamble, examples and instruction", "[llm]") {
  auto msgs = render_prompt(classify_template(), {{"text", "hi"}});
  REQUIRE(msgs.size() == 2);
  CHECK(msgs[0] == Message{Role::system, "You are an analyst."});
  CHECK(msgs[1] == Message{Role::user, "Classify: hi"});

  auto two = render_prompt(classify_template("c", 2), {{"text", "hi"}});
  REQUIRE(two.size() == 6);
  CHECK(two[1].role == Role::user);
  CHECK(two[2] == Message{Role::assistant, "{\"sentiment\":\"positive\"}"});

  CHECK_THROWS_WITH(render_prompt(classify_template(), {}), "unbound placeholder text");
}

TEST_CASE("placeholder syntax", "[llm]") {
  CHECK(placeholders("a {x} b {y_1} {x} {{z}} {not valid} {") == std::vector<std::string>{"x", "y_1"});
  CHECK(instantiate("{{\"k\": \"{v}\"}}", {{"v", "1"}}) == "{\"k\": \"1\"}");
}

TEST_CASE("digest is stable and order-sensitive", "[llm]") {
  Messages a{{Role::system, "s"}, {Role::user, "u"}};
  Messages b{{Role::user, "u"}, {Role::system, "s"}};
  CHECK(digest(a) == digest(a));
  CHECK(digest(a) != digest(b));
  CHECK(digest(a).size() == 64);
}

TEST_CASE("stub backend lookups", "[llm]") {
  auto t = classify_template();
  auto stub = stub_for(t, {{"hi", "positive"}});
  Gateway gw(stub);
  auto msgs = render_prompt(t, {{"text", "hi"}});
  CHECK(gw.complete(msgs, t.decoding).text == "positive");

  auto other = render_prompt(t, {{"text", "bye"}});
  try {
    gw.complete(other, t.decoding);
    FAIL("expected MissingFixture");
  } catch (const MissingFixture& e) {
    CHECK(e.prompt_digest() == digest(other));
  }
  CHECK(gw.audit().size() == 2);
  CHECK(gw.audit().snapshot()[1].status == "error");
}

TEST_CASE("stub fixtures load from line-delimited files", "[llm]") {
  revlens::testing::TempDir dir;
  auto t = classify_template();
  auto msgs = render_prompt(t, {{"text", "x"}});
  auto path = dir.write("fx.jsonl", json{{"digest", digest(msgs)}, {"response", "neutral"}}.dump() + "\n\n");
  auto stub = StubBackend::from_jsonl(path);
  CHECK(stub.size() == 1);
  CHECK(stub.send(msgs, {}).text == "neutral");
  CHECK_THROWS_AS(StubBackend::from_jsonl(dir.write("bad.jsonl", "{nope\n")), ParseError);
}

TEST_CASE("parse_structured tolerates prose and distinguishes failures", "[llm]") {
  auto s = sentiment_schema();
  CHECK(parse_structured("{\"sentiment\":\"positive\"}", s) == json{{"sentiment", "positive"}});
  CHECK(parse_structured("Sure! {\"sentiment\":\"positive\"} hope that helps", s) == json{{"sentiment", "positive"}});
  CHECK(parse_structured("```json\n{\"sentiment\": \"Negative\", \"extra\": 1}\n```", s) ==
        json{{"sentiment", "negative"}});
  CHECK(parse_structured("{\"a\": {\"b\": \"}\"}} then {\"sentiment\":\"neutral\"}", s) ==
        json{{"sentiment", "neutral"}});

  auto kind_of = [&](std::string_view resp, const OutputSchema& schema) {
    try {
      parse_structured(resp, schema);
    } catch (const StructuredOutputError& e) {
      return e.kind();
    }
    FAIL("expected a parse failure");
    return ParseFailure::no_record;
  };
  CHECK(kind_of("{\"sentiment\":\"happy\"}", s) == ParseFailure::enum_violation);
  CHECK(kind_of("{\"mood\":\"positive\"}", s) == ParseFailure::missing_field);
  CHECK(kind_of("no json here", s) == ParseFailure::no_record);
  CHECK(kind_of("{\"sentiment\": 3}", s) == ParseFailure::type_mismatch);
  CHECK_THROWS_AS(parse_structured("{}", OutputSchema{}), PreconditionError);

  OutputSchema lists{{{"citations", FieldType::string_list, {}, true}}};
  CHECK(parse_structured("{\"citations\": [1, \"2\"]}", lists)["citations"] == json{"1", "2"});
}

TEST_CASE("templates are self-consistent", "[llm][property]") {
  auto t = classify_template("c", 3);
  for (std::size_t i = 0; i < t.few_shot_examples.size(); ++i) {
    auto msgs = render_prompt(t, {{"text", "q"}});
    CHECK_NOTHROW(parse_structured(msgs[2 + 2 * i].content, t.output_schema));
  }
  auto bad = t;
  bad.few_shot_examples[0].output = {{"sentiment", "ecstatic"}};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  auto round = template_from_json(to_json(t));
  CHECK(render_prompt(round, {{"text", "q"}}) == render_prompt(t, {{"text", "q"}}));
}

TEST_CASE("run repairs exactly once", "[llm]") {
  auto t = classify_template();
  auto first = render_prompt(t, {{"text", "meh"}});
  auto stub = std::make_shared<StubBackend>();
  stub->add(first, "I think it is happy");
  auto repair = first;
  repair.push_back({Role::assistant, "I think it is happy"});
  repair.push_back({Role::user, Gateway::repair_instruction(t.output_schema, "no parsable JSON record in response")});
  stub->add(repair, "{\"sentiment\": \"neutral\"}");

  Gateway gw(stub);
  auto res = gw.run(t, {{"text", "meh"}});
  CHECK(res.repaired);
  CHECK(res.record["sentiment"] == "neutral");
  CHECK(res.exchange_ids.size() == 2);
  CHECK(gw.audit().size() == 2);

  int calls = 0;
  Gateway always_bad(std::make_shared<CallbackBackend>([&](const Messages&) {
    ++calls;
    return std::string("nope");
  }));
  CHECK_THROWS_AS(always_bad.run(t, {{"text", "x"}}), StructuredOutputError);
  CHECK(calls == 2);
  CHECK(always_bad.audit().size() == 2);
}

TEST_CASE("validator failures trigger the repair path", "[llm]") {
  auto t = classify_template();
  int calls = 0;
  Gateway gw(std::make_shared<CallbackBackend>([&](const Messages&) {
    return std::string(++calls == 1 ? "{\"sentiment\":\"neutral\"}" : "{\"sentiment\":\"negative\"}");
  }));
  auto res = gw.run(t, {{"text", "x"}}, [](const Record& r) -> std::optional<std::string> {
    if (r["sentiment"] == "neutral") return "contradicts lexicon";
    return std::nullopt;
  });
  CHECK(res.record["sentiment"] == "negative");
  CHECK(res.repaired);
}

TEST_CASE("chain composes steps and reports the failing step", "[llm]") {
  auto extract = classify_template("extract");
  extract.instructions = "Aspects in: {text}";
  extract.output_schema = {{{"aspects", FieldType::string_list, {}, true}}};
  auto classify = classify_template("classify");
  classify.instructions = "Sentiment of {aspect} in: {text}";

  auto backend = std::make_shared<CallbackBackend>([](const Messages& m) -> std::string {
    const auto& last = m.back().content;
    if (last.rfind("Aspects in:", 0) == 0) return "{\"aspects\": [\"evernote home\"]}";
    if (last.find("evernote home") != std::string::npos) return "{\"sentiment\": \"positive\"}";
    return "garbage";
  });
  Gateway gw(backend);
  std::vector<ChainStep> steps{
      {extract,
       [](const Record& r, const Variables& in) {
         auto v = in;
         v["aspect"] = r["aspects"][0].get<std::string>();
         return v;
       },
       {}},
      {classify, {}, {}}};
  auto out = chain(gw, steps, {{"text", "the new evernote home for my desktop is amazing and customizable!"}});
  CHECK(out.record["sentiment"] == "positive");
  CHECK(out.steps.size() == 2);

  // One-step chain is the same as run.
  Gateway gw1(backend);
  auto single = chain(gw1, {steps[0]}, {{"text", "t"}});
  Gateway gw2(backend);
  CHECK(single.record == gw2.run(extract, {{"text", "t"}}).record);

  std::vector<ChainStep> broken{{extract,
                                 [](const Record&, const Variables& in) {
                                   auto v = in;
                                   v["aspect"] = "nothing";
                                   return v;
                                 },
                                 {}},
                                {classify, {}, {}}};
  try {
    chain(gw, broken, {{"text", "t"}});
    FAIL("expected chain error");
  } catch (const ChainError& e) {
    CHECK(e.step_index() == 2);
    CHECK(e.code() == "no_record");
  }
}

TEST_CASE("stub determinism", "[llm][property]") {
  auto t = classify_template("c", 2);
  auto stub = stub_for(t, {{"a", "{\"sentiment\":\"positive\"}"}, {"b", "{\"sentiment\":\"negative\"}"}});
  Gateway g1(stub), g2(stub);
  for (const char* x : {"a", "b", "a"}) {
    auto r1 = g1.run(t, {{"text", x}});
    auto r2 = g2.run(t, {{"text", x}});
    CHECK(r1.raw_response == r2.raw_response);
    CHECK(r1.record.dump() == r2.record.dump());
  }
}

namespace {

// Answers the dev set with a per-variant accuracy profile.
std::shared_ptr<CallbackBackend> profile_backend(std::map<std::string, std::map<std::string, std::string>> answers) {
  return std::make_shared<CallbackBackend>([answers](const Messages& m) -> std::string {
    const auto& last = m.back().content;
    auto colon = last.find(':');
    auto variant = last.substr(0, colon);
    auto input = last.substr(colon + 2);
    auto it = answers.find(variant);
    if (it == answers.end() || !it->second.count(input)) return "unparseable";
    return json{{"sentiment", it->second.at(input)}}.dump();
  });
}

PromptTemplate variant(const std::string& id) {
  auto t = classify_template(id);
  t.instructions = id + ": {text}";
  return t;
}

double accuracy(const std::vector<std::optional<Record>>& preds, const std::vector<DevExample>& dev) {
  double hit = 0;
  for (std::size_t i = 0; i < dev.size(); ++i)
    if (preds[i] && (*preds[i])["sentiment"] == dev[i].gold["sentiment"]) ++hit;
  return hit / static_cast<double>(dev.size());
}

}  // namespace

TEST_CASE("select_template picks the best variant", "[llm]") {
  std::vector<DevExample> dev{{{{"text", "x1"}}, {{"sentiment", "positive"}}},
                              {{{"text", "x2"}}, {{"sentiment", "negative"}}}};
  auto backend = profile_backend({{"A", {{"x1", "positive"}, {"x2", "negative"}}},
                                  {"B", {{"x1", "positive"}, {"x2", "positive"}}},
                                  {"t1", {{"x1", "positive"}}},
                                  {"t2", {{"x2", "negative"}}}});
  Gateway gw(backend);
  auto res = select_template(gw, {variant("B"), variant("A")}, dev, accuracy);
  CHECK(res.best.template_id == "A");
  REQUIRE(res.scores.size() == 2);
  CHECK(res.scores[0] == std::pair<std::string, double>{"A", 1.0});
  CHECK(res.scores[1] == std::pair<std::string, double>{"B", 0.5});

  CHECK(select_template(gw, {variant("B")}, dev, accuracy).best.template_id == "B");
  CHECK(select_template(gw, {variant("t2"), variant("t1")}, dev, accuracy).best.template_id == "t1");
  CHECK(select_template(gw, {variant("t1"), variant("t2")}, dev, accuracy).best.template_id == "t1");

  try {
    select_template(gw, {variant("Z"), variant("Y")}, dev, accuracy);
    FAIL("expected selection failure");
  } catch (const Error& e) {
    CHECK(e.code() == "selection_failed");
  }
  CHECK_THROWS_AS(select_template(gw, {}, dev, accuracy), PreconditionError);
}

TEST_CASE("refine_template returns a new variant", "[llm]") {
  auto t = classify_template("cls");
  std::vector<FailureCase> failures{{"meh app", "positive", "neutral"}};
  Gateway good(std::make_shared<CallbackBackend>([](const Messages&) {
    return std::string("{\"instruction\": \"Decide whether the review is positive, negative or neutral: {text}\"}");
  }));
  auto refined = refine_template(good, t, failures);
  CHECK(refined.template_id == "cls-r1");
  CHECK(refined.instructions.find("{text}") != std::string::npos);
  CHECK(refined.output_schema.describe() == t.output_schema.describe());
  CHECK(t.instructions == "Classify: {text}");
  CHECK(refine_template(good, t, failures, 2).template_id == "cls-r2");

  Gateway dropping(std::make_shared<CallbackBackend>(
      [](const Messages&) { return std::string("{\"instruction\": \"Classify the review.\"}"); }));
  try {
    refine_template(dropping, t, failures);
    FAIL("expected rejection");
  } catch (const Error& e) {
    CHECK(e.code() == "refinement_rejected");
  }
  CHECK_THROWS_AS(refine_template(good, t, {}), PreconditionError);
}

TEST_CASE("audit log counts every call across threads", "[llm][property]") {
  auto t = classify_template();
  std::atomic<int> in_flight{0}, peak{0};
  auto backend = std::make_shared<CallbackBackend>([&](const Messages&) {
    int now = ++in_flight;
    int p = peak.load();
    while (now > p && !peak.compare_exchange_weak(p, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --in_flight;
    return std::string("{\"sentiment\":\"neutral\"}");
  });
  Gateway gw(backend);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i)
    threads.emplace_back([&] {
      for (int j = 0; j < 10; ++j) gw.run(t, {{"text", "x"}});
    });
  for (auto& th : threads) th.join();
  CHECK(gw.audit().size() == 80);
  CHECK(peak.load() <= 4);
  auto entries = gw.audit().snapshot();
  for (std::size_t i = 0; i < entries.size(); ++i) CHECK(entries[i].exchange_id == i + 1);
}

TEST_CASE("remote backend retries rate limits within budget", "[llm][http]") {
  httplib::Server server;
  std::atomic<int> hits{0};
  std::string auth_seen;
  json body_seen;
  server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits <= 2) {
      res.status = 429;
      return;
    }
    auth_seen = req.get_header_value("Authorization");
    body_seen = json::parse(req.body);
    res.set_content(json{{"choices", {{{"message", {{"content", "{\"sentiment\":\"positive\"}"}}}}}},
                         {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}}
                        .dump(),
                    "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  ::setenv("REVLENS_TEST_TOKEN", "sekret-token", 1);
  RemoteConfig cfg;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat";
  cfg.credential_env = "REVLENS_TEST_TOKEN";
  cfg.extra_body = {{"model", "test-model"}};
  Gateway gw(std::make_shared<RemoteBackend>(cfg), nullptr, fast_retry(3));
  auto t = classify_template();
  auto c = gw.complete(render_prompt(t, {{"text", "great"}}), t.decoding, t.template_id);
  CHECK(c.text == "{\"sentiment\":\"positive\"}");
  CHECK(c.retries == 2);
  auto log = gw.audit().snapshot();
  REQUIRE(log.size() == 3);
  CHECK(log[0].status == "error");
  CHECK(log[1].status == "error");
  CHECK(log[2].status == "ok");
  CHECK(log[2].prompt_tokens == 12);
  CHECK(auth_seen == "Bearer sekret-token");
  CHECK(body_seen["model"] == "test-model");
  CHECK(body_seen["temperature"] == 0.0);
  CHECK(body_seen["messages"].size() == 2);

  std::ostringstream dump;
  gw.audit().write_jsonl(dump);
  CHECK(dump.str().find("sekret-token") == std::string::npos);

  hits = -10;  // ten more 429s: exhausts budget 3
  try {
    gw.complete(render_prompt(t, {{"text", "again"}}), t.decoding);
    FAIL("expected exhaustion");
  } catch (const Error& e) {
    CHECK(e.code() == "rate_limit_exhausted");
  }
  CHECK(gw.audit().size() == 3 + 4);

  server.stop();
  th.join();
}

TEST_CASE("remote backend classifies transport failures", "[llm][http]") {
  httplib::Server server;
  server.Post("/bad", [](const httplib::Request&, httplib::Response& res) { res.status = 400; });
  server.Post("/shape", [](const httplib::Request&, httplib::Response& res) { res.set_content("{\"x\":1}", "application/json"); });
  server.Post("/slow", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    res.set_content("{}", "application/json");
  });
  int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  auto base = "http://127.0.0.1:" + std::to_string(port);
  Messages msgs{{Role::user, "x"}};

  auto code_of = [&](RemoteConfig cfg, int budget) {
    Gateway gw(std::make_shared<RemoteBackend>(cfg), nullptr, fast_retry(budget));
    try {
      gw.complete(msgs, {});
    } catch (const Error& e) {
      return std::make_pair(e.code(), gw.audit().size());
    }
    return std::make_pair(std::string("ok"), gw.audit().size());
  };
  RemoteConfig bad;
  bad.endpoint = base + "/bad";
  CHECK(code_of(bad, 3) == std::make_pair(std::string("backend_error"), std::size_t{1}));
  RemoteConfig shape;
  shape.endpoint = base + "/shape";
  CHECK(code_of(shape, 3).first == "backend_error");
  RemoteConfig slow;
  slow.endpoint = base + "/slow";
  slow.timeout = std::chrono::milliseconds(50);
  CHECK(code_of(slow, 1) == std::make_pair(std::string("timeout"), std::size_t{2}));
  RemoteConfig missing_cred;
  missing_cred.endpoint = base + "/shape";
  missing_cred.credential_env = "REVLENS_UNSET_VARIABLE_FOR_TEST";
  ::unsetenv("REVLENS_UNSET_VARIABLE_FOR_TEST");
  CHECK(code_of(missing_cred, 3).first == "backend_error");

  server.stop();
  th.join();
}

TEST_CASE("backend configuration", "[llm]") {
  CHECK(make_backend({{"kind", "stub"}})->kind() == "stub");
  CHECK(make_backend({{"kind", "remote"}, {"endpoint", "https://api.example.com/v1/chat"}})->kind() == "remote");
  CHECK_THROWS_AS(make_backend({{"kind", "remote"}}), ConfigError);
  CHECK_THROWS_AS(make_backend({{"kind", "carrier-pigeon"}}), ConfigError);
  CHECK_THROWS_AS(make_backend({{"kind", "remote"}, {"endpoint", "ftp://x"}}), ConfigError);
}

TEST_CASE("recording backend captures replayable fixtures", "[llm]") {
  auto t = classify_template();
  auto rec = std::make_shared<RecordingBackend>(
      std::make_shared<CallbackBackend>([](const Messages&) { return std::string("{\"sentiment\":\"negative\"}"); }));
  Gateway live(rec);
  live.run(t, {{"text", "bad"}});
  std::ostringstream out;
  rec->write_jsonl(out);
  revlens::testing::TempDir dir;
  auto replay = std::make_shared<StubBackend>(StubBackend::from_jsonl(dir.write("fx.jsonl", out.str())));
  Gateway offline(replay);
  CHECK(offline.run(t, {{"text", "bad"}}).record["sentiment"] == "negative");
}
