#include <doctest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include <httplib.h>

#include "prognos/backend.hpp"
#include "prognos/datamodel.hpp"
#include "prognos/error.hpp"
#include "prognos/mock_backend.hpp"
#include "prognos/prompt_ids.hpp"
#include "support.hpp"

using namespace prognos;
using namespace prognos::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::InvalidArgument;
}

// Independent re-derivation of the mock embedding for a single-token text.
std::vector<double> single_token_oracle(const std::string& token, int dim) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : token) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  std::uint64_t s = h;
  std::vector<double> v(dim);
  double sq = 0.0;
  for (auto& x : v) {
    s += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = s;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    z ^= z >> 31;
    x = double(z >> 11) / 9007199254740992.0 * 2.0 - 1.0;
    sq += x * x;
  }
  for (auto& x : v) x /= std::sqrt(sq);
  return v;
}

PromptRequest summarize_req(const std::string& case_id) {
  return {prompt_ids::kWsiSummarize, {{"case_id", case_id}, {"structured", "Tumor Grade: high"}, {"feedback", ""}}};
}

}  // namespace

TEST_CASE("templates render placeholders and literal braces") {
  TemplateStore t;
  t.add("x", "Case {case_id}: {{literal}} {note}");
  CHECK(t.render("x", {{"case_id", "c1"}, {"note", "n"}, {"extra", "ignored"}}) == "Case c1: {literal} n");
  CHECK(t.placeholders("x") == std::vector<std::string>{"case_id", "note"});
  CHECK(code_of([&] { t.render("x", {{"case_id", "c1"}}); }) == ErrorCode::UnboundPlaceholder);
  CHECK(code_of([&] { t.render("nope", {}); }) == ErrorCode::UnknownTemplate);
}

TEST_CASE("shipped templates all accept a feedback slot") {
  TemplateStore t(source_dir() / "prompts");
  for (const char* id : {prompt_ids::kWsiGlobal, prompt_ids::kWsiPatchBrief, prompt_ids::kWsiPatchDetail,
                         prompt_ids::kWsiConfidence, prompt_ids::kWsiExtract, prompt_ids::kWsiSummarize,
                         prompt_ids::kGeneSelect, prompt_ids::kGeneCategoryReport, prompt_ids::kGeneSummarize,
                         prompt_ids::kCotGenerate, prompt_ids::kCotCritique, prompt_ids::kCotRefine,
                         prompt_ids::kInferDichotomy, prompt_ids::kInferTime}) {
    CAPTURE(id);
    REQUIRE(t.contains(id));
    const auto ph = t.placeholders(id);
    CHECK(std::find(ph.begin(), ph.end(), "feedback") != ph.end());
  }
  CHECK(code_of([&] {
          t.render(prompt_ids::kWsiExtract, {{"case_id", "c"}, {"reports", "r"}, {"feedback", ""}});
        }) == ErrorCode::UnboundPlaceholder);
}

TEST_CASE("vars hash ignores insertion order") {
  PromptVars a{{"a", "1"}, {"b", "2"}};
  PromptVars b;
  b["b"] = "2";
  b["a"] = "1";
  CHECK(vars_hash(a) == vars_hash(b));
  b["a"] = "3";
  CHECK(vars_hash(a) != vars_hash(b));
}

TEST_CASE("fixture mock returns the keyed text and misses loudly") {
  FixtureSet fx;
  fx.add(prompt_ids::kWsiSummarize, summarize_req("c1").variables, "fixture summary");
  TemplateStore tpl(source_dir() / "prompts");
  BackendConfig cfg;
  cfg.mock_mode = MockMode::Fixture;
  Gateway gw(cfg, tpl, std::make_unique<FixtureTransport>(fx, cfg.embed_dim));
  TraceLog trace;
  CHECK(gw.chat_complete(summarize_req("c1"), trace) == "fixture summary");
  CHECK(code_of([&] { gw.chat_complete(summarize_req("c2"), trace); }) == ErrorCode::FixtureMiss);
  REQUIRE(trace.size() == 1);
  CHECK(trace.entries()[0].template_id == prompt_ids::kWsiSummarize);
  CHECK(trace.entries()[0].prompt.find("Tumor Grade: high") != std::string::npos);
}

TEST_CASE("fixture files load from JSONL") {
  TempDir tmp("fx");
  const auto vars = summarize_req("c1").variables;
  write_file(tmp / "f.jsonl",
             nlohmann::json{{"template_id", prompt_ids::kWsiSummarize}, {"vars", vars}, {"response", "A"}}.dump() +
                 "\n" +
                 nlohmann::json{{"template_id", "t"}, {"vars_hash", "abc"}, {"response", "B"}}.dump() + "\n");
  auto fx = FixtureSet::load(tmp / "f.jsonl");
  CHECK(fx.size() == 2);
  REQUIRE(fx.find(prompt_ids::kWsiSummarize, vars_hash(vars)) != nullptr);
  CHECK(*fx.find("t", "abc") == "B");
}

TEST_CASE("describe_image checks the file before asking the model") {
  TempDir tmp("img");
  const auto png = tmp / "p7.png";
  write_file(png, std::string("\x89PNG\r\n\x1a\n", 8) + "payload");
  PromptRequest req{prompt_ids::kWsiPatchBrief,
                    {{"patch_id", "p7"}, {"case_id", "c1"}, {"magnification", "10"}, {"feedback", ""}}};
  FixtureSet fx;
  fx.add(prompt_ids::kWsiPatchBrief, req.variables, "dense tumor nests");
  Gateway gw({}, TemplateStore(source_dir() / "prompts"), std::make_unique<FixtureTransport>(fx, 64));
  TraceLog trace;
  CHECK(gw.describe_image(png, req, trace) == "dense tumor nests");
  CHECK(trace.entries().at(0).kind == "image");
  CHECK(code_of([&] { gw.describe_image(tmp / "missing.png", req, trace); }) == ErrorCode::UnreadableImage);
  write_file(tmp / "bad.png", "not an image");
  CHECK(code_of([&] { gw.describe_image(tmp / "bad.png", req, trace); }) == ErrorCode::UnreadableImage);
}

TEST_CASE("mock embeddings are deterministic unit vectors") {
  Scripted m;
  const auto a1 = m.s().embed_text("abc");
  const auto a2 = m.s().embed_text("abc");
  const auto b = m.s().embed_text("abd");
  CHECK(a1 == a2);
  CHECK(a1.size() == 64);
  CHECK(std::fabs(l2_norm(a1) - 1.0) < 1e-6);
  CHECK(std::fabs(l2_norm(b) - 1.0) < 1e-6);

  const auto oa = single_token_oracle("abc", 64);
  const auto ob = single_token_oracle("abd", 64);
  double cos = 0.0, cos_oracle = 0.0;
  for (int i = 0; i < 64; ++i) {
    CHECK(a1[i] == doctest::Approx(oa[i]).epsilon(1e-6));
    cos += double(a1[i]) * b[i];
    cos_oracle += oa[i] * ob[i];
  }
  CHECK(cos < 1.0);
  CHECK(cos == doctest::Approx(cos_oracle).epsilon(1e-6));
  CHECK_THROWS_AS(m.s().embed_text(""), Error);
}

TEST_CASE("mock embedding: case and repeated tokens do not matter") {
  CHECK(mock_text_embedding("Tumor tumor GRADE", 32) == mock_text_embedding("grade tumor", 32));
  CHECK(mock_text_embedding("grade tumor", 32, 1) != mock_text_embedding("grade tumor", 32, 2));
}

TEST_CASE("http transport retries 5xx and succeeds on the third attempt") {
  httplib::Server server;
  std::atomic<int> chat_calls{0}, bad_calls{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    const auto body = nlohmann::json::parse(req.body);
    CHECK(body.at("messages").at(0).at("content").get<std::string>().find("Tumor Grade") != std::string::npos);
    if (++chat_calls <= 2) {
      res.status = 500;
      res.set_content("overloaded", "text/plain");
      return;
    }
    res.set_content(nlohmann::json{{"choices", {{{"message", {{"content", "summary text"}}}}}}}.dump(),
                    "application/json");
  });
  server.Post("/bad/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++bad_calls;
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  server.Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(nlohmann::json{{"data", {{{"embedding", std::vector<float>{3.0f, 4.0f}}}}}}.dump(),
                    "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig cfg;
  cfg.kind = BackendKind::Http;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.max_retries = 3;
  cfg.backoff_initial_s = 0.001;
  cfg.embed_dim = 2;
  cfg.timeout_s = 5;
  TraceLog trace;
  {
    Gateway gw(cfg, TemplateStore(source_dir() / "prompts"), make_transport(cfg));
    CHECK(gw.chat_complete(summarize_req("c1"), trace) == "summary text");
    CHECK(chat_calls == 3);
    CHECK(gw.transport_calls() == 3);
    const auto v = gw.embed_text("x", trace);
    REQUIRE(v.size() == 2);
    CHECK(v[0] == doctest::Approx(0.6));
  }
  {
    chat_calls = 0;
    auto few = cfg;
    few.max_retries = 1;
    Gateway gw(few, TemplateStore(source_dir() / "prompts"), make_transport(few));
    CHECK(code_of([&] { gw.chat_complete(summarize_req("c1"), trace); }) == ErrorCode::Upstream);
    CHECK(chat_calls == 2);
  }
  {
    auto bad = cfg;
    bad.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/bad";
    Gateway gw(bad, TemplateStore(source_dir() / "prompts"), make_transport(bad));
    CHECK(code_of([&] { gw.chat_complete(summarize_req("c1"), trace); }) == ErrorCode::Upstream);
    CHECK(bad_calls == 1);  // 4xx is not retried
  }
  server.stop();
  th.join();
}

TEST_CASE("http transport maps a stalled server to Timeout") {
  httplib::Server server;
  server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content("{}", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  BackendConfig cfg;
  cfg.kind = BackendKind::Http;
  cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1";
  cfg.max_retries = 0;
  cfg.timeout_s = 0.15;
  Gateway gw(cfg, TemplateStore(source_dir() / "prompts"), make_transport(cfg));
  TraceLog trace;
  CHECK(code_of([&] { gw.chat_complete(summarize_req("c1"), trace); }) == ErrorCode::Timeout);
  server.stop();
  th.join();
}

namespace {

class SlowTransport : public ModelTransport {
 public:
  std::atomic<int> now{0}, peak{0};

  std::string complete(const CompletionCall& call) override {
    const int n = ++now;
    int p = peak.load();
    while (n > p && !peak.compare_exchange_weak(p, n)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --now;
    return "echo " + call.variables.at("case_id");
  }
  std::vector<float> embed(const std::string&) override { return {1.0f}; }
};

}  // namespace

TEST_CASE("gateway bounds in-flight requests under concurrent callers") {
  BackendConfig cfg;
  cfg.max_in_flight = 3;
  cfg.wall_clock_trace = false;
  auto t = std::make_unique<SlowTransport>();
  auto* raw = t.get();
  Gateway gw(cfg, TemplateStore(source_dir() / "prompts"), std::move(t));
  TraceLog trace;
  std::atomic<int> wrong{0};
  std::vector<std::thread> threads;
  for (int i = 0; i < 16; ++i) {
    threads.emplace_back([&, i] {
      for (int k = 0; k < 10; ++k) {
        const std::string id = "c" + std::to_string(i) + "_" + std::to_string(k);
        if (gw.chat_complete(summarize_req(id), trace) != "echo " + id) ++wrong;
      }
    });
  }
  for (auto& th : threads) th.join();
  CHECK(wrong == 0);
  CHECK(raw->peak <= 3);
  CHECK(gw.peak_in_flight() <= 3);
  CHECK(gw.peak_in_flight() >= 1);
  const auto entries = trace.entries();
  REQUIRE(entries.size() == 160);
  std::set<std::uint64_t> seqs;
  for (const auto& e : entries) seqs.insert(e.seq);
  CHECK(seqs.size() == 160);
}

TEST_CASE("trace files are JSONL with one line per exchange") {
  TempDir tmp("trace");
  {
    Scripted m;
    TraceLog log(tmp / "t.jsonl");
    AgentSession s(*m.gateway, log, "case1");
    m.transport->push(prompt_ids::kWsiSummarize, "ok");
    s.chat_complete(summarize_req("c1"));
    s.embed_text("hello");
  }
  const auto text = read_file(tmp / "t.jsonl");
  std::vector<nlohmann::json> lines;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) lines.push_back(nlohmann::json::parse(l));
  REQUIRE(lines.size() == 2);
  CHECK(lines[0].at("kind") == "chat");
  CHECK(lines[1].at("kind") == "embed");
  CHECK(lines[0].at("tag").get<std::string>().rfind("case1/", 0) == 0);
}
