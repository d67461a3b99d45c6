#include <doctest.h>

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "helpers.hpp"
#include "iclforge/inference.hpp"

using namespace iclforge;
using testutil::code_of;

namespace {

class Counting final : public InferenceBackend {
 public:
  std::string tag() const override { return "counting"; }
  std::string complete(const std::string&, const GenerationParams&) override {
    ++calls;
    return "ok";
  }
  int calls = 0;
};

}  // namespace

TEST_CASE("echo backend returns its canned string") {
  EchoBackend echo("Paris");
  CHECK(generate(echo, "Question: capital?\nAnswer:", {}) == "Paris");
}

TEST_CASE("stop sequences truncate the completion") {
  EchoBackend echo(" gravity\nQuestion: next one\nAnswer: x");
  CHECK(generate(echo, "prompt", {}) == " gravity");
  GenerationParams p;
  p.stop = {"Question", "\n"};
  CHECK(truncate_at_stop("a b\nQuestion", p.stop) == "a b");
  CHECK(truncate_at_stop("no stop here", p.stop) == "no stop here");
  CHECK(truncate_at_stop("xQuestion\n", p.stop) == "x");
}

TEST_CASE("context overflow is raised before calling the backend") {
  Counting backend;
  GenerationParams p;
  p.max_tokens = 10;
  const std::string prompt(400, 'x');  // 100 estimated tokens
  CHECK(estimate_tokens(prompt) == 100);
  CHECK(estimate_tokens("abcde") == 2);
  CHECK(code_of([&] { generate(backend, prompt, p, 109); }) == ErrorCode::kContextOverflow);
  CHECK(backend.calls == 0);
  CHECK(generate(backend, prompt, p, 110) == "ok");
  CHECK(backend.calls == 1);
}

TEST_CASE("reference echo answers the query that ends the prompt") {
  Dataset test({testutil::ex("t1", "What keeps the moon orbiting earth?", "gravity"),
                testutil::ex("t2", "earth?", "short")});
  PromptTemplate t;
  auto echo = EchoBackend::references(test, t);
  const std::string prompt =
      "Question: a\nAnswer: b\n\nQuestion: What keeps the moon orbiting earth?\nAnswer:";
  CHECK(generate(echo, prompt, {}) == " gravity");
  CHECK(generate(echo, "Question: earth?\nAnswer:", {}) == " short");
  CHECK(code_of([&] { generate(echo, "Question: unknown\nAnswer:", {}); }) ==
        ErrorCode::kProtocolError);
}

TEST_CASE("echo fault injection is deterministic") {
  EchoBackend echo("x");
  echo.set_fail_fraction(0.5);
  int failures = 0;
  for (int i = 0; i < 400; ++i) {
    const std::string prompt = "p" + std::to_string(i);
    bool failed = false;
    try {
      generate(echo, prompt, {});
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kBackendUnavailable);
      failed = true;
    }
    bool again = false;
    try {
      generate(echo, prompt, {});
    } catch (const Error&) {
      again = true;
    }
    CHECK(failed == again);
    failures += failed;
  }
  CHECK(failures > 150);
  CHECK(failures < 250);
}

TEST_CASE("http generation round trip") {
  httplib::Server server;
  std::string seen;
  server.Post("/v1/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = req.body;
    res.set_content(R"({"choices":[{"text":" Nucleus\nQuestion: more"}]})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  HttpInferenceConfig cfg;
  cfg.base_url = "http://127.0.0.1:" + std::to_string(port);
  cfg.model = "m";
  HttpInferenceBackend backend(cfg);
  GenerationParams p;
  p.max_tokens = 7;
  CHECK(generate(backend, "Question: q\nAnswer:", p) == " Nucleus");
  auto body = nlohmann::json::parse(seen);
  CHECK(body["max_tokens"] == 7);
  CHECK(body["temperature"] == 0.0);
  CHECK(body["stop"] == nlohmann::json::array({"\n"}));
  CHECK(body["prompt"] == "Question: q\nAnswer:");

  server.stop();
  th.join();

  CHECK(code_of([] { HttpInferenceBackend::parse_response(R"({"choices":[]})"); }) ==
        ErrorCode::kProtocolError);
}
