#include "iclforge/inference.hpp"

#include <nlohmann/json.hpp>

#include "completions_client.hpp"
#include "iclforge/error.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

EchoBackend::EchoBackend(std::string canned) : canned_(std::move(canned)) {}

EchoBackend EchoBackend::references(const Dataset& test, const PromptTemplate& t) {
  EchoBackend out;
  for (const auto& ex : test.examples()) {
    out.answers_.emplace(t.render_query(ex), ex.output_text);
  }
  return out;
}

std::string EchoBackend::tag() const {
  return canned_ ? "echo:text" : "echo:reference";
}

std::string EchoBackend::complete(const std::string& prompt,
                                  const GenerationParams&) {
  if (fail_fraction_ > 0.0) {
    const double u = static_cast<double>(mix64(fnv1a64(prompt)) >> 11) * 0x1.0p-53;
    if (u < fail_fraction_) {
      throw Error(ErrorCode::kBackendUnavailable, "echo backend injected failure");
    }
  }
  if (canned_) return *canned_;
  // The query is the last block of the prompt, so the longest rendered
  // query that suffixes the prompt identifies the test example.
  const std::string* best = nullptr;
  std::size_t best_len = 0;
  for (const auto& [query, answer] : answers_) {
    if (query.size() > best_len && prompt.size() >= query.size() &&
        prompt.compare(prompt.size() - query.size(), query.size(), query) == 0) {
      best = &answer;
      best_len = query.size();
    }
  }
  if (best == nullptr) {
    throw Error(ErrorCode::kProtocolError, "echo backend: prompt matches no test query");
  }
  return " " + *best;
}

HttpInferenceBackend::HttpInferenceBackend(HttpInferenceConfig config)
    : config_(std::move(config)) {
  if (config_.base_url.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "http generator needs a base url");
  }
}

std::string HttpInferenceBackend::request_body(const std::string& prompt,
                                               const GenerationParams& params) const {
  nlohmann::ordered_json body;
  body["model"] = config_.model;
  body["prompt"] = prompt;
  body["max_tokens"] = params.max_tokens;
  body["temperature"] = params.temperature;
  body["top_p"] = params.top_p;
  if (!params.stop.empty()) body["stop"] = params.stop;
  return body.dump();
}

std::string HttpInferenceBackend::parse_response(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kProtocolError,
                std::string("malformed completions response: ") + e.what());
  }
  if (!j.contains("choices") || !j["choices"].is_array() || j["choices"].empty() ||
      !j["choices"][0].contains("text") || !j["choices"][0]["text"].is_string()) {
    throw Error(ErrorCode::kProtocolError, "response has no choices[0].text");
  }
  return j["choices"][0]["text"].get<std::string>();
}

std::string HttpInferenceBackend::complete(const std::string& prompt,
                                           const GenerationParams& params) {
  return parse_response(detail::post_completions(
      config_.base_url, config_.api_key, config_.timeout_seconds,
      request_body(prompt, params), {}));
}

std::size_t estimate_tokens(std::string_view text) {
  return (text.size() + 3) / 4;
}

std::string truncate_at_stop(std::string_view text,
                             const std::vector<std::string>& stop) {
  std::size_t cut = text.size();
  for (const auto& s : stop) {
    if (s.empty()) continue;
    cut = std::min(cut, text.find(s));
  }
  return std::string(text.substr(0, cut));
}

std::string generate(InferenceBackend& backend, const std::string& prompt,
                     const GenerationParams& params,
                     std::optional<std::size_t> context_window) {
  if (context_window) {
    const std::size_t need = estimate_tokens(prompt) + params.max_tokens;
    if (need > *context_window) {
      throw Error(ErrorCode::kContextOverflow,
                  "prompt needs ~" + std::to_string(need) +
                      " tokens, window is " + std::to_string(*context_window));
    }
  }
  return truncate_at_stop(backend.complete(prompt, params), params.stop);
}

}  // namespace iclforge
