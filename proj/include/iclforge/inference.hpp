#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iclforge/corpus.hpp"
#include "iclforge/prompt.hpp"

namespace iclforge {

struct GenerationParams {
  std::size_t max_tokens = 64;
  std::vector<std::string> stop = {"\n"};
  // Greedy by default; passed through to the backend otherwise.
  double temperature = 0.0;
  double top_p = 1.0;
};

class InferenceBackend {
 public:
  virtual ~InferenceBackend() = default;
  virtual std::string tag() const = 0;
  // Raw completion; stop handling is applied by generate().
  virtual std::string complete(const std::string& prompt,
                               const GenerationParams& params) = 0;
};

// Test double. Either returns a canned string, or looks up the test example
// whose rendered query ends the prompt and returns its reference output.
class EchoBackend final : public InferenceBackend {
 public:
  explicit EchoBackend(std::string canned);
  static EchoBackend references(const Dataset& test, const PromptTemplate& t);

  // Deterministically fail (BackendUnavailable) for roughly this fraction of
  // prompts, chosen by prompt hash. For fault-injection runs.
  void set_fail_fraction(double fraction) { fail_fraction_ = fraction; }

  std::string tag() const override;
  std::string complete(const std::string& prompt,
                       const GenerationParams& params) override;

 private:
  EchoBackend() = default;

  std::optional<std::string> canned_;
  // rendered query -> reference output
  std::map<std::string, std::string, std::less<>> answers_;
  double fail_fraction_ = 0.0;
};

struct HttpInferenceConfig {
  std::string base_url;
  std::string model;
  std::string api_key;
  double timeout_seconds = 120.0;
};

// OpenAI-compatible /v1/completions, reading choices[0].text.
class HttpInferenceBackend final : public InferenceBackend {
 public:
  explicit HttpInferenceBackend(HttpInferenceConfig config);

  std::string tag() const override { return "http:" + config_.model; }
  std::string complete(const std::string& prompt,
                       const GenerationParams& params) override;

  std::string request_body(const std::string& prompt,
                           const GenerationParams& params) const;
  // Throws ProtocolError when the text is missing.
  static std::string parse_response(std::string_view body);

 private:
  HttpInferenceConfig config_;
};

// Rough token count used for context accounting: one token per 4 bytes.
std::size_t estimate_tokens(std::string_view text);

// Cuts `text` at the earliest occurrence of any stop sequence.
std::string truncate_at_stop(std::string_view text,
                             const std::vector<std::string>& stop);

// Completion truncated at the first stop sequence. When `context_window` is
// set and the prompt plus max_tokens cannot fit, throws ContextOverflow
// without calling the backend.
std::string generate(InferenceBackend& backend, const std::string& prompt,
                     const GenerationParams& params,
                     std::optional<std::size_t> context_window = std::nullopt);

}  // namespace iclforge
