#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclforge/corpus.hpp"

namespace iclforge {

// Task prompt layout. `demo_format` must contain {input} and {output} once
// each; `query_format` must contain {input} once and no {output}. Both may
// reference example metadata as {meta:KEY}.
struct PromptTemplate {
  std::string task;
  std::string demo_format = "Question: {input}\nAnswer: {output}";
  std::string query_format = "Question: {input}\nAnswer:";
  std::string separator = "\n\n";
  std::vector<std::string> stop = {"\n"};
  std::size_t max_tokens = 64;

  void validate() const;

  std::string render_demo(const Example& ex) const;
  // The rendered demonstration up to where the output begins.
  std::string render_demo_prefix(const Example& ex) const;
  std::string render_query(const Example& ex) const;

  // Stable hash over the formatting fields; part of score cache keys.
  std::uint64_t fingerprint() const;
};

PromptTemplate parse_template_json(std::string_view text,
                                   std::string_view source = "<memory>");
PromptTemplate load_template(const std::filesystem::path& path);
std::string template_to_json(const PromptTemplate& t);

// Demonstrations in the given order joined by the separator, then the query.
// With no demonstrations the result is the bare query.
std::string assemble_prompt(std::span<const Example* const> demos,
                            const Example& test_input,
                            const PromptTemplate& t);

}  // namespace iclforge
