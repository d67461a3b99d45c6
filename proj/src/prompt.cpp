#include "iclforge/prompt.hpp"

#include <nlohmann/json.hpp>

#include "iclforge/error.hpp"
#include "iclforge/io.hpp"
#include "iclforge/random.hpp"

namespace iclforge {

using nlohmann::json;

namespace {

std::size_t count_occurrences(std::string_view haystack, std::string_view needle) {
  std::size_t n = 0;
  for (auto pos = haystack.find(needle); pos != std::string_view::npos;
       pos = haystack.find(needle, pos + needle.size())) {
    ++n;
  }
  return n;
}

// Single pass over `format`; substituted text is never re-scanned. Stops
// before {output} when `stop_at_output` is set.
std::string render(std::string_view format, const Example& ex,
                   bool stop_at_output) {
  std::string out;
  std::size_t pos = 0;
  while (pos < format.size()) {
    const auto open = format.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(format.substr(pos));
      break;
    }
    out.append(format.substr(pos, open - pos));
    const auto close = format.find('}', open);
    if (close == std::string_view::npos) {
      out.append(format.substr(open));
      break;
    }
    const auto name = format.substr(open + 1, close - open - 1);
    if (name == "input") {
      out += ex.input_text;
    } else if (name == "output") {
      if (stop_at_output) return out;
      out += ex.output_text;
    } else if (name.starts_with("meta:")) {
      const std::string key(name.substr(5));
      auto it = ex.meta.find(key);
      if (it == ex.meta.end()) {
        throw Error(ErrorCode::kInvalidArgument,
                    "example " + ex.id + " has no meta field '" + key + "'",
                    {ex.id});
      }
      out += it->second;
    } else {
      out.append(format.substr(open, close - open + 1));
    }
    pos = close + 1;
  }
  return out;
}

}  // namespace

void PromptTemplate::validate() const {
  if (count_occurrences(demo_format, "{input}") != 1 ||
      count_occurrences(demo_format, "{output}") != 1) {
    throw Error(ErrorCode::kInvalidArgument,
                "demo_format needs exactly one {input} and one {output}");
  }
  if (count_occurrences(query_format, "{input}") != 1 ||
      count_occurrences(query_format, "{output}") != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "query_format needs exactly one {input} and no {output}");
  }
}

std::string PromptTemplate::render_demo(const Example& ex) const {
  return render(demo_format, ex, false);
}

std::string PromptTemplate::render_demo_prefix(const Example& ex) const {
  return render(demo_format, ex, true);
}

std::string PromptTemplate::render_query(const Example& ex) const {
  return render(query_format, ex, false);
}

std::uint64_t PromptTemplate::fingerprint() const {
  std::uint64_t h = fnv1a64(demo_format);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  h = fnv1a64(query_format, h);
  h = fnv1a64(std::string_view("\x1f", 1), h);
  return fnv1a64(separator, h);
}

PromptTemplate parse_template_json(std::string_view text,
                                   std::string_view source) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, std::string(source) + ": " + e.what());
  }
  PromptTemplate t;
  auto read = [&](const char* key, std::string& field, bool required) {
    if (!j.contains(key)) {
      if (required) {
        throw Error(ErrorCode::kParseError,
                    std::string(source) + ": missing '" + key + "'");
      }
      return;
    }
    if (!j[key].is_string()) {
      throw Error(ErrorCode::kParseError,
                  std::string(source) + ": '" + key + "' must be a string");
    }
    field = j[key].get<std::string>();
  };
  read("task", t.task, true);
  read("demo_format", t.demo_format, true);
  read("query_format", t.query_format, true);
  read("separator", t.separator, false);
  if (j.contains("stop")) t.stop = j["stop"].get<std::vector<std::string>>();
  if (j.contains("max_tokens")) t.max_tokens = j["max_tokens"].get<std::size_t>();
  t.validate();
  return t;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  return parse_template_json(read_text_file(path), path.string());
}

std::string template_to_json(const PromptTemplate& t) {
  nlohmann::ordered_json j;
  j["task"] = t.task;
  j["demo_format"] = t.demo_format;
  j["query_format"] = t.query_format;
  j["separator"] = t.separator;
  j["stop"] = t.stop;
  j["max_tokens"] = t.max_tokens;
  return j.dump(2) + "\n";
}

std::string assemble_prompt(std::span<const Example* const> demos,
                            const Example& test_input,
                            const PromptTemplate& t) {
  std::string out;
  for (const Example* demo : demos) {
    out += t.render_demo(*demo);
    out += t.separator;
  }
  out += t.render_query(test_input);
  return out;
}

}  // namespace iclforge
