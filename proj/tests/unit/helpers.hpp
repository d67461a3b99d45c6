#pragma once

#include <algorithm>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "iclforge/corpus.hpp"
#include "iclforge/error.hpp"

namespace testutil {

inline iclforge::Example ex(std::string id, std::string in, std::string out,
                            std::string task = "qa") {
  return {std::move(id), std::move(task), std::move(in), std::move(out), {}};
}

inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "iclforge_unit" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

template <class F>
iclforge::ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const iclforge::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected an iclforge::Error");
}

inline iclforge::Dataset numbered(std::size_t n, const std::string& task = "qa") {
  std::vector<iclforge::Example> v;
  for (std::size_t i = 0; i < n; ++i) {
    auto s = std::to_string(i);
    v.push_back(ex("e" + std::string(4 - std::min<std::size_t>(4, s.size()), '0') + s,
                   "input " + s, "output " + s, task));
  }
  return iclforge::Dataset(std::move(v));
}

}  // namespace testutil
