#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

namespace iclforge {

std::string read_text_file(const std::filesystem::path& path);

// Writes through a temporary sibling and renames over the target.
void write_text_file(const std::filesystem::path& path, std::string_view text);

// Calls `fn(line, line_number)` for every non-blank line (1-based numbers).
void for_each_line(std::string_view text,
                   const std::function<void(std::string_view, std::size_t)>& fn);

}  // namespace iclforge
