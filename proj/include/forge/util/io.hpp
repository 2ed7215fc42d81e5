#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace forge::io {

using json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so readers never observe
/// a partially written artifact.
void write_file(const std::filesystem::path& path, std::string_view content);

/// Calls fn(line_number, object) for each non-blank line. Parse failures are
/// reported as Error(ParseError) with the line number.
void for_each_jsonl(std::string_view content, const std::function<void(std::size_t, const json&)>& fn);

/// One compact JSON object per line, '\n' terminated.
std::string to_jsonl_line(const json& j);

}  // namespace forge::io
