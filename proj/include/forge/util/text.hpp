#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace forge::text {

/// UTF-8 text with ill-formed sequences replaced by U+FFFD.
struct Sanitized {
  std::string utf8;
  std::size_t replacements = 0;
};

Sanitized sanitize_utf8(std::string_view bytes);

/// Decodes UTF-8 into code points; ill-formed sequences become U+FFFD.
std::vector<char32_t> decode(std::string_view utf8);
void append_utf8(std::string& out, char32_t cp);

bool is_space(char32_t cp);   // Unicode White_Space
bool is_alnum(char32_t cp);   // general category L* or Nd
bool is_digit(char32_t cp);   // Nd

/// Simple (per code point) Unicode case folding.
std::string fold_case(std::string_view utf8);

/// Canonical composition (NFC).
std::string nfc(std::string_view utf8);

/// Strips Unicode whitespace at the end / both ends.
std::string_view rtrim(std::string_view utf8);
std::string_view trim(std::string_view utf8);

/// Collapses every run of Unicode whitespace into one ASCII space and trims.
std::string normalize_whitespace(std::string_view utf8);

/// True if the string contains no non-whitespace code point.
bool is_blank(std::string_view utf8);

/// Splits on '\n', dropping one trailing '\r' from each line.
std::vector<std::string_view> split_lines(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

}  // namespace forge::text
