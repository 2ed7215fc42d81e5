#include "forge/util/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "forge/error.hpp"

namespace forge::text {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

// Calls fn(code point, byte offset, byte length) for each code point.
template <class Fn>
std::size_t for_each_cp(std::string_view s, Fn&& fn) {
  std::size_t bad = 0;
  const auto* p = reinterpret_cast<const std::uint8_t*>(s.data());
  const auto len = static_cast<std::int32_t>(s.size());
  std::int32_t i = 0;
  while (i < len) {
    const std::int32_t start = i;
    UChar32 c = 0;
    U8_NEXT(p, i, len, c);
    if (c < 0) {
      ++bad;
      c = kReplacement;
    }
    fn(static_cast<char32_t>(c), static_cast<std::size_t>(start), static_cast<std::size_t>(i - start));
  }
  return bad;
}

}  // namespace

Sanitized sanitize_utf8(std::string_view bytes) {
  Sanitized out;
  out.utf8.reserve(bytes.size());
  out.replacements = for_each_cp(bytes, [&](char32_t c, std::size_t off, std::size_t n) {
    if (c == kReplacement && bytes.substr(off, n) != "\xEF\xBF\xBD") {
      append_utf8(out.utf8, kReplacement);
    } else {
      out.utf8.append(bytes.substr(off, n));
    }
  });
  return out;
}

std::vector<char32_t> decode(std::string_view utf8) {
  std::vector<char32_t> cps;
  cps.reserve(utf8.size());
  for_each_cp(utf8, [&](char32_t c, std::size_t, std::size_t) { cps.push_back(c); });
  return cps;
}

void append_utf8(std::string& out, char32_t cp) {
  std::uint8_t buf[U8_MAX_LENGTH];
  std::int32_t n = 0;
  UBool err = false;
  U8_APPEND(buf, n, U8_MAX_LENGTH, static_cast<UChar32>(cp), err);
  if (err) {
    append_utf8(out, kReplacement);
    return;
  }
  out.append(reinterpret_cast<const char*>(buf), static_cast<std::size_t>(n));
}

bool is_space(char32_t cp) { return u_isUWhiteSpace(static_cast<UChar32>(cp)); }
bool is_alnum(char32_t cp) { return u_isalnum(static_cast<UChar32>(cp)); }
bool is_digit(char32_t cp) { return u_isdigit(static_cast<UChar32>(cp)); }

std::string fold_case(std::string_view utf8) {
  std::string out;
  out.reserve(utf8.size());
  for_each_cp(utf8, [&](char32_t c, std::size_t, std::size_t) {
    append_utf8(out, static_cast<char32_t>(u_foldCase(static_cast<UChar32>(c), U_FOLD_CASE_DEFAULT)));
  });
  return out;
}

std::string nfc(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* norm = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error(ErrorCode::IoError, "ICU NFC normalizer unavailable");
  const auto src = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<std::int32_t>(utf8.size())));
  icu::UnicodeString dst = norm->normalize(src, status);
  if (U_FAILURE(status)) throw Error(ErrorCode::IoError, "NFC normalization failed");
  std::string out;
  dst.toUTF8String(out);
  return out;
}

std::string_view rtrim(std::string_view s) {
  std::size_t end = 0;
  for_each_cp(s, [&](char32_t c, std::size_t off, std::size_t n) {
    if (!is_space(c)) end = off + n;
  });
  return s.substr(0, end);
}

std::string_view trim(std::string_view s) {
  std::size_t begin = s.size();
  std::size_t end = 0;
  for_each_cp(s, [&](char32_t c, std::size_t off, std::size_t n) {
    if (!is_space(c)) {
      if (begin == s.size()) begin = off;
      end = off + n;
    }
  });
  if (begin >= end) return {};
  return s.substr(begin, end - begin);
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for_each_cp(s, [&](char32_t c, std::size_t off, std::size_t n) {
    if (is_space(c)) {
      pending_space = !out.empty();
      return;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.append(s.substr(off, n));
  });
  return out;
}

bool is_blank(std::string_view s) { return trim(s).empty(); }

std::vector<std::string_view> split_lines(std::string_view s) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos <= s.size()) {
    std::size_t nl = s.find('\n', pos);
    if (nl == std::string_view::npos) nl = s.size();
    std::string_view line = s.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    pos = nl + 1;
  }
  return lines;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(sep);
    out.append(parts[i]);
  }
  return out;
}

}  // namespace forge::text
