#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace forge::csv {

using Row = std::vector<std::string>;

/// RFC 4180 parsing: quoted fields, doubled quotes, CRLF or LF records.
/// A trailing newline does not produce an empty record.
std::vector<Row> parse(std::string_view data);

/// Quotes a field when it contains a comma, quote, or line break.
std::string escape(std::string_view field);

std::string format_row(const Row& row);

}  // namespace forge::csv
