#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/util/io.hpp"

namespace forge {

enum class ItemStatus { draft, validated, rejected, calibrated };
std::string_view to_string(ItemStatus s);
ItemStatus item_status_from_string(std::string_view s);

struct SourceRef {
  std::string doc_id;
  std::size_t index = 0;
  std::string provenance;

  FragmentRef fragment() const { return {doc_id, index}; }
};

struct Option {
  std::string label;
  std::string text;
};

struct BenchItem {
  std::string item_id;
  std::string question;
  std::vector<Option> options;
  std::string answer_key;
  std::string subfield;
  SourceRef source_ref;
  std::optional<std::string> rationale;
  ItemStatus status = ItemStatus::draft;
  bool low_confidence = false;
  double density = 0.0;
  std::vector<std::string> reject_reasons;

  std::vector<std::string> labels() const;
  std::vector<std::string> option_texts() const;
  io::json to_json() const;
  static BenchItem from_json(const io::json& j);
};

/// "A", "B", ..., "Z".
std::string option_label(std::size_t i);

/// Problems with an item's shape: fewer than two options, labels other than
/// A, B, ... in order, blank question or option, answer key not among the
/// labels, options equal after whitespace and case normalization, and (when
/// a lookup is given) a source reference that does not resolve.
std::vector<std::string> structural_problems(const BenchItem& item, const FragmentLookup* lookup = nullptr);

inline constexpr int kBenchSchemaVersion = 1;

/// Header line {"schema": "forge.bench", "schema_version", "count", ...meta}
/// followed by one item per line.
std::string bench_to_jsonl(std::span<const BenchItem> items, const io::json& meta = io::json::object());
/// Throws Error(BenchmarkParseError) on a missing or unsupported header,
/// malformed items, or a count mismatch.
std::vector<BenchItem> bench_from_jsonl(std::string_view content);
std::vector<BenchItem> load_bench(const std::filesystem::path& path);
void save_bench(const std::filesystem::path& path, std::span<const BenchItem> items,
                const io::json& meta = io::json::object());

}  // namespace forge
