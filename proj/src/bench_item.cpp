#include "forge/bench_item.hpp"

#include <set>

#include "forge/error.hpp"
#include "forge/util/text.hpp"

namespace forge {

std::string_view to_string(ItemStatus s) {
  switch (s) {
    case ItemStatus::draft:
      return "draft";
    case ItemStatus::validated:
      return "validated";
    case ItemStatus::rejected:
      return "rejected";
    case ItemStatus::calibrated:
      return "calibrated";
  }
  return "draft";
}

ItemStatus item_status_from_string(std::string_view s) {
  for (auto v : {ItemStatus::draft, ItemStatus::validated, ItemStatus::rejected, ItemStatus::calibrated}) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::BenchmarkParseError, "unknown item status '" + std::string(s) + "'");
}

std::string option_label(std::size_t i) {
  if (i >= 26) throw Error(ErrorCode::InvalidArgument, "at most 26 options are supported");
  return std::string(1, static_cast<char>('A' + i));
}

std::vector<std::string> BenchItem::labels() const {
  std::vector<std::string> out;
  for (const auto& o : options) out.push_back(o.label);
  return out;
}

std::vector<std::string> BenchItem::option_texts() const {
  std::vector<std::string> out;
  for (const auto& o : options) out.push_back(o.text);
  return out;
}

io::json BenchItem::to_json() const {
  io::json opts = io::json::array();
  for (const auto& o : options) opts.push_back({{"label", o.label}, {"text", o.text}});
  io::json j{{"item_id", item_id},
             {"question", question},
             {"options", opts},
             {"answer_key", answer_key},
             {"subfield", subfield},
             {"source_ref", {{"doc_id", source_ref.doc_id}, {"index", source_ref.index}, {"provenance", source_ref.provenance}}},
             {"status", std::string(to_string(status))}};
  j["rationale"] = rationale ? io::json(*rationale) : io::json(nullptr);
  j["low_confidence"] = low_confidence;
  j["density"] = density;
  if (!reject_reasons.empty()) j["reject_reasons"] = reject_reasons;
  return j;
}

BenchItem BenchItem::from_json(const io::json& j) {
  BenchItem item;
  try {
    item.item_id = j.at("item_id").get<std::string>();
    item.question = j.at("question").get<std::string>();
    for (const auto& o : j.at("options")) item.options.push_back({o.at("label").get<std::string>(), o.at("text").get<std::string>()});
    item.answer_key = j.at("answer_key").get<std::string>();
    item.subfield = j.value("subfield", "");
    const auto& src = j.at("source_ref");
    item.source_ref = {src.at("doc_id").get<std::string>(), src.at("index").get<std::size_t>(), src.value("provenance", "")};
    if (j.contains("rationale") && !j["rationale"].is_null()) item.rationale = j["rationale"].get<std::string>();
    item.status = item_status_from_string(j.value("status", "draft"));
    item.low_confidence = j.value("low_confidence", false);
    item.density = j.value("density", 0.0);
    item.reject_reasons = j.value("reject_reasons", std::vector<std::string>{});
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::BenchmarkParseError, std::string("malformed item: ") + e.what());
  }
  return item;
}

std::vector<std::string> structural_problems(const BenchItem& item, const FragmentLookup* lookup) {
  std::vector<std::string> problems;
  if (text::is_blank(item.question)) problems.emplace_back("blank question");
  if (item.options.size() < 2) problems.emplace_back("fewer than two options");
  if (item.options.size() > 26) problems.emplace_back("more than 26 options");
  std::set<std::string> normalized;
  bool key_found = false;
  for (std::size_t i = 0; i < item.options.size() && i < 26; ++i) {
    const auto& o = item.options[i];
    if (o.label != option_label(i)) problems.push_back("option " + std::to_string(i) + " has label '" + o.label + "'");
    if (text::is_blank(o.text)) problems.push_back("option " + o.label + " is blank");
    if (!normalized.insert(text::fold_case(text::normalize_whitespace(o.text))).second) {
      problems.push_back("option " + o.label + " duplicates an earlier option");
    }
    key_found |= o.label == item.answer_key;
  }
  if (!key_found) problems.push_back("answer key '" + item.answer_key + "' is not an option label");
  if (lookup && !lookup->find(item.source_ref.fragment())) {
    problems.push_back("source " + to_string(item.source_ref.fragment()) + " does not resolve");
  }
  return problems;
}

std::string bench_to_jsonl(std::span<const BenchItem> items, const io::json& meta) {
  io::json header{{"schema", "forge.bench"}, {"schema_version", kBenchSchemaVersion}, {"count", items.size()}};
  for (const auto& [k, v] : meta.items()) header[k] = v;
  std::string out = io::to_jsonl_line(header);
  for (const auto& item : items) out += io::to_jsonl_line(item.to_json());
  return out;
}

std::vector<BenchItem> bench_from_jsonl(std::string_view content) {
  std::vector<BenchItem> items;
  std::optional<std::size_t> count;
  try {
    io::for_each_jsonl(content, [&](std::size_t line, const io::json& j) {
      if (!count) {
        if (j.value("schema", "") != "forge.bench") {
          throw Error(ErrorCode::BenchmarkParseError, "line " + std::to_string(line) + ": missing benchmark header");
        }
        if (j.value("schema_version", 0) != kBenchSchemaVersion) {
          throw Error(ErrorCode::BenchmarkParseError, "unsupported schema_version");
        }
        count = j.at("count").get<std::size_t>();
        return;
      }
      items.push_back(BenchItem::from_json(j));
    });
  } catch (const Error& e) {
    if (e.code() == ErrorCode::BenchmarkParseError) throw;
    throw Error(ErrorCode::BenchmarkParseError, e.what());
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::BenchmarkParseError, e.what());
  }
  if (!count) throw Error(ErrorCode::BenchmarkParseError, "empty benchmark file");
  if (*count != items.size()) {
    throw Error(ErrorCode::BenchmarkParseError,
                "header announces " + std::to_string(*count) + " items, file has " + std::to_string(items.size()));
  }
  return items;
}

std::vector<BenchItem> load_bench(const std::filesystem::path& path) { return bench_from_jsonl(io::read_file(path)); }

void save_bench(const std::filesystem::path& path, std::span<const BenchItem> items, const io::json& meta) {
  io::write_file(path, bench_to_jsonl(items, meta));
}

}  // namespace forge
