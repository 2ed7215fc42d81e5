#include "forge/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "forge/error.hpp"
#include "forge/util/csv.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/rng.hpp"
#include "forge/util/sha256.hpp"
#include "forge/util/text.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Choice extraction

namespace {

bool is_word(const Token& t) { return !t.empty() && text::is_alnum(text::decode(t).front()); }

std::optional<std::string> decide(const std::set<std::string>& candidates, bool& fired) {
  fired = !candidates.empty();
  if (candidates.size() == 1) return *candidates.begin();
  return std::nullopt;
}

const std::string* match_label(std::string_view token, std::span<const std::string> labels, bool exact) {
  for (const auto& l : labels) {
    if (exact ? token == l : text::fold_case(token) == text::fold_case(l)) return &l;
  }
  return nullptr;
}

}  // namespace

std::optional<std::string> extract_choice(std::string_view response, std::span<const std::string> labels,
                                          std::span<const std::string> option_texts) {
  if (labels.empty()) throw Error(ErrorCode::InvalidArgument, "no labels to choose from");
  bool fired = false;

  // Rule 1: answer lines.
  std::set<std::string> answer_labels;
  for (auto line : text::split_lines(response)) {
    const auto tokens = tokenize(line);
    std::size_t last_word = tokens.size();
    for (std::size_t i = tokens.size(); i-- > 0;) {
      if (is_word(tokens[i])) {
        last_word = i;
        break;
      }
    }
    bool after_answer = false;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (!after_answer) {
        after_answer = text::fold_case(tokens[i]) == "answer";
        continue;
      }
      if (const auto* l = match_label(tokens[i], labels, true)) {
        answer_labels.insert(*l);
      } else if (const auto* lf = match_label(tokens[i], labels, false)) {
        const bool parenthesized = i > 0 && i + 1 < tokens.size() && tokens[i - 1] == "(" && tokens[i + 1] == ")";
        if (parenthesized || i == last_word) answer_labels.insert(*lf);
      }
    }
  }
  if (auto r = decide(answer_labels, fired); fired) return r;

  // Rule 2: standalone labels.
  const auto tokens = tokenize(response);
  std::set<std::string> standalone;
  std::vector<const Token*> words;
  for (const auto& t : tokens) {
    if (is_word(t)) words.push_back(&t);
    if (const auto* l = match_label(t, labels, true)) standalone.insert(*l);
  }
  if (standalone.empty() && words.size() == 1) {
    if (const auto* l = match_label(*words.front(), labels, false)) standalone.insert(*l);
  }
  if (auto r = decide(standalone, fired); fired) return r;

  // Rule 3: verbatim option text.
  if (option_texts.size() == labels.size()) {
    const std::string hay = text::fold_case(text::normalize_whitespace(response));
    std::set<std::string> matched;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const std::string needle = text::fold_case(text::normalize_whitespace(option_texts[i]));
      if (!needle.empty() && hay.find(needle) != std::string::npos) matched.insert(labels[i]);
    }
    if (auto r = decide(matched, fired); fired) return r;
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Protocol and prompts

io::json EvalProtocol::to_json() const {
  return io::json{{"model", model},         {"max_tokens", max_tokens}, {"temperature", temperature},
                  {"seed", seed},           {"max_retries", max_retries}, {"instruction", instruction},
                  {"template", "mc-v1"}};
}

std::string EvalProtocol::digest() const { return sha256(to_json().dump()).hex(); }

std::string format_prompt(const BenchItem& item, const EvalProtocol& protocol, std::string_view context) {
  std::string out;
  if (!context.empty()) {
    out += "Context:\n";
    out += context;
    out += "\n\n";
  }
  out += "Question: " + item.question + "\n";
  for (const auto& o : item.options) out += o.label + ". " + o.text + "\n";
  out += protocol.instruction;
  return out;
}

// ---------------------------------------------------------------------------
// Records

io::json EvalRecord::to_json() const {
  io::json j{{"item_id", item_id}, {"raw_response", raw_response}};
  j["extracted_choice"] = extracted_choice ? io::json(*extracted_choice) : io::json(nullptr);
  j["correct"] = correct;
  j["latency_ms"] = latency_ms;
  j["model_name"] = model_name;
  if (!error.empty()) j["error"] = error;
  if (!context_refs.empty() || question_only) {
    io::json refs = io::json::array();
    for (const auto& r : context_refs) refs.push_back(to_string(r));
    j["context_refs"] = refs;
    j["question_only"] = question_only;
  }
  return j;
}

EvalRecord EvalRecord::from_json(const io::json& j) {
  EvalRecord r;
  try {
    r.item_id = j.at("item_id").get<std::string>();
    r.raw_response = j.at("raw_response").get<std::string>();
    if (!j.at("extracted_choice").is_null()) r.extracted_choice = j["extracted_choice"].get<std::string>();
    r.correct = j.at("correct").get<bool>();
    r.latency_ms = j.value("latency_ms", 0.0);
    r.model_name = j.value("model_name", "");
    r.error = j.value("error", "");
    r.question_only = j.value("question_only", false);
    for (const auto& ref : j.value("context_refs", io::json::array())) {
      const auto s = ref.get<std::string>();
      const auto hash = s.rfind('#');
      if (hash == std::string::npos) throw Error(ErrorCode::ParseError, "bad fragment ref '" + s + "'");
      r.context_refs.push_back({s.substr(0, hash), static_cast<std::size_t>(std::stoull(s.substr(hash + 1)))});
    }
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed eval record: ") + e.what());
  }
  return r;
}

std::string records_to_jsonl(std::span<const EvalRecord> records) {
  std::string out;
  for (const auto& r : records) out += io::to_jsonl_line(r.to_json());
  return out;
}

std::vector<EvalRecord> records_from_jsonl(std::string_view content) {
  std::vector<EvalRecord> out;
  io::for_each_jsonl(content, [&](std::size_t, const io::json& j) { out.push_back(EvalRecord::from_json(j)); });
  return out;
}

// ---------------------------------------------------------------------------
// Running

namespace {

void grade(EvalRecord& r, const BenchItem& item) {
  const auto labels = item.labels();
  const auto texts = item.option_texts();
  r.extracted_choice = extract_choice(r.raw_response, labels, texts);
  r.correct = r.extracted_choice && *r.extracted_choice == item.answer_key;
}

}  // namespace

std::vector<EvalRecord> run_eval_prompts(std::span<const BenchItem> items, std::span<const std::string> prompts,
                                         ModelClient& client, const EvalProtocol& protocol) {
  if (prompts.size() != items.size()) throw Error(ErrorCode::InvalidArgument, "one prompt per item required");
  std::vector<EvalRecord> records(items.size());
  std::atomic<std::size_t> failures{0};
  parallel_for(items.size(), std::max(1u, protocol.in_flight), [&](std::size_t i) {
    const auto& item = items[i];
    EvalRecord& r = records[i];
    r.item_id = item.item_id;
    r.model_name = client.name();
    GenerationRequest req{protocol.model, prompts[i], protocol.max_tokens, protocol.temperature,
                          derive_seed(protocol.seed, item.item_id), item.item_id};
    for (int attempt = 0; attempt <= protocol.max_retries; ++attempt) {
      try {
        auto res = client.generate(req);
        r.raw_response = std::move(res.text);
        r.latency_ms = res.latency_ms;
        r.error.clear();
        break;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TransportFailure) throw;
        r.error = e.what();
      }
    }
    if (!r.error.empty()) {
      ++failures;
      return;
    }
    grade(r, item);
  });
  if (failures * 10 > items.size()) {
    throw Error(ErrorCode::TransportFailure,
                fmt::format("{} of {} items failed after retries", failures.load(), items.size()));
  }
  return records;
}

std::vector<EvalRecord> run_eval(std::span<const BenchItem> items, ModelClient& client, const EvalProtocol& protocol) {
  std::vector<std::string> prompts;
  prompts.reserve(items.size());
  for (const auto& item : items) prompts.push_back(format_prompt(item, protocol));
  return run_eval_prompts(items, prompts, client, protocol);
}

namespace {

std::unordered_map<std::string_view, const BenchItem*> index_items(std::span<const BenchItem> items) {
  std::unordered_map<std::string_view, const BenchItem*> by_id;
  for (const auto& it : items) by_id.emplace(it.item_id, &it);
  return by_id;
}

const BenchItem& lookup_item(const std::unordered_map<std::string_view, const BenchItem*>& by_id,
                             const std::string& id) {
  const auto it = by_id.find(id);
  if (it == by_id.end()) throw Error(ErrorCode::UnknownItemId, "no benchmark item '" + id + "'");
  return *it->second;
}

}  // namespace

std::vector<EvalRecord> regrade(std::span<const EvalRecord> records, std::span<const BenchItem> items) {
  const auto by_id = index_items(items);
  std::vector<EvalRecord> out(records.begin(), records.end());
  for (auto& r : out) {
    const auto& item = lookup_item(by_id, r.item_id);
    if (r.error.empty()) {
      grade(r, item);
    } else {
      r.extracted_choice.reset();
      r.correct = false;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reports

std::int64_t percent_hundredths(std::uint64_t correct, std::uint64_t n) {
  if (n == 0) throw Error(ErrorCode::EmptyRecords, "accuracy of zero items");
  return static_cast<std::int64_t>((2 * 10000 * correct + n) / (2 * n));
}

std::string format_percent(std::int64_t hundredths, int decimals) {
  if (decimals == 2) return fmt::format("{}.{:02d}", hundredths / 100, hundredths % 100);
  if (decimals == 1) {
    const std::int64_t tenths = (hundredths + 5) / 10;
    return fmt::format("{}.{}", tenths / 10, tenths % 10);
  }
  throw Error(ErrorCode::InvalidArgument, "decimals must be 1 or 2");
}

io::json RunReport::to_json() const {
  io::json cells = io::json::object();
  for (const auto& [name, c] : per_subfield) {
    cells[name] = {{"n", c.n}, {"n_correct", c.n_correct}, {"accuracy", format_percent(c.accuracy_hundredths)}};
  }
  return io::json{{"model_name", model_name},
                  {"n_items", n_items},
                  {"n_correct", n_correct},
                  {"accuracy", format_percent(accuracy_hundredths)},
                  {"per_subfield", cells},
                  {"config_digest", config_digest}};
}

RunReport accuracy_report(std::span<const EvalRecord> records, std::span<const BenchItem> items,
                          std::string config_digest) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "no records to report");
  const auto by_id = index_items(items);
  RunReport report;
  report.model_name = records.front().model_name;
  report.config_digest = std::move(config_digest);
  for (const auto& r : records) {
    const auto& item = lookup_item(by_id, r.item_id);
    auto& cell = report.per_subfield[item.subfield];
    ++cell.n;
    ++report.n_items;
    if (r.correct) {
      ++cell.n_correct;
      ++report.n_correct;
    }
  }
  report.accuracy_hundredths = percent_hundredths(report.n_correct, report.n_items);
  for (auto& [name, cell] : report.per_subfield) cell.accuracy_hundredths = percent_hundredths(cell.n_correct, cell.n);
  return report;
}

ComparisonTable compare_runs(std::span<const RunReport> reports, const CompareOptions& options) {
  if (reports.empty()) throw Error(ErrorCode::EmptyRecords, "nothing to compare");
  ComparisonTable table;
  table.decimals = options.decimals;
  table.label_header = options.label_header;
  std::int64_t sum = 0;
  for (const auto& r : reports) {
    table.rows.emplace_back(r.model_name, r.accuracy_hundredths);
    sum += r.accuracy_hundredths;
  }
  if (options.average && reports.size() > 1) {
    const auto n = static_cast<std::int64_t>(reports.size());
    table.average = (2 * sum + n) / (2 * n);
    table.rows.emplace_back(options.average_label, *table.average);
  }
  return table;
}

std::string ComparisonTable::to_csv() const {
  std::string out = csv::format_row({label_header, value_header});
  for (const auto& [label, h] : rows) out += csv::format_row({label, format_percent(h, decimals)});
  return out;
}

std::string ComparisonTable::to_text() const {
  std::size_t w1 = label_header.size();
  std::size_t w2 = value_header.size();
  for (const auto& [label, h] : rows) {
    w1 = std::max(w1, label.size());
    w2 = std::max(w2, format_percent(h, decimals).size());
  }
  std::string out = fmt::format("{:<{}}  {:>{}}\n", label_header, w1, value_header, w2);
  out += std::string(w1, '-') + "  " + std::string(w2, '-') + "\n";
  for (const auto& [label, h] : rows) out += fmt::format("{:<{}}  {:>{}}\n", label, w1, format_percent(h, decimals), w2);
  return out;
}

std::pair<double, double> bootstrap_ci(std::span<const EvalRecord> records, std::size_t n_resamples,
                                       std::uint64_t seed) {
  if (records.empty()) throw Error(ErrorCode::EmptyRecords, "bootstrap over no records");
  if (n_resamples < 100) throw Error(ErrorCode::InvalidArgument, "at least 100 resamples required");
  Rng rng(seed);
  const std::size_t n = records.size();
  std::vector<double> acc(n_resamples);
  for (auto& a : acc) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += records[rng.below(n)].correct;
    a = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
  }
  std::sort(acc.begin(), acc.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(acc.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, acc.size() - 1);
    return acc[lo] + (pos - static_cast<double>(lo)) * (acc[hi] - acc[lo]);
  };
  return {quantile(0.025), quantile(0.975)};
}

}  // namespace forge
