#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/bench_item.hpp"
#include "forge/client.hpp"
#include "forge/util/io.hpp"

namespace forge {

/// Label chosen by the response, or nullopt to abstain. Rules by precedence:
///  1. lines containing "answer" (any case): label tokens after it that are
///     uppercase, parenthesized, or last on the line;
///  2. standalone uppercase label tokens anywhere; a lowercase label only
///     when it is the entire response;
///  3. the one option whose case-folded text occurs in the response.
/// The first rule with any candidate decides; disagreeing candidates abstain.
std::optional<std::string> extract_choice(std::string_view response, std::span<const std::string> labels,
                                          std::span<const std::string> option_texts = {});

struct EvalProtocol {
  std::string model = "default";
  int max_tokens = 16;
  double temperature = 0.0;
  std::uint64_t seed = 0;
  int max_retries = 2;
  unsigned in_flight = 4;
  std::string instruction = "Answer with the letter of the correct option.";

  io::json to_json() const;
  /// Hex SHA-256 of the serialized protocol; labels every report.
  std::string digest() const;
};

/// Optional "Context:" block, the question, "A. text" option lines and the
/// instruction, separated by newlines.
std::string format_prompt(const BenchItem& item, const EvalProtocol& protocol, std::string_view context = {});

struct EvalRecord {
  std::string item_id;
  std::string raw_response;
  std::optional<std::string> extracted_choice;
  bool correct = false;
  double latency_ms = 0.0;
  std::string model_name;
  std::string error;  // set when every attempt failed
  // Retrieval audit, filled by the RAG loop.
  std::vector<FragmentRef> context_refs;
  bool question_only = false;

  io::json to_json() const;
  static EvalRecord from_json(const io::json& j);
};

std::string records_to_jsonl(std::span<const EvalRecord> records);
std::vector<EvalRecord> records_from_jsonl(std::string_view content);

/// Poses prompts[i] for items[i] with at most protocol.in_flight concurrent
/// calls; records keep item order. Failed calls are retried max_retries
/// times and then recorded as abstentions with an error note.
/// Throws Error(TransportFailure) if more than 10% of items failed.
std::vector<EvalRecord> run_eval_prompts(std::span<const BenchItem> items, std::span<const std::string> prompts,
                                         ModelClient& client, const EvalProtocol& protocol);

std::vector<EvalRecord> run_eval(std::span<const BenchItem> items, ModelClient& client, const EvalProtocol& protocol);

/// Re-extracts and re-grades stored raw responses.
/// Throws Error(UnknownItemId).
std::vector<EvalRecord> regrade(std::span<const EvalRecord> records, std::span<const BenchItem> items);

/// 100 * correct / n in hundredths of a percent, rounded half-up.
std::int64_t percent_hundredths(std::uint64_t correct, std::uint64_t n);
/// Renders hundredths with 2 or 1 decimals (half-up when dropping a digit).
std::string format_percent(std::int64_t hundredths, int decimals = 2);

struct SubfieldCell {
  std::size_t n = 0;
  std::size_t n_correct = 0;
  std::int64_t accuracy_hundredths = 0;
};

struct RunReport {
  std::string model_name;
  std::size_t n_items = 0;
  std::size_t n_correct = 0;
  std::int64_t accuracy_hundredths = 0;
  std::map<std::string, SubfieldCell> per_subfield;
  std::string config_digest;

  double accuracy() const { return static_cast<double>(accuracy_hundredths) / 100.0; }
  io::json to_json() const;
};

/// Throws Error(EmptyRecords) and Error(UnknownItemId).
RunReport accuracy_report(std::span<const EvalRecord> records, std::span<const BenchItem> items,
                          std::string config_digest = {});

struct ComparisonTable {
  std::vector<std::pair<std::string, std::int64_t>> rows;  // label, hundredths
  std::optional<std::int64_t> average;
  int decimals = 2;
  std::string label_header = "Model";
  std::string value_header = "Accuracy (%)";

  std::string to_csv() const;
  std::string to_text() const;
};

struct CompareOptions {
  bool average = false;
  int decimals = 2;
  std::string label_header = "Model";
  std::string average_label = "Average Score";
};

/// Rows in input order; the average (when requested and there are at least
/// two rows) is the half-up mean of the row values in hundredths.
ComparisonTable compare_runs(std::span<const RunReport> reports, const CompareOptions& options = {});

/// Percentile bootstrap (2.5 / 97.5) of accuracy in percent over item-level
/// resampling with replacement. Throws Error(EmptyRecords) or
/// Error(InvalidArgument) for fewer than 100 resamples.
std::pair<double, double> bootstrap_ci(std::span<const EvalRecord> records, std::size_t n_resamples,
                                       std::uint64_t seed);

}  // namespace forge
