#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <regex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/util/io.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Rule-based filtering

struct RuleConfig {
  std::size_t min_tokens = 1;
  std::size_t max_tokens = 20000;
  /// Share of non-whitespace characters that are neither letters nor digits.
  double max_symbol_ratio = 0.5;
  /// Share of non-blank lines that repeat an earlier line. Above this the
  /// fragment is dropped; any repetition at or below it is repairable.
  double max_repeated_line_ratio = 0.3;
  /// ECMAScript patterns, matched case-insensitively against each line.
  std::vector<std::string> boilerplate_patterns = default_boilerplate_patterns();
  /// Kinds where punctuation density is expected and not checked.
  std::vector<FragmentKind> symbol_ratio_exempt{FragmentKind::code_block, FragmentKind::equation_block};

  static std::vector<std::string> default_boilerplate_patterns();
};

enum class RuleVerdict { pass, repair, drop };

struct RuleResult {
  RuleVerdict verdict = RuleVerdict::pass;
  std::vector<std::string> reasons;
};

namespace rule_id {
inline constexpr std::string_view kMinLength = "min_length";
inline constexpr std::string_view kMaxLength = "max_length";
inline constexpr std::string_view kSymbolRatio = "symbol_ratio";
inline constexpr std::string_view kRepeatedLines = "repeated_lines";
inline constexpr std::string_view kRepeatedLine = "repeated_line";
inline constexpr std::string_view kBoilerplate = "boilerplate";
inline constexpr std::string_view kPerplexity = "perplexity";
inline constexpr std::string_view kRelevance = "relevance";
}  // namespace rule_id

/// Compiled rule set. Rules run in order: token length bounds, symbol ratio,
/// repeated-line ratio, boilerplate lines. The first hard violation drops the
/// fragment; repeated or boilerplate lines alone make it a repair candidate.
class RuleFilter {
 public:
  explicit RuleFilter(RuleConfig config = {});

  RuleResult check(std::string_view text, FragmentKind kind) const;
  RuleResult check(const Fragment& fragment) const { return check(fragment.text, fragment.kind); }

  /// Deletes boilerplate lines and later repeats of a line, normalizes
  /// whitespace inside lines, and drops blank lines.
  std::string repair(std::string_view text) const;

  const RuleConfig& config() const { return config_; }

 private:
  bool is_boilerplate(std::string_view line) const;

  RuleConfig config_;
  std::vector<std::regex> patterns_;
};

RuleResult rule_filter(const Fragment& fragment, const RuleConfig& rules);

// ---------------------------------------------------------------------------
// N-gram language model

struct Smoothing {
  enum class Kind { none, laplace, interpolated };
  Kind kind = Kind::interpolated;
  double alpha = 1.0;           // laplace pseudo-count; additive unigram base for interpolated
  std::vector<double> lambdas;  // interpolated weights, highest order first

  static Smoothing none() { return {Kind::none, 0.0, {}}; }
  static Smoothing laplace(double alpha) { return {Kind::laplace, alpha, {}}; }
  static Smoothing interpolated(std::vector<double> lambdas, double unigram_alpha = 1.0) {
    return {Kind::interpolated, unigram_alpha, std::move(lambdas)};
  }
};

/// Partial n-gram count tables; mergeable so training can be split over
/// workers and combined by a single writer.
class NgramCounts {
 public:
  explicit NgramCounts(std::size_t order);

  void add(std::span<const Token> tokens);
  void merge(const NgramCounts& other);

  std::size_t order() const { return order_; }

 private:
  friend class NgramModel;
  struct Table {
    std::uint64_t total = 0;
    std::unordered_map<std::string, std::uint64_t> next;
  };
  std::size_t order_;
  // tables_[m] holds order m+1 counts keyed by the m-token context joined
  // with '\x1f'. Keys decode uniquely: a non-alphanumeric token is always a
  // single character.
  std::vector<std::unordered_map<std::string, Table>> tables_;
  std::uint64_t token_total_ = 0;
};

class NgramModel {
 public:
  static constexpr std::string_view kUnknown = "<unk>";
  static constexpr std::string_view kBos = "<s>";

  /// Throws Error(EmptyCorpus) when no fragment has tokens, and
  /// Error(InvalidArgument) for order 0 or an interpolation weight list that
  /// does not have one non-negative weight per order with a positive sum.
  static NgramModel train(std::span<const Fragment> corpus, std::size_t order, Smoothing smoothing);
  static NgramModel from_counts(NgramCounts counts, Smoothing smoothing);

  /// p(word | history). Only the last order-1 history tokens are used; missing
  /// positions are filled with the sentence-start symbol. Out-of-vocabulary
  /// words are scored as the unknown symbol.
  double probability(std::span<const Token> history, std::string_view word) const;

  std::size_t order() const { return counts_.order(); }
  /// Distinct training tokens plus the unknown symbol.
  std::size_t vocab_size() const { return vocabulary_.size(); }
  /// Sorted training vocabulary followed by the unknown symbol.
  const std::vector<std::string>& vocabulary() const { return vocabulary_; }
  const Smoothing& smoothing() const { return smoothing_; }

 private:
  NgramModel(NgramCounts counts, Smoothing smoothing);

  double unigram(std::string_view word) const;

  NgramCounts counts_;
  Smoothing smoothing_;
  std::vector<std::string> vocabulary_;
};

/// exp(-(1/N) * sum ln p(token_t | context_t)).
/// Throws Error(EmptyFragment) for no tokens and Error(ZeroProbability) when
/// an unsmoothed model assigns zero probability.
double perplexity(const NgramModel& model, std::span<const Token> tokens);
inline double perplexity(const NgramModel& model, const Fragment& fragment) {
  return perplexity(model, fragment.tokens);
}

/// factor * median perplexity over the fragments with at least one token.
double calibrate_ppl_max(const NgramModel& model, std::span<const Fragment> sample, double factor = 10.0);

// ---------------------------------------------------------------------------
// Domain lexicon

class DomainLexicon {
 public:
  struct Entry {
    std::string term;  // case-folded single token
    double weight = 0.0;
  };

  /// Throws Error(InvalidLexicon) on negative weights, multi-token or
  /// duplicate terms, or an empty / zero-weight lexicon.
  explicit DomainLexicon(std::vector<Entry> entries);

  /// "term<TAB>weight" per line; blank lines and '#' comments are skipped.
  static DomainLexicon parse(std::string_view tsv);
  static DomainLexicon load(const std::filesystem::path& path);

  const std::vector<Entry>& entries() const { return entries_; }  // sorted by term
  double normalization() const { return normalization_; }
  bool contains(std::string_view folded_term) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::vector<Entry> entries_;
  double normalization_ = 0.0;
};

/// Case-folded token set of a fragment.
std::vector<std::string> folded_token_set(std::span<const Token> tokens);

/// Sum of weights of lexicon terms present in the fragment / total weight.
double relevance_score(const Fragment& fragment, const DomainLexicon& lexicon);

// ---------------------------------------------------------------------------
// Gate

enum class QualityVerdict { pass, repaired, dropped };
std::string_view to_string(QualityVerdict v);

struct QualityReport {
  FragmentRef fragment_ref;
  QualityVerdict verdict = QualityVerdict::pass;
  std::vector<std::string> reasons;
  std::optional<double> perplexity;
  std::optional<double> relevance;
  std::string repaired_text;  // set iff verdict == repaired

  io::json to_json() const;
};

struct QualityThresholds {
  double ppl_max = std::numeric_limits<double>::infinity();
  double rel_min = 0.02;
};

/// Rules first (hard failure drops), then repair when soft violations exist
/// and the repaired text must pass the rules again. Paragraphs are then
/// scored on the final text: perplexity above ppl_max drops, and for domain
/// categories relevance below rel_min drops. Other kinds are judged by the
/// rules alone.
QualityReport quality_gate(const Fragment& fragment, std::string_view category, const NgramModel& model,
                           const DomainLexicon& lexicon, const RuleFilter& rules,
                           const QualityThresholds& thresholds);

struct CurationResult {
  std::vector<Document> documents;  // surviving fragments, re-indexed; empty documents removed
  std::vector<QualityReport> reports;
  double ppl_max = 0.0;
};

struct CurationConfig {
  RuleConfig rules;
  std::size_t order = 3;
  Smoothing smoothing = Smoothing::interpolated({0.6, 0.3, 0.1});
  double ppl_factor = 10.0;
  double rel_min = 0.02;
  unsigned workers = 1;
};

/// Corpus-level gate with two-fold cross-fitting: documents are split into
/// folds by id hash, each fold's paragraphs are scored by a model trained on
/// the other fold, and ppl_max is ppl_factor times the median of those
/// held-out perplexities.
CurationResult curate_corpus(std::span<const Document> corpus, const DomainLexicon& lexicon,
                             const CurationConfig& config = {});

}  // namespace forge
