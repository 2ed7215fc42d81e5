#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/bench_item.hpp"
#include "forge/client.hpp"
#include "forge/corpus.hpp"
#include "forge/eval.hpp"
#include "forge/quality.hpp"

namespace forge {

struct DensityWeights {
  double terms = 0.5;    // distinct lexicon terms per 100 tokens
  double numeric = 0.3;  // all-digit tokens per 100 tokens
  double kind = 0.2;     // equation and code blocks
};

double density_score(const Fragment& fragment, const DomainLexicon& lexicon, const DensityWeights& weights = {});

// ---------------------------------------------------------------------------
// Drafting

/// Turns a fragment into a JSON item draft:
///   {"question": str, "options": [str, ...], "answer": label, "rationale": str?}
/// Implementations must be thread-safe.
class ItemGenerator {
 public:
  virtual ~ItemGenerator() = default;
  virtual std::string generate(const Fragment& fragment, std::string_view instruction, std::uint64_t seed) = 0;
  virtual std::string name() const = 0;
};

inline constexpr std::string_view kBlank = "_____";
inline constexpr std::string_view kClozePrefix = "Fill in the blank: ";

/// Cloze generator: the first sentence holding a lexicon term has every
/// occurrence of that term blanked; the options are the term plus three
/// other lexicon terms chosen by the seed, in seeded order.
/// Throws Error(InsufficientDistractors) for lexicons under 4 terms and
/// Error(NoAnchorTerm) when no sentence contains a term.
class TemplateGenerator : public ItemGenerator {
 public:
  explicit TemplateGenerator(const DomainLexicon& lexicon);
  std::string generate(const Fragment& fragment, std::string_view instruction, std::uint64_t seed) override;
  std::string name() const override { return "template-cloze-v1"; }

 private:
  const DomainLexicon& lexicon_;
};

/// Sends the instruction and fragment to a model and expects the JSON draft
/// as the whole reply.
class ModelGenerator : public ItemGenerator {
 public:
  explicit ModelGenerator(ModelClient& client, EvalProtocol protocol = {});
  std::string generate(const Fragment& fragment, std::string_view instruction, std::uint64_t seed) override;
  std::string name() const override { return "model:" + client_.name(); }

 private:
  ModelClient& client_;
  EvalProtocol protocol_;
};

inline constexpr std::string_view kDefaultDraftInstruction =
    "Write one multiple-choice question answerable from the passage. Reply with JSON "
    "{\"question\", \"options\", \"answer\", \"rationale\"}.";

/// Parses the generator's draft into a BenchItem with status draft.
/// Throws Error(GeneratorParseError) on malformed output.
BenchItem draft_item(const Fragment& fragment, ItemGenerator& generator, std::string item_id,
                     std::string provenance, std::uint64_t seed,
                     std::string_view instruction = kDefaultDraftInstruction);

/// Per-fragment drafting seed.
std::uint64_t fragment_seed(std::uint64_t seed, const FragmentRef& ref);

// ---------------------------------------------------------------------------
// Validation

/// Independent second opinion: picks an option given the source fragment,
/// or nullopt when it cannot decide. Implementations must be thread-safe.
class ItemVerifier {
 public:
  virtual ~ItemVerifier() = default;
  virtual std::optional<std::string> select(const BenchItem& item, const Fragment& source) = 0;
};

/// For cloze items: fills each option into the blanks and accepts the option
/// whose sentence occurs in the source (case-folded, whitespace-normalized).
/// Exactly one option must fit.
class RuleVerifier : public ItemVerifier {
 public:
  std::optional<std::string> select(const BenchItem& item, const Fragment& source) override;
};

/// Asks a model with the source fragment as context.
class ModelVerifier : public ItemVerifier {
 public:
  explicit ModelVerifier(ModelClient& client, EvalProtocol protocol = {});
  std::optional<std::string> select(const BenchItem& item, const Fragment& source) override;

 private:
  ModelClient& client_;
  EvalProtocol protocol_;
};

/// Drafts become validated when structurally sound and the verifier picks
/// the answer key, otherwise rejected with reasons. Non-draft items are
/// returned unchanged.
BenchItem validate_item(BenchItem item, ItemVerifier& verifier, const FragmentLookup& lookup);

struct DifficultyResult {
  std::vector<BenchItem> retained;
  std::vector<BenchItem> removed;  // answered correctly on every query
};

/// Poses each item `queries` times (seeded per item and query); items the
/// probe always gets right are removed.
/// Throws Error(ProbeUnavailable) when a probe call fails.
DifficultyResult difficulty_filter(std::span<const BenchItem> items, ModelClient& probe, std::size_t queries,
                                   std::uint64_t seed, const EvalProtocol& protocol = {});

// ---------------------------------------------------------------------------
// Finalization

struct Subfield {
  std::string name;
  std::vector<std::string> terms;  // case-folded
};

struct Taxonomy {
  std::vector<Subfield> subfields;

  /// {"subfields": [{"name": str, "terms": [str, ...]}, ...]}.
  /// Throws Error(ParseError) / Error(InvalidArgument) on bad input.
  static Taxonomy parse(std::string_view json);
  static Taxonomy load(const std::filesystem::path& path);
  std::vector<std::string> names() const;
};

/// Name with the largest term overlap (ties to the earliest), and whether
/// the overlap was zero.
std::pair<std::string, bool> assign_subfield(const Fragment& fragment, const Taxonomy& taxonomy);

struct FinalizeResult {
  std::vector<BenchItem> items;
  std::vector<std::string> warnings;
  std::size_t duplicate_sources = 0;
};

/// Keeps validated items, the first per source fragment, tags subfields,
/// and truncates to target_n by descending density (stable).
/// Throws Error(InsufficientItems) when fewer than target_n remain.
FinalizeResult finalize_bench(std::span<const BenchItem> items, const Taxonomy& taxonomy, std::size_t target_n,
                              const FragmentLookup& lookup);

/// CSV with columns item_id, decision, question, answer_key, subfield,
/// option_A..option_<max>; decision left blank for the reviewer.
std::string export_review(std::span<const BenchItem> items);

struct ReviewOutcome {
  std::vector<BenchItem> items;
  std::size_t accepted = 0;
  std::size_t rejected = 0;
  std::size_t edited = 0;
  std::vector<std::string> problems;
};

/// accept -> calibrated; reject -> removed; edit -> non-empty edited cells
/// replace fields, then the item must pass structural validation again to
/// become calibrated. Rows without a decision leave the item as it is.
/// Throws Error(ParseError) for malformed files or unknown decisions and
/// Error(UnknownItemId) for rows naming absent items.
ReviewOutcome apply_review(std::span<const BenchItem> items, std::string_view review_csv,
                           const FragmentLookup& lookup);

// ---------------------------------------------------------------------------
// Whole construction pipeline

struct BenchConfig {
  std::size_t target_n = 436;
  std::uint64_t seed = 0;
  std::size_t probe_queries = 3;
  DensityWeights density;
  std::string instruction{kDefaultDraftInstruction};
  unsigned workers = 1;
};

struct BenchBuildResult {
  std::vector<BenchItem> items;  // finalized
  std::size_t candidates = 0;
  std::size_t drafted = 0;
  std::size_t draft_failures = 0;
  std::size_t validated = 0;
  std::size_t rejected = 0;
  std::size_t removed_easy = 0;
  std::vector<std::string> warnings;

  io::json summary() const;
};

/// Drafts one item per fragment with positive density (input order), then
/// validates, difficulty-filters and finalizes. Drafts that fail to parse or
/// lack an anchor are counted and skipped.
BenchBuildResult build_benchmark(std::span<const Document> corpus, const DomainLexicon& lexicon,
                                 const Taxonomy& taxonomy, ItemGenerator& generator, ItemVerifier& verifier,
                                 ModelClient& probe, const BenchConfig& config);

}  // namespace forge
