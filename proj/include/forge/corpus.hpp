#pragma once

#include <compare>
#include <cstddef>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

/// Document category. Categories are open-ended strings so a corpus config can
/// introduce new ones; the three built-in names are provided as constants.
namespace category {
inline constexpr std::string_view kDomainLiterature = "domain_literature";
inline constexpr std::string_view kDomainEncyclopedia = "domain_encyclopedia";
inline constexpr std::string_view kGeneral = "general";
}  // namespace category

/// True for categories whose name starts with "domain".
bool is_domain_category(std::string_view category);

enum class FragmentKind { heading, paragraph, code_block, table, equation_block };

std::string_view to_string(FragmentKind kind);
FragmentKind fragment_kind_from_string(std::string_view name);

using Token = std::string;

/// Whitespace-separated runs split into maximal alphanumeric runs (Unicode L*
/// and Nd) and single other characters. Pure and platform independent.
std::vector<Token> tokenize(std::string_view text);

struct Fragment {
  std::string doc_id;
  std::size_t index = 0;
  FragmentKind kind = FragmentKind::paragraph;
  std::string text;
  std::vector<Token> tokens;

  std::size_t token_count() const { return tokens.size(); }
};

/// Builds a fragment with its token list derived from text.
Fragment make_fragment(std::string doc_id, std::size_t index, FragmentKind kind, std::string text);

struct Document {
  std::string id;
  std::string source_path;
  std::string category{category::kGeneral};
  std::string language_tag = "en";
  std::string provenance;
  std::vector<Fragment> fragments;
  /// Ill-formed UTF-8 sequences replaced during ingestion. Not persisted.
  std::size_t replaced_sequences = 0;

  std::size_t token_count() const;
  /// Tokens of all fragments concatenated in fragment order.
  std::vector<Token> all_tokens() const;
};

struct FragmentRef {
  std::string doc_id;
  std::size_t index = 0;

  auto operator<=>(const FragmentRef&) const = default;
};

std::string to_string(const FragmentRef& ref);

struct Shingle {
  std::size_t width = 0;
  std::string value;  // tokens joined by a single space

  auto operator<=>(const Shingle&) const = default;
};

using ShingleSet = std::set<Shingle>;

/// All contiguous token windows of width w. A sequence shorter than w yields
/// one shingle covering it; an empty sequence yields the empty set.
/// Throws Error(InvalidWidth) when w == 0.
ShingleSet shingle(std::span<const Token> tokens, std::size_t width);

inline constexpr std::size_t kDefaultShingleWidth = 5;

struct IngestOptions {
  std::string id;
  std::string source_path;
  std::string category{category::kGeneral};
  std::string language_tag = "en";
  std::string provenance;
};

/// Parses Markdown into fragments: ATX headings, fenced code blocks (``` or
/// ~~~), and blank-line separated blocks. Blocks made of pipe rows become
/// tables, $$-delimited blocks become equation blocks, the rest paragraphs.
/// Throws Error(EmptyInput) when the input has no non-whitespace content.
Document ingest_markdown(std::string_view source, const IngestOptions& options);

/// Re-serializes fragments so that ingest_markdown reproduces them.
std::string to_markdown(const Document& doc);

// JSONL persistence: one document per line, tokens recomputed on load.
std::string corpus_to_jsonl(std::span<const Document> corpus);
std::vector<Document> corpus_from_jsonl(std::string_view content);
void save_corpus(const std::filesystem::path& path, std::span<const Document> corpus);
std::vector<Document> load_corpus(const std::filesystem::path& path);

/// Ingests every *.md / *.txt file under dir (sorted by relative path). The
/// category is taken from the first path component when it names a known
/// category directory, otherwise `default_category`.
std::vector<Document> ingest_directory(const std::filesystem::path& dir, std::string_view default_category);

/// Index from FragmentRef to fragment, over documents owned elsewhere.
class FragmentLookup {
 public:
  explicit FragmentLookup(std::span<const Document> corpus);
  const Fragment* find(const FragmentRef& ref) const;
  const Document* document(std::string_view doc_id) const;

 private:
  std::span<const Document> corpus_;
  std::vector<std::pair<std::string, std::size_t>> by_id_;  // sorted
};

}  // namespace forge
