#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "forge/benchgen.hpp"
#include "forge/corpus.hpp"
#include "forge/util/io.hpp"

namespace forge {

/// Knobs for the synthetic corpus. Counts of planted artifacts are exact.
struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t domain_docs = 120;
  std::size_t general_docs = 180;
  std::size_t min_paragraphs = 3;
  std::size_t max_paragraphs = 6;
  std::size_t general_vocab = 3000;
  std::size_t near_duplicate_pairs = 0;  // shingle Jaccard >= 0.85 with the original
  std::size_t decoy_pairs = 0;           // shingle Jaccard <= 0.5 with the original
  std::size_t exact_copies = 0;
  std::size_t gibberish_paragraphs = 0;
  std::size_t boilerplate_paragraphs = 0;  // gain a repairable copyright line

  io::json to_json() const;
};

/// A generated corpus plus the ground truth of what was planted. Document
/// ids are "<category>/<name>", which is what ingest_directory assigns when
/// the corpus is written out with write_markdown_tree.
struct SynthCorpus {
  std::vector<Document> documents;
  std::vector<std::pair<std::string, std::string>> near_duplicates;  // (original, copy)
  std::vector<std::pair<std::string, std::string>> decoys;
  std::vector<std::pair<std::string, std::string>> exact_copies;
  std::vector<FragmentRef> gibberish;
  std::vector<FragmentRef> boilerplate;

  io::json planted_json() const;
};

/// Domain paragraphs draw at least three distinct terms, mostly from the
/// document's subfield; general paragraphs use pseudo-words only.
/// Throws Error(InvalidArgument) when the taxonomy has no terms or the
/// requested plants exceed the available documents.
SynthCorpus synthesize_corpus(const SynthConfig& config, const Taxonomy& taxonomy);

/// Writes <dir>/<category>/<name>.md per document and <dir>/planted.json.
void write_markdown_tree(const std::filesystem::path& dir, const SynthCorpus& corpus);

/// Shingle-set Jaccard computed by enumeration.
double exact_jaccard(const Document& a, const Document& b, std::size_t width = kDefaultShingleWidth);

}  // namespace forge
