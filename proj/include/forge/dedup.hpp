#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/util/io.hpp"
#include "forge/util/sha256.hpp"

namespace forge {

/// SHA-256 of the canonical text: fragments joined by '\n', NFC-normalized,
/// trailing whitespace stripped from every line.
Digest content_hash(const Document& doc);
std::string canonical_text(const Document& doc);

enum class DropReason { exact_duplicate, near_duplicate };
std::string_view to_string(DropReason reason);

struct DropRecord {
  std::string id;
  DropReason reason = DropReason::exact_duplicate;
  std::string canonical_id;
};

struct DedupReport {
  std::vector<std::string> kept_ids;
  std::vector<DropRecord> dropped;  // input order
  std::size_t pair_count_examined = 0;

  std::vector<std::string> dropped_ids() const;
  io::json to_json() const;
};

/// Keeps the first document (input order) per content digest.
/// Throws Error(DuplicateId) on repeated document ids.
DedupReport exact_dedup(std::span<const Document> corpus);

struct MinHashSignature {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> values;

  bool operator==(const MinHashSignature&) const = default;
};

/// values[i] = min over shingles of h_i(shingle), with h_i(x) =
/// fmix64(base(x) XOR key_i) and key_i derived from (seed, i).
/// Throws Error(EmptyShingleSet) / Error(InvalidArgument) for k == 0.
MinHashSignature minhash_signature(const ShingleSet& shingles, std::size_t k, std::uint64_t seed);

/// Fraction of equal components. Throws Error(IncompatibleSignatures) when
/// (k, seed) differ.
double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b);

/// Unordered candidate pairs (i < j, indices into `signatures`) that agree on
/// every row of at least one band. Throws Error(BandShapeMismatch) when
/// bands * rows differs from any signature's k.
std::set<std::pair<std::size_t, std::size_t>> lsh_candidates(std::span<const MinHashSignature> signatures,
                                                             std::size_t bands, std::size_t rows);

struct ApproxDedupParams {
  std::size_t num_hashes = 256;
  std::size_t bands = 32;
  std::size_t rows = 8;
  std::size_t shingle_width = kDefaultShingleWidth;
  std::uint64_t seed = 0x6d696e68617368ULL;
  unsigned workers = 1;
};

/// MinHash + LSH near-duplicate removal. Candidates are confirmed when the
/// signature estimate reaches `threshold`; confirmed pairs are merged into
/// connected components and the earliest document of each is kept.
/// Throws Error(InvalidThreshold) unless 0 <= threshold <= 1.
DedupReport approx_dedup(std::span<const Document> corpus, double threshold, const ApproxDedupParams& params = {});

/// Exact followed by approximate dedup; canonical ids of exact drops are
/// remapped through the approximate stage so every drop names a kept id.
DedupReport dedup_corpus(std::span<const Document> corpus, double threshold, const ApproxDedupParams& params = {});

/// Documents of `corpus` whose id is in report.kept_ids, in input order.
std::vector<Document> kept_documents(std::span<const Document> corpus, const DedupReport& report);

}  // namespace forge
