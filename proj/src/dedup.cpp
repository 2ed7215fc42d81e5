#include "forge/dedup.hpp"

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <unordered_map>
#include <unordered_set>

#include "forge/error.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/text.hpp"

namespace forge {

std::string canonical_text(const Document& doc) {
  std::string joined;
  for (std::size_t i = 0; i < doc.fragments.size(); ++i) {
    if (i) joined.push_back('\n');
    joined += doc.fragments[i].text;
  }
  const std::string normalized = text::nfc(joined);
  std::string out;
  out.reserve(normalized.size());
  const auto lines = text::split_lines(normalized);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (i) out.push_back('\n');
    out.append(text::rtrim(lines[i]));
  }
  return out;
}

Digest content_hash(const Document& doc) { return sha256(canonical_text(doc)); }

std::string_view to_string(DropReason reason) {
  return reason == DropReason::exact_duplicate ? "exact_duplicate" : "near_duplicate";
}

std::vector<std::string> DedupReport::dropped_ids() const {
  std::vector<std::string> ids;
  ids.reserve(dropped.size());
  for (const auto& d : dropped) ids.push_back(d.id);
  return ids;
}

io::json DedupReport::to_json() const {
  io::json reasons = io::json::object();
  io::json canonical = io::json::object();
  std::map<std::string, std::size_t> reason_counts;
  for (const auto& d : dropped) {
    reasons[d.id] = std::string(to_string(d.reason));
    canonical[d.id] = d.canonical_id;
    ++reason_counts[std::string(to_string(d.reason))];
  }
  return io::json{{"kept_count", kept_ids.size()},
                  {"dropped_count", dropped.size()},
                  {"reason_counts", reason_counts},
                  {"pair_count_examined", pair_count_examined},
                  {"kept_ids", kept_ids},
                  {"dropped_ids", dropped_ids()},
                  {"drop_reason", std::move(reasons)},
                  {"canonical_of", std::move(canonical)}};
}

namespace {

void check_unique_ids(std::span<const Document> corpus) {
  std::unordered_set<std::string_view> seen;
  for (const auto& d : corpus) {
    if (!seen.insert(d.id).second) throw Error(ErrorCode::DuplicateId, "document id '" + d.id + "' repeated");
  }
}

}  // namespace

DedupReport exact_dedup(std::span<const Document> corpus) {
  check_unique_ids(corpus);
  DedupReport report;
  std::map<Digest, std::string> first_by_digest;
  for (const auto& d : corpus) {
    auto [it, inserted] = first_by_digest.emplace(content_hash(d), d.id);
    if (inserted) {
      report.kept_ids.push_back(d.id);
    } else {
      ++report.pair_count_examined;
      report.dropped.push_back({d.id, DropReason::exact_duplicate, it->second});
    }
  }
  return report;
}

MinHashSignature minhash_signature(const ShingleSet& shingles, std::size_t k, std::uint64_t seed) {
  if (shingles.empty()) throw Error(ErrorCode::EmptyShingleSet, "minhash over an empty shingle set");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "minhash requires k >= 1");

  std::vector<std::uint64_t> keys(k);
  for (std::size_t i = 0; i < k; ++i) keys[i] = derive_seed(seed, i);

  MinHashSignature sig{k, seed, std::vector<std::uint64_t>(k, std::numeric_limits<std::uint64_t>::max())};
  for (const auto& s : shingles) {
    const std::uint64_t base = hash_bytes(s.value, seed);
    for (std::size_t i = 0; i < k; ++i) {
      sig.values[i] = std::min(sig.values[i], fmix64(base ^ keys[i]));
    }
  }
  return sig;
}

double estimate_jaccard(const MinHashSignature& a, const MinHashSignature& b) {
  if (a.k != b.k || a.seed != b.seed || a.values.size() != b.values.size()) {
    throw Error(ErrorCode::IncompatibleSignatures, "signatures differ in k or seed");
  }
  std::size_t equal = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) equal += a.values[i] == b.values[i];
  return static_cast<double>(equal) / static_cast<double>(a.k);
}

std::set<std::pair<std::size_t, std::size_t>> lsh_candidates(std::span<const MinHashSignature> signatures,
                                                             std::size_t bands, std::size_t rows) {
  for (const auto& s : signatures) {
    if (bands * rows != s.k || s.values.size() != s.k) {
      throw Error(ErrorCode::BandShapeMismatch, "bands x rows = " + std::to_string(bands * rows) +
                                                    " but signature k = " + std::to_string(s.k));
    }
  }
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t b = 0; b < bands; ++b) {
    const std::size_t lo = b * rows;
    // Bucket by a hash of the row slice, then split buckets on exact slice
    // equality so a pair is a candidate iff its slices are identical.
    std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < signatures.size(); ++i) {
      std::uint64_t h = 0x243f6a8885a308d3ULL;
      for (std::size_t r = 0; r < rows; ++r) h = fmix64(h ^ signatures[i].values[lo + r]) + r;
      buckets[h].push_back(i);
    }
    for (const auto& [h, members] : buckets) {
      if (members.size() < 2) continue;
      for (std::size_t x = 0; x < members.size(); ++x) {
        for (std::size_t y = x + 1; y < members.size(); ++y) {
          const auto& va = signatures[members[x]].values;
          const auto& vb = signatures[members[y]].values;
          if (std::equal(va.begin() + lo, va.begin() + lo + rows, vb.begin() + lo)) {
            out.emplace(std::min(members[x], members[y]), std::max(members[x], members[y]));
          }
        }
      }
    }
  }
  return out;
}

namespace {

class DisjointSet {
 public:
  explicit DisjointSet(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  // The smaller index becomes the root, so each root is its component's
  // earliest member.
  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (b < a) std::swap(a, b);
    parent_[b] = a;
  }

 private:
  std::vector<std::size_t> parent_;
};

}  // namespace

DedupReport approx_dedup(std::span<const Document> corpus, double threshold, const ApproxDedupParams& params) {
  if (!(threshold >= 0.0 && threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidThreshold, "threshold must lie in [0, 1], got " + std::to_string(threshold));
  }
  if (params.bands * params.rows != params.num_hashes) {
    throw Error(ErrorCode::BandShapeMismatch, "bands x rows must equal num_hashes");
  }
  check_unique_ids(corpus);

  std::vector<MinHashSignature> sigs(corpus.size());
  parallel_for(corpus.size(), params.workers, [&](std::size_t i) {
    const auto tokens = corpus[i].all_tokens();
    sigs[i] = minhash_signature(shingle(tokens, params.shingle_width), params.num_hashes, params.seed);
  });

  const auto candidates = lsh_candidates(sigs, params.bands, params.rows);
  DisjointSet components(corpus.size());
  for (const auto& [i, j] : candidates) {
    if (estimate_jaccard(sigs[i], sigs[j]) >= threshold) components.unite(i, j);
  }

  DedupReport report;
  report.pair_count_examined = candidates.size();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const std::size_t root = components.find(i);
    if (root == i) {
      report.kept_ids.push_back(corpus[i].id);
    } else {
      report.dropped.push_back({corpus[i].id, DropReason::near_duplicate, corpus[root].id});
    }
  }
  return report;
}

DedupReport dedup_corpus(std::span<const Document> corpus, double threshold, const ApproxDedupParams& params) {
  const DedupReport exact = exact_dedup(corpus);
  const auto survivors = kept_documents(corpus, exact);
  DedupReport approx = approx_dedup(survivors, threshold, params);

  std::unordered_map<std::string, std::string> approx_canonical;
  for (const auto& d : approx.dropped) approx_canonical.emplace(d.id, d.canonical_id);

  std::unordered_map<std::string, DropRecord> by_id;
  for (auto d : exact.dropped) {
    if (auto it = approx_canonical.find(d.canonical_id); it != approx_canonical.end()) d.canonical_id = it->second;
    by_id.emplace(d.id, std::move(d));
  }
  for (const auto& d : approx.dropped) by_id.emplace(d.id, d);

  DedupReport merged;
  merged.kept_ids = approx.kept_ids;
  merged.pair_count_examined = exact.pair_count_examined + approx.pair_count_examined;
  for (const auto& doc : corpus) {
    if (auto it = by_id.find(doc.id); it != by_id.end()) merged.dropped.push_back(it->second);
  }
  return merged;
}

std::vector<Document> kept_documents(std::span<const Document> corpus, const DedupReport& report) {
  std::unordered_set<std::string_view> keep(report.kept_ids.begin(), report.kept_ids.end());
  std::vector<Document> out;
  out.reserve(report.kept_ids.size());
  for (const auto& d : corpus) {
    if (keep.contains(d.id)) out.push_back(d);
  }
  return out;
}

}  // namespace forge
