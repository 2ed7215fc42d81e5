#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "forge/bench_item.hpp"
#include "forge/client.hpp"
#include "forge/corpus.hpp"
#include "forge/eval.hpp"

namespace forge {

using Embedding = std::vector<float>;

/// Maps texts to unit vectors. Implementations must be thread-safe.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string id() const = 0;
  virtual std::size_t dims() const = 0;
  virtual std::vector<Embedding> embed_batch(std::span<const std::string> texts) = 0;
};

/// Each case-folded token adds +1 or -1 to one of `dims` buckets, both picked
/// by a seeded hash of the token; the sum is L2-normalized.
class FeatureHashEmbedder : public EmbeddingProvider {
 public:
  explicit FeatureHashEmbedder(std::size_t dims = 256, std::uint64_t seed = 0);
  std::string id() const override;
  std::size_t dims() const override { return dims_; }
  std::vector<Embedding> embed_batch(std::span<const std::string> texts) override;

 private:
  std::size_t dims_;
  std::uint64_t seed_;
};

/// POST {"texts": [...]} -> {"vectors": [[...], ...]}; results are
/// re-normalized. Failures surface as Error(ProviderUnavailable).
class HttpEmbedder : public EmbeddingProvider {
 public:
  HttpEmbedder(std::string url, std::string provider_id, std::size_t dims,
               std::chrono::milliseconds timeout = std::chrono::seconds(60));
  std::string id() const override { return provider_id_; }
  std::size_t dims() const override { return dims_; }
  std::vector<Embedding> embed_batch(std::span<const std::string> texts) override;

 private:
  std::string scheme_host_;
  std::string path_;
  std::string provider_id_;
  std::size_t dims_;
  std::chrono::milliseconds timeout_;
};

/// Throws Error(EmptyText) when text has no tokens.
Embedding embed(std::string_view text, EmbeddingProvider& provider);

/// Dot product accumulated in double.
double cosine(std::span<const float> a, std::span<const float> b);

struct Hit {
  FragmentRef ref;
  double score = 0.0;
};

/// Flat exact-scan cosine index over unit vectors, stored row-major.
class VectorIndex {
 public:
  VectorIndex(std::string provider_id, std::size_t dims);

  /// Throws Error(DimsMismatch) on a vector of the wrong width and
  /// Error(InvalidArgument) on a repeated ref.
  void add(FragmentRef ref, std::span<const float> vector);

  const std::string& provider_id() const { return provider_id_; }
  std::size_t dims() const { return dims_; }
  std::size_t size() const { return refs_.size(); }
  const std::vector<FragmentRef>& refs() const { return refs_; }
  std::span<const float> vector(std::size_t i) const { return {data_.data() + i * dims_, dims_}; }

  /// Top-k by score descending, ties by ref; scores clamped to [-1, 1].
  /// Throws Error(EmptyIndex), Error(DimsMismatch), Error(InvalidArgument)
  /// for k == 0.
  std::vector<Hit> search(std::span<const float> query, std::size_t k) const;

  /// JSON header line {provider_id, dims, count, refs} then count * dims
  /// little-endian float32 values.
  void save(const std::filesystem::path& path) const;
  static VectorIndex load(const std::filesystem::path& path);

 private:
  std::string provider_id_;
  std::size_t dims_;
  std::vector<FragmentRef> refs_;
  std::set<FragmentRef> ref_set_;
  std::vector<float> data_;
};

/// One entry per fragment in corpus order.
VectorIndex build_index(std::span<const Document> corpus, EmbeddingProvider& provider, unsigned workers = 1);

/// Throws Error(ProviderMismatch) when the provider differs from the one the
/// index was built with.
std::vector<Hit> retrieve(const VectorIndex& index, EmbeddingProvider& provider, std::string_view query,
                          std::size_t k);

struct AssembledPrompt {
  std::string prompt;
  std::vector<FragmentRef> included;
  bool question_only = false;
};

/// Packs whole fragments in hit order while the running token count stays
/// within token_budget, stopping at the first one that does not fit.
AssembledPrompt assemble_context(const BenchItem& item, std::span<const Hit> hits, const FragmentLookup& lookup,
                                 std::size_t token_budget, const EvalProtocol& protocol);

struct RagConfig {
  std::size_t k = 5;
  std::size_t token_budget = 1024;
};

struct RagResult {
  std::vector<EvalRecord> records;
  RunReport report;
};

/// Query text is the item's question.
RagResult rag_eval(std::span<const BenchItem> items, const VectorIndex& index, EmbeddingProvider& provider,
                   const FragmentLookup& lookup, ModelClient& client, const RagConfig& config,
                   const EvalProtocol& protocol);

}  // namespace forge
