#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "forge/corpus.hpp"
#include "forge/util/io.hpp"

namespace forge {

/// Category weights in declaration order. Order matters: it breaks ties in
/// largest-remainder rounding.
using CategoryWeights = std::vector<std::pair<std::string, double>>;

struct MixPlan {
  std::uint64_t total_budget = 0;
  CategoryWeights ratio;
  std::vector<std::pair<std::string, std::uint64_t>> allocations;  // same order as ratio
  std::uint64_t seed = 0;

  std::uint64_t allocation(std::string_view category) const;
  io::json to_json() const;
};

/// Proportional allocation with largest-remainder rounding, so allocations
/// sum to total_budget exactly.
/// Throws Error(ZeroBudget), Error(AllZeroWeights), or Error(InvalidArgument)
/// for negative / non-finite weights and repeated categories.
MixPlan plan_mixture(std::uint64_t total_budget, const CategoryWeights& ratio, std::uint64_t seed);

struct CategoryCount {
  std::string category;
  std::uint64_t budget = 0;
  std::uint64_t realized_tokens = 0;
  std::size_t documents = 0;
};

struct MixResult {
  std::vector<Document> documents;  // seeded interleaving
  std::vector<CategoryCount> realized;  // plan order

  std::uint64_t total_tokens() const;
  io::json to_json() const;
};

using Pools = std::map<std::string, std::vector<Document>>;

/// Per category: seeded shuffle of the pool, then documents are taken until
/// the budget is met (the last one may overshoot). Categories with a zero
/// budget contribute nothing. The output is an interleaving drawn with
/// probability proportional to each category's remaining document count.
/// Throws Error(PoolExhausted) when a pool cannot reach 99% of its budget.
MixResult sample_corpus(const Pools& pools, const MixPlan& plan);

/// Groups documents by category, preserving input order within a category.
Pools pools_by_category(std::span<const Document> corpus);

struct CorpusStats {
  struct Row {
    std::string category;
    std::size_t documents = 0;
    std::uint64_t tokens = 0;
  };
  std::vector<Row> categories;  // sorted by name
  std::map<std::string, std::size_t> fragment_kinds;
  std::size_t documents = 0;
  std::uint64_t tokens = 0;

  io::json to_json() const;
  /// category,documents,tokens,share with share in [0, 1] to six decimals.
  std::string to_csv() const;
};

CorpusStats corpus_stats(std::span<const Document> corpus);

// ---------------------------------------------------------------------------
// Post-training split sizing

enum class SplitName { cpt_mix, sft_general, sft_domain_cot, rlvr };
std::string_view to_string(SplitName name);

struct SplitSpec {
  SplitName name;
  std::uint64_t target_count;  // tokens for cpt_mix, samples otherwise
};

/// 30e9 tokens, 800K, 12K and 7K samples, each multiplied by scale and
/// rounded half-up, with a floor of 1.
/// Throws Error(InvalidArgument) unless scale is finite and positive.
std::vector<SplitSpec> default_splits(double scale = 1.0);

}  // namespace forge
