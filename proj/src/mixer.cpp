#include "forge/mixer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "forge/error.hpp"
#include "forge/util/csv.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/rng.hpp"

#include <fmt/format.h>

namespace forge {

std::uint64_t MixPlan::allocation(std::string_view category) const {
  for (const auto& [c, n] : allocations) {
    if (c == category) return n;
  }
  return 0;
}

io::json MixPlan::to_json() const {
  io::json ratio_j = io::json::object();
  for (const auto& [c, w] : ratio) ratio_j[c] = w;
  io::json alloc_j = io::json::object();
  for (const auto& [c, n] : allocations) alloc_j[c] = n;
  return io::json{{"total_budget", total_budget}, {"ratio", ratio_j}, {"allocations", alloc_j}, {"seed", seed}};
}

MixPlan plan_mixture(std::uint64_t total_budget, const CategoryWeights& ratio, std::uint64_t seed) {
  if (total_budget == 0) throw Error(ErrorCode::ZeroBudget, "total budget must be positive");
  long double sum = 0.0L;
  std::set<std::string_view> seen;
  for (const auto& [c, w] : ratio) {
    if (!std::isfinite(w) || w < 0.0) throw Error(ErrorCode::InvalidArgument, "weight of '" + c + "' is invalid");
    if (!seen.insert(c).second) throw Error(ErrorCode::InvalidArgument, "category '" + c + "' listed twice");
    sum += w;
  }
  if (!(sum > 0.0L)) throw Error(ErrorCode::AllZeroWeights, "at least one weight must be positive");

  MixPlan plan{total_budget, ratio, {}, seed};
  std::vector<long double> remainder(ratio.size());
  std::uint64_t assigned = 0;
  for (std::size_t i = 0; i < ratio.size(); ++i) {
    const long double exact = static_cast<long double>(total_budget) * ratio[i].second / sum;
    const auto floor_part = static_cast<std::uint64_t>(std::floor(exact));
    remainder[i] = exact - static_cast<long double>(floor_part);
    plan.allocations.emplace_back(ratio[i].first, floor_part);
    assigned += floor_part;
  }
  std::vector<std::size_t> order(ratio.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t k = 0; assigned < total_budget; k = (k + 1) % order.size()) {
    if (ratio[order[k]].second > 0.0) {
      ++plan.allocations[order[k]].second;
      ++assigned;
    }
  }
  return plan;
}

std::uint64_t MixResult::total_tokens() const {
  std::uint64_t n = 0;
  for (const auto& c : realized) n += c.realized_tokens;
  return n;
}

io::json MixResult::to_json() const {
  io::json cats = io::json::array();
  for (const auto& c : realized) {
    cats.push_back({{"category", c.category},
                    {"budget", c.budget},
                    {"realized_tokens", c.realized_tokens},
                    {"documents", c.documents}});
  }
  return io::json{{"total_tokens", total_tokens()}, {"documents", documents.size()}, {"categories", cats}};
}

MixResult sample_corpus(const Pools& pools, const MixPlan& plan) {
  MixResult result;
  std::vector<std::vector<const Document*>> picked;
  for (const auto& [category, budget] : plan.allocations) {
    CategoryCount count{category, budget, 0, 0};
    std::vector<const Document*> chosen;
    if (budget > 0) {
      const auto it = pools.find(category);
      if (it == pools.end() || it->second.empty()) {
        throw Error(ErrorCode::PoolExhausted, "no documents for category '" + category + "'");
      }
      std::vector<const Document*> order;
      order.reserve(it->second.size());
      for (const auto& d : it->second) order.push_back(&d);
      Rng rng(derive_seed(plan.seed, category));
      rng.shuffle(std::span(order));
      for (const Document* d : order) {
        if (count.realized_tokens >= budget) break;
        chosen.push_back(d);
        count.realized_tokens += d->token_count();
      }
      // Exact integer form of realized < 0.99 * budget.
      if (count.realized_tokens * 100 < budget * 99) {
        throw Error(ErrorCode::PoolExhausted,
                    fmt::format("category '{}' reaches {} of {} tokens", category, count.realized_tokens, budget));
      }
    }
    count.documents = chosen.size();
    result.realized.push_back(count);
    picked.push_back(std::move(chosen));
  }

  Rng rng(derive_seed(plan.seed, "interleave"));
  std::vector<std::size_t> next(picked.size(), 0);
  std::vector<double> remaining(picked.size());
  std::size_t left = 0;
  for (std::size_t c = 0; c < picked.size(); ++c) {
    remaining[c] = static_cast<double>(picked[c].size());
    left += picked[c].size();
  }
  result.documents.reserve(left);
  for (; left > 0; --left) {
    const std::size_t c = rng.categorical(remaining);
    result.documents.push_back(*picked[c][next[c]++]);
    remaining[c] -= 1.0;
  }
  return result;
}

Pools pools_by_category(std::span<const Document> corpus) {
  Pools pools;
  for (const auto& d : corpus) pools[d.category].push_back(d);
  return pools;
}

io::json CorpusStats::to_json() const {
  io::json cats = io::json::array();
  for (const auto& r : categories) {
    cats.push_back({{"category", r.category}, {"documents", r.documents}, {"tokens", r.tokens}});
  }
  return io::json{{"documents", documents}, {"tokens", tokens}, {"categories", cats}, {"fragment_kinds", fragment_kinds}};
}

std::string CorpusStats::to_csv() const {
  std::string out = csv::format_row({"category", "documents", "tokens", "share"});
  for (const auto& r : categories) {
    const double share = tokens ? static_cast<double>(r.tokens) / static_cast<double>(tokens) : 0.0;
    out += csv::format_row({r.category, std::to_string(r.documents), std::to_string(r.tokens), fmt::format("{:.6f}", share)});
  }
  return out;
}

CorpusStats corpus_stats(std::span<const Document> corpus) {
  CorpusStats stats;
  std::map<std::string, CorpusStats::Row> rows;
  for (const auto& d : corpus) {
    auto& row = rows[d.category];
    row.category = d.category;
    ++row.documents;
    for (const auto& f : d.fragments) {
      row.tokens += f.token_count();
      stats.tokens += f.token_count();
      ++stats.fragment_kinds[std::string(to_string(f.kind))];
    }
    ++stats.documents;
  }
  for (auto& [name, row] : rows) stats.categories.push_back(std::move(row));
  return stats;
}

std::string_view to_string(SplitName name) {
  switch (name) {
    case SplitName::cpt_mix:
      return "cpt_mix";
    case SplitName::sft_general:
      return "sft_general";
    case SplitName::sft_domain_cot:
      return "sft_domain_cot";
    case SplitName::rlvr:
      return "rlvr";
  }
  return "cpt_mix";
}

std::vector<SplitSpec> default_splits(double scale) {
  if (!std::isfinite(scale) || !(scale > 0.0)) throw Error(ErrorCode::InvalidArgument, "scale must be positive");
  auto scaled = [&](double base) {
    return std::max<std::uint64_t>(1, static_cast<std::uint64_t>(std::floor(base * scale + 0.5)));
  };
  return {{SplitName::cpt_mix, scaled(30e9)},
          {SplitName::sft_general, scaled(800e3)},
          {SplitName::sft_domain_cot, scaled(12e3)},
          {SplitName::rlvr, scaled(7e3)}};
}

}  // namespace forge
