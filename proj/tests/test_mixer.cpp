#include <map>
#include <set>
#include <string>

#include <fmt/core.h>
#include <gtest/gtest.h>

#include "forge/error.hpp"
#include "forge/mixer.hpp"
#include "forge/util/rng.hpp"

using namespace forge;

namespace {

Document sized_doc(const std::string& category, std::size_t id, std::size_t tokens) {
  Document d;
  d.id = fmt::format("{}/{:05d}", category, id);
  d.category = category;
  std::string text;
  for (std::size_t i = 0; i < tokens; ++i) text += "tok ";
  d.fragments.push_back(make_fragment(d.id, 0, FragmentKind::paragraph, text));
  return d;
}

}  // namespace

TEST(PlanMixture, PublishedRecipe) {
  const auto plan = plan_mixture(30'000'000'000ULL, {{"domain", 1}, {"general", 5}}, 0);
  EXPECT_EQ(plan.allocation("domain"), 5'000'000'000ULL);
  EXPECT_EQ(plan.allocation("general"), 25'000'000'000ULL);
}

TEST(PlanMixture, SmallBudgetAndSingleCategory) {
  const auto plan = plan_mixture(6000, {{"domain", 1}, {"general", 5}}, 0);
  EXPECT_EQ(plan.allocation("domain"), 1000u);
  EXPECT_EQ(plan.allocation("general"), 5000u);
  EXPECT_EQ(plan_mixture(777, {{"only", 2.5}}, 0).allocation("only"), 777u);
}

TEST(PlanMixture, AllocationsSumToBudget) {
  Rng r(3);
  for (int t = 0; t < 200; ++t) {
    CategoryWeights w;
    for (std::size_t c = 0, n = 1 + r.below(6); c < n; ++c) w.emplace_back("c" + std::to_string(c), r.uniform() * 3);
    const std::uint64_t budget = 1 + r.below(1'000'000);
    const auto plan = plan_mixture(budget, w, 0);
    std::uint64_t sum = 0;
    for (const auto& [c, n] : plan.allocations) sum += n;
    EXPECT_EQ(sum, budget);
  }
}

TEST(PlanMixture, Errors) {
  auto code = [](auto fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  EXPECT_EQ(code([] { plan_mixture(0, {{"a", 1}}, 0); }), ErrorCode::ZeroBudget);
  EXPECT_EQ(code([] { plan_mixture(10, {{"a", 0}, {"b", 0}}, 0); }), ErrorCode::AllZeroWeights);
  EXPECT_EQ(code([] { plan_mixture(10, {{"a", -1}}, 0); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code([] { plan_mixture(10, {{"a", 1}, {"a", 2}}, 0); }), ErrorCode::InvalidArgument);
}

TEST(SampleCorpus, FixedSizeDocuments) {
  Pools pools;
  for (std::size_t i = 0; i < 50; ++i) pools["general"].push_back(sized_doc("general", i, 100));
  const auto mix = sample_corpus(pools, plan_mixture(1000, {{"general", 1}}, 4));
  EXPECT_EQ(mix.documents.size(), 10u);
  EXPECT_EQ(mix.total_tokens(), 1000u);
}

TEST(SampleCorpus, PoolMatchingBudgetIsEmittedWhole) {
  Pools pools;
  for (std::size_t i = 0; i < 7; ++i) pools["domain"].push_back(sized_doc("domain", i, 30 + i));
  std::uint64_t total = 0;
  for (const auto& d : pools["domain"]) total += d.token_count();
  const auto mix = sample_corpus(pools, plan_mixture(total, {{"domain", 1}}, 4));
  EXPECT_EQ(mix.documents.size(), 7u);
  EXPECT_EQ(mix.realized[0].realized_tokens, total);
}

TEST(SampleCorpus, DeterministicAndConserving) {
  Pools pools;
  Rng r(8);
  for (std::size_t i = 0; i < 300; ++i) pools["domain"].push_back(sized_doc("domain", i, 20 + r.below(80)));
  for (std::size_t i = 0; i < 900; ++i) pools["general"].push_back(sized_doc("general", i, 20 + r.below(80)));
  const auto plan = plan_mixture(30000, {{"domain", 1}, {"general", 5}}, 21);
  const auto a = sample_corpus(pools, plan), b = sample_corpus(pools, plan);
  EXPECT_EQ(corpus_to_jsonl(a.documents), corpus_to_jsonl(b.documents));

  std::map<std::string, std::uint64_t> recount;
  std::set<std::string> ids;
  for (const auto& d : a.documents) {
    recount[d.category] += d.token_count();
    EXPECT_TRUE(ids.insert(d.id).second);
  }
  for (const auto& c : a.realized) {
    EXPECT_EQ(recount[c.category], c.realized_tokens);
    EXPECT_GE(c.realized_tokens, c.budget);
    EXPECT_LT(c.realized_tokens, c.budget + 100);  // overshoot below one document
  }
  const auto other = sample_corpus(pools, plan_mixture(30000, {{"domain", 1}, {"general", 5}}, 22));
  EXPECT_NE(corpus_to_jsonl(other.documents), corpus_to_jsonl(a.documents));
}

TEST(SampleCorpus, ExhaustedPoolThrows) {
  Pools pools;
  pools["domain"].push_back(sized_doc("domain", 0, 10));
  try {
    sample_corpus(pools, plan_mixture(1000, {{"domain", 1}}, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::PoolExhausted);
  }
  EXPECT_THROW(sample_corpus(pools, plan_mixture(1000, {{"general", 1}}, 0)), Error);
}

TEST(CorpusStats, EmptyAndConservation) {
  const auto empty = corpus_stats({});
  EXPECT_EQ(empty.documents, 0u);
  EXPECT_EQ(empty.tokens, 0u);
  EXPECT_TRUE(empty.categories.empty());

  std::vector<Document> docs;
  for (std::size_t i = 0; i < 12; ++i) docs.push_back(sized_doc(i % 3 ? "general" : "domain_literature", i, 10 + i));
  const auto s = corpus_stats(docs);
  std::uint64_t sum = 0, expected = 0;
  for (const auto& r : s.categories) sum += r.tokens;
  for (const auto& d : docs) expected += d.token_count();
  EXPECT_EQ(sum, s.tokens);
  EXPECT_EQ(s.tokens, expected);
  EXPECT_EQ(s.categories.front().category, "domain_literature");
  EXPECT_NE(s.to_csv().find("category,documents,tokens,share"), std::string::npos);
}

TEST(CorpusStats, PlanSharesWithinRounding) {
  const auto plan = plan_mixture(60000, {{"domain", 1}, {"general", 5}}, 5);
  Pools pools;
  for (std::size_t i = 0; i < 200; ++i) pools["domain"].push_back(sized_doc("domain", i, 100));
  for (std::size_t i = 0; i < 600; ++i) pools["general"].push_back(sized_doc("general", i, 100));
  const auto mix = sample_corpus(pools, plan);
  const auto s = corpus_stats(mix.documents);
  ASSERT_EQ(s.categories.size(), 2u);
  EXPECT_NEAR(static_cast<double>(s.categories[0].tokens) / s.tokens, 1.0 / 6.0, 1e-3);
  EXPECT_NEAR(static_cast<double>(s.categories[1].tokens) / s.tokens, 5.0 / 6.0, 1e-3);
}

TEST(Splits, DefaultSizesScale) {
  const auto full = default_splits();
  ASSERT_EQ(full.size(), 4u);
  EXPECT_EQ(full[0].target_count, 30'000'000'000ULL);
  EXPECT_EQ(full[1].target_count, 800'000u);
  EXPECT_EQ(full[2].target_count, 12'000u);
  EXPECT_EQ(full[3].target_count, 7'000u);
  const auto small = default_splits(0.001);
  EXPECT_EQ(small[1].target_count, 800u);
  EXPECT_EQ(small[3].target_count, 7u);
  EXPECT_THROW(default_splits(0.0), Error);
}
