#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

#include <fmt/core.h>
#include <gtest/gtest.h>
#include <httplib.h>

#include "forge/error.hpp"
#include "forge/rag.hpp"
#include "forge/util/io.hpp"
#include "forge/util/rng.hpp"

using namespace forge;
namespace fs = std::filesystem;

namespace {

std::string words(std::size_t n, std::uint64_t seed, std::size_t vocab = 50000) {
  Rng r(seed);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) out += fmt::format("{}w{}", i ? " " : "", r.below(vocab));
  return out;
}

std::vector<Document> corpus(std::size_t n_docs, std::size_t per_doc, std::uint64_t seed) {
  std::vector<Document> docs;
  for (std::size_t d = 0; d < n_docs; ++d) {
    Document doc;
    doc.id = fmt::format("doc{:03d}", d);
    for (std::size_t f = 0; f < per_doc; ++f) {
      doc.fragments.push_back(make_fragment(doc.id, f, FragmentKind::paragraph, words(40, seed * 1000 + d * 10 + f)));
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

BenchItem item(std::string question) {
  BenchItem it;
  it.item_id = "q0";
  it.question = std::move(question);
  it.options = {{"A", "one"}, {"B", "two"}};
  it.answer_key = "A";
  it.subfield = "s";
  return it;
}

template <class Fn>
ErrorCode code_of(Fn fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::IoError;
}

double norm(const Embedding& e) {
  double s = 0;
  for (float v : e) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Embed, DeterministicUnitVectors) {
  FeatureHashEmbedder p(256, 3);
  const auto a = embed("Laminar flame speed of methane", p);
  EXPECT_EQ(a, embed("Laminar flame speed of methane", p));
  EXPECT_NEAR(norm(a), 1.0, 1e-6);
  EXPECT_NEAR(cosine(a, a), 1.0, 1e-6);
  EXPECT_NEAR(cosine(a, embed("LAMINAR flame SPEED of methane", p)), 1.0, 1e-6);
  EXPECT_NE(FeatureHashEmbedder(256, 3).id(), FeatureHashEmbedder(256, 4).id());
  EXPECT_NE(FeatureHashEmbedder(256, 3).id(), FeatureHashEmbedder(128, 3).id());
}

TEST(Embed, DisjointTextsNearlyOrthogonal) {
  FeatureHashEmbedder p(256);
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = embed(words(30, s, 1000), p);
    const auto b = embed(words(30, s + 5000, 1000) + " zq", p);
    EXPECT_LT(std::abs(cosine(a, b)), 0.3);
  }
}

TEST(Embed, Errors) {
  FeatureHashEmbedder p(64);
  EXPECT_EQ(code_of([&] { embed("   ", p); }), ErrorCode::EmptyText);
  const std::vector<float> a(4, 0.5f), b(5, 0.5f);
  EXPECT_EQ(code_of([&] { cosine(a, b); }), ErrorCode::DimsMismatch);
}

TEST(Index, SelfMatchRanksFirst) {
  FeatureHashEmbedder p(256);
  const auto docs = corpus(25, 4, 1);
  const auto index = build_index(docs, p);
  ASSERT_EQ(index.size(), 100u);
  for (const auto& d : docs) {
    for (const auto& f : d.fragments) {
      const auto hits = retrieve(index, p, f.text, 3);
      ASSERT_EQ(hits.size(), 3u);
      EXPECT_EQ(hits[0].ref, (FragmentRef{f.doc_id, f.index}));
      EXPECT_NEAR(hits[0].score, 1.0, 1e-6);
      EXPECT_GE(hits[0].score, hits[1].score);
      EXPECT_GE(hits[1].score, hits[2].score);
    }
  }
}

TEST(Index, PlantedOverlapRanksFirst) {
  FeatureHashEmbedder p(256);
  auto docs = corpus(25, 4, 2);
  const auto query = tokenize(words(50, 999));
  // Keep 40 of the 50 query tokens and add 10 fresh ones.
  std::string planted;
  for (std::size_t i = 0; i < 40; ++i) planted += query[i] + " ";
  planted += words(10, 31337);
  docs[13].fragments[2] = make_fragment(docs[13].id, 2, FragmentKind::paragraph, planted);
  const auto index = build_index(docs, p);
  std::string q;
  for (const auto& t : query) q += t + " ";
  const auto hits = retrieve(index, p, q, 5);
  EXPECT_EQ(hits[0].ref, (FragmentRef{"doc013", 2}));
}

TEST(Index, KLargerThanIndexAndErrors) {
  FeatureHashEmbedder p(64);
  const auto docs = corpus(2, 3, 3);
  const auto index = build_index(docs, p);
  EXPECT_EQ(retrieve(index, p, "anything", 50).size(), 6u);
  EXPECT_EQ(code_of([&] { retrieve(index, p, "anything", 0); }), ErrorCode::InvalidArgument);

  VectorIndex empty(p.id(), 64);
  const auto q = embed("x", p);
  EXPECT_EQ(code_of([&] { empty.search(q, 1); }), ErrorCode::EmptyIndex);

  VectorIndex idx(p.id(), 64);
  idx.add({"a", 0}, q);
  EXPECT_EQ(code_of([&] { idx.add({"a", 0}, q); }), ErrorCode::InvalidArgument);
  const std::vector<float> narrow(8, 0.1f);
  EXPECT_EQ(code_of([&] { idx.add({"b", 0}, narrow); }), ErrorCode::DimsMismatch);
  EXPECT_EQ(code_of([&] { idx.search(narrow, 1); }), ErrorCode::DimsMismatch);
}

TEST(Index, TiesBrokenByRef) {
  FeatureHashEmbedder p(64);
  const auto v = embed("same text", p);
  VectorIndex idx(p.id(), 64);
  idx.add({"c", 0}, v);
  idx.add({"a", 1}, v);
  idx.add({"a", 0}, v);
  const auto hits = idx.search(v, 3);
  EXPECT_EQ(hits[0].ref, (FragmentRef{"a", 0}));
  EXPECT_EQ(hits[1].ref, (FragmentRef{"a", 1}));
  EXPECT_EQ(hits[2].ref, (FragmentRef{"c", 0}));
}

TEST(Index, ProviderMismatch) {
  FeatureHashEmbedder built(128, 1), other(128, 2);
  const auto index = build_index(corpus(2, 2, 4), built);
  EXPECT_EQ(code_of([&] { retrieve(index, other, "query", 1); }), ErrorCode::ProviderMismatch);
}

TEST(Index, SaveLoadRoundTrip) {
  FeatureHashEmbedder p(96, 5);
  const auto docs = corpus(10, 3, 5);
  const auto index = build_index(docs, p);
  const auto path = fs::temp_directory_path() / "forge_test_index.bin";
  index.save(path);
  const auto back = VectorIndex::load(path);
  EXPECT_EQ(back.provider_id(), index.provider_id());
  EXPECT_EQ(back.dims(), 96u);
  EXPECT_EQ(back.refs(), index.refs());
  for (std::size_t i = 0; i < index.size(); ++i) {
    EXPECT_TRUE(std::equal(back.vector(i).begin(), back.vector(i).end(), index.vector(i).begin()));
  }
  io::write_file(path, "not an index");
  EXPECT_THROW(VectorIndex::load(path), Error);
  fs::remove(path);
}

TEST(Index, WorkersDoNotChangeVectors) {
  FeatureHashEmbedder p(128);
  const auto docs = corpus(30, 3, 6);
  const auto a = build_index(docs, p, 1), b = build_index(docs, p, 4);
  ASSERT_EQ(a.refs(), b.refs());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a.vector(i).begin(), a.vector(i).end(), b.vector(i).begin()));
  }
}

TEST(Assemble, BudgetCases) {
  std::vector<Document> docs(1);
  docs[0].id = "d";
  const std::vector<std::string> texts{words(30, 1), words(30, 2), words(30, 3)};
  for (std::size_t i = 0; i < 3; ++i) docs[0].fragments.push_back(make_fragment("d", i, FragmentKind::paragraph, texts[i]));
  const FragmentLookup lookup(docs);
  const std::vector<Hit> hits{{{"d", 0}, 0.9}, {{"d", 1}, 0.8}, {{"d", 2}, 0.7}};
  const auto it = item("Which?");
  EvalProtocol proto;

  const auto all = assemble_context(it, hits, lookup, 1000, proto);
  EXPECT_EQ(all.included.size(), 3u);
  EXPECT_FALSE(all.question_only);
  EXPECT_EQ(all.prompt, format_prompt(it, proto, texts[0] + "\n\n" + texts[1] + "\n\n" + texts[2]));

  const auto two = assemble_context(it, hits, lookup, 60, proto);
  EXPECT_EQ(two.included, (std::vector<FragmentRef>{{"d", 0}, {"d", 1}}));

  const auto none = assemble_context(it, hits, lookup, 10, proto);
  EXPECT_TRUE(none.question_only);
  EXPECT_TRUE(none.included.empty());
  EXPECT_EQ(none.prompt, format_prompt(it, proto));

  const auto zero = assemble_context(it, hits, lookup, 0, proto);
  EXPECT_EQ(zero.prompt, format_prompt(it, proto));

  const std::vector<Hit> stray{{{"missing", 0}, 1.0}};
  EXPECT_EQ(code_of([&] { assemble_context(it, stray, lookup, 100, proto); }), ErrorCode::InvalidArgument);
}

TEST(RagEval, ContextReachesTheModel) {
  FeatureHashEmbedder p(256);
  const auto docs = corpus(20, 3, 7);
  const FragmentLookup lookup(docs);
  const auto index = build_index(docs, p);
  std::vector<BenchItem> items;
  for (std::size_t i = 0; i < 10; ++i) {
    auto it = item(docs[i].fragments[1].text);
    it.item_id = fmt::format("q{}", i);
    it.source_ref = {docs[i].id, 1, "t"};
    items.push_back(it);
  }
  // Correct only when the source fragment is in the prompt's context block.
  FunctionClient oracle("oracle", [&](const GenerationRequest& req) -> std::string {
    const auto ctx_end = req.prompt.find("Question:");
    const auto idx = std::stoul(req.item_id.substr(1));
    return req.prompt.substr(0, ctx_end).find(docs[idx].fragments[1].text) != std::string::npos ? "Answer: A"
                                                                                                 : "Answer: B";
  });
  const auto with = rag_eval(items, index, p, lookup, oracle, RagConfig{3, 1024}, EvalProtocol{});
  EXPECT_EQ(with.report.n_correct, 10u);
  for (std::size_t i = 0; i < items.size(); ++i) {
    ASSERT_FALSE(with.records[i].context_refs.empty());
    EXPECT_EQ(with.records[i].context_refs[0], (FragmentRef{docs[i].id, 1}));
  }
  const auto without = rag_eval(items, index, p, lookup, oracle, RagConfig{3, 0}, EvalProtocol{});
  EXPECT_EQ(without.report.n_correct, 0u);
  for (const auto& r : without.records) EXPECT_TRUE(r.question_only);
  EXPECT_NE(with.report.config_digest, without.report.config_digest);
}

TEST(HttpEmbedder, LocalServer) {
  httplib::Server server;
  std::atomic<int> calls{0};
  server.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    const auto body = io::json::parse(req.body);
    io::json vectors = io::json::array();
    for (const auto& t : body.at("texts")) {
      const auto s = t.get<std::string>();
      vectors.push_back(std::vector<double>{static_cast<double>(s.size()), 3.0, 4.0});
    }
    res.set_content(io::json{{"vectors", vectors}}.dump(), "application/json");
  });
  server.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = fmt::format("http://127.0.0.1:{}", port);
  HttpEmbedder ok(base + "/embed", "remote-v1", 3);
  const auto e = embed("abc", ok);  // (3, 3, 4) normalized
  EXPECT_NEAR(e[0], 3.0 / std::sqrt(34.0), 1e-6);
  EXPECT_NEAR(norm(e), 1.0, 1e-6);
  EXPECT_EQ(ok.id(), "remote-v1");

  HttpEmbedder wrong_dims(base + "/embed", "remote-v1", 4);
  EXPECT_EQ(code_of([&] { embed("abc", wrong_dims); }), ErrorCode::DimsMismatch);
  HttpEmbedder broken(base + "/broken", "remote-v1", 3);
  EXPECT_EQ(code_of([&] { embed("abc", broken); }), ErrorCode::ProviderUnavailable);
  EXPECT_EQ(calls.load(), 2);

  server.stop();
  t.join();
  EXPECT_EQ(code_of([&] { embed("abc", ok); }), ErrorCode::ProviderUnavailable);
}

TEST(HttpModelClient, LocalServer) {
  httplib::Server server;
  std::string seen_auth;
  io::json seen_body;
  server.Post("/gen", [&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = io::json::parse(req.body);
    res.set_content(R"({"text": "Answer: C"})", "application/json");
  });
  server.Post("/garbled", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("{oops", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread t([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  const std::string base = fmt::format("http://127.0.0.1:{}", port);

  HttpModelClient client(base + "/gen", "tiny", "k123");
  GenerationRequest req{"", "prompt text", 8, 0.0, 42, "q1"};
  EXPECT_EQ(client.generate(req).text, "Answer: C");
  EXPECT_EQ(seen_auth, "Bearer k123");
  EXPECT_EQ(seen_body["model"], "tiny");
  EXPECT_EQ(seen_body["seed"], 42);
  EXPECT_FALSE(seen_body.contains("item_id"));

  HttpModelClient garbled(base + "/garbled", "tiny");
  EXPECT_EQ(code_of([&] { garbled.generate(req); }), ErrorCode::TransportFailure);
  server.stop();
  t.join();
  EXPECT_EQ(code_of([&] { client.generate(req); }), ErrorCode::TransportFailure);
}
