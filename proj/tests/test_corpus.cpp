#include <filesystem>
#include <numeric>

#include <gtest/gtest.h>

#include "forge/corpus.hpp"
#include "forge/error.hpp"
#include "forge/util/io.hpp"

using namespace forge;

namespace {

Document ingest(std::string_view md, std::string id = "d") {
  IngestOptions opt;
  opt.id = std::move(id);
  opt.source_path = "d.md";
  return ingest_markdown(md, opt);
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_EQ(tokenize("a b"), (std::vector<Token>{"a", "b"}));
  EXPECT_EQ(tokenize("CH4 + 2O2 -> CO2"), (std::vector<Token>{"CH4", "+", "2O2", "-", ">", "CO2"}));
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_TRUE(tokenize(" \t\n").empty());
}

TEST(Tokenize, NonAsciiLettersStayInWords) {
  EXPECT_EQ(tokenize("Zündung (ignition)"), (std::vector<Token>{"Zündung", "(", "ignition", ")"}));
}

TEST(Ingest, HeadingsAndParagraphs) {
  const auto doc = ingest("# One\n\nfirst para\ncontinues\n\n## Two\nsecond para\n");
  ASSERT_EQ(doc.fragments.size(), 4u);
  EXPECT_EQ(doc.fragments[0].kind, FragmentKind::heading);
  EXPECT_EQ(doc.fragments[1].kind, FragmentKind::paragraph);
  EXPECT_EQ(doc.fragments[1].text, "first para\ncontinues");
  EXPECT_EQ(doc.fragments[2].kind, FragmentKind::heading);
  EXPECT_EQ(doc.fragments[3].kind, FragmentKind::paragraph);
  for (std::size_t i = 0; i < doc.fragments.size(); ++i) {
    EXPECT_EQ(doc.fragments[i].index, i);
    EXPECT_EQ(doc.fragments[i].doc_id, "d");
  }
}

TEST(Ingest, EmptyInputThrows) {
  try {
    ingest("  \n\n\t\n");
    FAIL() << "expected EmptyInput";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::EmptyInput);
  }
  EXPECT_THROW(ingest(""), Error);
}

TEST(Ingest, TokenCountIsSumOfFragments) {
  const std::string md = "Flame speed is 40 cm/s.\n\nSoot forms in rich zones; NOx in lean.\n\nA third, shorter one.\n";
  const auto doc = ingest(md);
  ASSERT_EQ(doc.fragments.size(), 3u);
  std::size_t oracle = 0;
  for (const auto& para : {"Flame speed is 40 cm/s.", "Soot forms in rich zones; NOx in lean.", "A third, shorter one."}) {
    oracle += tokenize(para).size();
  }
  EXPECT_EQ(doc.token_count(), oracle);
  EXPECT_EQ(doc.all_tokens().size(), oracle);
}

TEST(Ingest, BlockKinds) {
  const auto doc = ingest("```cpp\nint x = 1;\n\nint y;\n```\n\n| a | b |\n|---|---|\n\n$$\nE = mc^2\n$$\n\nplain\n");
  ASSERT_EQ(doc.fragments.size(), 4u);
  EXPECT_EQ(doc.fragments[0].kind, FragmentKind::code_block);
  EXPECT_NE(doc.fragments[0].text.find("int y;"), std::string::npos);  // blank line inside a fence is kept
  EXPECT_EQ(doc.fragments[1].kind, FragmentKind::table);
  EXPECT_EQ(doc.fragments[2].kind, FragmentKind::equation_block);
  EXPECT_EQ(doc.fragments[3].kind, FragmentKind::paragraph);
}

TEST(Ingest, IllFormedBytesAreCounted) {
  const auto doc = ingest(std::string("bad \xC3 byte\n"));
  EXPECT_EQ(doc.replaced_sequences, 1u);
  EXPECT_NE(doc.fragments[0].text.find("\xEF\xBF\xBD"), std::string::npos);
}

TEST(Shingle, WindowCounts) {
  const std::vector<Token> five{"a", "b", "c", "d", "e"};
  EXPECT_EQ(shingle(five, 5).size(), 1u);
  std::vector<Token> n;
  for (int i = 0; i < 12; ++i) n.push_back("t" + std::to_string(i));
  EXPECT_EQ(shingle(n, 5).size(), 12u - 5u + 1u);
  const std::vector<Token> xxx{"x", "x", "x"};
  const auto s = shingle(xxx, 2);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.begin()->value, "x x");
}

TEST(Shingle, ZeroWidthThrows) {
  const std::vector<Token> t{"a"};
  EXPECT_THROW(shingle(t, 0), Error);
}

TEST(Shingle, ShortDocumentIsOneShingle) {
  const std::vector<Token> t{"a", "b"};
  const auto s = shingle(t, 5);
  ASSERT_EQ(s.size(), 1u);
  EXPECT_EQ(s.begin()->value, "a b");
}

TEST(Persistence, JsonlRoundTrip) {
  std::vector<Document> docs{ingest("# H\n\nbody text here\n", "general/x"), ingest("other\n", "domain_literature/y")};
  docs[1].category = "domain_literature";
  const auto back = corpus_from_jsonl(corpus_to_jsonl(docs));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "general/x");
  EXPECT_EQ(back[1].category, "domain_literature");
  ASSERT_EQ(back[0].fragments.size(), 2u);
  EXPECT_EQ(back[0].fragments[1].text, "body text here");
  EXPECT_EQ(back[0].fragments[1].tokens, tokenize("body text here"));
  EXPECT_EQ(corpus_to_jsonl(back), corpus_to_jsonl(docs));
}

TEST(Persistence, MalformedRecordIsParseError) {
  try {
    corpus_from_jsonl("{\"fragments\": []}\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ParseError);
  }
}

TEST(IngestDirectory, CategoriesFromFirstComponent) {
  namespace fs = std::filesystem;
  const auto dir = fs::temp_directory_path() / "forge_test_ingest_dir";
  fs::remove_all(dir);
  io::write_file(dir / "domain_literature" / "a.md", "alpha\n");
  io::write_file(dir / "general" / "b.md", "beta\n");
  io::write_file(dir / "misc" / "c.txt", "gamma\n");
  io::write_file(dir / "empty.md", "\n\n");
  io::write_file(dir / "skip.json", "{}");
  const auto docs = ingest_directory(dir, "general");
  ASSERT_EQ(docs.size(), 3u);
  EXPECT_EQ(docs[0].id, "domain_literature/a");
  EXPECT_EQ(docs[0].category, "domain_literature");
  EXPECT_EQ(docs[0].provenance, "file:domain_literature/a.md");
  EXPECT_EQ(docs[1].category, "general");
  EXPECT_EQ(docs[2].id, "misc/c");
  EXPECT_EQ(docs[2].category, "general");
  fs::remove_all(dir);
}

TEST(FragmentLookup, FindsByRef) {
  std::vector<Document> docs{ingest("one\n\ntwo\n", "b"), ingest("three\n", "a")};
  const FragmentLookup lookup(docs);
  ASSERT_NE(lookup.find({"b", 1}), nullptr);
  EXPECT_EQ(lookup.find({"b", 1})->text, "two");
  EXPECT_EQ(lookup.find({"a", 0})->text, "three");
  EXPECT_EQ(lookup.find({"a", 1}), nullptr);
  EXPECT_EQ(lookup.find({"c", 0}), nullptr);
}

TEST(Markdown, RoundTripPreservesFragments) {
  const auto doc = ingest("# Title\n\npara one\n\n```\ncode\n```\n\n| x |\n");
  const auto again = ingest(to_markdown(doc));
  ASSERT_EQ(again.fragments.size(), doc.fragments.size());
  for (std::size_t i = 0; i < doc.fragments.size(); ++i) {
    EXPECT_EQ(again.fragments[i].text, doc.fragments[i].text);
    EXPECT_EQ(again.fragments[i].kind, doc.fragments[i].kind);
  }
}
