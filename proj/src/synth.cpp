#include "forge/synth.hpp"

#include <algorithm>
#include <cctype>
#include <set>

#include <fmt/format.h>

#include "forge/error.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/rng.hpp"
#include "forge/util/text.hpp"

namespace forge {

io::json SynthConfig::to_json() const {
  return io::json{{"seed", seed},
                  {"domain_docs", domain_docs},
                  {"general_docs", general_docs},
                  {"min_paragraphs", min_paragraphs},
                  {"max_paragraphs", max_paragraphs},
                  {"general_vocab", general_vocab},
                  {"near_duplicate_pairs", near_duplicate_pairs},
                  {"decoy_pairs", decoy_pairs},
                  {"exact_copies", exact_copies},
                  {"gibberish_paragraphs", gibberish_paragraphs},
                  {"boilerplate_paragraphs", boilerplate_paragraphs}};
}

io::json SynthCorpus::planted_json() const {
  auto pairs = [](const std::vector<std::pair<std::string, std::string>>& ps) {
    io::json arr = io::json::array();
    for (const auto& [a, b] : ps) arr.push_back({a, b});
    return arr;
  };
  auto refs = [](const std::vector<FragmentRef>& rs) {
    io::json arr = io::json::array();
    for (const auto& r : rs) arr.push_back({r.doc_id, r.index});
    return arr;
  };
  return io::json{{"near_duplicates", pairs(near_duplicates)},
                  {"decoys", pairs(decoys)},
                  {"exact_copies", pairs(exact_copies)},
                  {"gibberish", refs(gibberish)},
                  {"boilerplate", refs(boilerplate)}};
}

double exact_jaccard(const Document& a, const Document& b, std::size_t width) {
  const auto ta = a.all_tokens();
  const auto tb = b.all_tokens();
  const auto sa = shingle(ta, width);
  const auto sb = shingle(tb, width);
  if (sa.empty() && sb.empty()) return 1.0;
  std::size_t common = 0;
  for (const auto& s : sa) common += sb.count(s);
  return static_cast<double>(common) / static_cast<double>(sa.size() + sb.size() - common);
}

namespace {

constexpr std::string_view kConsonants = "bcdfghjklmnprstvz";
constexpr std::string_view kVowels = "aeiou";
constexpr std::string_view kBoilerplateLine = "Copyright 2019 Synthetic Press. All rights reserved.";

using Sentence = std::vector<std::string>;

struct Draft {
  std::string id;
  std::string category;
  std::vector<std::string> title;
  std::vector<std::vector<Sentence>> paragraphs;
  std::vector<std::string> raw;  // overrides for individual paragraphs; empty = render
};

class Words {
 public:
  Words(std::size_t n, const std::set<std::string>& reserved, Rng& rng) {
    std::set<std::string> seen(reserved);
    while (words_.size() < n) {
      std::string w;
      const std::size_t syllables = 1 + rng.below(3);
      for (std::size_t s = 0; s < syllables; ++s) {
        w.push_back(kConsonants[rng.below(kConsonants.size())]);
        w.push_back(kVowels[rng.below(kVowels.size())]);
        if (rng.below(3) == 0) w.push_back(kConsonants[rng.below(kConsonants.size())]);
      }
      if (seen.insert(w).second) words_.push_back(std::move(w));
    }
    // Zipf-like frequencies over the generation order.
    double total = 0.0;
    for (std::size_t r = 0; r < words_.size(); ++r) {
      total += 1.0 / static_cast<double>(r + 1);
      cumulative_.push_back(total);
    }
  }

  const std::string& draw(Rng& rng) const {
    const double u = rng.uniform() * cumulative_.back();
    const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
    return words_[std::min<std::size_t>(static_cast<std::size_t>(it - cumulative_.begin()), words_.size() - 1)];
  }

 private:
  std::vector<std::string> words_;
  std::vector<double> cumulative_;
};

std::string capitalized(std::string w) {
  if (!w.empty()) w[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(w[0])));
  return w;
}

std::string render_sentence(const Sentence& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out.push_back(' ');
    out += i == 0 ? capitalized(s[i]) : s[i];
  }
  return out + ".";
}

std::string render(const Draft& d) {
  std::string md = "# ";
  for (std::size_t i = 0; i < d.title.size(); ++i) md += (i ? " " : "") + capitalized(d.title[i]);
  md += "\n";
  for (std::size_t p = 0; p < d.paragraphs.size(); ++p) {
    md += "\n";
    if (!d.raw[p].empty()) {
      md += d.raw[p];
    } else {
      std::vector<std::string> parts;
      for (const auto& s : d.paragraphs[p]) parts.push_back(render_sentence(s));
      md += text::join(parts, " ");
    }
    md += "\n";
  }
  return md;
}

Document materialize(const Draft& d) {
  IngestOptions opt;
  opt.id = d.id;
  opt.source_path = d.id + ".md";
  opt.category = d.category;
  opt.provenance = "file:" + opt.source_path;
  return ingest_markdown(render(d), opt);
}

class Builder {
 public:
  Builder(const SynthConfig& config, const Taxonomy& taxonomy)
      : config_(config), rng_(config.seed), words_(config.general_vocab, reserved(taxonomy), rng_) {
    for (const auto& sf : taxonomy.subfields) {
      if (!sf.terms.empty()) groups_.push_back(sf.terms);
    }
    for (const auto& g : groups_) all_terms_.insert(all_terms_.end(), g.begin(), g.end());
    std::sort(all_terms_.begin(), all_terms_.end());
    all_terms_.erase(std::unique(all_terms_.begin(), all_terms_.end()), all_terms_.end());
    if (all_terms_.size() < 3) throw Error(ErrorCode::InvalidArgument, "taxonomy needs at least 3 distinct terms");
    if (config.min_paragraphs == 0 || config.max_paragraphs < config.min_paragraphs) {
      throw Error(ErrorCode::InvalidArgument, "paragraph bounds must satisfy 1 <= min <= max");
    }
  }

  Sentence sentence(Rng& rng) {
    Sentence s;
    const std::size_t n = 8 + rng.below(9);
    for (std::size_t i = 0; i < n; ++i) s.push_back(words_.draw(rng));
    if (rng.below(4) == 0) s[1 + rng.below(n - 1)] = std::to_string(10 + rng.below(2990));
    return s;
  }

  std::vector<Sentence> paragraph(Rng& rng, const std::vector<std::string>* terms) {
    const std::size_t n = 3 + rng.below(3);
    std::vector<Sentence> p;
    for (std::size_t i = 0; i < n; ++i) p.push_back(sentence(rng));
    if (!terms) return p;
    std::set<std::string> used;
    while (used.size() < 3) {
      used.clear();
      for (auto& s : p) {
        const auto& pool = rng.below(5) == 0 ? all_terms_ : *terms;
        const auto& t = pool[rng.below(pool.size())];
        s[1 + rng.below(s.size() - 1)] = t;
        used.insert(t);
      }
      if (used.size() < 3) {
        for (auto& s : p) s = sentence(rng);
      }
    }
    return p;
  }

  Draft document(std::string id, std::string category, const std::vector<std::string>* terms, Rng& rng) {
    Draft d{std::move(id), std::move(category), {}, {}, {}};
    const std::size_t title_len = 2 + rng.below(3);
    for (std::size_t i = 0; i < title_len; ++i) d.title.push_back(words_.draw(rng));
    if (terms) d.title.push_back((*terms)[rng.below(terms->size())]);
    const std::size_t n = config_.min_paragraphs + rng.below(config_.max_paragraphs - config_.min_paragraphs + 1);
    for (std::size_t i = 0; i < n; ++i) d.paragraphs.push_back(paragraph(rng, terms));
    d.raw.assign(n, "");
    return d;
  }

  std::string gibberish(Rng& rng) {
    std::vector<std::string> tokens;
    const std::size_t n = 40 + rng.below(41);
    for (std::size_t i = 0; i < n; ++i) {
      std::string w;
      const std::size_t len = 4 + rng.below(6);
      for (std::size_t c = 0; c < len; ++c) w.push_back(static_cast<char>('a' + rng.below(26)));
      tokens.push_back(std::move(w));
    }
    return text::join(tokens, " ");
  }

  SynthCorpus build() {
    std::vector<Draft> drafts;
    std::vector<const std::vector<std::string>*> topic;
    for (std::size_t i = 0; i < config_.domain_docs; ++i) {
      const auto* terms = &groups_[i % groups_.size()];
      const std::string cat(i % 3 == 0 ? category::kDomainEncyclopedia : category::kDomainLiterature);
      Rng rng(derive_seed(config_.seed, fmt::format("doc/d{:05d}", i)));
      drafts.push_back(document(fmt::format("{}/d{:05d}", cat, i), cat, terms, rng));
      topic.push_back(terms);
    }
    for (std::size_t i = 0; i < config_.general_docs; ++i) {
      const std::string cat(category::kGeneral);
      Rng rng(derive_seed(config_.seed, fmt::format("doc/g{:05d}", i)));
      drafts.push_back(document(fmt::format("{}/g{:05d}", cat, i), cat, nullptr, rng));
      topic.push_back(nullptr);
    }

    std::vector<Document> docs;
    for (const auto& d : drafts) docs.push_back(materialize(d));

    // Each base document takes part in at most one plant.
    std::vector<std::size_t> order(drafts.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng plant_rng(derive_seed(config_.seed, "plant"));
    plant_rng.shuffle(std::span(order));
    std::size_t cursor = 0;
    auto next_base = [&](std::size_t min_tokens) -> std::size_t {
      while (cursor < order.size()) {
        const std::size_t i = order[cursor++];
        if (docs[i].token_count() >= min_tokens) return i;
      }
      throw Error(ErrorCode::InvalidArgument, "not enough documents for the requested plants");
    };

    SynthCorpus out;
    std::vector<Draft> extra;
    std::vector<std::size_t> modified;

    while (out.near_duplicates.size() < config_.near_duplicate_pairs) {
      const std::size_t i = next_base(150);
      Draft copy = drafts[i];
      copy.id += "_nd";
      for (std::size_t edit = 0; edit < 2; ++edit) {
        auto& para = copy.paragraphs[plant_rng.below(copy.paragraphs.size())];
        auto& s = para[plant_rng.below(para.size())];
        s[1 + plant_rng.below(s.size() - 1)] = words_.draw(plant_rng);
      }
      const Document doc = materialize(copy);
      if (exact_jaccard(docs[i], doc) < 0.85) continue;
      out.near_duplicates.emplace_back(drafts[i].id, copy.id);
      extra.push_back(std::move(copy));
    }
    while (out.decoys.size() < config_.decoy_pairs) {
      const std::size_t i = next_base(150);
      Draft copy = drafts[i];
      copy.id += "_dc";
      Rng rng(derive_seed(config_.seed, "decoy/" + copy.id));
      for (std::size_t p = copy.paragraphs.size() / 2; p < copy.paragraphs.size(); ++p) {
        copy.paragraphs[p] = paragraph(rng, topic[i]);
      }
      const Document doc = materialize(copy);
      const double j = exact_jaccard(docs[i], doc);
      if (j > 0.5 || j < 0.2) continue;
      out.decoys.emplace_back(drafts[i].id, copy.id);
      extra.push_back(std::move(copy));
    }
    while (out.exact_copies.size() < config_.exact_copies) {
      const std::size_t i = next_base(0);
      Draft copy = drafts[i];
      copy.id += "_cp";
      out.exact_copies.emplace_back(drafts[i].id, copy.id);
      extra.push_back(std::move(copy));
    }
    for (std::size_t g = 0; g < config_.gibberish_paragraphs; ++g) {
      const std::size_t i = next_base(0);
      const std::size_t p = plant_rng.below(drafts[i].paragraphs.size());
      drafts[i].raw[p] = gibberish(plant_rng);
      out.gibberish.push_back({drafts[i].id, p + 1});  // fragment 0 is the heading
    }
    for (std::size_t b = 0; b < config_.boilerplate_paragraphs; ++b) {
      const std::size_t i = next_base(0);
      const std::size_t p = plant_rng.below(drafts[i].paragraphs.size());
      std::vector<std::string> parts;
      for (const auto& s : drafts[i].paragraphs[p]) parts.push_back(render_sentence(s));
      drafts[i].raw[p] = text::join(parts, " ") + "\n" + std::string(kBoilerplateLine);
      out.boilerplate.push_back({drafts[i].id, p + 1});
    }

    for (auto& d : extra) drafts.push_back(std::move(d));
    for (const auto& d : drafts) out.documents.push_back(materialize(d));
    std::sort(out.documents.begin(), out.documents.end(),
              [](const Document& a, const Document& b) { return a.id < b.id; });
    return out;
  }

 private:
  static std::set<std::string> reserved(const Taxonomy& taxonomy) {
    std::set<std::string> r;
    for (const auto& sf : taxonomy.subfields) r.insert(sf.terms.begin(), sf.terms.end());
    return r;
  }

  const SynthConfig& config_;
  Rng rng_;
  Words words_;
  std::vector<std::vector<std::string>> groups_;
  std::vector<std::string> all_terms_;
};

}  // namespace

SynthCorpus synthesize_corpus(const SynthConfig& config, const Taxonomy& taxonomy) {
  if (config.general_vocab < 10) throw Error(ErrorCode::InvalidArgument, "general_vocab must be at least 10");
  return Builder(config, taxonomy).build();
}

void write_markdown_tree(const std::filesystem::path& dir, const SynthCorpus& corpus) {
  for (const auto& d : corpus.documents) io::write_file(dir / (d.id + ".md"), to_markdown(d));
  io::write_file(dir / "planted.json", corpus.planted_json().dump(2) + "\n");
}

}  // namespace forge
