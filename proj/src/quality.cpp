#include "forge/quality.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_set>

#include "forge/error.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/text.hpp"

namespace forge {

// ---------------------------------------------------------------------------
// Rules

std::vector<std::string> RuleConfig::default_boilerplate_patterns() {
  return {
      R"(^\s*(copyright|\(c\)|©))",
      R"(all rights reserved)",
      R"(^\s*page\s+\d+(\s+of\s+\d+)?\s*$)",
      R"(^\s*downloaded\s+from\b)",
      R"(^\s*(doi|https?)\s*:)",
      R"(terms\s+and\s+conditions)",
      R"(for\s+personal\s+use\s+only)",
      R"(^\s*(subscribe|sign\s+up)\s+(to|for)\b)",
      R"(cookie\s+(policy|settings))",
  };
}

RuleFilter::RuleFilter(RuleConfig config) : config_(std::move(config)) {
  patterns_.reserve(config_.boilerplate_patterns.size());
  for (const auto& p : config_.boilerplate_patterns) {
    try {
      patterns_.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
      throw Error(ErrorCode::InvalidArgument, "bad boilerplate pattern '" + p + "': " + e.what());
    }
  }
}

bool RuleFilter::is_boilerplate(std::string_view line) const {
  for (const auto& re : patterns_) {
    if (std::regex_search(line.begin(), line.end(), re)) return true;
  }
  return false;
}

RuleResult RuleFilter::check(std::string_view text, FragmentKind kind) const {
  RuleResult result;
  auto hard = [&](std::string_view reason) {
    result.verdict = RuleVerdict::drop;
    result.reasons = {std::string(reason)};
    return result;
  };

  const std::size_t n_tokens = tokenize(text).size();
  if (n_tokens < config_.min_tokens) return hard(rule_id::kMinLength);
  if (n_tokens > config_.max_tokens) return hard(rule_id::kMaxLength);

  const bool exempt = std::find(config_.symbol_ratio_exempt.begin(), config_.symbol_ratio_exempt.end(), kind) !=
                      config_.symbol_ratio_exempt.end();
  if (!exempt) {
    std::size_t visible = 0;
    std::size_t symbols = 0;
    for (char32_t cp : text::decode(text)) {
      if (text::is_space(cp)) continue;
      ++visible;
      if (!text::is_alnum(cp)) ++symbols;
    }
    if (visible > 0 && static_cast<double>(symbols) / static_cast<double>(visible) > config_.max_symbol_ratio) {
      return hard(rule_id::kSymbolRatio);
    }
  }

  std::size_t non_blank = 0;
  std::size_t repeats = 0;
  bool boilerplate = false;
  std::unordered_set<std::string> seen;
  for (auto line : text::split_lines(text)) {
    if (text::is_blank(line)) continue;
    ++non_blank;
    if (!seen.insert(text::normalize_whitespace(line)).second) ++repeats;
    if (is_boilerplate(line)) boilerplate = true;
  }
  if (non_blank > 0 &&
      static_cast<double>(repeats) / static_cast<double>(non_blank) > config_.max_repeated_line_ratio) {
    return hard(rule_id::kRepeatedLines);
  }
  if (repeats > 0) result.reasons.emplace_back(rule_id::kRepeatedLine);
  if (boilerplate) result.reasons.emplace_back(rule_id::kBoilerplate);
  if (!result.reasons.empty()) result.verdict = RuleVerdict::repair;
  return result;
}

std::string RuleFilter::repair(std::string_view text) const {
  std::vector<std::string> kept;
  std::unordered_set<std::string> seen;
  for (auto line : text::split_lines(text)) {
    if (text::is_blank(line) || is_boilerplate(line)) continue;
    std::string normalized = text::normalize_whitespace(line);
    if (!seen.insert(normalized).second) continue;
    kept.push_back(std::move(normalized));
  }
  return text::join(kept, "\n");
}

RuleResult rule_filter(const Fragment& fragment, const RuleConfig& rules) {
  return RuleFilter(rules).check(fragment);
}

// ---------------------------------------------------------------------------
// N-gram model

namespace {

constexpr char kSep = '\x1f';

std::string context_key(std::span<const std::string> context) {
  std::string key;
  for (std::size_t i = 0; i < context.size(); ++i) {
    if (i) key.push_back(kSep);
    key += context[i];
  }
  return key;
}

// Last `len` tokens of history, left-padded with the start symbol.
std::vector<std::string> padded_context(std::span<const Token> history, std::size_t len) {
  std::vector<std::string> ctx(len, std::string(NgramModel::kBos));
  const std::size_t take = std::min(len, history.size());
  for (std::size_t i = 0; i < take; ++i) ctx[len - take + i] = history[history.size() - take + i];
  return ctx;
}

}  // namespace

NgramCounts::NgramCounts(std::size_t order) : order_(order), tables_(order) {
  if (order == 0) throw Error(ErrorCode::InvalidArgument, "n-gram order must be >= 1");
}

void NgramCounts::add(std::span<const Token> tokens) {
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    for (std::size_t m = 0; m < order_; ++m) {
      const auto ctx = padded_context(tokens.first(t), m);
      auto& table = tables_[m][context_key(ctx)];
      ++table.total;
      ++table.next[tokens[t]];
    }
  }
  token_total_ += tokens.size();
}

void NgramCounts::merge(const NgramCounts& other) {
  if (other.order_ != order_) throw Error(ErrorCode::InvalidArgument, "cannot merge n-gram counts of different order");
  for (std::size_t m = 0; m < order_; ++m) {
    for (const auto& [key, table] : other.tables_[m]) {
      auto& mine = tables_[m][key];
      mine.total += table.total;
      for (const auto& [w, c] : table.next) mine.next[w] += c;
    }
  }
  token_total_ += other.token_total_;
}

NgramModel::NgramModel(NgramCounts counts, Smoothing smoothing)
    : counts_(std::move(counts)), smoothing_(std::move(smoothing)) {
  if (counts_.token_total_ == 0) throw Error(ErrorCode::EmptyCorpus, "no tokens to train on");
  if (smoothing_.kind == Smoothing::Kind::interpolated) {
    if (smoothing_.lambdas.size() != counts_.order()) {
      throw Error(ErrorCode::InvalidArgument, "interpolation needs one weight per order");
    }
    double sum = 0.0;
    for (double l : smoothing_.lambdas) {
      if (!(l >= 0.0)) throw Error(ErrorCode::InvalidArgument, "interpolation weights must be non-negative");
      sum += l;
    }
    if (!(sum > 0.0) || !(smoothing_.lambdas.back() > 0.0)) {
      throw Error(ErrorCode::InvalidArgument, "interpolation needs a positive unigram weight");
    }
    if (!(smoothing_.alpha > 0.0)) throw Error(ErrorCode::InvalidArgument, "unigram pseudo-count must be positive");
  }
  if (smoothing_.kind == Smoothing::Kind::laplace && !(smoothing_.alpha > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "laplace pseudo-count must be positive");
  }
  const auto& unigrams = counts_.tables_[0].at("").next;
  vocabulary_.reserve(unigrams.size() + 1);
  for (const auto& [w, c] : unigrams) vocabulary_.push_back(w);
  std::sort(vocabulary_.begin(), vocabulary_.end());
  vocabulary_.emplace_back(kUnknown);
}

NgramModel NgramModel::from_counts(NgramCounts counts, Smoothing smoothing) {
  return NgramModel(std::move(counts), std::move(smoothing));
}

NgramModel NgramModel::train(std::span<const Fragment> corpus, std::size_t order, Smoothing smoothing) {
  NgramCounts counts(order);
  for (const auto& f : corpus) counts.add(f.tokens);
  return NgramModel(std::move(counts), std::move(smoothing));
}

double NgramModel::unigram(std::string_view word) const {
  const auto& table = counts_.tables_[0].at("");
  const auto it = table.next.find(std::string(word));
  const double c = it == table.next.end() ? 0.0 : static_cast<double>(it->second);
  const double v = static_cast<double>(vocab_size());
  return (c + smoothing_.alpha) / (static_cast<double>(table.total) + smoothing_.alpha * v);
}

double NgramModel::probability(std::span<const Token> history, std::string_view word) const {
  const std::size_t n = order();
  const auto& unigram_table = counts_.tables_[0].at("");
  const bool known = unigram_table.next.contains(std::string(word));
  const std::string w = known ? std::string(word) : std::string(kUnknown);
  const double v = static_cast<double>(vocab_size());

  auto lookup = [&](std::size_t m) -> const NgramCounts::Table* {
    const auto ctx = padded_context(history, m);
    const auto it = counts_.tables_[m].find(context_key(ctx));
    return it == counts_.tables_[m].end() ? nullptr : &it->second;
  };
  auto count_of = [&](const NgramCounts::Table& t) {
    const auto it = t.next.find(w);
    return it == t.next.end() ? 0.0 : static_cast<double>(it->second);
  };

  switch (smoothing_.kind) {
    case Smoothing::Kind::none: {
      const auto* t = lookup(n - 1);
      if (!t || t->total == 0) return 0.0;
      return count_of(*t) / static_cast<double>(t->total);
    }
    case Smoothing::Kind::laplace: {
      const auto* t = lookup(n - 1);
      const double c = t ? count_of(*t) : 0.0;
      const double total = t ? static_cast<double>(t->total) : 0.0;
      return (c + smoothing_.alpha) / (total + smoothing_.alpha * v);
    }
    case Smoothing::Kind::interpolated: {
      // lambdas[0] weighs the highest order. Orders whose context was never
      // seen drop out and the remaining weights are renormalized.
      double mass = 0.0;
      double weight = 0.0;
      for (std::size_t m = n - 1; m >= 1; --m) {
        const double lambda = smoothing_.lambdas[n - 1 - m];
        const auto* t = lookup(m);
        if (t && t->total > 0 && lambda > 0.0) {
          mass += lambda * count_of(*t) / static_cast<double>(t->total);
          weight += lambda;
        }
      }
      const double lambda1 = smoothing_.lambdas[n - 1];
      mass += lambda1 * unigram(w);
      weight += lambda1;
      return mass / weight;
    }
  }
  return 0.0;
}

double perplexity(const NgramModel& model, std::span<const Token> tokens) {
  if (tokens.empty()) throw Error(ErrorCode::EmptyFragment, "perplexity of an empty token sequence");
  double log_sum = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const double p = model.probability(tokens.first(t), tokens[t]);
    if (!(p > 0.0)) {
      throw Error(ErrorCode::ZeroProbability, "token '" + tokens[t] + "' has zero probability (smoothing disabled?)");
    }
    log_sum += std::log(p);
  }
  return std::exp(-log_sum / static_cast<double>(tokens.size()));
}

namespace {

double median(std::vector<double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptyCorpus, "median of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t mid = values.size() / 2;
  return values.size() % 2 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

}  // namespace

double calibrate_ppl_max(const NgramModel& model, std::span<const Fragment> sample, double factor) {
  std::vector<double> ppl;
  for (const auto& f : sample) {
    if (!f.tokens.empty()) ppl.push_back(perplexity(model, f));
  }
  return factor * median(std::move(ppl));
}

// ---------------------------------------------------------------------------
// Lexicon

DomainLexicon::DomainLexicon(std::vector<Entry> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) throw Error(ErrorCode::InvalidLexicon, "lexicon has no terms");
  for (auto& e : entries_) {
    const auto toks = tokenize(e.term);
    if (toks.size() != 1) throw Error(ErrorCode::InvalidLexicon, "lexicon term '" + e.term + "' is not a single token");
    e.term = text::fold_case(toks.front());
    if (!(e.weight >= 0.0) || !std::isfinite(e.weight)) {
      throw Error(ErrorCode::InvalidLexicon, "lexicon term '" + e.term + "' has an invalid weight");
    }
    normalization_ += e.weight;
  }
  std::sort(entries_.begin(), entries_.end(), [](const Entry& a, const Entry& b) { return a.term < b.term; });
  for (std::size_t i = 1; i < entries_.size(); ++i) {
    if (entries_[i].term == entries_[i - 1].term) {
      throw Error(ErrorCode::InvalidLexicon, "duplicate lexicon term '" + entries_[i].term + "'");
    }
  }
  if (!(normalization_ > 0.0)) throw Error(ErrorCode::InvalidLexicon, "lexicon weights sum to zero");
}

DomainLexicon DomainLexicon::parse(std::string_view tsv) {
  std::vector<Entry> entries;
  std::size_t line_no = 0;
  for (auto line : text::split_lines(tsv)) {
    ++line_no;
    const auto trimmed = text::trim(line);
    if (trimmed.empty() || trimmed.starts_with('#')) continue;
    const auto tab = trimmed.find('\t');
    if (tab == std::string_view::npos) {
      throw Error(ErrorCode::InvalidLexicon, "line " + std::to_string(line_no) + ": expected term<TAB>weight");
    }
    Entry e;
    e.term = std::string(text::trim(trimmed.substr(0, tab)));
    const std::string weight(text::trim(trimmed.substr(tab + 1)));
    try {
      std::size_t used = 0;
      e.weight = std::stod(weight, &used);
      if (used != weight.size()) throw std::invalid_argument(weight);
    } catch (const std::exception&) {
      throw Error(ErrorCode::InvalidLexicon, "line " + std::to_string(line_no) + ": bad weight '" + weight + "'");
    }
    entries.push_back(std::move(e));
  }
  return DomainLexicon(std::move(entries));
}

DomainLexicon DomainLexicon::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

bool DomainLexicon::contains(std::string_view folded_term) const {
  const auto it = std::lower_bound(entries_.begin(), entries_.end(), folded_term,
                                   [](const Entry& e, std::string_view t) { return e.term < t; });
  return it != entries_.end() && it->term == folded_term;
}

std::vector<std::string> folded_token_set(std::span<const Token> tokens) {
  std::set<std::string> set;
  for (const auto& t : tokens) set.insert(text::fold_case(t));
  return {set.begin(), set.end()};
}

double relevance_score(const Fragment& fragment, const DomainLexicon& lexicon) {
  const auto present = folded_token_set(fragment.tokens);
  double sum = 0.0;
  for (const auto& e : lexicon.entries()) {
    if (std::binary_search(present.begin(), present.end(), e.term)) sum += e.weight;
  }
  return std::clamp(sum / lexicon.normalization(), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Gate

std::string_view to_string(QualityVerdict v) {
  switch (v) {
    case QualityVerdict::pass:
      return "pass";
    case QualityVerdict::repaired:
      return "repaired";
    case QualityVerdict::dropped:
      return "dropped";
  }
  return "pass";
}

io::json QualityReport::to_json() const {
  io::json j{{"doc_id", fragment_ref.doc_id},
             {"index", fragment_ref.index},
             {"verdict", std::string(to_string(verdict))},
             {"reasons", reasons}};
  j["perplexity"] = perplexity ? io::json(*perplexity) : io::json(nullptr);
  j["relevance"] = relevance ? io::json(*relevance) : io::json(nullptr);
  if (verdict == QualityVerdict::repaired) j["repaired_text"] = repaired_text;
  return j;
}

QualityReport quality_gate(const Fragment& fragment, std::string_view category, const NgramModel& model,
                           const DomainLexicon& lexicon, const RuleFilter& rules,
                           const QualityThresholds& thresholds) {
  QualityReport report;
  report.fragment_ref = {fragment.doc_id, fragment.index};
  auto drop = [&](std::vector<std::string> reasons) {
    report.verdict = QualityVerdict::dropped;
    report.reasons = std::move(reasons);
    return report;
  };

  const RuleResult first = rules.check(fragment);
  if (first.verdict == RuleVerdict::drop) return drop(first.reasons);

  std::string final_text = fragment.text;
  if (first.verdict == RuleVerdict::repair) {
    final_text = rules.repair(fragment.text);
    const RuleResult second = rules.check(final_text, fragment.kind);
    if (second.verdict != RuleVerdict::pass) {
      auto reasons = first.reasons;
      reasons.insert(reasons.end(), second.reasons.begin(), second.reasons.end());
      return drop(std::move(reasons));
    }
  }

  if (fragment.kind == FragmentKind::paragraph) {
    const auto final_fragment = make_fragment(fragment.doc_id, fragment.index, fragment.kind, final_text);
    report.perplexity = perplexity(model, final_fragment);
    if (*report.perplexity > thresholds.ppl_max) return drop({std::string(rule_id::kPerplexity)});
    if (is_domain_category(category)) {
      report.relevance = relevance_score(final_fragment, lexicon);
      if (*report.relevance < thresholds.rel_min) return drop({std::string(rule_id::kRelevance)});
    }
  }

  if (final_text != fragment.text) {
    report.verdict = QualityVerdict::repaired;
    report.reasons = first.reasons;
    report.repaired_text = std::move(final_text);
  }
  return report;
}

CurationResult curate_corpus(std::span<const Document> corpus, const DomainLexicon& lexicon,
                             const CurationConfig& config) {
  if (corpus.empty()) throw Error(ErrorCode::EmptyCorpus, "nothing to curate");

  std::vector<int> fold(corpus.size());
  std::array<NgramCounts, 2> counts{NgramCounts(config.order), NgramCounts(config.order)};
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    fold[i] = static_cast<int>(hash_bytes(corpus[i].id, 0xf01d) & 1U);
    for (const auto& f : corpus[i].fragments) {
      if (f.kind == FragmentKind::paragraph) counts[fold[i]].add(f.tokens);
    }
  }
  // A fold without paragraphs borrows the other fold's counts.
  const std::array<NgramModel, 2> models = [&] {
    auto make = [&](int scored_fold) {
      NgramCounts c = counts[1 - scored_fold];
      try {
        return NgramModel::from_counts(std::move(c), config.smoothing);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::EmptyCorpus) throw;
        return NgramModel::from_counts(counts[scored_fold], config.smoothing);
      }
    };
    return std::array<NgramModel, 2>{make(0), make(1)};
  }();

  std::vector<double> held_out;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    for (const auto& f : corpus[i].fragments) {
      if (f.kind == FragmentKind::paragraph && !f.tokens.empty()) held_out.push_back(perplexity(models[fold[i]], f));
    }
  }

  CurationResult result;
  result.ppl_max = held_out.empty() ? std::numeric_limits<double>::infinity() : config.ppl_factor * median(held_out);
  const RuleFilter rules(config.rules);
  const QualityThresholds thresholds{result.ppl_max, config.rel_min};

  std::vector<std::vector<QualityReport>> per_doc(corpus.size());
  parallel_for(corpus.size(), config.workers, [&](std::size_t i) {
    for (const auto& f : corpus[i].fragments) {
      per_doc[i].push_back(quality_gate(f, corpus[i].category, models[fold[i]], lexicon, rules, thresholds));
    }
  });

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    Document out = corpus[i];
    out.fragments.clear();
    for (std::size_t k = 0; k < corpus[i].fragments.size(); ++k) {
      const auto& f = corpus[i].fragments[k];
      const auto& r = per_doc[i][k];
      if (r.verdict == QualityVerdict::dropped) continue;
      out.fragments.push_back(make_fragment(out.id, out.fragments.size(), f.kind,
                                            r.verdict == QualityVerdict::repaired ? r.repaired_text : f.text));
    }
    for (auto& r : per_doc[i]) result.reports.push_back(std::move(r));
    if (!out.fragments.empty()) result.documents.push_back(std::move(out));
  }
  return result;
}

}  // namespace forge
