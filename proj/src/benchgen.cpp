#include "forge/benchgen.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include <fmt/format.h>

#include "forge/error.hpp"
#include "forge/util/csv.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/rng.hpp"
#include "forge/util/text.hpp"

namespace forge {

namespace {

bool all_digits(const Token& t) {
  const auto cps = text::decode(t);
  return !cps.empty() && std::all_of(cps.begin(), cps.end(), [](char32_t c) { return text::is_digit(c); });
}

std::size_t utf8_length(char32_t cp) {
  if (cp < 0x80) return 1;
  if (cp < 0x800) return 2;
  if (cp < 0x10000) return 3;
  return 4;
}

struct Span {
  std::size_t begin;
  std::size_t end;
  bool word;
};

// Byte spans of the tokens produced by tokenize() on valid UTF-8.
std::vector<Span> token_spans(std::string_view s) {
  std::vector<Span> out;
  std::size_t pos = 0;
  std::optional<std::size_t> run;
  for (char32_t cp : text::decode(s)) {
    const std::size_t len = utf8_length(cp);
    if (text::is_alnum(cp)) {
      if (!run) run = pos;
    } else {
      if (run) out.push_back({*run, pos, true});
      run.reset();
      if (!text::is_space(cp)) out.push_back({pos, pos + len, false});
    }
    pos += len;
  }
  if (run) out.push_back({*run, pos, true});
  return out;
}

std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  for (auto line : text::split_lines(s)) {
    std::size_t start = 0;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if ((c == '.' || c == '!' || c == '?') && (i + 1 == line.size() || line[i + 1] == ' ' || line[i + 1] == '\t')) {
        const auto sentence = text::trim(line.substr(start, i + 1 - start));
        if (!sentence.empty()) out.emplace_back(sentence);
        start = i + 1;
      }
    }
    const auto rest = text::trim(line.substr(std::min(start, line.size())));
    if (!rest.empty()) out.emplace_back(rest);
  }
  return out;
}

std::string squash(std::string_view s) { return text::fold_case(text::normalize_whitespace(s)); }

std::string replace_all(std::string s, std::string_view from, std::string_view to) {
  for (std::size_t pos = s.find(from); pos != std::string::npos; pos = s.find(from, pos + to.size())) {
    s.replace(pos, from.size(), to);
  }
  return s;
}

}  // namespace

double density_score(const Fragment& fragment, const DomainLexicon& lexicon, const DensityWeights& weights) {
  const double bonus =
      (fragment.kind == FragmentKind::equation_block || fragment.kind == FragmentKind::code_block) ? 1.0 : 0.0;
  const std::size_t n = fragment.tokens.size();
  if (n == 0) return weights.kind * bonus;
  std::set<std::string> terms;
  std::size_t numeric = 0;
  for (const auto& t : fragment.tokens) {
    const auto folded = text::fold_case(t);
    if (lexicon.contains(folded)) terms.insert(folded);
    if (all_digits(t)) ++numeric;
  }
  const double per100 = 100.0 / static_cast<double>(n);
  return weights.terms * static_cast<double>(terms.size()) * per100 +
         weights.numeric * static_cast<double>(numeric) * per100 + weights.kind * bonus;
}

// ---------------------------------------------------------------------------
// Generators

TemplateGenerator::TemplateGenerator(const DomainLexicon& lexicon) : lexicon_(lexicon) {}

std::string TemplateGenerator::generate(const Fragment& fragment, std::string_view, std::uint64_t seed) {
  if (lexicon_.size() < 4) {
    throw Error(ErrorCode::InsufficientDistractors, "the lexicon needs at least 4 terms for 4 options");
  }
  for (const auto& sentence : split_sentences(fragment.text)) {
    const auto spans = token_spans(sentence);
    std::optional<std::string> term;
    for (const auto& sp : spans) {
      if (!sp.word) continue;
      const auto folded = text::fold_case(std::string_view(sentence).substr(sp.begin, sp.end - sp.begin));
      if (lexicon_.contains(folded)) {
        term = folded;
        break;
      }
    }
    if (!term) continue;

    std::string masked;
    std::size_t copied = 0;
    for (const auto& sp : spans) {
      if (!sp.word) continue;
      if (text::fold_case(std::string_view(sentence).substr(sp.begin, sp.end - sp.begin)) != *term) continue;
      masked.append(sentence, copied, sp.begin - copied);
      masked += kBlank;
      copied = sp.end;
    }
    masked.append(sentence, copied);

    std::vector<std::string> pool;
    for (const auto& e : lexicon_.entries()) {
      if (e.term != *term) pool.push_back(e.term);
    }
    Rng rng(seed);
    rng.shuffle(std::span(pool));
    std::vector<std::string> options{*term, pool[0], pool[1], pool[2]};
    rng.shuffle(std::span(options));
    const auto answer = static_cast<std::size_t>(std::find(options.begin(), options.end(), *term) - options.begin());

    return io::json{{"question", std::string(kClozePrefix) + masked},
                    {"options", options},
                    {"answer", option_label(answer)},
                    {"rationale", "The passage uses \"" + *term + "\" in this sentence."}}
        .dump();
  }
  throw Error(ErrorCode::NoAnchorTerm, "no sentence of " + to_string(FragmentRef{fragment.doc_id, fragment.index}) +
                                           " contains a lexicon term");
}

ModelGenerator::ModelGenerator(ModelClient& client, EvalProtocol protocol)
    : client_(client), protocol_(std::move(protocol)) {}

std::string ModelGenerator::generate(const Fragment& fragment, std::string_view instruction, std::uint64_t seed) {
  GenerationRequest req{protocol_.model, std::string(instruction) + "\n\nPassage:\n" + fragment.text, 512,
                        protocol_.temperature, seed, to_string(FragmentRef{fragment.doc_id, fragment.index})};
  return client_.generate(req).text;
}

std::uint64_t fragment_seed(std::uint64_t seed, const FragmentRef& ref) {
  return derive_seed(derive_seed(seed, ref.doc_id), static_cast<std::uint64_t>(ref.index));
}

BenchItem draft_item(const Fragment& fragment, ItemGenerator& generator, std::string item_id, std::string provenance,
                     std::uint64_t seed, std::string_view instruction) {
  const std::string raw = generator.generate(fragment, instruction, seed);
  BenchItem item;
  item.item_id = std::move(item_id);
  item.source_ref = {fragment.doc_id, fragment.index, std::move(provenance)};
  try {
    const auto j = io::json::parse(raw);
    item.question = j.at("question").get<std::string>();
    const auto& opts = j.at("options");
    if (!opts.is_array()) throw Error(ErrorCode::GeneratorParseError, "options is not a list");
    for (std::size_t i = 0; i < opts.size(); ++i) item.options.push_back({option_label(i), opts[i].get<std::string>()});
    item.answer_key = j.at("answer").get<std::string>();
    if (j.contains("rationale") && !j["rationale"].is_null()) item.rationale = j["rationale"].get<std::string>();
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::GeneratorParseError, generator.name() + " draft: " + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::GeneratorParseError) throw;
    throw Error(ErrorCode::GeneratorParseError, generator.name() + " draft: " + e.what());
  }
  return item;
}

// ---------------------------------------------------------------------------
// Validation

std::optional<std::string> RuleVerifier::select(const BenchItem& item, const Fragment& source) {
  if (!item.question.starts_with(kClozePrefix)) return std::nullopt;
  const std::string masked = item.question.substr(kClozePrefix.size());
  if (masked.find(kBlank) == std::string::npos) return std::nullopt;
  const std::string hay = squash(source.text);
  std::optional<std::string> chosen;
  for (const auto& o : item.options) {
    if (hay.find(squash(replace_all(masked, kBlank, o.text))) == std::string::npos) continue;
    if (chosen) return std::nullopt;
    chosen = o.label;
  }
  return chosen;
}

ModelVerifier::ModelVerifier(ModelClient& client, EvalProtocol protocol)
    : client_(client), protocol_(std::move(protocol)) {}

std::optional<std::string> ModelVerifier::select(const BenchItem& item, const Fragment& source) {
  GenerationRequest req{protocol_.model, format_prompt(item, protocol_, source.text), protocol_.max_tokens,
                        protocol_.temperature, derive_seed(protocol_.seed, item.item_id), item.item_id};
  const auto labels = item.labels();
  const auto texts = item.option_texts();
  return extract_choice(client_.generate(req).text, labels, texts);
}

BenchItem validate_item(BenchItem item, ItemVerifier& verifier, const FragmentLookup& lookup) {
  if (item.status != ItemStatus::draft) return item;
  auto problems = structural_problems(item, &lookup);
  if (!problems.empty()) {
    item.status = ItemStatus::rejected;
    for (auto& p : problems) item.reject_reasons.push_back("structural: " + p);
    return item;
  }
  const auto choice = verifier.select(item, *lookup.find(item.source_ref.fragment()));
  if (!choice) {
    item.status = ItemStatus::rejected;
    item.reject_reasons.emplace_back("verifier: no unique option");
  } else if (*choice != item.answer_key) {
    item.status = ItemStatus::rejected;
    item.reject_reasons.push_back("verifier: chose " + *choice + ", key is " + item.answer_key);
  } else {
    item.status = ItemStatus::validated;
  }
  return item;
}

DifficultyResult difficulty_filter(std::span<const BenchItem> items, ModelClient& probe, std::size_t queries,
                                   std::uint64_t seed, const EvalProtocol& protocol) {
  if (queries == 0) throw Error(ErrorCode::InvalidArgument, "difficulty filter needs at least one query");
  std::vector<char> too_easy(items.size(), 0);
  parallel_for(items.size(), std::max(1u, protocol.in_flight), [&](std::size_t i) {
    const auto& item = items[i];
    const auto labels = item.labels();
    const auto texts = item.option_texts();
    const std::string prompt = format_prompt(item, protocol);
    const std::uint64_t item_seed = derive_seed(seed, item.item_id);
    bool always = true;
    for (std::size_t q = 0; q < queries && always; ++q) {
      GenerationRequest req{protocol.model, prompt, protocol.max_tokens, protocol.temperature,
                            derive_seed(item_seed, q), item.item_id};
      std::string reply;
      try {
        reply = probe.generate(req).text;
      } catch (const Error& e) {
        if (e.code() != ErrorCode::TransportFailure) throw;
        throw Error(ErrorCode::ProbeUnavailable, e.what());
      }
      const auto choice = extract_choice(reply, labels, texts);
      always = choice && *choice == item.answer_key;
    }
    too_easy[i] = always;
  });
  DifficultyResult result;
  for (std::size_t i = 0; i < items.size(); ++i) (too_easy[i] ? result.removed : result.retained).push_back(items[i]);
  return result;
}

// ---------------------------------------------------------------------------
// Finalization

Taxonomy Taxonomy::parse(std::string_view json) {
  Taxonomy t;
  try {
    const auto j = io::json::parse(json);
    std::set<std::string> names;
    for (const auto& s : j.at("subfields")) {
      Subfield sf;
      sf.name = s.at("name").get<std::string>();
      if (sf.name.empty() || !names.insert(sf.name).second) {
        throw Error(ErrorCode::InvalidArgument, "subfield names must be unique and non-empty");
      }
      for (const auto& term : s.at("terms")) sf.terms.push_back(text::fold_case(term.get<std::string>()));
      t.subfields.push_back(std::move(sf));
    }
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("taxonomy: ") + e.what());
  }
  if (t.subfields.empty()) throw Error(ErrorCode::InvalidArgument, "taxonomy has no subfields");
  return t;
}

Taxonomy Taxonomy::load(const std::filesystem::path& path) { return parse(io::read_file(path)); }

std::vector<std::string> Taxonomy::names() const {
  std::vector<std::string> out;
  for (const auto& s : subfields) out.push_back(s.name);
  return out;
}

std::pair<std::string, bool> assign_subfield(const Fragment& fragment, const Taxonomy& taxonomy) {
  const auto present = folded_token_set(fragment.tokens);
  std::size_t best = 0;
  std::size_t best_overlap = 0;
  for (std::size_t i = 0; i < taxonomy.subfields.size(); ++i) {
    std::size_t overlap = 0;
    for (const auto& term : std::set<std::string>(taxonomy.subfields[i].terms.begin(), taxonomy.subfields[i].terms.end())) {
      overlap += std::binary_search(present.begin(), present.end(), term);
    }
    if (overlap > best_overlap) {
      best = i;
      best_overlap = overlap;
    }
  }
  return {taxonomy.subfields.at(best).name, best_overlap == 0};
}

FinalizeResult finalize_bench(std::span<const BenchItem> items, const Taxonomy& taxonomy, std::size_t target_n,
                              const FragmentLookup& lookup) {
  FinalizeResult result;
  std::set<FragmentRef> sources;
  std::vector<BenchItem> kept;
  for (const auto& item : items) {
    if (item.status != ItemStatus::validated && item.status != ItemStatus::calibrated) continue;
    if (!sources.insert(item.source_ref.fragment()).second) {
      ++result.duplicate_sources;
      continue;
    }
    BenchItem copy = item;
    const Fragment* source = lookup.find(item.source_ref.fragment());
    if (!source) throw Error(ErrorCode::InvalidArgument, "item " + item.item_id + " cites a missing fragment");
    std::tie(copy.subfield, copy.low_confidence) = assign_subfield(*source, taxonomy);
    kept.push_back(std::move(copy));
  }
  if (kept.size() < target_n) {
    throw Error(ErrorCode::InsufficientItems,
                fmt::format("{} items survive finalization, {} requested", kept.size(), target_n));
  }
  std::stable_sort(kept.begin(), kept.end(), [](const BenchItem& a, const BenchItem& b) { return a.density > b.density; });
  kept.resize(target_n);

  std::map<std::string, std::size_t> per_bucket;
  for (const auto& item : kept) ++per_bucket[item.subfield];
  for (const auto& name : taxonomy.names()) {
    if (!per_bucket.contains(name)) result.warnings.push_back("subfield '" + name + "' has no items");
  }
  result.items = std::move(kept);
  return result;
}

std::string export_review(std::span<const BenchItem> items) {
  std::size_t max_options = 0;
  for (const auto& item : items) max_options = std::max(max_options, item.options.size());
  csv::Row header{"item_id", "decision", "question", "answer_key", "subfield"};
  for (std::size_t i = 0; i < max_options; ++i) header.push_back("option_" + option_label(i));
  std::string out = csv::format_row(header);
  for (const auto& item : items) {
    csv::Row row{item.item_id, "", item.question, item.answer_key, item.subfield};
    for (std::size_t i = 0; i < max_options; ++i) row.push_back(i < item.options.size() ? item.options[i].text : "");
    out += csv::format_row(row);
  }
  return out;
}

ReviewOutcome apply_review(std::span<const BenchItem> items, std::string_view review_csv,
                           const FragmentLookup& lookup) {
  const auto rows = csv::parse(review_csv);
  if (rows.empty()) throw Error(ErrorCode::ParseError, "review file is empty");
  const auto& header = rows.front();
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);
  if (!col.contains("item_id") || !col.contains("decision")) {
    throw Error(ErrorCode::ParseError, "review file needs item_id and decision columns");
  }

  std::unordered_map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < items.size(); ++i) by_id.emplace(items[i].item_id, i);
  std::vector<std::optional<BenchItem>> out(items.begin(), items.end());
  ReviewOutcome outcome;

  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto cell = [&](const std::string& name) -> std::string {
      const auto it = col.find(name);
      return it != col.end() && it->second < row.size() ? row[it->second] : std::string();
    };
    const std::string id = cell("item_id");
    const std::string decision = cell("decision");
    const auto found = by_id.find(id);
    if (found == by_id.end()) throw Error(ErrorCode::UnknownItemId, "review row " + std::to_string(r) + " names '" + id + "'");
    auto& slot = out[found->second];
    if (!slot) continue;
    if (decision.empty()) continue;
    if (decision == "accept") {
      slot->status = ItemStatus::calibrated;
      ++outcome.accepted;
    } else if (decision == "reject") {
      slot.reset();
      ++outcome.rejected;
    } else if (decision == "edit") {
      BenchItem edited = *slot;
      if (auto q = cell("question"); !q.empty()) edited.question = q;
      if (auto k = cell("answer_key"); !k.empty()) edited.answer_key = k;
      if (auto s = cell("subfield"); !s.empty()) edited.subfield = s;
      for (std::size_t i = 0; i < edited.options.size(); ++i) {
        if (auto t = cell("option_" + option_label(i)); !t.empty()) edited.options[i].text = t;
      }
      const auto problems = structural_problems(edited, &lookup);
      if (problems.empty()) {
        edited.status = ItemStatus::calibrated;
        slot = std::move(edited);
        ++outcome.edited;
      } else {
        for (const auto& p : problems) outcome.problems.push_back(id + ": " + p);
        slot.reset();
        ++outcome.rejected;
      }
    } else {
      throw Error(ErrorCode::ParseError, "unknown review decision '" + decision + "'");
    }
  }
  for (auto& slot : out) {
    if (slot) outcome.items.push_back(std::move(*slot));
  }
  return outcome;
}

// ---------------------------------------------------------------------------
// Pipeline

io::json BenchBuildResult::summary() const {
  return io::json{{"candidates", candidates},     {"drafted", drafted},   {"draft_failures", draft_failures},
                  {"validated", validated},       {"rejected", rejected}, {"removed_easy", removed_easy},
                  {"finalized", items.size()},    {"warnings", warnings}};
}

BenchBuildResult build_benchmark(std::span<const Document> corpus, const DomainLexicon& lexicon,
                                 const Taxonomy& taxonomy, ItemGenerator& generator, ItemVerifier& verifier,
                                 ModelClient& probe, const BenchConfig& config) {
  BenchBuildResult result;
  struct Candidate {
    const Document* doc;
    const Fragment* fragment;
    double density;
  };
  std::vector<Candidate> candidates;
  for (const auto& d : corpus) {
    for (const auto& f : d.fragments) {
      if (f.kind == FragmentKind::heading) continue;
      const double density = density_score(f, lexicon, config.density);
      if (density > 0.0) candidates.push_back({&d, &f, density});
    }
  }
  result.candidates = candidates.size();

  std::vector<std::optional<BenchItem>> drafts(candidates.size());
  const FragmentLookup lookup(corpus);
  parallel_for(candidates.size(), config.workers, [&](std::size_t i) {
    const auto& c = candidates[i];
    const FragmentRef ref{c.fragment->doc_id, c.fragment->index};
    try {
      BenchItem item = draft_item(*c.fragment, generator, fmt::format("q{:05d}", i), c.doc->provenance,
                                  fragment_seed(config.seed, ref), config.instruction);
      item.density = c.density;
      drafts[i] = validate_item(std::move(item), verifier, lookup);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::GeneratorParseError && e.code() != ErrorCode::NoAnchorTerm) throw;
    }
  });

  std::vector<BenchItem> validated;
  for (auto& d : drafts) {
    if (!d) {
      ++result.draft_failures;
      continue;
    }
    ++result.drafted;
    if (d->status == ItemStatus::validated) {
      validated.push_back(std::move(*d));
    } else {
      ++result.rejected;
    }
  }
  result.validated = validated.size();

  EvalProtocol probe_protocol;
  probe_protocol.in_flight = std::max(1u, config.workers);
  auto filtered = difficulty_filter(validated, probe, config.probe_queries, derive_seed(config.seed, "probe"),
                                    probe_protocol);
  result.removed_easy = filtered.removed.size();

  auto final = finalize_bench(filtered.retained, taxonomy, config.target_n, lookup);
  result.items = std::move(final.items);
  result.warnings = std::move(final.warnings);
  return result;
}

}  // namespace forge
