#include "forge/rag.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include <httplib.h>

#include <fmt/format.h>

#include "forge/error.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/sha256.hpp"
#include "forge/util/text.hpp"

namespace forge {

namespace {

void normalize(std::vector<double>& acc, Embedding& out) {
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  out.resize(acc.size());
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(norm > 0.0 ? acc[i] / norm : 0.0);
}

}  // namespace

FeatureHashEmbedder::FeatureHashEmbedder(std::size_t dims, std::uint64_t seed) : dims_(dims), seed_(seed) {
  if (dims == 0) throw Error(ErrorCode::InvalidArgument, "embedding dims must be positive");
}

std::string FeatureHashEmbedder::id() const { return fmt::format("feature-hash-v1/d{}/s{}", dims_, seed_); }

std::vector<Embedding> FeatureHashEmbedder::embed_batch(std::span<const std::string> texts) {
  std::vector<Embedding> out(texts.size());
  for (std::size_t i = 0; i < texts.size(); ++i) {
    const auto tokens = tokenize(texts[i]);
    if (tokens.empty()) throw Error(ErrorCode::EmptyText, "nothing to embed");
    std::vector<double> acc(dims_, 0.0);
    for (const auto& t : tokens) {
      const std::uint64_t h = hash_bytes(text::fold_case(t), seed_);
      acc[(h & 0x7fffffffffffffffULL) % dims_] += (h >> 63) ? -1.0 : 1.0;
    }
    normalize(acc, out[i]);
  }
  return out;
}

HttpEmbedder::HttpEmbedder(std::string url, std::string provider_id, std::size_t dims,
                           std::chrono::milliseconds timeout)
    : provider_id_(std::move(provider_id)), dims_(dims), timeout_(timeout) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw Error(ErrorCode::InvalidArgument, "url lacks a scheme: " + url);
  const auto path_begin = url.find('/', scheme_end + 3);
  scheme_host_ = url.substr(0, path_begin);
  path_ = path_begin == std::string::npos ? "/" : url.substr(path_begin);
}

std::vector<Embedding> HttpEmbedder::embed_batch(std::span<const std::string> texts) {
  for (const auto& t : texts) {
    if (tokenize(t).empty()) throw Error(ErrorCode::EmptyText, "nothing to embed");
  }
  httplib::Client cli(scheme_host_);
  cli.set_connection_timeout(timeout_);
  cli.set_read_timeout(timeout_);
  const io::json body{{"texts", std::vector<std::string>(texts.begin(), texts.end())}};
  auto res = cli.Post(path_, body.dump(), "application/json");
  if (!res) throw Error(ErrorCode::ProviderUnavailable, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) throw Error(ErrorCode::ProviderUnavailable, "HTTP status " + std::to_string(res->status));
  std::vector<Embedding> out;
  try {
    const auto reply = io::json::parse(res->body);
    for (const auto& v : reply.at("vectors")) {
      std::vector<double> acc = v.get<std::vector<double>>();
      if (acc.size() != dims_) throw Error(ErrorCode::DimsMismatch, "provider returned a vector of the wrong width");
      out.emplace_back();
      normalize(acc, out.back());
    }
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ProviderUnavailable, std::string("malformed reply: ") + e.what());
  }
  if (out.size() != texts.size()) throw Error(ErrorCode::ProviderUnavailable, "reply has the wrong number of vectors");
  return out;
}

Embedding embed(std::string_view text, EmbeddingProvider& provider) {
  const std::string t(text);
  return provider.embed_batch(std::span(&t, 1)).front();
}

double cosine(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(ErrorCode::DimsMismatch, "vectors differ in width");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) dot += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return dot;
}

// ---------------------------------------------------------------------------
// Index

VectorIndex::VectorIndex(std::string provider_id, std::size_t dims) : provider_id_(std::move(provider_id)), dims_(dims) {
  if (dims == 0) throw Error(ErrorCode::InvalidArgument, "index dims must be positive");
}

void VectorIndex::add(FragmentRef ref, std::span<const float> vector) {
  if (vector.size() != dims_) {
    throw Error(ErrorCode::DimsMismatch, fmt::format("vector has {} dims, index has {}", vector.size(), dims_));
  }
  if (!ref_set_.insert(ref).second) throw Error(ErrorCode::InvalidArgument, "fragment " + to_string(ref) + " indexed twice");
  refs_.push_back(std::move(ref));
  data_.insert(data_.end(), vector.begin(), vector.end());
}

std::vector<Hit> VectorIndex::search(std::span<const float> query, std::size_t k) const {
  if (refs_.empty()) throw Error(ErrorCode::EmptyIndex, "index has no entries");
  if (k == 0) throw Error(ErrorCode::InvalidArgument, "k must be at least 1");
  if (query.size() != dims_) throw Error(ErrorCode::DimsMismatch, "query width differs from the index");
  std::vector<Hit> all(refs_.size());
  for (std::size_t i = 0; i < refs_.size(); ++i) {
    all[i] = {refs_[i], std::clamp(cosine(vector(i), query), -1.0, 1.0)};
  }
  const auto better = [](const Hit& a, const Hit& b) { return a.score != b.score ? a.score > b.score : a.ref < b.ref; };
  k = std::min(k, all.size());
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), better);
  all.resize(k);
  return all;
}

namespace {

void put_le(std::string& out, float v) {
  auto bits = std::bit_cast<std::uint32_t>(v);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

float get_le(const char* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[b])) << (8 * b);
  return std::bit_cast<float>(bits);
}

}  // namespace

void VectorIndex::save(const std::filesystem::path& path) const {
  io::json refs = io::json::array();
  for (const auto& r : refs_) refs.push_back({r.doc_id, r.index});
  const io::json header{{"provider_id", provider_id_}, {"dims", dims_}, {"count", refs_.size()}, {"refs", refs}};
  std::string out = header.dump() + "\n";
  out.reserve(out.size() + data_.size() * 4);
  for (float v : data_) put_le(out, v);
  io::write_file(path, out);
}

VectorIndex VectorIndex::load(const std::filesystem::path& path) {
  const std::string bytes = io::read_file(path);
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw Error(ErrorCode::ParseError, path.string() + ": missing index header");
  io::json header;
  try {
    header = io::json::parse(bytes.substr(0, nl));
    VectorIndex index(header.at("provider_id").get<std::string>(), header.at("dims").get<std::size_t>());
    const auto count = header.at("count").get<std::size_t>();
    const auto& refs = header.at("refs");
    if (refs.size() != count) throw Error(ErrorCode::ParseError, "ref list length differs from count");
    if (bytes.size() - nl - 1 != count * index.dims_ * 4) {
      throw Error(ErrorCode::ParseError, path.string() + ": vector payload has the wrong size");
    }
    const char* p = bytes.data() + nl + 1;
    std::vector<float> row(index.dims_);
    for (std::size_t i = 0; i < count; ++i) {
      for (auto& v : row) {
        v = get_le(p);
        p += 4;
      }
      index.add({refs[i].at(0).get<std::string>(), refs[i].at(1).get<std::size_t>()}, row);
    }
    return index;
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
}

VectorIndex build_index(std::span<const Document> corpus, EmbeddingProvider& provider, unsigned workers) {
  std::vector<const Fragment*> fragments;
  std::set<FragmentRef> seen;
  for (const auto& d : corpus) {
    for (const auto& f : d.fragments) {
      if (!seen.insert({f.doc_id, f.index}).second) {
        throw Error(ErrorCode::InvalidArgument, "fragment " + to_string(FragmentRef{f.doc_id, f.index}) + " repeated");
      }
      fragments.push_back(&f);
    }
  }
  if (fragments.empty()) throw Error(ErrorCode::EmptyCorpus, "no fragments to index");
  std::vector<Embedding> vectors(fragments.size());
  parallel_for(fragments.size(), workers, [&](std::size_t i) { vectors[i] = embed(fragments[i]->text, provider); });
  VectorIndex index(provider.id(), provider.dims());
  for (std::size_t i = 0; i < fragments.size(); ++i) index.add({fragments[i]->doc_id, fragments[i]->index}, vectors[i]);
  return index;
}

std::vector<Hit> retrieve(const VectorIndex& index, EmbeddingProvider& provider, std::string_view query, std::size_t k) {
  if (provider.id() != index.provider_id()) {
    throw Error(ErrorCode::ProviderMismatch,
                "index built with '" + index.provider_id() + "', query uses '" + provider.id() + "'");
  }
  if (index.size() == 0) throw Error(ErrorCode::EmptyIndex, "index has no entries");
  return index.search(embed(query, provider), k);
}

AssembledPrompt assemble_context(const BenchItem& item, std::span<const Hit> hits, const FragmentLookup& lookup,
                                 std::size_t token_budget, const EvalProtocol& protocol) {
  AssembledPrompt out;
  std::vector<std::string> parts;
  std::size_t used = 0;
  for (const auto& hit : hits) {
    const Fragment* f = lookup.find(hit.ref);
    if (!f) throw Error(ErrorCode::InvalidArgument, "hit " + to_string(hit.ref) + " is not in the corpus");
    if (used + f->token_count() > token_budget) break;
    used += f->token_count();
    parts.push_back(f->text);
    out.included.push_back(hit.ref);
  }
  out.question_only = out.included.empty();
  out.prompt = format_prompt(item, protocol, text::join(parts, "\n\n"));
  return out;
}

RagResult rag_eval(std::span<const BenchItem> items, const VectorIndex& index, EmbeddingProvider& provider,
                   const FragmentLookup& lookup, ModelClient& client, const RagConfig& config,
                   const EvalProtocol& protocol) {
  std::vector<AssembledPrompt> assembled(items.size());
  parallel_for(items.size(), std::max(1u, protocol.in_flight), [&](std::size_t i) {
    const auto hits = retrieve(index, provider, items[i].question, config.k);
    assembled[i] = assemble_context(items[i], hits, lookup, config.token_budget, protocol);
  });
  std::vector<std::string> prompts;
  prompts.reserve(items.size());
  for (const auto& a : assembled) prompts.push_back(a.prompt);

  RagResult result;
  result.records = run_eval_prompts(items, prompts, client, protocol);
  for (std::size_t i = 0; i < items.size(); ++i) {
    result.records[i].context_refs = assembled[i].included;
    result.records[i].question_only = assembled[i].question_only;
  }
  io::json cfg = protocol.to_json();
  cfg["rag"] = {{"k", config.k}, {"token_budget", config.token_budget}, {"provider_id", index.provider_id()}};
  result.report = accuracy_report(result.records, items, sha256(cfg.dump()).hex());
  return result;
}

}  // namespace forge
