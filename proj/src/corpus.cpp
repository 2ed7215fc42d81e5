#include "forge/corpus.hpp"

#include <algorithm>
#include <optional>

#include "forge/error.hpp"
#include "forge/util/io.hpp"
#include "forge/util/text.hpp"

namespace forge {

bool is_domain_category(std::string_view category) { return category.starts_with("domain"); }

std::string_view to_string(FragmentKind kind) {
  switch (kind) {
    case FragmentKind::heading:
      return "heading";
    case FragmentKind::paragraph:
      return "paragraph";
    case FragmentKind::code_block:
      return "code_block";
    case FragmentKind::table:
      return "table";
    case FragmentKind::equation_block:
      return "equation_block";
  }
  return "paragraph";
}

FragmentKind fragment_kind_from_string(std::string_view name) {
  for (auto k : {FragmentKind::heading, FragmentKind::paragraph, FragmentKind::code_block, FragmentKind::table,
                 FragmentKind::equation_block}) {
    if (to_string(k) == name) return k;
  }
  throw Error(ErrorCode::ParseError, "unknown fragment kind '" + std::string(name) + "'");
}

std::vector<Token> tokenize(std::string_view text) {
  std::vector<Token> tokens;
  std::string run;
  auto flush = [&] {
    if (!run.empty()) {
      tokens.push_back(std::move(run));
      run.clear();
    }
  };
  for (char32_t cp : text::decode(text)) {
    if (text::is_space(cp)) {
      flush();
    } else if (text::is_alnum(cp)) {
      text::append_utf8(run, cp);
    } else {
      flush();
      std::string single;
      text::append_utf8(single, cp);
      tokens.push_back(std::move(single));
    }
  }
  flush();
  return tokens;
}

Fragment make_fragment(std::string doc_id, std::size_t index, FragmentKind kind, std::string text) {
  Fragment f;
  f.doc_id = std::move(doc_id);
  f.index = index;
  f.kind = kind;
  f.tokens = tokenize(text);
  f.text = std::move(text);
  return f;
}

std::size_t Document::token_count() const {
  std::size_t n = 0;
  for (const auto& f : fragments) n += f.token_count();
  return n;
}

std::vector<Token> Document::all_tokens() const {
  std::vector<Token> out;
  out.reserve(token_count());
  for (const auto& f : fragments) out.insert(out.end(), f.tokens.begin(), f.tokens.end());
  return out;
}

std::string to_string(const FragmentRef& ref) { return ref.doc_id + "#" + std::to_string(ref.index); }

ShingleSet shingle(std::span<const Token> tokens, std::size_t width) {
  if (width == 0) throw Error(ErrorCode::InvalidWidth, "shingle width must be >= 1");
  ShingleSet out;
  if (tokens.empty()) return out;
  auto window = [&](std::size_t begin, std::size_t len) {
    std::string value;
    for (std::size_t i = begin; i < begin + len; ++i) {
      if (i > begin) value.push_back(' ');
      value += tokens[i];
    }
    return Shingle{width, std::move(value)};
  };
  if (tokens.size() < width) {
    out.insert(window(0, tokens.size()));
    return out;
  }
  for (std::size_t i = 0; i + width <= tokens.size(); ++i) out.insert(window(i, width));
  return out;
}

// ---------------------------------------------------------------------------
// Markdown ingestion

namespace {

std::size_t leading_spaces(std::string_view line) {
  std::size_t n = 0;
  while (n < line.size() && line[n] == ' ') ++n;
  return n;
}

struct Fence {
  char ch;
  std::size_t len;
};

std::optional<Fence> fence_open(std::string_view line) {
  const std::size_t indent = leading_spaces(line);
  if (indent > 3) return std::nullopt;
  line.remove_prefix(indent);
  if (line.empty() || (line[0] != '`' && line[0] != '~')) return std::nullopt;
  const char ch = line[0];
  std::size_t n = 0;
  while (n < line.size() && line[n] == ch) ++n;
  if (n < 3) return std::nullopt;
  return Fence{ch, n};
}

bool fence_closes(std::string_view line, const Fence& open) {
  const std::size_t indent = leading_spaces(line);
  if (indent > 3) return false;
  line.remove_prefix(indent);
  std::size_t n = 0;
  while (n < line.size() && line[n] == open.ch) ++n;
  return n >= open.len && text::is_blank(line.substr(n));
}

bool is_heading(std::string_view line) {
  const std::size_t indent = leading_spaces(line);
  if (indent > 3) return false;
  line.remove_prefix(indent);
  std::size_t n = 0;
  while (n < line.size() && line[n] == '#') ++n;
  if (n == 0 || n > 6) return false;
  return n == line.size() || line[n] == ' ' || line[n] == '\t';
}

FragmentKind classify_block(const std::vector<std::string>& lines, std::string_view joined) {
  const bool all_pipes = std::all_of(lines.begin(), lines.end(),
                                     [](const std::string& l) { return text::trim(l).starts_with('|'); });
  if (all_pipes) return FragmentKind::table;
  const auto t = text::trim(joined);
  if (t.size() >= 4 && t.starts_with("$$") && t.ends_with("$$")) return FragmentKind::equation_block;
  return FragmentKind::paragraph;
}

}  // namespace

Document ingest_markdown(std::string_view source, const IngestOptions& options) {
  auto clean = text::sanitize_utf8(source);
  std::string_view body = clean.utf8;
  if (body.starts_with("\xEF\xBB\xBF")) body.remove_prefix(3);

  Document doc;
  doc.id = options.id;
  doc.source_path = options.source_path;
  doc.category = options.category;
  doc.language_tag = options.language_tag;
  doc.provenance = options.provenance;
  doc.replaced_sequences = clean.replacements;

  auto emit = [&](FragmentKind kind, std::string text) {
    doc.fragments.push_back(make_fragment(doc.id, doc.fragments.size(), kind, std::move(text)));
  };

  const auto lines = text::split_lines(body);
  std::size_t i = 0;
  while (i < lines.size()) {
    const std::string_view line = lines[i];
    if (text::is_blank(line)) {
      ++i;
      continue;
    }
    if (auto fence = fence_open(line)) {
      std::vector<std::string> block{std::string(line)};
      ++i;
      while (i < lines.size()) {
        block.emplace_back(lines[i]);
        const bool closed = fence_closes(lines[i], *fence);
        ++i;
        if (closed) break;
      }
      while (block.size() > 1 && text::is_blank(block.back())) block.pop_back();
      emit(FragmentKind::code_block, text::join(block, "\n"));
      continue;
    }
    if (is_heading(line)) {
      emit(FragmentKind::heading, std::string(text::trim(line)));
      ++i;
      continue;
    }
    std::vector<std::string> block;
    while (i < lines.size() && !text::is_blank(lines[i]) && !is_heading(lines[i]) && !fence_open(lines[i])) {
      block.emplace_back(text::rtrim(lines[i]));
      ++i;
    }
    std::string joined = text::join(block, "\n");
    const auto kind = classify_block(block, joined);
    emit(kind, std::move(joined));
  }

  if (doc.fragments.empty()) {
    throw Error(ErrorCode::EmptyInput, "no non-whitespace content in '" + options.source_path + "'");
  }
  return doc;
}

std::string to_markdown(const Document& doc) {
  std::string out;
  for (std::size_t i = 0; i < doc.fragments.size(); ++i) {
    if (i) out += "\n\n";
    out += doc.fragments[i].text;
  }
  out.push_back('\n');
  return out;
}

// ---------------------------------------------------------------------------
// Persistence

namespace {

io::json document_to_json(const Document& d) {
  io::json frags = io::json::array();
  for (const auto& f : d.fragments) {
    frags.push_back({{"index", f.index}, {"kind", std::string(to_string(f.kind))}, {"text", f.text}});
  }
  return io::json{{"id", d.id},
                  {"source_path", d.source_path},
                  {"category", d.category},
                  {"language_tag", d.language_tag},
                  {"provenance", d.provenance},
                  {"fragments", std::move(frags)}};
}

Document document_from_json(const io::json& j) {
  Document d;
  try {
    d.id = j.at("id").get<std::string>();
    d.source_path = j.value("source_path", "");
    d.category = j.value("category", std::string(category::kGeneral));
    d.language_tag = j.value("language_tag", "en");
    d.provenance = j.value("provenance", "");
    for (const auto& f : j.at("fragments")) {
      d.fragments.push_back(make_fragment(d.id, f.at("index").get<std::size_t>(),
                                          fragment_kind_from_string(f.at("kind").get<std::string>()),
                                          f.at("text").get<std::string>()));
    }
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("malformed document record: ") + e.what());
  }
  return d;
}

}  // namespace

std::string corpus_to_jsonl(std::span<const Document> corpus) {
  std::string out;
  for (const auto& d : corpus) out += io::to_jsonl_line(document_to_json(d));
  return out;
}

std::vector<Document> corpus_from_jsonl(std::string_view content) {
  std::vector<Document> out;
  io::for_each_jsonl(content, [&](std::size_t, const io::json& j) { out.push_back(document_from_json(j)); });
  return out;
}

void save_corpus(const std::filesystem::path& path, std::span<const Document> corpus) {
  io::write_file(path, corpus_to_jsonl(corpus));
}

std::vector<Document> load_corpus(const std::filesystem::path& path) {
  return corpus_from_jsonl(io::read_file(path));
}

std::vector<Document> ingest_directory(const std::filesystem::path& dir, std::string_view default_category) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (!entry.is_regular_file()) continue;
    const auto ext = entry.path().extension();
    if (ext == ".md" || ext == ".txt" || ext == ".markdown") files.push_back(fs::relative(entry.path(), dir));
  }
  std::sort(files.begin(), files.end());

  std::vector<Document> out;
  for (const auto& rel : files) {
    IngestOptions opt;
    opt.source_path = rel.generic_string();
    auto id_path = rel;
    id_path.replace_extension();
    opt.id = id_path.generic_string();
    opt.category = std::string(default_category);
    const auto first = rel.begin()->string();
    if (std::distance(rel.begin(), rel.end()) > 1 &&
        (is_domain_category(first) || first == category::kGeneral)) {
      opt.category = first;
    }
    opt.provenance = "file:" + opt.source_path;
    const auto bytes = io::read_file(dir / rel);
    try {
      out.push_back(ingest_markdown(bytes, opt));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::EmptyInput) throw;
    }
  }
  return out;
}

FragmentLookup::FragmentLookup(std::span<const Document> corpus) : corpus_(corpus) {
  by_id_.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) by_id_.emplace_back(corpus[i].id, i);
  std::sort(by_id_.begin(), by_id_.end());
}

const Document* FragmentLookup::document(std::string_view doc_id) const {
  auto it = std::lower_bound(by_id_.begin(), by_id_.end(), doc_id,
                             [](const auto& e, std::string_view id) { return e.first < id; });
  if (it == by_id_.end() || it->first != doc_id) return nullptr;
  return &corpus_[it->second];
}

const Fragment* FragmentLookup::find(const FragmentRef& ref) const {
  const Document* d = document(ref.doc_id);
  if (!d) return nullptr;
  for (const auto& f : d->fragments) {
    if (f.index == ref.index) return &f;
  }
  return nullptr;
}

}  // namespace forge
