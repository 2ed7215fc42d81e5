#include "forge/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <set>

#include <fmt/chrono.h>
#include <fmt/format.h>

#include "forge/benchgen.hpp"
#include "forge/dedup.hpp"
#include "forge/error.hpp"
#include "forge/eval.hpp"
#include "forge/quality.hpp"
#include "forge/rag.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/rng.hpp"
#include "forge/util/sha256.hpp"
#include "forge/util/text.hpp"

namespace forge {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Stages

namespace {
constexpr std::string_view kStageNames[] = {"ingest", "dedup", "quality", "mix", "bench", "eval", "rag", "rlvr"};
}

std::string_view to_string(Stage s) { return kStageNames[static_cast<int>(s)]; }

Stage stage_from_string(std::string_view s) {
  for (std::size_t i = 0; i < std::size(kStageNames); ++i) {
    if (kStageNames[i] == s) return static_cast<Stage>(i);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown stage '" + std::string(s) + "'");
}

const std::vector<Stage>& all_stages() {
  static const std::vector<Stage> stages{Stage::ingest, Stage::dedup, Stage::quality, Stage::mix,
                                         Stage::bench,  Stage::eval,  Stage::rag,     Stage::rlvr};
  return stages;
}

std::vector<Stage> stage_dependencies(Stage s) {
  switch (s) {
    case Stage::ingest: return {};
    case Stage::dedup: return {Stage::ingest};
    case Stage::quality: return {Stage::dedup};
    case Stage::mix: return {Stage::quality};
    case Stage::bench: return {Stage::quality};
    case Stage::eval: return {Stage::bench};
    case Stage::rag: return {Stage::quality, Stage::bench};
    case Stage::rlvr: return {};
  }
  return {};
}

// ---------------------------------------------------------------------------
// Clients

io::json ClientSpec::to_json() const { return io::json{{"kind", kind}, {"rate", rate}, {"path", path}}; }

namespace {

const std::set<std::string, std::less<>> kClientKinds{"scripted_rate", "always_correct", "abstain", "random",
                                                      "responses",     "source_oracle",  "http"};
constexpr std::string_view kAbstainReply = "Unsure.";

std::string answer_reply(std::string_view label) { return "Answer: " + std::string(label); }

std::size_t count_option_lines(std::string_view prompt) {
  std::size_t n = 0;
  for (auto line : text::split_lines(prompt)) {
    if (line.size() >= 3 && line[0] >= 'A' && line[0] <= 'Z' && line[1] == '.' && line[2] == ' ') ++n;
  }
  return n;
}

std::map<std::string, std::string> rate_script(std::span<const BenchItem> items, double rate, std::uint64_t seed) {
  std::vector<std::pair<std::uint64_t, std::size_t>> order;
  for (std::size_t i = 0; i < items.size(); ++i) order.emplace_back(hash_bytes(items[i].item_id, seed), i);
  std::sort(order.begin(), order.end());
  const auto n_correct = static_cast<std::size_t>(std::floor(rate * static_cast<double>(items.size()) + 0.5));
  std::map<std::string, std::string> script;
  for (std::size_t r = 0; r < order.size(); ++r) {
    const auto& item = items[order[r].second];
    const auto labels = item.labels();
    const auto key = static_cast<std::size_t>(std::find(labels.begin(), labels.end(), item.answer_key) - labels.begin());
    const std::size_t pick = r < n_correct ? key : (key + 1) % labels.size();
    script[item.item_id] = answer_reply(labels[pick]);
  }
  return script;
}

}  // namespace

std::unique_ptr<ModelClient> make_client(const ClientSpec& spec, std::span<const BenchItem> items,
                                         const FragmentLookup* lookup, std::uint64_t seed) {
  const auto& k = spec.kind;
  if (k == "http") return HttpModelClient::from_env();
  if (k == "abstain") return std::make_unique<FunctionClient>("mock-abstain", [](const GenerationRequest&) {
    return std::string(kAbstainReply);
  });
  if (k == "random") {
    return std::make_unique<FunctionClient>("mock-random", [](const GenerationRequest& req) {
      const std::size_t n = count_option_lines(req.prompt);
      if (n == 0) return std::string(kAbstainReply);
      Rng rng(req.seed);
      return answer_reply(option_label(rng.below(n)));
    });
  }
  if (k == "responses") {
    if (spec.path.empty()) throw Error(ErrorCode::InvalidArgument, "responses client needs a path");
    return std::make_unique<ScriptedClient>(ScriptedClient::from_json_file(spec.path, "mock-responses"));
  }
  if (k == "scripted_rate" || k == "always_correct") {
    const double rate = k == "always_correct" ? 1.0 : spec.rate;
    return std::make_unique<ScriptedClient>(rate_script(items, rate, seed), fmt::format("mock-rate-{}", rate),
                                            std::string(kAbstainReply));
  }
  if (k == "source_oracle") {
    if (!lookup) throw Error(ErrorCode::InvalidArgument, "source_oracle client needs the corpus");
    std::map<std::string, std::pair<std::string, std::string>> by_id;  // item -> (source text, reply)
    for (const auto& item : items) {
      const Fragment* f = lookup->find(item.source_ref.fragment());
      if (!f) throw Error(ErrorCode::InvalidArgument, "item " + item.item_id + " cites a fragment outside the corpus");
      by_id[item.item_id] = {f->text, answer_reply(item.answer_key)};
    }
    return std::make_unique<FunctionClient>("mock-source-oracle", [by_id = std::move(by_id)](const GenerationRequest& req) {
      const auto it = by_id.find(req.item_id);
      if (it == by_id.end() || req.prompt.find(it->second.first) == std::string::npos) return std::string(kAbstainReply);
      return it->second.second;
    });
  }
  throw Error(ErrorCode::InvalidArgument, "unknown client kind '" + k + "'");
}

// ---------------------------------------------------------------------------
// Manifest

fs::path PipelineManifest::resolve(std::string_view path) const {
  const fs::path p(path);
  return p.is_absolute() ? p : base_dir / p;
}

bool PipelineManifest::has_stage(Stage s) const { return std::find(stages.begin(), stages.end(), s) != stages.end(); }

io::json PipelineManifest::to_json() const {
  io::json stage_names = io::json::array();
  for (Stage s : stages) stage_names.push_back(to_string(s));
  io::json ratio = io::json::object();
  for (const auto& [c, w] : mix.ratio) ratio[c] = w;
  const auto& rc = rlvr.config;
  return io::json{
      {"schema_version", schema_version},
      {"seed", seed},
      {"scale", scale},
      {"input", input},
      {"run_dir", run_dir},
      {"workers", workers},
      {"stages", stage_names},
      {"ingest", {{"default_category", ingest.default_category}}},
      {"dedup",
       {{"threshold", dedup.threshold},
        {"num_hashes", dedup.num_hashes},
        {"bands", dedup.bands},
        {"rows", dedup.rows},
        {"shingle_width", dedup.shingle_width},
        {"input", dedup.input}}},
      {"quality",
       {{"lexicon", quality.lexicon},
        {"order", quality.order},
        {"ppl_factor", quality.ppl_factor},
        {"rel_min", quality.rel_min},
        {"input", quality.input}}},
      {"mix", {{"total_tokens", mix.total_tokens}, {"ratio", ratio}, {"input", mix.input}}},
      {"bench",
       {{"lexicon", bench.lexicon},
        {"taxonomy", bench.taxonomy},
        {"target_n", bench.target_n},
        {"probe_queries", bench.probe_queries},
        {"generator", bench.generator},
        {"verifier", bench.verifier},
        {"probe", bench.probe.to_json()},
        {"input", bench.input}}},
      {"eval",
       {{"client", eval.client.to_json()},
        {"max_tokens", eval.max_tokens},
        {"in_flight", eval.in_flight},
        {"bench", eval.bench}}},
      {"rag",
       {{"client", rag.client.to_json()},
        {"k", rag.k},
        {"token_budget", rag.token_budget},
        {"dims", rag.dims},
        {"bench", rag.bench},
        {"corpus", rag.corpus}}},
      {"rlvr",
       {{"init", to_string(rlvr.init)},
        {"prompts", rlvr.prompts},
        {"answer_len", rlvr.answer_len},
        {"task", rlvr.task},
        {"n_samples_per_prompt", rc.n_samples_per_prompt},
        {"kl_coefficient", rc.kl_coefficient},
        {"learning_rate", rc.learning_rate},
        {"batch_prompts", rc.batch_prompts},
        {"max_prompt_len", rc.max_prompt_len},
        {"max_response_len", rc.max_response_len},
        {"iterations", rc.iterations},
        {"temperature", rc.temperature},
        {"cold_start_bias", rc.cold_start_bias},
        {"stop_bias", rc.stop_bias},
        {"verifier", rc.verifier == rlvr::VerifierKind::exact ? "exact" : "shortcut"}}}};
}

// run_dir and workers decide where and how fast, not what is produced.
std::string PipelineManifest::digest() const {
  io::json j = to_json();
  j.erase("run_dir");
  j.erase("workers");
  return sha256(j.dump()).hex();
}

namespace {

/// Collects violations while copying fields out of the document.
class Reader {
 public:
  explicit Reader(std::vector<std::string>& out) : out_(out) {}

  void fail(const std::string& path, const std::string& problem) { out_.push_back(path + ": " + problem); }

  // Reports unknown keys; returns false when j is not an object.
  bool object(const io::json& j, const std::string& path, std::initializer_list<std::string_view> allowed) {
    if (!j.is_object()) {
      fail(path, "expected an object");
      return false;
    }
    for (const auto& [key, _] : j.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) fail(join(path, key), "unknown key");
    }
    return true;
  }

  template <class T, class Check>
  void number(const io::json& j, std::string_view key, const std::string& path, T& target, Check ok,
              std::string_view requirement) {
    if (!j.contains(key)) return;
    const auto& v = j.at(std::string(key));
    const std::string where = join(path, key);
    if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) return fail(where, "expected a number");
      target = v.get<T>();
    } else {
      if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
        return fail(where, "expected a non-negative integer");
      }
      target = static_cast<T>(v.get<std::uint64_t>());
    }
    if (!ok(target)) fail(where, fmt::format("{} is out of range ({})", v.dump(), requirement));
  }

  void string(const io::json& j, std::string_view key, const std::string& path, std::string& target) {
    if (!j.contains(key)) return;
    const auto& v = j.at(std::string(key));
    if (!v.is_string()) return fail(join(path, key), "expected a string");
    target = v.get<std::string>();
  }

  void choice(const io::json& j, std::string_view key, const std::string& path, std::string& target,
              std::initializer_list<std::string_view> allowed) {
    const std::string before = target;
    string(j, key, path, target);
    if (std::find(allowed.begin(), allowed.end(), target) == allowed.end()) {
      fail(join(path, key), fmt::format("'{}' is not one of {}", target, fmt::join(allowed, ", ")));
      target = before;
    }
  }

  void client(const io::json& j, std::string_view key, const std::string& path, ClientSpec& spec) {
    if (!j.contains(key)) return;
    const auto& c = j.at(std::string(key));
    const std::string where = join(path, key);
    if (!object(c, where, {"kind", "rate", "path"})) return;
    string(c, "kind", where, spec.kind);
    if (!kClientKinds.contains(spec.kind)) fail(join(where, "kind"), "unknown client kind '" + spec.kind + "'");
    number(c, "rate", where, spec.rate, [](double r) { return r >= 0.0 && r <= 1.0; }, "0 <= rate <= 1");
    string(c, "path", where, spec.path);
    if (spec.kind == "responses" && spec.path.empty()) fail(join(where, "path"), "required for kind 'responses'");
  }

  static std::string join(const std::string& path, std::string_view key) {
    return path.empty() ? std::string(key) : path + "." + std::string(key);
  }

 private:
  std::vector<std::string>& out_;
};

const auto positive = [](auto v) { return v > 0; };
const auto any = [](auto) { return true; };

}  // namespace

ValidationResult validate_config(const io::json& doc, const fs::path& base_dir) {
  ValidationResult result;
  auto& v = result.violations;
  Reader r(v);
  PipelineManifest m;
  m.base_dir = base_dir;
  if (!r.object(doc, "", {"schema_version", "seed", "scale", "input", "run_dir", "workers", "stages", "ingest", "dedup",
                          "quality", "mix", "bench", "eval", "rag", "rlvr"})) {
    return result;
  }

  r.number(doc, "schema_version", "", m.schema_version, [](int s) { return s == kManifestSchemaVersion; },
           fmt::format("supported: {}", kManifestSchemaVersion));
  r.number(doc, "seed", "", m.seed, any, "");
  r.number(doc, "scale", "", m.scale, [](double s) { return s > 0.0 && std::isfinite(s); }, "scale > 0");
  r.string(doc, "input", "", m.input);
  r.string(doc, "run_dir", "", m.run_dir);
  r.number(doc, "workers", "", m.workers, any, "");
  if (m.run_dir.empty()) r.fail("run_dir", "must not be empty");

  if (!doc.contains("stages")) {
    r.fail("stages", "required");
  } else if (!doc["stages"].is_array() || doc["stages"].empty()) {
    r.fail("stages", "expected a non-empty list");
  } else {
    for (const auto& s : doc["stages"]) {
      if (!s.is_string()) {
        r.fail("stages", "entries must be strings");
        continue;
      }
      try {
        const Stage stage = stage_from_string(s.get<std::string>());
        if (m.has_stage(stage)) {
          r.fail("stages", fmt::format("'{}' listed twice", to_string(stage)));
        } else {
          m.stages.push_back(stage);
        }
      } catch (const Error&) {
        r.fail("stages", "unknown stage '" + s.get<std::string>() + "'");
      }
    }
  }

  const io::json empty = io::json::object();
  auto block = [&](std::string_view name) -> const io::json& { return doc.contains(name) ? doc.at(std::string(name)) : empty; };

  if (const auto& j = block("ingest"); r.object(j, "ingest", {"default_category"})) {
    r.string(j, "default_category", "ingest", m.ingest.default_category);
  }
  if (const auto& j = block("dedup");
      r.object(j, "dedup", {"threshold", "num_hashes", "bands", "rows", "shingle_width", "input"})) {
    auto& d = m.dedup;
    r.number(j, "threshold", "dedup", d.threshold, [](double t) { return t >= 0.0 && t <= 1.0; }, "0 <= threshold <= 1");
    r.number(j, "num_hashes", "dedup", d.num_hashes, positive, "> 0");
    r.number(j, "bands", "dedup", d.bands, positive, "> 0");
    r.number(j, "rows", "dedup", d.rows, positive, "> 0");
    r.number(j, "shingle_width", "dedup", d.shingle_width, positive, "> 0");
    r.string(j, "input", "dedup", d.input);
    if (d.bands * d.rows != d.num_hashes) {
      r.fail("dedup.bands", fmt::format("bands * rows = {} but num_hashes = {}", d.bands * d.rows, d.num_hashes));
    }
  }
  if (const auto& j = block("quality"); r.object(j, "quality", {"lexicon", "order", "ppl_factor", "rel_min", "input"})) {
    auto& q = m.quality;
    r.string(j, "lexicon", "quality", q.lexicon);
    r.number(j, "order", "quality", q.order, positive, ">= 1");
    r.number(j, "ppl_factor", "quality", q.ppl_factor, [](double f) { return f > 0.0; }, "> 0");
    r.number(j, "rel_min", "quality", q.rel_min, [](double x) { return x >= 0.0 && x <= 1.0; }, "0 <= rel_min <= 1");
    r.string(j, "input", "quality", q.input);
  }
  if (const auto& j = block("mix"); r.object(j, "mix", {"total_tokens", "ratio", "input"})) {
    r.number(j, "total_tokens", "mix", m.mix.total_tokens, positive, "> 0");
    r.string(j, "input", "mix", m.mix.input);
    if (j.contains("ratio")) {
      if (!j["ratio"].is_object() || j["ratio"].empty()) {
        r.fail("mix.ratio", "expected a non-empty object of category weights");
      } else {
        m.mix.ratio.clear();
        double total = 0.0;
        for (const auto& [c, w] : j["ratio"].items()) {
          if (!w.is_number() || w.get<double>() < 0.0 || !std::isfinite(w.get<double>())) {
            r.fail("mix.ratio." + c, "weight must be a non-negative number");
            continue;
          }
          total += w.get<double>();
          m.mix.ratio.emplace_back(c, w.get<double>());
        }
        if (total <= 0.0) r.fail("mix.ratio", "all weights are zero");
      }
    }
  }
  if (const auto& j = block("bench"); r.object(j, "bench", {"lexicon", "taxonomy", "target_n", "probe_queries",
                                                            "generator", "verifier", "probe", "input"})) {
    auto& b = m.bench;
    r.string(j, "lexicon", "bench", b.lexicon);
    r.string(j, "taxonomy", "bench", b.taxonomy);
    r.number(j, "target_n", "bench", b.target_n, positive, ">= 1");
    r.number(j, "probe_queries", "bench", b.probe_queries, positive, ">= 1");
    r.choice(j, "generator", "bench", b.generator, {"template", "http"});
    r.choice(j, "verifier", "bench", b.verifier, {"rule", "http"});
    r.client(j, "probe", "bench", b.probe);
    r.string(j, "input", "bench", b.input);
  }
  if (const auto& j = block("eval"); r.object(j, "eval", {"client", "max_tokens", "in_flight", "bench"})) {
    r.client(j, "client", "eval", m.eval.client);
    r.number(j, "max_tokens", "eval", m.eval.max_tokens, positive, ">= 1");
    r.number(j, "in_flight", "eval", m.eval.in_flight, positive, ">= 1");
    r.string(j, "bench", "eval", m.eval.bench);
  }
  if (const auto& j = block("rag"); r.object(j, "rag", {"client", "k", "token_budget", "dims", "bench", "corpus"})) {
    r.client(j, "client", "rag", m.rag.client);
    r.number(j, "k", "rag", m.rag.k, positive, ">= 1");
    r.number(j, "token_budget", "rag", m.rag.token_budget, positive, ">= 1");
    r.number(j, "dims", "rag", m.rag.dims, positive, ">= 1");
    r.string(j, "bench", "rag", m.rag.bench);
    r.string(j, "corpus", "rag", m.rag.corpus);
  }
  if (const auto& j = block("rlvr");
      r.object(j, "rlvr", {"init", "prompts", "answer_len", "task", "n_samples_per_prompt", "kl_coefficient",
                           "learning_rate", "batch_prompts", "max_prompt_len", "max_response_len", "iterations",
                           "temperature", "cold_start_bias", "stop_bias", "verifier"})) {
    auto& x = m.rlvr;
    auto& c = x.config;
    std::string init(to_string(x.init));
    r.choice(j, "init", "rlvr", init, {"uniform", "cold_start_biased"});
    x.init = rlvr::init_from_string(init);
    std::string verifier = "exact";
    r.choice(j, "verifier", "rlvr", verifier, {"exact", "shortcut"});
    c.verifier = verifier == "exact" ? rlvr::VerifierKind::exact : rlvr::VerifierKind::shortcut;
    r.number(j, "prompts", "rlvr", x.prompts, positive, ">= 1");
    r.string(j, "task", "rlvr", x.task);
    r.number(j, "n_samples_per_prompt", "rlvr", c.n_samples_per_prompt, [](std::size_t n) { return n >= 2; }, ">= 2");
    r.number(j, "kl_coefficient", "rlvr", c.kl_coefficient, [](double b) { return b >= 0.0; }, ">= 0");
    r.number(j, "learning_rate", "rlvr", c.learning_rate, [](double l) { return l > 0.0; }, "> 0");
    r.number(j, "batch_prompts", "rlvr", c.batch_prompts, positive, ">= 1");
    r.number(j, "max_prompt_len", "rlvr", c.max_prompt_len, positive, ">= 1");
    r.number(j, "max_response_len", "rlvr", c.max_response_len, positive, ">= 1");
    r.number(j, "iterations", "rlvr", c.iterations, positive, ">= 1");
    r.number(j, "temperature", "rlvr", c.temperature, [](double t) { return t > 0.0; }, "> 0");
    r.number(j, "cold_start_bias", "rlvr", c.cold_start_bias, [](double b) { return std::isfinite(b); }, "finite");
    r.number(j, "stop_bias", "rlvr", c.stop_bias, [](double b) { return std::isfinite(b); }, "finite");
    const std::size_t max_len = c.max_response_len;
    r.number(j, "answer_len", "rlvr", x.answer_len, [&](std::size_t n) { return n >= 1 && n <= max_len; },
             "1 <= answer_len <= max_response_len");
  }

  // Stage order and inputs.
  auto explicit_input = [&](Stage s, Stage dep) -> bool {
    switch (s) {
      case Stage::dedup: return !m.dedup.input.empty();
      case Stage::quality: return !m.quality.input.empty();
      case Stage::mix: return !m.mix.input.empty();
      case Stage::bench: return !m.bench.input.empty();
      case Stage::eval: return !m.eval.bench.empty();
      case Stage::rag: return dep == Stage::bench ? !m.rag.bench.empty() : !m.rag.corpus.empty();
      default: return false;
    }
  };
  for (std::size_t i = 0; i < m.stages.size(); ++i) {
    const Stage s = m.stages[i];
    for (Stage dep : stage_dependencies(s)) {
      if (explicit_input(s, dep)) continue;
      const auto pos = std::find(m.stages.begin(), m.stages.end(), dep);
      if (pos == m.stages.end()) {
        r.fail("stages", fmt::format("'{}' needs '{}' earlier in the list or an explicit input path", to_string(s),
                                     to_string(dep)));
      } else if (static_cast<std::size_t>(pos - m.stages.begin()) > i) {
        r.fail("stages", fmt::format("'{}' must come after '{}'", to_string(s), to_string(dep)));
      }
    }
  }

  // Referenced files.
  auto need_file = [&](const std::string& field, const std::string& path, bool required) {
    if (path.empty()) {
      if (required) r.fail(field, "required by the selected stages");
      return;
    }
    if (!fs::exists(m.resolve(path))) r.fail(field, "no such file or directory: " + path);
  };
  if (m.has_stage(Stage::ingest)) need_file("input", m.input, true);
  if (m.has_stage(Stage::quality)) need_file("quality.lexicon", m.quality.lexicon, true);
  if (m.has_stage(Stage::bench)) {
    need_file("bench.lexicon", m.bench.lexicon, true);
    need_file("bench.taxonomy", m.bench.taxonomy, true);
  }
  for (const auto& [field, path] : {std::pair{"dedup.input", m.dedup.input}, {"quality.input", m.quality.input},
                                    {"mix.input", m.mix.input}, {"bench.input", m.bench.input},
                                    {"eval.bench", m.eval.bench}, {"rag.bench", m.rag.bench},
                                    {"rag.corpus", m.rag.corpus}, {"rlvr.task", m.rlvr.task},
                                    {"eval.client.path", m.eval.client.path}, {"rag.client.path", m.rag.client.path},
                                    {"bench.probe.path", m.bench.probe.path}}) {
    need_file(field, path, false);
  }

  if (v.empty()) result.manifest = std::move(m);
  return result;
}

ValidationResult validate_config_file(const fs::path& path) {
  io::json doc;
  try {
    doc = io::json::parse(io::read_file(path));
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return validate_config(doc, path.has_parent_path() ? path.parent_path() : fs::path("."));
}

io::json train_config_block(const PipelineManifest* manifest) {
  io::json published{
      {"cpt",
       {{"learning_rate", 2.0e-5},
        {"lr_scheduler", "WSD"},
        {"max_length", 16384},
        {"batch_size_total", 256},
        {"precision", "bf16"},
        {"warmup_ratio", 0.01}}},
      {"sft_general",
       {{"learning_rate", 5.0e-5},
        {"lr_scheduler", "cosine"},
        {"max_length", 16384},
        {"batch_size_total", 256},
        {"precision", "bf16"},
        {"warmup_ratio", 0.05}}},
      {"sft_domain",
       {{"learning_rate", 2.0e-5},
        {"lr_scheduler", "cosine"},
        {"max_length", 20000},
        {"batch_size_total", 128},
        {"precision", "bf16"},
        {"warmup_ratio", 0.03}}},
      {"grpo",
       {{"algorithm", "GRPO"},
        {"actor_learning_rate", 2.0e-6},
        {"global_batch_size", 128},
        {"max_prompt_length", 1024},
        {"max_response_length", 8192},
        {"kl_coefficient", 0.005},
        {"kl_loss_type", "low_var_kl"},
        {"n_samples", 8},
        {"precision", "mixed bf16/fp32"}}}};
  const rlvr::RlvrConfig desk = manifest ? manifest->rlvr.config : rlvr::RlvrConfig{};
  return io::json{{"executed", false},
                  {"note", "documentation only; the toolkit never trains a language model"},
                  {"published", published},
                  {"desk_simulator", desk.to_json()}};
}

// ---------------------------------------------------------------------------
// Run manifest

std::string RunManifest::run_digest() const {
  io::json j = to_json();
  for (auto& s : j["stages"]) {
    s.erase("started_at");
    s.erase("finished_at");
    s.erase("executed");
  }
  return sha256(j.dump()).hex();
}

io::json RunManifest::to_json() const {
  io::json stages_json = io::json::array();
  for (const auto& s : stages) {
    stages_json.push_back({{"stage", s.stage},
                           {"executed", s.executed},
                           {"inputs", s.inputs},
                           {"outputs", s.outputs},
                           {"counts", s.counts},
                           {"started_at", s.started_at},
                           {"finished_at", s.finished_at}});
  }
  return io::json{
      {"tool_version", tool_version}, {"manifest_digest", manifest_digest}, {"seed", seed}, {"stages", stages_json}};
}

RunManifest RunManifest::from_json(const io::json& j) {
  RunManifest m;
  try {
    m.tool_version = j.at("tool_version").get<std::string>();
    m.manifest_digest = j.at("manifest_digest").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("stages")) {
      StageRecord r;
      r.stage = s.at("stage").get<std::string>();
      r.executed = s.value("executed", false);
      r.inputs = s.at("inputs").get<std::map<std::string, std::string>>();
      r.outputs = s.at("outputs").get<std::map<std::string, std::string>>();
      r.counts = s.value("counts", io::json::object());
      r.started_at = s.value("started_at", std::string());
      r.finished_at = s.value("finished_at", std::string());
      m.stages.push_back(std::move(r));
    }
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("run manifest: ") + e.what());
  }
  return m;
}

const StageRecord* RunManifest::find(std::string_view stage) const {
  for (const auto& s : stages) {
    if (s.stage == stage) return &s;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Execution

namespace {

class Lock {
 public:
  explicit Lock(fs::path path) : path_(std::move(path)) {
    fs::create_directories(path_.parent_path());
    fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd_ < 0) {
      throw Error(ErrorCode::IoError, "run directory is locked by another run (remove " + path_.string() +
                                          " if no run is active)");
    }
    const auto pid = std::to_string(::getpid()) + "\n";
    if (::write(fd_, pid.data(), pid.size()) < 0) {
      // The pid is informational only.
    }
  }
  ~Lock() {
    ::close(fd_);
    std::error_code ec;
    fs::remove(path_, ec);
  }
  Lock(const Lock&) = delete;
  Lock& operator=(const Lock&) = delete;

 private:
  fs::path path_;
  int fd_ = -1;
};

std::string now_utc() {
  return fmt::format("{:%Y-%m-%dT%H:%M:%SZ}",
                     std::chrono::time_point_cast<std::chrono::seconds>(std::chrono::system_clock::now()));
}

std::string tree_digest(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".md" || ext == ".txt" || ext == ".markdown") files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  std::string listing;
  for (const auto& f : files) listing += f.generic_string() + '\0' + sha256_file(dir / f).hex() + '\n';
  return sha256(listing).hex();
}

class Runner {
 public:
  Runner(const PipelineManifest& m, const Logger& log) : m_(m), log_(log), run_(m.resolve(m.run_dir)) {}

  RunManifest run(const std::vector<Stage>& selected) {
    Lock lock(run_ / kLockName);
    RunManifest previous;
    bool have_previous = false;
    if (fs::exists(run_ / kRunManifestName)) {
      try {
        previous = RunManifest::from_json(io::json::parse(io::read_file(run_ / kRunManifestName)));
        have_previous = true;
      } catch (const std::exception&) {
        say("previous run manifest unreadable; running every selected stage");
      }
    }

    manifest_.manifest_digest = m_.digest();
    manifest_.seed = m_.seed;
    io::write_file(run_ / artifact::kTrainConfig, train_config_block(&m_).dump(2) + "\n");

    std::set<Stage> ran;
    for (Stage s : all_stages()) {
      const std::string name(to_string(s));
      if (std::find(selected.begin(), selected.end(), s) == selected.end()) {
        if (have_previous && m_.has_stage(s)) {
          if (const auto* rec = previous.find(name)) {
            StageRecord kept = *rec;
            kept.executed = false;
            manifest_.stages.push_back(std::move(kept));
          }
        }
        continue;
      }
      StageRecord rec;
      rec.stage = name;
      try {
        rec.inputs = input_digests(s);
        bool upstream_ran = false;
        for (Stage dep : stage_dependencies(s)) upstream_ran |= ran.contains(dep) && reads_from_run(s, dep);
        const StageRecord* old = have_previous ? previous.find(name) : nullptr;
        if (!upstream_ran && old && old->inputs == rec.inputs && outputs_intact(*old)) {
          rec = *old;
          rec.executed = false;
          say(fmt::format("{}: up to date, skipped", name));
        } else {
          rec.started_at = now_utc();
          outputs_.clear();
          rec.counts = execute(s);
          for (const auto& rel : outputs_) rec.outputs[rel] = sha256_file(run_ / rel).hex();
          rec.finished_at = now_utc();
          rec.executed = true;
          ran.insert(s);
          say(fmt::format("{}: done {}", name, rec.counts.dump()));
        }
      } catch (const std::exception& e) {
        write_manifest();
        throw Error(ErrorCode::StageFailure, fmt::format("stage '{}': {}", name, e.what()));
      }
      manifest_.stages.push_back(std::move(rec));
      write_manifest();
    }
    return manifest_;
  }

 private:
  void say(const std::string& msg) const {
    if (log_) log_(msg);
  }

  void write_manifest() const { io::write_file(run_ / kRunManifestName, manifest_.to_json().dump(2) + "\n"); }

  bool outputs_intact(const StageRecord& rec) const {
    for (const auto& [rel, hex] : rec.outputs) {
      if (!fs::exists(run_ / rel) || sha256_file(run_ / rel).hex() != hex) return false;
    }
    return !rec.outputs.empty();
  }

  bool reads_from_run(Stage s, Stage dep) const {
    switch (s) {
      case Stage::dedup: return m_.dedup.input.empty();
      case Stage::quality: return m_.quality.input.empty();
      case Stage::mix: return m_.mix.input.empty();
      case Stage::bench: return m_.bench.input.empty();
      case Stage::eval: return m_.eval.bench.empty();
      case Stage::rag: return dep == Stage::bench ? m_.rag.bench.empty() : m_.rag.corpus.empty();
      default: return false;
    }
  }

  fs::path source(const std::string& explicit_path, std::string_view run_artifact) const {
    const fs::path p = explicit_path.empty() ? run_ / run_artifact : m_.resolve(explicit_path);
    if (!fs::exists(p)) throw Error(ErrorCode::IoError, "missing input " + p.string());
    return p;
  }

  fs::path corpus_in(Stage s) const {
    switch (s) {
      case Stage::dedup: return source(m_.dedup.input, artifact::kIngested);
      case Stage::quality: return source(m_.quality.input, artifact::kDeduped);
      case Stage::mix: return source(m_.mix.input, artifact::kCurated);
      case Stage::bench: return source(m_.bench.input, artifact::kCurated);
      case Stage::rag: return source(m_.rag.corpus, artifact::kCurated);
      default: throw Error(ErrorCode::InvalidArgument, "stage has no corpus input");
    }
  }

  fs::path bench_in(Stage s) const {
    return s == Stage::eval ? source(m_.eval.bench, artifact::kBench) : source(m_.rag.bench, artifact::kBench);
  }

  std::map<std::string, std::string> input_digests(Stage s) const {
    const io::json cfg = m_.to_json();
    const std::string name(to_string(s));
    io::json stage_cfg{{"seed", m_.seed}, {"config", cfg.contains(name) ? cfg[name] : io::json()}};
    if (s == Stage::ingest) stage_cfg["input"] = m_.input;
    if (s == Stage::mix) stage_cfg["scale"] = m_.scale;
    std::map<std::string, std::string> in{{"config", sha256(stage_cfg.dump()).hex()}};
    auto file = [&](const std::string& key, const fs::path& p) { in[key] = sha256_file(p).hex(); };
    auto client_file = [&](const ClientSpec& c) {
      if (c.kind == "responses") file("responses", m_.resolve(c.path));
    };
    switch (s) {
      case Stage::ingest: {
        const fs::path dir = m_.resolve(m_.input);
        if (!fs::is_directory(dir)) throw Error(ErrorCode::IoError, "missing input directory " + dir.string());
        in["input"] = tree_digest(dir);
        break;
      }
      case Stage::dedup:
      case Stage::mix: file("corpus", corpus_in(s)); break;
      case Stage::quality:
        file("corpus", corpus_in(s));
        file("lexicon", m_.resolve(m_.quality.lexicon));
        break;
      case Stage::bench:
        file("corpus", corpus_in(s));
        file("lexicon", m_.resolve(m_.bench.lexicon));
        file("taxonomy", m_.resolve(m_.bench.taxonomy));
        client_file(m_.bench.probe);
        break;
      case Stage::eval:
        file("bench", bench_in(s));
        client_file(m_.eval.client);
        break;
      case Stage::rag:
        file("corpus", corpus_in(s));
        file("bench", bench_in(s));
        client_file(m_.rag.client);
        break;
      case Stage::rlvr:
        if (!m_.rlvr.task.empty()) file("task", m_.resolve(m_.rlvr.task));
        break;
    }
    return in;
  }

  void emit(std::string_view rel, std::string_view content) {
    io::write_file(run_ / rel, content);
    outputs_.emplace_back(rel);
  }

  std::uint64_t stage_seed(Stage s) const { return derive_seed(m_.seed, to_string(s)); }

  io::json execute(Stage s) {
    switch (s) {
      case Stage::ingest: return ingest();
      case Stage::dedup: return dedup();
      case Stage::quality: return quality();
      case Stage::mix: return mix();
      case Stage::bench: return bench();
      case Stage::eval: return eval();
      case Stage::rag: return rag();
      case Stage::rlvr: return rlvr_stage();
    }
    return {};
  }

  io::json ingest() {
    const auto docs = ingest_directory(m_.resolve(m_.input), m_.ingest.default_category);
    if (docs.empty()) throw Error(ErrorCode::EmptyCorpus, "no documents under " + m_.input);
    emit(artifact::kIngested, corpus_to_jsonl(docs));
    std::size_t fragments = 0, tokens = 0, replaced = 0;
    for (const auto& d : docs) {
      fragments += d.fragments.size();
      tokens += d.token_count();
      replaced += d.replaced_sequences;
    }
    return {{"documents", docs.size()}, {"fragments", fragments}, {"tokens", tokens}, {"replaced_sequences", replaced}};
  }

  io::json dedup() {
    const auto docs = load_corpus(corpus_in(Stage::dedup));
    ApproxDedupParams p;
    p.num_hashes = m_.dedup.num_hashes;
    p.bands = m_.dedup.bands;
    p.rows = m_.dedup.rows;
    p.shingle_width = m_.dedup.shingle_width;
    p.seed = stage_seed(Stage::dedup);
    p.workers = m_.workers;
    const auto report = dedup_corpus(docs, m_.dedup.threshold, p);
    const auto kept = kept_documents(docs, report);
    emit(artifact::kDeduped, corpus_to_jsonl(kept));
    emit(artifact::kDedupReport, report.to_json().dump(2) + "\n");
    std::size_t exact = 0;
    for (const auto& d : report.dropped) exact += d.reason == DropReason::exact_duplicate;
    return {{"input_documents", docs.size()},
            {"kept", kept.size()},
            {"exact_duplicates", exact},
            {"near_duplicates", report.dropped.size() - exact}};
  }

  io::json quality() {
    const auto docs = load_corpus(corpus_in(Stage::quality));
    const auto lexicon = DomainLexicon::load(m_.resolve(m_.quality.lexicon));
    CurationConfig cfg;
    cfg.order = m_.quality.order;
    cfg.ppl_factor = m_.quality.ppl_factor;
    cfg.rel_min = m_.quality.rel_min;
    cfg.workers = m_.workers;
    const auto result = curate_corpus(docs, lexicon, cfg);
    emit(artifact::kCurated, corpus_to_jsonl(result.documents));
    std::string reports;
    std::size_t counts[3] = {0, 0, 0};
    for (const auto& r : result.reports) {
      reports += io::to_jsonl_line(r.to_json());
      ++counts[static_cast<int>(r.verdict)];
    }
    emit(artifact::kQualityReport, reports);
    return {{"documents", result.documents.size()},
            {"pass", counts[0]},
            {"repaired", counts[1]},
            {"dropped", counts[2]},
            {"ppl_max", result.ppl_max}};
  }

  io::json mix() {
    const auto docs = load_corpus(corpus_in(Stage::mix));
    const auto budget = std::max<std::uint64_t>(
        1, static_cast<std::uint64_t>(std::llround(static_cast<double>(m_.mix.total_tokens) * m_.scale)));
    const auto plan = plan_mixture(budget, m_.mix.ratio, stage_seed(Stage::mix));
    auto has = [&](std::string_view c) {
      return std::any_of(plan.ratio.begin(), plan.ratio.end(), [&](const auto& e) { return e.first == c; });
    };
    Pools pools;
    for (const auto& d : docs) {
      if (has(d.category)) {
        pools[d.category].push_back(d);
      } else if (is_domain_category(d.category) && has("domain")) {
        pools["domain"].push_back(d);
      }
    }
    const auto result = sample_corpus(pools, plan);
    emit(artifact::kMixed, corpus_to_jsonl(result.documents));
    io::json plan_json{{"plan", plan.to_json()}, {"result", result.to_json()}};
    emit(artifact::kMixPlan, plan_json.dump(2) + "\n");
    emit(artifact::kStats, corpus_stats(result.documents).to_csv());
    return {{"budget", budget}, {"documents", result.documents.size()}, {"tokens", result.total_tokens()}};
  }

  io::json bench() {
    const auto docs = load_corpus(corpus_in(Stage::bench));
    const auto lexicon = DomainLexicon::load(m_.resolve(m_.bench.lexicon));
    const auto taxonomy = Taxonomy::load(m_.resolve(m_.bench.taxonomy));
    const FragmentLookup lookup(docs);

    std::unique_ptr<ModelClient> http;
    auto need_http = [&]() -> ModelClient& {
      if (!http) http = HttpModelClient::from_env();
      return *http;
    };
    std::unique_ptr<ItemGenerator> generator;
    if (m_.bench.generator == "template") {
      generator = std::make_unique<TemplateGenerator>(lexicon);
    } else {
      generator = std::make_unique<ModelGenerator>(need_http());
    }
    std::unique_ptr<ItemVerifier> verifier;
    if (m_.bench.verifier == "rule") {
      verifier = std::make_unique<RuleVerifier>();
    } else {
      verifier = std::make_unique<ModelVerifier>(need_http());
    }
    const auto probe = make_client(m_.bench.probe, {}, &lookup, stage_seed(Stage::bench));

    BenchConfig cfg;
    cfg.target_n = m_.bench.target_n;
    cfg.seed = stage_seed(Stage::bench);
    cfg.probe_queries = m_.bench.probe_queries;
    cfg.workers = m_.workers;
    const auto result = build_benchmark(docs, lexicon, taxonomy, *generator, *verifier, *probe, cfg);
    emit(artifact::kBench, bench_to_jsonl(result.items, {{"generator", generator->name()}}));
    emit(artifact::kBenchSummary, result.summary().dump(2) + "\n");
    emit(artifact::kBenchReview, export_review(result.items));
    return result.summary();
  }

  EvalProtocol protocol(Stage s, const ModelClient& client) const {
    EvalProtocol p;
    p.model = client.name();
    p.seed = stage_seed(s);
    p.max_tokens = static_cast<int>(m_.eval.max_tokens);
    p.in_flight = std::max(1u, m_.eval.in_flight);
    return p;
  }

  io::json eval() {
    const auto items = load_bench(bench_in(Stage::eval));
    std::optional<std::vector<Document>> docs;
    std::optional<FragmentLookup> lookup;
    if (m_.eval.client.kind == "source_oracle") {
      docs = load_corpus(source(m_.rag.corpus, artifact::kCurated));
      lookup.emplace(*docs);
    }
    const auto client = make_client(m_.eval.client, items, lookup ? &*lookup : nullptr, stage_seed(Stage::eval));
    const auto proto = protocol(Stage::eval, *client);
    const auto records = run_eval(items, *client, proto);
    const auto report = accuracy_report(records, items, proto.digest());
    emit(artifact::kEvalRecords, records_to_jsonl(records));
    emit(artifact::kEvalReport, report.to_json().dump(2) + "\n");
    return {{"items", report.n_items},
            {"correct", report.n_correct},
            {"accuracy", format_percent(report.accuracy_hundredths)}};
  }

  io::json rag() {
    const auto docs = load_corpus(corpus_in(Stage::rag));
    const auto items = load_bench(bench_in(Stage::rag));
    const FragmentLookup lookup(docs);
    FeatureHashEmbedder provider(m_.rag.dims, stage_seed(Stage::rag));
    const auto index = build_index(docs, provider, m_.workers);
    index.save(run_ / artifact::kRagIndex);
    outputs_.emplace_back(artifact::kRagIndex);
    const auto client = make_client(m_.rag.client, items, &lookup, stage_seed(Stage::rag));
    RagConfig cfg;
    cfg.k = m_.rag.k;
    cfg.token_budget = m_.rag.token_budget;
    const auto result = rag_eval(items, index, provider, lookup, *client, cfg, protocol(Stage::rag, *client));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& refs = result.records[i].context_refs;
      hits += std::find(refs.begin(), refs.end(), items[i].source_ref.fragment()) != refs.end();
    }
    emit(artifact::kRagRecords, records_to_jsonl(result.records));
    emit(artifact::kRagReport, result.report.to_json().dump(2) + "\n");
    return {{"items", result.report.n_items},
            {"correct", result.report.n_correct},
            {"accuracy", format_percent(result.report.accuracy_hundredths)},
            {"source_hits", hits},
            {"index_entries", index.size()}};
  }

  io::json rlvr_stage() {
    const auto& x = m_.rlvr;
    const rlvr::ToyTask task =
        x.task.empty()
            ? rlvr::make_recall_task(x.prompts, x.answer_len, derive_seed(m_.seed, "rlvr-task"), 3, 40,
                                     x.config.max_response_len)
            : rlvr::ToyTask::from_json(io::json::parse(io::read_file(m_.resolve(x.task))));
    rlvr::RlvrConfig cfg = x.config;
    cfg.seed = stage_seed(Stage::rlvr);
    cfg.workers = m_.workers;
    const auto result = rlvr::train_rlvr(task, cfg, x.init);
    const auto& rows = result.trace.rows;
    const auto lengths = result.trace.lengths();
    const std::size_t window = std::min<std::size_t>(10, lengths.size());
    const io::json summary{{"init", to_string(x.init)},
                           {"config", cfg.to_json()},
                           {"iterations", rows.size()},
                           {"initial_reward", rows.front().mean_reward},
                           {"final_reward", rows.back().mean_reward},
                           {"initial_length", rows.front().mean_length},
                           {"final_length", rows.back().mean_length},
                           {"initial_entropy", rows.front().entropy},
                           {"final_entropy", rows.back().entropy},
                           {"final_val_accuracy", rows.back().val_accuracy},
                           {"collapse", rlvr::detect_collapse(lengths, window)}};
    emit(artifact::kRlvrTask, task.to_json().dump() + "\n");
    emit(artifact::kRlvrTrace, result.trace.to_csv());
    emit(artifact::kRlvrSummary, summary.dump(2) + "\n");
    return {{"iterations", rows.size()},
            {"final_reward", rows.back().mean_reward},
            {"collapse", summary["collapse"]}};
  }

  const PipelineManifest& m_;
  const Logger& log_;
  fs::path run_;
  RunManifest manifest_;
  std::vector<std::string> outputs_;
};

}  // namespace

RunManifest run_pipeline(const PipelineManifest& manifest, std::optional<std::vector<Stage>> subset,
                         const Logger& log) {
  std::vector<Stage> selected;
  for (Stage s : manifest.stages) {
    if (!subset || std::find(subset->begin(), subset->end(), s) != subset->end()) selected.push_back(s);
  }
  if (subset) {
    for (Stage s : *subset) {
      if (!manifest.has_stage(s)) {
        throw Error(ErrorCode::InvalidArgument, fmt::format("stage '{}' is not in the manifest", to_string(s)));
      }
    }
  }
  return Runner(manifest, log).run(selected);
}

}  // namespace forge
