#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "forge/bench_item.hpp"
#include "forge/client.hpp"
#include "forge/corpus.hpp"
#include "forge/mixer.hpp"
#include "forge/rlvr.hpp"
#include "forge/util/io.hpp"

namespace forge {

inline constexpr std::string_view kToolVersion = "forge 0.1.0";
inline constexpr int kManifestSchemaVersion = 1;

enum class Stage { ingest, dedup, quality, mix, bench, eval, rag, rlvr };
std::string_view to_string(Stage s);
Stage stage_from_string(std::string_view s);  // throws Error(InvalidArgument)
const std::vector<Stage>& all_stages();        // canonical order
/// Stages whose outputs this stage reads by default.
std::vector<Stage> stage_dependencies(Stage s);

/// Model endpoint or mock used by a stage.
///   scripted_rate   correct on round(rate * n) items picked by a seeded hash
///   always_correct  the answer key for every item
///   abstain         a reply with no extractable choice
///   random          a seeded uniform label
///   responses       {item_id: reply} from `path`
///   source_oracle   correct iff the prompt contains the item's source text
///   http            HttpModelClient::from_env()
struct ClientSpec {
  std::string kind = "scripted_rate";
  double rate = 0.5;
  std::string path;

  io::json to_json() const;
};

/// Builds the client a stage uses. Item- and corpus-dependent mocks need
/// `items` / `lookup`; passing null for them throws Error(InvalidArgument).
std::unique_ptr<ModelClient> make_client(const ClientSpec& spec, std::span<const BenchItem> items,
                                         const FragmentLookup* lookup, std::uint64_t seed);

struct PipelineManifest {
  int schema_version = kManifestSchemaVersion;
  std::uint64_t seed = 0;
  double scale = 1.0;
  std::string input;  // corpus directory read by ingest
  std::string run_dir = "run";
  std::vector<Stage> stages;
  unsigned workers = 1;
  std::filesystem::path base_dir;  // relative paths resolve against this; not serialized

  struct Ingest {
    std::string default_category{category::kGeneral};
  } ingest;
  struct Dedup {
    double threshold = 0.8;
    std::size_t num_hashes = 256;
    std::size_t bands = 32;
    std::size_t rows = 8;
    std::size_t shingle_width = kDefaultShingleWidth;
    std::string input;
  } dedup;
  struct Quality {
    std::string lexicon;
    std::size_t order = 3;
    double ppl_factor = 10.0;
    double rel_min = 0.02;
    std::string input;
  } quality;
  struct Mix {
    std::uint64_t total_tokens = 20000;  // multiplied by scale
    CategoryWeights ratio{{"domain", 1.0}, {"general", 5.0}};
    std::string input;
  } mix;
  struct Bench {
    std::string lexicon;
    std::string taxonomy;
    std::size_t target_n = 40;
    std::size_t probe_queries = 3;
    std::string generator = "template";
    std::string verifier = "rule";
    ClientSpec probe{"random", 0.5, {}};
    std::string input;
  } bench;
  struct Eval {
    ClientSpec client;
    std::size_t max_tokens = 16;
    unsigned in_flight = 4;
    std::string bench;
  } eval;
  struct Rag {
    ClientSpec client{"source_oracle", 0.5, {}};
    std::size_t k = 5;
    std::size_t token_budget = 1024;
    std::size_t dims = 256;
    std::string bench;
    std::string corpus;
  } rag;
  struct Rlvr {
    rlvr::RlvrConfig config;
    rlvr::Init init = rlvr::Init::cold_start_biased;
    std::size_t prompts = 64;
    std::size_t answer_len = 4;
    std::string task;
  } rlvr;

  std::filesystem::path resolve(std::string_view path) const;
  bool has_stage(Stage s) const;
  /// Fully-defaulted canonical form.
  io::json to_json() const;
  std::string digest() const;
};

struct ValidationResult {
  std::optional<PipelineManifest> manifest;  // set iff violations is empty
  std::vector<std::string> violations;       // "field: problem"

  bool ok() const { return violations.empty(); }
};

/// Checks the whole document and reports every violation it finds.
ValidationResult validate_config(const io::json& document, const std::filesystem::path& base_dir);
/// Throws Error(ParseError) when the file is not JSON.
ValidationResult validate_config_file(const std::filesystem::path& path);

/// Documentation-only record of the external training stages: the published
/// CPT / SFT / GRPO hyperparameters next to the desk-scale simulator values.
/// Nothing here is executed.
io::json train_config_block(const PipelineManifest* manifest = nullptr);

struct StageRecord {
  std::string stage;
  bool executed = false;
  std::map<std::string, std::string> inputs;   // name -> sha256 hex
  std::map<std::string, std::string> outputs;  // run-dir relative path -> sha256 hex
  io::json counts = io::json::object();
  std::string started_at;
  std::string finished_at;
};

struct RunManifest {
  std::string tool_version{kToolVersion};
  std::string manifest_digest;
  std::uint64_t seed = 0;
  std::vector<StageRecord> stages;

  /// Digest over everything except timestamps and the executed flags.
  std::string run_digest() const;
  io::json to_json() const;
  static RunManifest from_json(const io::json& j);
  const StageRecord* find(std::string_view stage) const;
};

inline constexpr std::string_view kRunManifestName = "run_manifest.json";
inline constexpr std::string_view kLockName = ".lock";

/// Fixed run-dir relative artifact names.
namespace artifact {
inline constexpr std::string_view kIngested = "corpus/ingested.jsonl";
inline constexpr std::string_view kDeduped = "corpus/deduped.jsonl";
inline constexpr std::string_view kDedupReport = "reports/dedup.json";
inline constexpr std::string_view kCurated = "corpus/curated.jsonl";
inline constexpr std::string_view kQualityReport = "reports/quality.jsonl";
inline constexpr std::string_view kMixed = "corpus/mixed.jsonl";
inline constexpr std::string_view kMixPlan = "reports/mix_plan.json";
inline constexpr std::string_view kStats = "reports/stats.csv";
inline constexpr std::string_view kBench = "bench/bench.jsonl";
inline constexpr std::string_view kBenchSummary = "bench/summary.json";
inline constexpr std::string_view kBenchReview = "bench/review.csv";
inline constexpr std::string_view kEvalRecords = "eval/records.jsonl";
inline constexpr std::string_view kEvalReport = "eval/report.json";
inline constexpr std::string_view kRagIndex = "rag/index.bin";
inline constexpr std::string_view kRagRecords = "rag/records.jsonl";
inline constexpr std::string_view kRagReport = "rag/report.json";
inline constexpr std::string_view kRlvrTask = "rlvr/task.json";
inline constexpr std::string_view kRlvrTrace = "rlvr/trace.csv";
inline constexpr std::string_view kRlvrSummary = "rlvr/summary.json";
inline constexpr std::string_view kTrainConfig = "train_config.json";
}  // namespace artifact

using Logger = std::function<void(std::string_view)>;

/// Runs the manifest's stages (or the given subset, kept in manifest order)
/// inside run_dir, which it holds exclusively through a lockfile. A stage is
/// skipped when the previous run recorded the same input digests and its
/// outputs are intact, unless a stage it depends on ran in this invocation.
/// Throws Error(StageFailure) naming the stage and cause; stages already
/// finished keep their artifacts and the partial RunManifest is written.
RunManifest run_pipeline(const PipelineManifest& manifest, std::optional<std::vector<Stage>> subset = std::nullopt,
                         const Logger& log = {});

}  // namespace forge
