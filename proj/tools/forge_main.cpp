// forge: command-line front end. Every module has a subcommand; `run`
// executes a whole manifest.
//
// Exit codes: 0 success, 1 usage or validation failure, 2 stage or runtime
// failure.

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "forge/bench_item.hpp"
#include "forge/benchgen.hpp"
#include "forge/corpus.hpp"
#include "forge/dedup.hpp"
#include "forge/error.hpp"
#include "forge/eval.hpp"
#include "forge/mixer.hpp"
#include "forge/pipeline.hpp"
#include "forge/quality.hpp"
#include "forge/rag.hpp"
#include "forge/rlvr.hpp"
#include "forge/synth.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/io.hpp"

namespace {

using namespace forge;

constexpr int kValidationFailure = 1;
constexpr int kStageFailure = 2;

void log_line(std::string_view msg) { fmt::print(stderr, "{}\n", msg); }

void write_or_print(const std::string& path, std::string_view content) {
  if (path.empty() || path == "-") {
    std::fwrite(content.data(), 1, content.size(), stdout);
  } else {
    io::write_file(path, content);
  }
}

CategoryWeights parse_ratio(const std::string& spec) {
  CategoryWeights out;
  std::size_t pos = 0;
  while (pos <= spec.size()) {
    const auto comma = spec.find(',', pos);
    const auto part = spec.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw Error(ErrorCode::InvalidArgument, "ratio entries look like category=weight");
    out.emplace_back(part.substr(0, eq), std::stod(part.substr(eq + 1)));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

struct ClientFlags {
  std::string kind = "scripted_rate";
  double rate = 0.5;
  std::string responses;

  void attach(CLI::App* cmd, std::string default_kind) {
    kind = std::move(default_kind);
    cmd->add_option("--client", kind, "scripted_rate|always_correct|abstain|random|responses|source_oracle|http")
        ->capture_default_str();
    cmd->add_option("--rate", rate, "accuracy of the scripted_rate mock")->capture_default_str();
    cmd->add_option("--responses", responses, "JSON {item_id: reply} for the responses mock");
  }
  ClientSpec spec() const { return {kind, rate, responses}; }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"forge: corpus curation, benchmark construction, evaluation and RLVR simulation"};
  app.require_subcommand(1);
  unsigned workers = 1;
  app.add_option("--workers", workers, "threads for parallel stages (0 = all cores)")->capture_default_str();

  // synth
  auto* synth = app.add_subcommand("synth", "write a synthetic Markdown corpus with planted artifacts");
  SynthConfig sc;
  std::string synth_out, synth_taxonomy = std::string(FORGE_DATA_DIR) + "/lexicon/taxonomy.json";
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--taxonomy", synth_taxonomy)->capture_default_str();
  synth->add_option("--seed", sc.seed)->capture_default_str();
  synth->add_option("--domain-docs", sc.domain_docs)->capture_default_str();
  synth->add_option("--general-docs", sc.general_docs)->capture_default_str();
  synth->add_option("--near-duplicates", sc.near_duplicate_pairs)->capture_default_str();
  synth->add_option("--decoys", sc.decoy_pairs)->capture_default_str();
  synth->add_option("--exact-copies", sc.exact_copies)->capture_default_str();
  synth->add_option("--gibberish", sc.gibberish_paragraphs)->capture_default_str();
  synth->add_option("--boilerplate", sc.boilerplate_paragraphs)->capture_default_str();

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Markdown directory -> corpus JSONL");
  std::string ingest_in, ingest_out, default_category{category::kGeneral};
  ingest->add_option("--input", ingest_in)->required()->check(CLI::ExistingDirectory);
  ingest->add_option("--out", ingest_out)->required();
  ingest->add_option("--default-category", default_category)->capture_default_str();

  // dedup
  auto* dedup = app.add_subcommand("dedup", "exact + MinHash/LSH deduplication");
  std::string dedup_in, dedup_out, dedup_report;
  double threshold = 0.8;
  ApproxDedupParams dp;
  dedup->add_option("--corpus", dedup_in)->required()->check(CLI::ExistingFile);
  dedup->add_option("--out", dedup_out)->required();
  dedup->add_option("--report", dedup_report);
  dedup->add_option("--threshold", threshold)->capture_default_str();
  dedup->add_option("--num-hashes", dp.num_hashes)->capture_default_str();
  dedup->add_option("--bands", dp.bands)->capture_default_str();
  dedup->add_option("--rows", dp.rows)->capture_default_str();
  dedup->add_option("--shingle-width", dp.shingle_width)->capture_default_str();

  // quality
  auto* quality = app.add_subcommand("quality", "rule filter, perplexity and relevance gate");
  std::string q_in, q_out, q_report, q_lexicon;
  CurationConfig cc;
  quality->add_option("--corpus", q_in)->required()->check(CLI::ExistingFile);
  quality->add_option("--lexicon", q_lexicon)->required()->check(CLI::ExistingFile);
  quality->add_option("--out", q_out)->required();
  quality->add_option("--report", q_report);
  quality->add_option("--order", cc.order)->capture_default_str();
  quality->add_option("--ppl-factor", cc.ppl_factor)->capture_default_str();
  quality->add_option("--rel-min", cc.rel_min)->capture_default_str();

  // mix
  auto* mix = app.add_subcommand("mix", "token-budgeted category mixing");
  std::string m_in, m_out, m_plan, ratio_spec = "domain=1,general=5";
  std::uint64_t budget = 0, mix_seed = 0;
  mix->add_option("--corpus", m_in)->required()->check(CLI::ExistingFile);
  mix->add_option("--out", m_out)->required();
  mix->add_option("--budget", budget, "total tokens")->required();
  mix->add_option("--ratio", ratio_spec, "category=weight,...; 'domain' pools every domain_* category")
      ->capture_default_str();
  mix->add_option("--seed", mix_seed)->capture_default_str();
  mix->add_option("--plan", m_plan, "write plan and realized counts as JSON");

  // stats
  auto* stats = app.add_subcommand("stats", "per-category document and token counts");
  std::string s_in, s_format = "csv";
  stats->add_option("--corpus", s_in)->required()->check(CLI::ExistingFile);
  stats->add_option("--format", s_format)->check(CLI::IsMember({"csv", "json"}))->capture_default_str();
  bool splits = false;
  double split_scale = 1.0;
  stats->add_flag("--splits", splits, "also print post-training split sizes");
  stats->add_option("--scale", split_scale, "scale for --splits")->capture_default_str();

  // bench
  auto* bench = app.add_subcommand("bench", "build a multiple-choice benchmark from a corpus");
  std::string b_in, b_out, b_lexicon, b_taxonomy, b_review, b_summary;
  BenchConfig bc;
  ClientFlags probe_flags;
  probe_flags.kind = "random";
  bench->add_option("--corpus", b_in)->required()->check(CLI::ExistingFile);
  bench->add_option("--lexicon", b_lexicon)->required()->check(CLI::ExistingFile);
  bench->add_option("--taxonomy", b_taxonomy)->required()->check(CLI::ExistingFile);
  bench->add_option("--out", b_out)->required();
  bench->add_option("--review", b_review, "write a review sheet CSV");
  bench->add_option("--summary", b_summary);
  bench->add_option("--target-n", bc.target_n)->capture_default_str();
  bench->add_option("--seed", bc.seed)->capture_default_str();
  bench->add_option("--probe-queries", bc.probe_queries)->capture_default_str();
  bench->add_option("--probe", probe_flags.kind, "random|abstain|http")->capture_default_str();

  // eval
  auto* eval = app.add_subcommand("eval", "score a model on a benchmark");
  std::string e_bench, e_records, e_report, e_corpus;
  EvalProtocol ep;
  ClientFlags eval_flags;
  eval->add_option("--bench", e_bench)->required()->check(CLI::ExistingFile);
  eval->add_option("--corpus", e_corpus, "needed by the source_oracle mock");
  eval->add_option("--records", e_records);
  eval->add_option("--report", e_report);
  eval->add_option("--seed", ep.seed)->capture_default_str();
  eval->add_option("--in-flight", ep.in_flight)->capture_default_str();
  eval_flags.attach(eval, "scripted_rate");

  // rag
  auto* rag = app.add_subcommand("rag", "closed-loop retrieval-augmented evaluation");
  std::string r_bench, r_corpus, r_records, r_report, r_index;
  RagConfig rc;
  std::size_t dims = 256;
  std::uint64_t rag_seed = 0;
  ClientFlags rag_flags;
  rag->add_option("--bench", r_bench)->required()->check(CLI::ExistingFile);
  rag->add_option("--corpus", r_corpus)->required()->check(CLI::ExistingFile);
  rag->add_option("--records", r_records);
  rag->add_option("--report", r_report);
  rag->add_option("--index", r_index, "write the vector index");
  rag->add_option("--k", rc.k)->capture_default_str();
  rag->add_option("--budget", rc.token_budget, "context token budget")->capture_default_str();
  rag->add_option("--dims", dims)->capture_default_str();
  rag->add_option("--seed", rag_seed)->capture_default_str();
  rag_flags.attach(rag, "source_oracle");

  // rlvr-sim
  auto* rl = app.add_subcommand("rlvr-sim", "GRPO training on a toy verifiable task");
  rlvr::RlvrConfig rlc;
  std::string init = "cold_start_biased", verifier = "exact", task_path, trace_out, task_out;
  std::size_t prompts = 64, answer_len = 4;
  rl->add_option("--beta", rlc.kl_coefficient)->capture_default_str();
  rl->add_option("--n-samples", rlc.n_samples_per_prompt)->capture_default_str();
  rl->add_option("--iterations", rlc.iterations)->capture_default_str();
  rl->add_option("--lr", rlc.learning_rate)->capture_default_str();
  rl->add_option("--batch", rlc.batch_prompts)->capture_default_str();
  rl->add_option("--init", init)->check(CLI::IsMember({"uniform", "cold_start_biased"}))->capture_default_str();
  rl->add_option("--verifier", verifier)->check(CLI::IsMember({"exact", "shortcut"}))->capture_default_str();
  rl->add_option("--seed", rlc.seed)->capture_default_str();
  rl->add_option("--task", task_path, "task JSON; default: generated recall task")->check(CLI::ExistingFile);
  rl->add_option("--prompts", prompts)->capture_default_str();
  rl->add_option("--answer-len", answer_len)->capture_default_str();
  rl->add_option("--trace", trace_out, "CSV trace (default stdout)");
  rl->add_option("--save-task", task_out);

  // run / validate / train-config
  auto* run = app.add_subcommand("run", "execute a pipeline manifest");
  std::string manifest_path;
  std::vector<std::string> stage_subset;
  run->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
  run->add_option("--stages", stage_subset, "run only these stages")->delimiter(',');
  std::string run_dir_override;
  run->add_option("--run-dir", run_dir_override, "override the manifest's run_dir");
  auto* validate = app.add_subcommand("validate", "check a manifest and print it fully defaulted");
  validate->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
  auto* train_cfg = app.add_subcommand("train-config", "print the documentation-only training config block");
  train_cfg->add_option("--manifest", manifest_path)->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kValidationFailure;
  }

  try {
    if (*synth) {
      const auto corpus = synthesize_corpus(sc, Taxonomy::load(synth_taxonomy));
      write_markdown_tree(synth_out, corpus);
      log_line(fmt::format("wrote {} documents to {}", corpus.documents.size(), synth_out));
    } else if (*ingest) {
      const auto docs = ingest_directory(ingest_in, default_category);
      save_corpus(ingest_out, docs);
      log_line(fmt::format("ingested {} documents", docs.size()));
    } else if (*dedup) {
      const auto docs = load_corpus(dedup_in);
      dp.workers = workers;
      const auto report = dedup_corpus(docs, threshold, dp);
      save_corpus(dedup_out, kept_documents(docs, report));
      if (!dedup_report.empty()) io::write_file(dedup_report, report.to_json().dump(2) + "\n");
      log_line(fmt::format("kept {} of {} documents", report.kept_ids.size(), docs.size()));
    } else if (*quality) {
      const auto docs = load_corpus(q_in);
      cc.workers = workers;
      const auto result = curate_corpus(docs, DomainLexicon::load(q_lexicon), cc);
      save_corpus(q_out, result.documents);
      if (!q_report.empty()) {
        std::string lines;
        for (const auto& r : result.reports) lines += io::to_jsonl_line(r.to_json());
        io::write_file(q_report, lines);
      }
      log_line(fmt::format("{} documents survive; ppl_max {:.3f}", result.documents.size(), result.ppl_max));
    } else if (*mix) {
      const auto docs = load_corpus(m_in);
      const auto plan = plan_mixture(budget, parse_ratio(ratio_spec), mix_seed);
      Pools pools;
      for (const auto& d : docs) {
        const bool named = std::any_of(plan.ratio.begin(), plan.ratio.end(),
                                       [&](const auto& e) { return e.first == d.category; });
        if (named) {
          pools[d.category].push_back(d);
        } else if (is_domain_category(d.category)) {
          pools["domain"].push_back(d);
        }
      }
      const auto result = sample_corpus(pools, plan);
      save_corpus(m_out, result.documents);
      if (!m_plan.empty()) {
        io::write_file(m_plan, io::json{{"plan", plan.to_json()}, {"result", result.to_json()}}.dump(2) + "\n");
      }
      log_line(fmt::format("mixed {} tokens in {} documents", result.total_tokens(), result.documents.size()));
    } else if (*stats) {
      const auto s = corpus_stats(load_corpus(s_in));
      write_or_print("", s_format == "csv" ? s.to_csv() : s.to_json().dump(2) + "\n");
      if (splits) {
        for (const auto& sp : default_splits(split_scale)) {
          std::printf("%s,%llu\n", std::string(to_string(sp.name)).c_str(),
                      static_cast<unsigned long long>(sp.target_count));
        }
      }
    } else if (*bench) {
      const auto docs = load_corpus(b_in);
      const FragmentLookup lookup(docs);
      const auto lexicon = DomainLexicon::load(b_lexicon);
      TemplateGenerator generator(lexicon);
      RuleVerifier rule_verifier;
      const auto probe = make_client({probe_flags.kind, 0.5, {}}, {}, &lookup, bc.seed);
      bc.workers = workers;
      const auto result = build_benchmark(docs, lexicon, Taxonomy::load(b_taxonomy), generator, rule_verifier, *probe, bc);
      save_bench(b_out, result.items, {{"generator", generator.name()}});
      if (!b_review.empty()) io::write_file(b_review, export_review(result.items));
      if (!b_summary.empty()) io::write_file(b_summary, result.summary().dump(2) + "\n");
      log_line(result.summary().dump());
    } else if (*eval) {
      const auto items = load_bench(e_bench);
      std::vector<Document> docs;
      if (!e_corpus.empty()) docs = load_corpus(e_corpus);
      const FragmentLookup lookup(docs);
      const auto client = make_client(eval_flags.spec(), items, e_corpus.empty() ? nullptr : &lookup, ep.seed);
      ep.model = client->name();
      const auto records = run_eval(items, *client, ep);
      const auto report = accuracy_report(records, items, ep.digest());
      if (!e_records.empty()) io::write_file(e_records, records_to_jsonl(records));
      write_or_print(e_report, report.to_json().dump(2) + "\n");
    } else if (*rag) {
      const auto items = load_bench(r_bench);
      const auto docs = load_corpus(r_corpus);
      const FragmentLookup lookup(docs);
      FeatureHashEmbedder provider(dims, rag_seed);
      const auto index = build_index(docs, provider, workers);
      if (!r_index.empty()) index.save(r_index);
      const auto client = make_client(rag_flags.spec(), items, &lookup, rag_seed);
      EvalProtocol proto;
      proto.model = client->name();
      proto.seed = rag_seed;
      const auto result = rag_eval(items, index, provider, lookup, *client, rc, proto);
      if (!r_records.empty()) io::write_file(r_records, records_to_jsonl(result.records));
      write_or_print(r_report, result.report.to_json().dump(2) + "\n");
    } else if (*rl) {
      const auto task = task_path.empty()
                            ? rlvr::make_recall_task(prompts, answer_len, derive_seed(rlc.seed, "rlvr-task"))
                            : rlvr::ToyTask::from_json(io::json::parse(io::read_file(task_path)));
      rlc.verifier = verifier == "exact" ? rlvr::VerifierKind::exact : rlvr::VerifierKind::shortcut;
      rlc.workers = workers;
      const auto result = rlvr::train_rlvr(task, rlc, rlvr::init_from_string(init));
      if (!task_out.empty()) io::write_file(task_out, task.to_json().dump() + "\n");
      write_or_print(trace_out, result.trace.to_csv());
      const auto lengths = result.trace.lengths();
      log_line(fmt::format("final reward {:.3f}, collapse {}", result.trace.rows.back().mean_reward,
                           rlvr::detect_collapse(lengths, std::min<std::size_t>(10, lengths.size()))));
    } else if (*validate || *run || *train_cfg) {
      std::optional<PipelineManifest> manifest;
      if (!manifest_path.empty()) {
        const auto v = validate_config_file(manifest_path);
        for (const auto& msg : v.violations) log_line(msg);
        if (!v.ok()) return kValidationFailure;
        manifest = v.manifest;
      }
      if (*validate) {
        std::cout << manifest->to_json().dump(2) << "\n";
      } else if (*train_cfg) {
        std::cout << train_config_block(manifest ? &*manifest : nullptr).dump(2) << "\n";
      } else {
        if (workers != 1) manifest->workers = workers;
        if (!run_dir_override.empty()) manifest->run_dir = std::filesystem::absolute(run_dir_override).string();
        std::optional<std::vector<Stage>> subset;
        if (!stage_subset.empty()) {
          subset.emplace();
          for (const auto& s : stage_subset) subset->push_back(stage_from_string(s));
        }
        const auto rm = run_pipeline(*manifest, subset, log_line);
        std::cout << "run digest " << rm.run_digest() << "\n";
      }
    }
  } catch (const Error& e) {
    log_line(e.what());
    if (e.code() == ErrorCode::ParseError || e.code() == ErrorCode::SchemaViolation) return kValidationFailure;
    return kStageFailure;
  } catch (const std::exception& e) {
    log_line(std::string("error: ") + e.what());
    return kStageFailure;
  }
  return 0;
}
