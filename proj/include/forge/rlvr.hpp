#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "forge/util/io.hpp"

namespace forge::rlvr {

/// Action alphabet plus prompt symbols. Actions are ids [0, vocab.size());
/// prompt-only symbols get ids after them.
struct ToyTask {
  struct Prompt {
    std::vector<std::string> tokens;
    std::string answer;  // space-separated action tokens
  };
  std::vector<std::string> vocab;  // response alphabet, includes the stop token
  std::string stop_token = "<eos>";
  std::vector<Prompt> prompts;
  std::vector<Prompt> validation;
  std::size_t max_len = 32;

  /// {vocab, stop_token, prompts:[{tokens, answer}], validation, max_len}.
  io::json to_json() const;
  /// Throws Error(ParseError) / Error(InvalidArgument) (stop token missing,
  /// answers not expressible within max_len).
  static ToyTask from_json(const io::json& j);
  void check() const;
};

/// Digit-string recall task: each prompt is a random noise prefix followed by
/// two problem symbols; the answer is a random digit string. Prompts are
/// drawn until every two-symbol context along the answer paths has a single
/// continuation. Validation prompts reuse the problem symbols with fresh noise.
ToyTask make_recall_task(std::size_t n_prompts, std::size_t answer_len, std::uint64_t seed,
                         std::size_t noise_len = 3, std::size_t noise_symbols = 40, std::size_t max_len = 32);

/// Symbol ids of a task: actions first, then prompt symbols in first-seen order.
class SymbolTable {
 public:
  explicit SymbolTable(const ToyTask& task);
  int id(std::string_view symbol) const;  // throws Error(InvalidArgument)
  const std::string& symbol(int id) const;
  std::size_t actions() const { return actions_; }
  int stop() const { return stop_; }
  std::vector<int> encode(std::span<const std::string> symbols) const;

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, int> ids_;
  std::size_t actions_;
  int stop_;
};

/// Last two symbols before the next action; -1 pads short histories.
struct Context {
  int a = -1;
  int b = -1;
  bool operator==(const Context&) const = default;
};

struct ContextHash {
  std::size_t operator()(const Context& c) const noexcept;
};

Context context_of(std::span<const int> history);

/// Tabular softmax policy over actions. Contexts without their own row use
/// the default row.
class Policy {
 public:
  Policy(std::size_t actions, double temperature = 1.0);

  std::size_t actions() const { return actions_; }
  double temperature() const { return temperature_; }
  std::vector<double>& default_row() { return default_row_; }
  const std::vector<double>& default_row() const { return default_row_; }

  const std::vector<double>& logits(const Context& c) const;
  std::vector<double>& mutable_logits(const Context& c);  // materializes the row
  std::vector<double> probabilities(const Context& c) const;
  const std::unordered_map<Context, std::vector<double>, ContextHash>& rows() const { return rows_; }

 private:
  std::size_t actions_;
  double temperature_;
  std::vector<double> default_row_;
  std::unordered_map<Context, std::vector<double>, ContextHash> rows_;
};

enum class Init { uniform, cold_start_biased };
std::string_view to_string(Init init);
Init init_from_string(std::string_view s);

/// uniform: all logits zero. cold_start_biased: stop_bias on the stop action
/// everywhere, plus `bias` on the correct next action along every training
/// answer path.
Policy initial_policy(const ToyTask& task, const SymbolTable& table, Init init, double bias = 3.0,
                      double stop_bias = 0.5, double temperature = 1.0);

enum class VerifierKind { exact, shortcut };

/// 1 iff the detokenized response equals the answer after whitespace
/// normalization and case folding. The shortcut variant also accepts the
/// empty response.
int verify_reward(std::span<const std::string> response, std::string_view answer,
                  VerifierKind kind = VerifierKind::exact);

struct Rollout {
  std::vector<int> actions;  // includes the stop action when emitted
  std::vector<Context> contexts;
  std::vector<double> entropies;  // of the sampling distribution at each step
  bool stopped = false;
  std::size_t length() const;    // actions excluding stop
};

/// n rollouts, rollout i drawing from its own stream derived from (seed, i).
/// Each ends at the stop action or after max_len non-stop actions.
std::vector<Rollout> sample_group(const Policy& policy, std::span<const int> prompt, std::size_t n,
                                  std::uint64_t seed, std::size_t max_len, int stop);

Rollout greedy_rollout(const Policy& policy, std::span<const int> prompt, std::size_t max_len, int stop);

/// (r - mean) / (population std + eps).
std::vector<double> grpo_advantages(std::span<const double> rewards, double eps = 1e-8);

/// r - ln r - 1 with r = p_ref / p_theta.
double kl_low_var(double p_theta, double p_ref);
std::vector<double> kl_low_var(const Policy& policy, const Policy& reference, const Rollout& rollout);

struct GrpoGroup {
  std::size_t prompt_index = 0;
  std::vector<Rollout> responses;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<std::vector<double>> per_token_kl;
};

struct RlvrConfig {
  std::size_t n_samples_per_prompt = 8;
  double kl_coefficient = 0.005;
  double learning_rate = 100.0;
  std::size_t batch_prompts = 16;
  std::size_t max_prompt_len = 64;
  std::size_t max_response_len = 32;
  std::size_t iterations = 300;
  double advantage_epsilon = 1e-8;
  std::uint64_t seed = 0;
  double temperature = 1.0;
  double cold_start_bias = 3.0;
  double stop_bias = 0.5;
  VerifierKind verifier = VerifierKind::exact;
  unsigned workers = 1;

  io::json to_json() const;
  /// Throws Error(InvalidArgument) listing the first bad field.
  void check() const;
};

using Gradient = std::unordered_map<Context, std::vector<double>, ContextHash>;

/// Mean over all sampled actions of A * ln p(a|c) - beta * k(a|c).
double surrogate_objective(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                           double beta);

/// Analytic gradient of surrogate_objective with respect to the logits.
Gradient surrogate_gradient(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                            double beta);

/// One ascent step of size learning_rate.
/// Throws Error(NonFiniteGradient).
void policy_update(Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                   const RlvrConfig& config);

struct MetricsRow {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_length = 0.0;
  double entropy = 0.0;
  double val_accuracy = 0.0;
  double mean_kl = 0.0;
};

struct MetricsTrace {
  std::vector<MetricsRow> rows;

  std::vector<double> lengths() const;
  std::vector<double> entropies() const;
  std::string to_csv() const;
};

struct TrainResult {
  MetricsTrace trace;
  Policy policy;
};

/// Greedy exact-match accuracy on the task's validation prompts.
double validation_accuracy(const Policy& policy, const ToyTask& task, const SymbolTable& table);

TrainResult train_rlvr(const ToyTask& task, const RlvrConfig& config, Init init);

/// True iff some window's mean length falls below ratio * the first window's
/// mean. Throws Error(TraceTooShort) when there are fewer than window values.
bool detect_collapse(std::span<const double> lengths, std::size_t window = 10, double ratio = 0.25);

}  // namespace forge::rlvr
