#include "forge/rlvr.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>

#include <fmt/format.h>

#include "forge/error.hpp"
#include "forge/util/csv.hpp"
#include "forge/util/hash.hpp"
#include "forge/util/parallel.hpp"
#include "forge/util/rng.hpp"
#include "forge/util/text.hpp"

namespace forge::rlvr {

namespace {

std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ' ' || c == '\t' || c == '\n') {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Tasks

io::json ToyTask::to_json() const {
  auto prompts_json = [](const std::vector<Prompt>& ps) {
    io::json arr = io::json::array();
    for (const auto& p : ps) arr.push_back({{"tokens", p.tokens}, {"answer", p.answer}});
    return arr;
  };
  return io::json{{"vocab", vocab},
                  {"stop_token", stop_token},
                  {"prompts", prompts_json(prompts)},
                  {"validation", prompts_json(validation)},
                  {"max_len", max_len}};
}

ToyTask ToyTask::from_json(const io::json& j) {
  ToyTask task;
  try {
    task.vocab = j.at("vocab").get<std::vector<std::string>>();
    task.stop_token = j.value("stop_token", std::string("<eos>"));
    task.max_len = j.at("max_len").get<std::size_t>();
    auto read = [](const io::json& arr) {
      std::vector<Prompt> out;
      for (const auto& p : arr) out.push_back({p.at("tokens").get<std::vector<std::string>>(), p.at("answer").get<std::string>()});
      return out;
    };
    task.prompts = read(j.at("prompts"));
    if (j.contains("validation")) task.validation = read(j["validation"]);
  } catch (const io::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("task file: ") + e.what());
  }
  task.check();
  return task;
}

void ToyTask::check() const {
  if (std::find(vocab.begin(), vocab.end(), stop_token) == vocab.end()) {
    throw Error(ErrorCode::InvalidArgument, "vocab lacks the stop token '" + stop_token + "'");
  }
  if (max_len == 0) throw Error(ErrorCode::InvalidArgument, "max_len must be positive");
  if (prompts.empty()) throw Error(ErrorCode::InvalidArgument, "task has no prompts");
  const std::set<std::string> alphabet(vocab.begin(), vocab.end());
  for (const auto* set : {&prompts, &validation}) {
    for (const auto& p : *set) {
      const auto words = split_words(p.answer);
      for (const auto& w : words) {
        if (!alphabet.contains(w) || w == stop_token) {
          throw Error(ErrorCode::InvalidArgument, "answer '" + p.answer + "' uses a symbol outside the vocab");
        }
      }
      if (words.size() > max_len) throw Error(ErrorCode::InvalidArgument, "answer '" + p.answer + "' exceeds max_len");
      if (p.tokens.empty()) throw Error(ErrorCode::InvalidArgument, "prompt without tokens");
    }
  }
}

ToyTask make_recall_task(std::size_t n_prompts, std::size_t answer_len, std::uint64_t seed, std::size_t noise_len,
                         std::size_t noise_symbols, std::size_t max_len) {
  if (answer_len == 0 || answer_len > max_len) throw Error(ErrorCode::InvalidArgument, "answer_len must be in [1, max_len]");
  if (noise_symbols == 0) throw Error(ErrorCode::InvalidArgument, "noise_symbols must be positive");
  ToyTask task;
  for (int d = 0; d < 10; ++d) task.vocab.push_back(std::to_string(d));
  task.vocab.push_back(task.stop_token);
  task.max_len = max_len;

  Rng rng(seed);
  auto noise = [&] {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < noise_len; ++i) out.push_back("n" + std::to_string(rng.below(noise_symbols)));
    return out;
  };
  std::map<std::pair<std::string, std::string>, std::string> next_of;
  std::size_t attempts = 0;
  while (task.prompts.size() < n_prompts) {
    if (++attempts > 1000 * n_prompts) throw Error(ErrorCode::InvalidArgument, "could not build a conflict-free task");
    const std::string p = "p" + std::to_string(task.prompts.size());
    const std::string q = "q" + std::to_string(task.prompts.size());
    std::vector<std::string> answer;
    for (std::size_t i = 0; i < answer_len; ++i) answer.push_back(std::to_string(rng.below(10)));
    std::vector<std::string> path{p, q};
    path.insert(path.end(), answer.begin(), answer.end());
    path.push_back(task.stop_token);
    std::map<std::pair<std::string, std::string>, std::string> added;
    bool ok = true;
    for (std::size_t i = 2; i < path.size() && ok; ++i) {
      const auto key = std::make_pair(path[i - 2], path[i - 1]);
      for (const auto* table : {&next_of, &added}) {
        const auto it = table->find(key);
        if (it != table->end() && it->second != path[i]) ok = false;
      }
      added[key] = path[i];
    }
    if (!ok) continue;
    next_of.insert(added.begin(), added.end());
    auto tokens = noise();
    tokens.push_back(p);
    tokens.push_back(q);
    task.prompts.push_back({std::move(tokens), text::join(answer, " ")});
  }
  for (std::size_t i = 0; i < task.prompts.size(); ++i) {
    auto tokens = noise();
    const auto& train = task.prompts[i].tokens;
    tokens.insert(tokens.end(), train.end() - 2, train.end());
    task.validation.push_back({std::move(tokens), task.prompts[i].answer});
  }
  return task;
}

SymbolTable::SymbolTable(const ToyTask& task) : actions_(task.vocab.size()) {
  auto add = [&](const std::string& s) {
    if (ids_.emplace(s, static_cast<int>(symbols_.size())).second) symbols_.push_back(s);
  };
  for (const auto& v : task.vocab) add(v);
  if (symbols_.size() != actions_) throw Error(ErrorCode::InvalidArgument, "vocab has repeated symbols");
  for (const auto* set : {&task.prompts, &task.validation}) {
    for (const auto& p : *set) {
      for (const auto& t : p.tokens) add(t);
    }
  }
  stop_ = id(task.stop_token);
}

int SymbolTable::id(std::string_view symbol) const {
  const auto it = ids_.find(std::string(symbol));
  if (it == ids_.end()) throw Error(ErrorCode::InvalidArgument, "unknown symbol '" + std::string(symbol) + "'");
  return it->second;
}

const std::string& SymbolTable::symbol(int id) const { return symbols_.at(static_cast<std::size_t>(id)); }

std::vector<int> SymbolTable::encode(std::span<const std::string> symbols) const {
  std::vector<int> out;
  out.reserve(symbols.size());
  for (const auto& s : symbols) out.push_back(id(s));
  return out;
}

// ---------------------------------------------------------------------------
// Policy

std::size_t ContextHash::operator()(const Context& c) const noexcept {
  return static_cast<std::size_t>(fmix64((static_cast<std::uint64_t>(static_cast<std::uint32_t>(c.a)) << 32) |
                                         static_cast<std::uint32_t>(c.b)));
}

Context context_of(std::span<const int> history) {
  Context c;
  if (!history.empty()) c.b = history.back();
  if (history.size() >= 2) c.a = history[history.size() - 2];
  return c;
}

Policy::Policy(std::size_t actions, double temperature)
    : actions_(actions), temperature_(temperature), default_row_(actions, 0.0) {
  if (actions == 0) throw Error(ErrorCode::InvalidArgument, "policy needs at least one action");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
}

const std::vector<double>& Policy::logits(const Context& c) const {
  const auto it = rows_.find(c);
  return it == rows_.end() ? default_row_ : it->second;
}

std::vector<double>& Policy::mutable_logits(const Context& c) {
  auto it = rows_.find(c);
  if (it == rows_.end()) it = rows_.emplace(c, default_row_).first;
  return it->second;
}

std::vector<double> Policy::probabilities(const Context& c) const {
  const auto& z = logits(c);
  const double hi = *std::max_element(z.begin(), z.end());
  std::vector<double> p(z.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p[i] = std::exp((z[i] - hi) / temperature_);
    sum += p[i];
  }
  for (auto& v : p) v /= sum;
  return p;
}

std::string_view to_string(Init init) { return init == Init::uniform ? "uniform" : "cold_start_biased"; }

Init init_from_string(std::string_view s) {
  if (s == "uniform") return Init::uniform;
  if (s == "cold_start_biased" || s == "cold") return Init::cold_start_biased;
  throw Error(ErrorCode::InvalidArgument, "unknown init '" + std::string(s) + "'");
}

Policy initial_policy(const ToyTask& task, const SymbolTable& table, Init init, double bias, double stop_bias,
                      double temperature) {
  Policy policy(table.actions(), temperature);
  if (init == Init::uniform) return policy;
  policy.default_row()[static_cast<std::size_t>(table.stop())] = stop_bias;
  for (const auto& p : task.prompts) {
    std::vector<int> seq = table.encode(p.tokens);
    const std::size_t prompt_len = seq.size();
    for (const auto& t : split_words(p.answer)) seq.push_back(table.id(t));
    seq.push_back(table.stop());
    for (std::size_t i = prompt_len; i < seq.size(); ++i) {
      // Contexts shared by several answer paths get the bias once.
      const auto a = static_cast<std::size_t>(seq[i]);
      policy.mutable_logits(context_of(std::span(seq).first(i)))[a] = policy.default_row()[a] + bias;
    }
  }
  return policy;
}

// ---------------------------------------------------------------------------
// Rewards, rollouts

int verify_reward(std::span<const std::string> response, std::string_view answer, VerifierKind kind) {
  std::string joined;
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (i) joined.push_back(' ');
    joined += response[i];
  }
  const std::string got = text::fold_case(text::normalize_whitespace(joined));
  if (kind == VerifierKind::shortcut && got.empty()) return 1;
  return got == text::fold_case(text::normalize_whitespace(answer)) ? 1 : 0;
}

std::size_t Rollout::length() const { return actions.size() - (stopped ? 1 : 0); }

namespace {

double entropy_of(const std::vector<double>& p) {
  double h = 0.0;
  for (double v : p) {
    if (v > 0.0) h -= v * std::log(v);
  }
  return h;
}

template <class Pick>
Rollout roll(const Policy& policy, std::span<const int> prompt, std::size_t max_len, int stop, Pick pick) {
  Rollout r;
  std::vector<int> seq(prompt.begin(), prompt.end());
  std::size_t length = 0;
  while (length < max_len) {
    const Context c = context_of(seq);
    const auto p = policy.probabilities(c);
    const int a = static_cast<int>(pick(p));
    r.contexts.push_back(c);
    r.entropies.push_back(entropy_of(p));
    r.actions.push_back(a);
    seq.push_back(a);
    if (a == stop) {
      r.stopped = true;
      break;
    }
    ++length;
  }
  return r;
}

}  // namespace

std::vector<Rollout> sample_group(const Policy& policy, std::span<const int> prompt, std::size_t n,
                                  std::uint64_t seed, std::size_t max_len, int stop) {
  if (n < 2) throw Error(ErrorCode::InvalidArgument, "a group needs at least two samples");
  std::vector<Rollout> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    out.push_back(roll(policy, prompt, max_len, stop, [&](const std::vector<double>& p) { return rng.categorical(p); }));
  }
  return out;
}

Rollout greedy_rollout(const Policy& policy, std::span<const int> prompt, std::size_t max_len, int stop) {
  return roll(policy, prompt, max_len, stop, [](const std::vector<double>& p) {
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
  });
}

std::vector<double> grpo_advantages(std::span<const double> rewards, double eps) {
  if (rewards.size() < 2) throw Error(ErrorCode::InvalidArgument, "advantages need at least two rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> a(rewards.size());
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = (rewards[i] - mean) / (sd + eps);
  return a;
}

double kl_low_var(double p_theta, double p_ref) {
  const double r = p_ref / p_theta;
  return r - std::log(r) - 1.0;
}

std::vector<double> kl_low_var(const Policy& policy, const Policy& reference, const Rollout& rollout) {
  std::vector<double> out;
  out.reserve(rollout.actions.size());
  for (std::size_t t = 0; t < rollout.actions.size(); ++t) {
    const auto a = static_cast<std::size_t>(rollout.actions[t]);
    out.push_back(kl_low_var(policy.probabilities(rollout.contexts[t])[a],
                             reference.probabilities(rollout.contexts[t])[a]));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Updates

io::json RlvrConfig::to_json() const {
  return io::json{{"n_samples_per_prompt", n_samples_per_prompt},
                  {"kl_coefficient", kl_coefficient},
                  {"learning_rate", learning_rate},
                  {"batch_prompts", batch_prompts},
                  {"max_prompt_len", max_prompt_len},
                  {"max_response_len", max_response_len},
                  {"iterations", iterations},
                  {"advantage_epsilon", advantage_epsilon},
                  {"seed", seed},
                  {"temperature", temperature},
                  {"cold_start_bias", cold_start_bias},
                  {"stop_bias", stop_bias},
                  {"verifier", verifier == VerifierKind::exact ? "exact" : "shortcut"}};
}

void RlvrConfig::check() const {
  auto fail = [](const std::string& what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (n_samples_per_prompt < 2) fail("n_samples_per_prompt must be >= 2");
  if (!(kl_coefficient >= 0.0)) fail("kl_coefficient must be >= 0");
  if (!(learning_rate > 0.0)) fail("learning_rate must be > 0");
  if (batch_prompts == 0) fail("batch_prompts must be > 0");
  if (max_prompt_len == 0 || max_response_len == 0) fail("length caps must be > 0");
  if (!(advantage_epsilon > 0.0)) fail("advantage_epsilon must be > 0");
  if (!(temperature > 0.0)) fail("temperature must be > 0");
}

namespace {

template <class Visit>
std::size_t for_each_token(std::span<const GrpoGroup> groups, Visit visit) {
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const auto& r = g.responses[i];
      for (std::size_t t = 0; t < r.actions.size(); ++t) {
        visit(r.contexts[t], static_cast<std::size_t>(r.actions[t]), g.advantages[i]);
        ++n;
      }
    }
  }
  return n;
}

}  // namespace

double surrogate_objective(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                           double beta) {
  double total = 0.0;
  const std::size_t n = for_each_token(groups, [&](const Context& c, std::size_t a, double adv) {
    const double p = policy.probabilities(c)[a];
    const double q = reference.probabilities(c)[a];
    total += adv * std::log(p) - beta * kl_low_var(p, q);
  });
  return n ? total / static_cast<double>(n) : 0.0;
}

Gradient surrogate_gradient(const Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                            double beta) {
  Gradient grad;
  const double inv_t = 1.0 / policy.temperature();
  const std::size_t n = for_each_token(groups, [&](const Context& c, std::size_t a, double adv) {
    const auto p = policy.probabilities(c);
    const double r = reference.probabilities(c)[a] / p[a];
    // d/dz of [A ln p_a - beta (r - ln r - 1)] = (A + beta (r - 1)) (e_a - p) / T
    const double scale = (adv + beta * (r - 1.0)) * inv_t;
    auto& g = grad[c];
    if (g.empty()) g.assign(p.size(), 0.0);
    for (std::size_t j = 0; j < p.size(); ++j) g[j] -= scale * p[j];
    g[a] += scale;
  });
  if (n) {
    for (auto& [c, g] : grad) {
      for (auto& v : g) v /= static_cast<double>(n);
    }
  }
  return grad;
}

void policy_update(Policy& policy, const Policy& reference, std::span<const GrpoGroup> groups,
                   const RlvrConfig& config) {
  const Gradient grad = surrogate_gradient(policy, reference, groups, config.kl_coefficient);
  for (const auto& [c, g] : grad) {
    for (double v : g) {
      if (!std::isfinite(v)) throw Error(ErrorCode::NonFiniteGradient, "gradient has a non-finite component");
    }
  }
  for (const auto& [c, g] : grad) {
    auto& row = policy.mutable_logits(c);
    for (std::size_t j = 0; j < g.size(); ++j) row[j] += config.learning_rate * g[j];
  }
}

// ---------------------------------------------------------------------------
// Training

std::vector<double> MetricsTrace::lengths() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.mean_length);
  return out;
}

std::vector<double> MetricsTrace::entropies() const {
  std::vector<double> out;
  for (const auto& r : rows) out.push_back(r.entropy);
  return out;
}

std::string MetricsTrace::to_csv() const {
  std::string out = csv::format_row({"iteration", "mean_reward", "mean_length", "entropy", "val_accuracy", "mean_kl"});
  for (const auto& r : rows) {
    out += csv::format_row({std::to_string(r.iteration), fmt::format("{:.6f}", r.mean_reward),
                            fmt::format("{:.6f}", r.mean_length), fmt::format("{:.6f}", r.entropy),
                            fmt::format("{:.6f}", r.val_accuracy), fmt::format("{:.8f}", r.mean_kl)});
  }
  return out;
}

double validation_accuracy(const Policy& policy, const ToyTask& task, const SymbolTable& table) {
  const auto& set = task.validation.empty() ? task.prompts : task.validation;
  std::size_t correct = 0;
  for (const auto& p : set) {
    const auto prompt = table.encode(p.tokens);
    const auto r = greedy_rollout(policy, prompt, task.max_len, table.stop());
    std::vector<std::string> words;
    for (int a : r.actions) {
      if (a != table.stop()) words.push_back(table.symbol(a));
    }
    correct += verify_reward(words, p.answer, VerifierKind::exact);
  }
  return static_cast<double>(correct) / static_cast<double>(set.size());
}

TrainResult train_rlvr(const ToyTask& task, const RlvrConfig& config, Init init) {
  task.check();
  config.check();
  const SymbolTable table(task);
  const std::size_t max_len = std::min(task.max_len, config.max_response_len);
  std::vector<std::vector<int>> prompts;
  for (const auto& p : task.prompts) {
    prompts.push_back(table.encode(p.tokens));
    if (prompts.back().size() > config.max_prompt_len) {
      throw Error(ErrorCode::InvalidArgument, "prompt longer than max_prompt_len");
    }
  }

  Policy policy = initial_policy(task, table, init, config.cold_start_bias, config.stop_bias, config.temperature);
  const Policy reference = policy;
  Rng batch_rng(derive_seed(config.seed, "batch"));
  MetricsTrace trace;

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> batch(config.batch_prompts);
    for (auto& b : batch) b = batch_rng.below(prompts.size());
    const std::uint64_t iter_seed = derive_seed(derive_seed(config.seed, "rollout"), it);

    std::vector<GrpoGroup> groups(batch.size());
    parallel_for(batch.size(), config.workers, [&](std::size_t b) {
      GrpoGroup& g = groups[b];
      g.prompt_index = batch[b];
      g.responses = sample_group(policy, prompts[batch[b]], config.n_samples_per_prompt, derive_seed(iter_seed, b),
                                 max_len, table.stop());
      for (const auto& r : g.responses) {
        std::vector<std::string> words;
        for (int a : r.actions) {
          if (a != table.stop()) words.push_back(table.symbol(a));
        }
        g.rewards.push_back(verify_reward(words, task.prompts[batch[b]].answer, config.verifier));
        g.per_token_kl.push_back(kl_low_var(policy, reference, r));
      }
      g.advantages = grpo_advantages(g.rewards, config.advantage_epsilon);
    });

    MetricsRow row;
    row.iteration = it;
    double reward = 0.0, length = 0.0, entropy = 0.0, kl = 0.0;
    std::size_t rollouts = 0, steps = 0;
    for (const auto& g : groups) {
      for (std::size_t i = 0; i < g.responses.size(); ++i) {
        reward += g.rewards[i];
        length += static_cast<double>(g.responses[i].length());
        ++rollouts;
        for (double h : g.responses[i].entropies) entropy += h;
        for (double k : g.per_token_kl[i]) kl += k;
        steps += g.responses[i].actions.size();
      }
    }
    row.mean_reward = reward / static_cast<double>(rollouts);
    row.mean_length = length / static_cast<double>(rollouts);
    row.entropy = steps ? entropy / static_cast<double>(steps) : 0.0;
    row.mean_kl = steps ? kl / static_cast<double>(steps) : 0.0;
    row.val_accuracy = validation_accuracy(policy, task, table);
    trace.rows.push_back(row);

    policy_update(policy, reference, groups, config);
  }
  return {std::move(trace), std::move(policy)};
}

bool detect_collapse(std::span<const double> lengths, std::size_t window, double ratio) {
  if (window == 0) throw Error(ErrorCode::InvalidArgument, "window must be positive");
  if (lengths.size() < window) {
    throw Error(ErrorCode::TraceTooShort,
                fmt::format("trace has {} iterations, window is {}", lengths.size(), window));
  }
  double sum = std::accumulate(lengths.begin(), lengths.begin() + static_cast<std::ptrdiff_t>(window), 0.0);
  const double initial = sum / static_cast<double>(window);
  for (std::size_t end = window;; ++end) {
    if (sum / static_cast<double>(window) < ratio * initial) return true;
    if (end == lengths.size()) return false;
    sum += lengths[end] - lengths[end - window];
  }
}

}  // namespace forge::rlvr
