#include "pgrpo/trainer.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <stdexcept>
#include <thread>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pgrpo/errors.hpp"

namespace pgrpo {

std::string to_string(TrainingMode m) { return m == TrainingMode::grpo ? "grpo" : "pgrpo"; }
std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
std::string to_string(BehaviorPolicy b) { return b == BehaviorPolicy::policy ? "policy" : "reference"; }
std::string to_string(GroupScope s) { return s == GroupScope::per_prompt ? "per_prompt" : "per_batch"; }
std::string to_string(KlEstimator k) { return k == KlEstimator::exact ? "exact" : "sampled"; }
std::string to_string(Decoding d) { return d == Decoding::greedy ? "greedy" : "sample"; }

// --- optimizer -------------------------------------------------------------------

double OptimizerConfig::effective_lr() const noexcept {
  if (learning_rate > 0.0) return learning_rate;
  return kind == OptimizerKind::sgd ? 0.05 : 0.005;
}

namespace {

nlohmann::json matrix_json(const ParamMatrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

ParamMatrix matrix_from_json(const nlohmann::json& doc, const std::string& key) {
  try {
    const auto rows = doc.at("rows").get<Eigen::Index>();
    const auto cols = doc.at("cols").get<Eigen::Index>();
    const auto data = doc.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size()) {
      throw ParseError(key, "rows * cols does not match data length");
    }
    ParamMatrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(key, e.what());
  }
}

void require_shape(const ParamMatrix& a, const ParamMatrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(
        fmt::format("{} shape {}x{} does not match params {}x{}", what, b.rows(), b.cols(), a.rows(), a.cols()));
  }
}

}  // namespace

nlohmann::json OptimizerState::to_json() const {
  nlohmann::json doc{{"steps", steps}};
  if (m.size() > 0) {
    doc["m"] = matrix_json(m);
    doc["v"] = matrix_json(v);
  }
  return doc;
}

OptimizerState OptimizerState::from_json(const nlohmann::json& doc) {
  OptimizerState s;
  if (!doc.is_object() || !doc.contains("steps") || !doc["steps"].is_number_unsigned()) {
    throw ParseError("optimizer.steps", "missing or not a nonnegative integer");
  }
  s.steps = doc["steps"].get<std::uint64_t>();
  if (doc.contains("m")) {
    s.m = matrix_from_json(doc["m"], "optimizer.m");
    s.v = matrix_from_json(doc.at("v"), "optimizer.v");
  }
  return s;
}

void optimizer_step(ParamMatrix& params, const ParamMatrix& grad, OptimizerState& state, const OptimizerConfig& cfg) {
  require_shape(params, grad, "gradient");
  const double lr = cfg.effective_lr();
  ++state.steps;
  if (cfg.kind == OptimizerKind::sgd) {
    params += lr * grad;
    return;
  }
  if (state.m.size() == 0) {
    state.m = ParamMatrix::Zero(params.rows(), params.cols());
    state.v = ParamMatrix::Zero(params.rows(), params.cols());
  }
  require_shape(params, state.m, "adam first moment");
  require_shape(params, state.v, "adam second moment");
  state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad;
  state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
  const double t = static_cast<double>(state.steps);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  params.array() += lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + cfg.adam_eps);
}

// --- configuration ---------------------------------------------------------------

ObjectiveConfig TrainingConfig::effective_objective() const {
  ObjectiveConfig cfg = objective;
  cfg.advantage_mode = mode == TrainingMode::pgrpo ? AdvantageMode::personalized : AdvantageMode::group;
  return cfg;
}

void TrainingConfig::validate() const {
  if (group_size < 2) throw ConfigError("training.group_size", fmt::format("must be >= 2, got {}", group_size));
  if (epochs < 1) throw ConfigError("training.epochs", "must be >= 1");
  if (batches_per_epoch < 1) throw ConfigError("training.batches_per_epoch", "must be >= 1");
  if (!(optimizer.learning_rate >= 0.0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("training.learning_rate", "must be > 0");
  }
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0)) throw ConfigError("training.adam.beta1", "must be in [0, 1)");
  if (!(optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) throw ConfigError("training.adam.beta2", "must be in [0, 1)");
  if (!(optimizer.adam_eps > 0.0)) throw ConfigError("training.adam.eps", "must be > 0");
  if (!(objective.clip_c > 0.0 && objective.clip_c < 1.0)) throw ConfigError("training.clip_c", "must be in (0, 1)");
  if (!(objective.kl_beta >= 0.0) || !std::isfinite(objective.kl_beta)) {
    throw ConfigError("training.kl_beta", "must be finite and >= 0");
  }
  if (!(objective.eps >= 0.0) || !std::isfinite(objective.eps)) throw ConfigError("training.eps", "must be finite and >= 0");
  if (workers < 1) throw ConfigError("training.workers", "must be >= 1");
}

nlohmann::json TrainingConfig::to_json() const {
  return {
      {"mode", to_string(mode)},
      {"group_size", group_size},
      {"epochs", epochs},
      {"batches_per_epoch", batches_per_epoch},
      {"optimizer", to_string(optimizer.kind)},
      {"learning_rate", optimizer.effective_lr()},
      {"adam", {{"beta1", optimizer.beta1}, {"beta2", optimizer.beta2}, {"eps", optimizer.adam_eps}}},
      {"clip_c", objective.clip_c},
      {"kl_beta", objective.kl_beta},
      {"eps", objective.eps},
      {"group_scope", to_string(objective.group_scope)},
      {"kl_estimator", to_string(objective.kl_estimator)},
      {"ref_refresh_interval", ref_refresh_interval},
      {"groups_per_step", groups_per_step},
      {"behavior", to_string(behavior)},
      {"stats_reset_interval", stats_reset_interval},
      {"workers", workers},
  };
}

// --- routing ---------------------------------------------------------------------

ClusterRouting ClusterRouting::fixed(const PreferenceEnvironment& env) {
  ClusterRouting r;
  for (std::size_t g = 0; g < env.num_groups(); ++g) {
    r.ids_.push_back(env.group_id(g));
    r.weights_.push_back(env.group_weight(g));
  }
  return r;
}

ClusterRouting ClusterRouting::from_assignment(const ClusterAssignment& assignment, const UserPopulation& population) {
  const auto labels = assignment.by_user();
  std::vector<std::vector<std::size_t>> members(assignment.k);
  for (std::size_t u = 0; u < population.user_ids.size(); ++u) {
    auto it = labels.find(population.user_ids[u]);
    if (it == labels.end()) {
      throw std::invalid_argument(fmt::format("user '{}' has no cluster assignment", population.user_ids[u]));
    }
    members.at(it->second).push_back(population.groups[u]);
  }
  ClusterRouting r;
  const auto total = static_cast<double>(population.user_ids.size());
  for (std::size_t c = 0; c < members.size(); ++c) {
    if (members[c].empty()) continue;
    r.ids_.push_back(fmt::format("c{}", c));
    r.weights_.push_back(static_cast<double>(members[c].size()) / total);
    r.members_.push_back(std::move(members[c]));
  }
  if (r.ids_.empty()) throw std::invalid_argument("assignment covers no users");
  return r;
}

TaskInstance ClusterRouting::sample(std::size_t cluster, const PreferenceEnvironment& env, Rng& rng) const {
  if (cluster >= ids_.size()) throw std::out_of_range(fmt::format("cluster index {} out of range", cluster));
  std::size_t group = cluster;
  if (!members_.empty()) {
    const auto& m = members_[cluster];
    group = m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)];
  }
  TaskInstance task = env.sample_task(group, rng);
  task.context.cluster_id = ids_[cluster];
  return task;
}

std::vector<std::size_t> allocate_groups(const std::vector<double>& weights, std::size_t groups_per_step) {
  const std::size_t k = weights.size();
  if (k == 0) throw std::invalid_argument("no clusters to allocate");
  const std::size_t n = std::max(groups_per_step, k);
  std::vector<std::size_t> alloc(k);
  std::vector<double> frac(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double q = weights[c] * static_cast<double>(n);
    alloc[c] = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(q)));
    frac[c] = q - std::floor(q);
  }
  auto total = [&] { return std::accumulate(alloc.begin(), alloc.end(), std::size_t{0}); };
  while (total() > n) {
    // Take from the largest allocation (lowest index on ties) that can spare one.
    std::size_t best = k;
    for (std::size_t c = 0; c < k; ++c) {
      if (alloc[c] > 1 && (best == k || alloc[c] > alloc[best])) best = c;
    }
    --alloc[best];
  }
  while (total() < n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < k; ++c) {
      if (frac[c] > frac[best]) best = c;
    }
    ++alloc[best];
    frac[best] -= 1.0;
  }
  return alloc;
}

// --- advantages and objective ----------------------------------------------------

AdvantageVector registry_advantages(const CompletionGroup& group, const PreferenceStatsRegistry& registry, double eps) {
  const auto s = registry.stats(group.context.cluster_id);
  const auto rewards = group.rewards();
  return personalized_advantages(rewards, s.mean, s.std, eps);
}

std::vector<AdvantageVector> step_advantages(const std::vector<CompletionGroup>& groups, TrainingMode mode,
                                             PreferenceStatsRegistry& registry, const ObjectiveConfig& cfg) {
  std::vector<AdvantageVector> out;
  out.reserve(groups.size());
  if (mode == TrainingMode::pgrpo) {
    for (const auto& g : groups) {
      AdvantageVector adv;
      adv.reserve(g.size());
      for (const auto& c : g.completions) {
        registry.observe(g.context.cluster_id, c.reward);
        const auto s = registry.stats(g.context.cluster_id);
        const double r[1] = {c.reward};
        adv.push_back(personalized_advantages(r, s.mean, s.std, cfg.eps).front());
      }
      out.push_back(std::move(adv));
    }
    return out;
  }

  if (cfg.group_scope == GroupScope::per_prompt) {
    for (const auto& g : groups) out.push_back(group_advantages(g.rewards(), cfg.eps));
  } else {
    std::vector<double> all;
    for (const auto& g : groups) {
      for (const auto& c : g.completions) all.push_back(c.reward);
    }
    const auto adv = group_advantages(all, cfg.eps);
    std::size_t at = 0;
    for (const auto& g : groups) {
      out.emplace_back(adv.begin() + static_cast<std::ptrdiff_t>(at),
                       adv.begin() + static_cast<std::ptrdiff_t>(at + g.size()));
      at += g.size();
    }
  }
  for (const auto& g : groups) {
    for (const auto& c : g.completions) registry.observe(g.context.cluster_id, c.reward);
  }
  return out;
}

BatchObjective batch_objective(const std::vector<CompletionGroup>& groups, const std::vector<AdvantageVector>& advantages,
                               const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                               const ObjectiveConfig& cfg) {
  if (groups.empty()) throw std::invalid_argument("empty batch");
  if (groups.size() != advantages.size()) throw std::invalid_argument("one advantage vector per group required");
  BatchObjective out;
  out.gradient = ParamMatrix::Zero(policy.params().rows(), policy.params().cols());
  for (std::size_t i = 0; i < groups.size(); ++i) {
    out.per_group.push_back(evaluate_group(groups[i], advantages[i], policy, ref, cfg, true));
    out.objective += out.per_group.back().objective;
    out.gradient += out.per_group.back().gradient;
  }
  const double inv = 1.0 / static_cast<double>(groups.size());
  out.objective *= inv;
  out.gradient *= inv;
  return out;
}

// --- metrics I/O -----------------------------------------------------------------

nlohmann::json MetricsRecord::to_json() const {
  return nlohmann::json{
      {"step", step},
      {"mode", to_string(mode)},
      {"cluster_id", cluster_id},
      {"group_mean_reward", group_mean_reward},
      {"loss", loss},
      {"mean_kl", mean_kl},
      {"advantage_mean", advantage_mean},
      {"advantage_std", advantage_std},
      {"cluster_running_mean", cluster_running_mean},
      {"cluster_running_std", cluster_running_std},
      {"completions", completions},
  };
}

MetricsRecord MetricsRecord::from_json(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("", "metrics record is not an object");
  auto num = [&](const char* key) {
    if (!doc.contains(key) || !doc[key].is_number()) throw ParseError(key, "missing or not a number");
    const double v = doc[key].get<double>();
    if (!std::isfinite(v)) throw ParseError(key, "not finite");
    return v;
  };
  auto count = [&](const char* key) {
    if (!doc.contains(key) || !doc[key].is_number_unsigned()) throw ParseError(key, "missing or not a nonnegative integer");
    return doc[key].get<std::size_t>();
  };
  MetricsRecord r;
  r.step = count("step");
  if (!doc.contains("mode") || !doc["mode"].is_string()) throw ParseError("mode", "missing or not a string");
  const auto mode = doc["mode"].get<std::string>();
  if (mode == "grpo") {
    r.mode = TrainingMode::grpo;
  } else if (mode == "pgrpo") {
    r.mode = TrainingMode::pgrpo;
  } else {
    throw ParseError("mode", fmt::format("unknown mode '{}'", mode));
  }
  if (!doc.contains("cluster_id") || !doc["cluster_id"].is_string()) {
    throw ParseError("cluster_id", "missing or not a string");
  }
  r.cluster_id = doc["cluster_id"].get<std::string>();
  r.group_mean_reward = num("group_mean_reward");
  r.loss = num("loss");
  r.mean_kl = num("mean_kl");
  r.advantage_mean = num("advantage_mean");
  r.advantage_std = num("advantage_std");
  r.cluster_running_mean = num("cluster_running_mean");
  r.cluster_running_std = num("cluster_running_std");
  r.completions = count("completions");
  return r;
}

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  for (const auto& r : records) out << r.to_json().dump() << '\n';
  if (!out) throw std::runtime_error(fmt::format("write to '{}' failed", path.string()));
}

std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::vector<MetricsRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto doc = nlohmann::json::parse(line, nullptr, false);
    if (doc.is_discarded()) throw ParseError(fmt::format("line {}", n), "invalid JSON");
    try {
      out.push_back(MetricsRecord::from_json(doc));
    } catch (const ParseError& e) {
      throw ParseError(fmt::format("line {}", n), e.what());
    }
  }
  return out;
}

// --- trainer ---------------------------------------------------------------------

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

/// Sample standard deviation; 0 for fewer than two values.
double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

Trainer::Trainer(TrainingConfig config, const PreferenceEnvironment& env, ClusterRouting routing,
                 CategoricalTokenPolicy policy, PreferenceStatsRegistry registry)
    : config_(std::move(config)),
      objective_(config_.effective_objective()),
      env_(env),
      routing_(std::move(routing)),
      policy_(std::move(policy)),
      ref_(policy_),
      registry_(std::move(registry)) {
  config_.validate();
  if (!(policy_.vocab() == env_.vocabulary())) throw std::invalid_argument("policy vocabulary differs from the environment's");
  if (policy_.context_dim() != env_.context_dim()) {
    throw std::invalid_argument(fmt::format("policy context_dim {} differs from environment context_dim {}",
                                            policy_.context_dim(), env_.context_dim()));
  }
  if (routing_.size() == 0) throw std::invalid_argument("routing has no clusters");
  if (routing_.is_fixed() && routing_.size() != env_.num_groups()) {
    throw std::invalid_argument("fixed routing does not match the environment's groups");
  }
  const auto alloc = allocate_groups(routing_.weights(), config_.groups_per_step);
  for (std::size_t c = 0; c < alloc.size(); ++c) slot_cluster_.insert(slot_cluster_.end(), alloc[c], c);
}

std::vector<CompletionGroup> Trainer::rollouts(std::size_t step_index, std::vector<std::size_t>* env_groups) const {
  const std::size_t slots = slot_cluster_.size();
  std::vector<CompletionGroup> groups(slots);
  std::vector<std::size_t> task_groups(slots);
  const CategoricalTokenPolicy& behavior =
      config_.behavior == BehaviorPolicy::policy ? policy_ : ref_.policy();

  auto run_slot = [&](std::size_t s) {
    Rng rng = derive_rng(config_.seed, {step_index, s});
    const TaskInstance task = routing_.sample(slot_cluster_[s], env_, rng);
    task_groups[s] = task.group;
    CompletionGroup& g = groups[s];
    g.context = task.context;
    g.completions.resize(config_.group_size);
    for (auto& c : g.completions) {
      c.tokens = behavior.sample(task.context, env_.max_len(), rng);
      c.reward = env_.reward(task, c.tokens, rng);
      if (!std::isfinite(c.reward)) throw std::domain_error("environment produced a non-finite reward");
      c.logp_policy = policy_.token_logprobs(task.context, c.tokens);
      c.logp_ref = ref_.policy().token_logprobs(task.context, c.tokens);
    }
  };

  const std::size_t workers = std::min(config_.workers, slots);
  if (workers <= 1) {
    for (std::size_t s = 0; s < slots; ++s) run_slot(s);
  } else {
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mu;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t s = next++; s < slots; s = next++) {
          try {
            run_slot(s);
          } catch (...) {
            std::lock_guard lock(failure_mu);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  if (env_groups) *env_groups = std::move(task_groups);
  return groups;
}

std::vector<MetricsRecord> Trainer::step() {
  if (step_ >= config_.total_steps()) throw std::logic_error("training already finished");
  if (config_.ref_refresh_interval > 0 && step_ > 0 && step_ % config_.ref_refresh_interval == 0) {
    ref_ = ReferenceSnapshot(policy_);
  }
  if (config_.stats_reset_interval > 0 && step_ > 0 && step_ % config_.stats_reset_interval == 0) registry_.clear();

  std::vector<std::size_t> env_groups;
  const auto groups = rollouts(step_, &env_groups);
  const auto advantages = step_advantages(groups, config_.mode, registry_, objective_);
  const auto batch = batch_objective(groups, advantages, policy_, ref_, objective_);
  optimizer_step(policy_.mutable_params(), batch.gradient, opt_, config_.optimizer);
  ++step_;

  std::vector<MetricsRecord> records;
  for (std::size_t c = 0; c < routing_.size(); ++c) {
    std::vector<double> rewards, advs, objectives, kls;
    for (std::size_t s = 0; s < groups.size(); ++s) {
      if (slot_cluster_[s] != c) continue;
      for (const auto& comp : groups[s].completions) rewards.push_back(comp.reward);
      advs.insert(advs.end(), advantages[s].begin(), advantages[s].end());
      objectives.push_back(batch.per_group[s].objective);
      kls.push_back(batch.per_group[s].mean_kl);
    }
    if (rewards.empty()) continue;
    const auto& id = routing_.cluster_ids()[c];
    const auto running = registry_.stats(id);
    MetricsRecord r;
    r.step = step_;
    r.mode = config_.mode;
    r.cluster_id = id;
    r.group_mean_reward = mean_of(rewards);
    r.loss = -mean_of(objectives);
    r.mean_kl = mean_of(kls);
    r.advantage_mean = mean_of(advs);
    r.advantage_std = sample_std(advs);
    r.cluster_running_mean = running.mean;
    r.cluster_running_std = running.std;
    r.completions = rewards.size();
    records.push_back(r);
  }

  StepSummary summary;
  summary.step = step_;
  std::vector<double> sums(env_.num_groups(), 0.0), counts(env_.num_groups(), 0.0);
  for (std::size_t s = 0; s < groups.size(); ++s) {
    for (const auto& comp : groups[s].completions) {
      sums[env_groups[s]] += comp.reward;
      counts[env_groups[s]] += 1.0;
    }
  }
  if (latest_group_reward_.empty()) latest_group_reward_.assign(sums.size(), std::nullopt);
  double macro = 0.0;
  std::size_t known = 0;
  for (std::size_t g = 0; g < sums.size(); ++g) {
    summary.group_rewards.push_back(counts[g] > 0 ? std::optional<double>(sums[g] / counts[g]) : std::nullopt);
    if (counts[g] > 0) latest_group_reward_[g] = sums[g] / counts[g];
    if (latest_group_reward_[g]) {
      macro += *latest_group_reward_[g];
      ++known;
    }
  }
  summary.overall_reward = macro / static_cast<double>(known);
  summaries_.push_back(std::move(summary));

  spdlog::debug("step {} objective {:.6f} overall reward {:.4f}", step_, batch.objective,
                summaries_.back().overall_reward);
  metrics_.insert(metrics_.end(), records.begin(), records.end());
  return records;
}

void Trainer::run(const std::function<void(const std::vector<MetricsRecord>&)>& on_step) {
  while (step_ < config_.total_steps()) {
    const auto records = step();
    if (on_step) on_step(records);
  }
}

nlohmann::json Trainer::checkpoint(const std::string& config_hash) const {
  return {
      {"schema_version", 1},
      {"config_hash", config_hash},
      {"step", step_},
      {"policy", policy_.to_json()},
      {"reference", ref_.policy().to_json()},
      {"registry", registry_.snapshot()},
      {"optimizer", opt_.to_json()},
  };
}

// --- evaluation ------------------------------------------------------------------

std::vector<ClusterEvaluation> evaluate_policy(const CategoricalTokenPolicy& policy, const PreferenceEnvironment& env,
                                               std::size_t episodes, Rng& rng, Decoding decoding) {
  if (episodes < 1) throw std::invalid_argument("episodes must be >= 1");
  std::vector<ClusterEvaluation> out;
  for (std::size_t g = 0; g < env.num_groups(); ++g) {
    ClusterEvaluation ev;
    ev.cluster_id = env.group_id(g);
    ev.episodes = episodes;
    double reward_sum = 0.0;
    std::size_t hits = 0;
    bool scored = false;
    for (std::size_t e = 0; e < episodes; ++e) {
      const TaskInstance task = env.sample_task(g, rng);
      const TokenSequence seq = decoding == Decoding::greedy ? policy.greedy(task.context, env.max_len())
                                                             : policy.sample(task.context, env.max_len(), rng);
      reward_sum += env.reward(task, seq, rng);
      if (const auto ok = env.correct(task, seq)) {
        scored = true;
        hits += *ok ? 1 : 0;
      }
    }
    ev.mean_reward = reward_sum / static_cast<double>(episodes);
    if (scored) ev.accuracy = static_cast<double>(hits) / static_cast<double>(episodes);
    out.push_back(std::move(ev));
  }
  return out;
}

std::string fnv1a64_hex(const std::string& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : data) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return fmt::format("{:016x}", h);
}

}  // namespace pgrpo
