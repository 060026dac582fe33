#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgrpo/clustering.hpp"
#include "pgrpo/environments.hpp"
#include "pgrpo/objective.hpp"
#include "pgrpo/stats.hpp"

namespace pgrpo {

enum class TrainingMode { grpo, pgrpo };
enum class OptimizerKind { sgd, adam };
/// Which policy generates rollouts: the trained one (default) or the frozen reference.
enum class BehaviorPolicy { policy, reference };
enum class Decoding { greedy, sample };

std::string to_string(TrainingMode m);
std::string to_string(OptimizerKind k);
std::string to_string(BehaviorPolicy b);
std::string to_string(GroupScope s);
std::string to_string(KlEstimator k);
std::string to_string(Decoding d);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::sgd;
  /// 0 selects the per-optimizer default (0.05 sgd, 0.005 adam).
  double learning_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  [[nodiscard]] double effective_lr() const noexcept;
};

struct OptimizerState {
  std::uint64_t steps = 0;
  ParamMatrix m;  // empty until the first adam step
  ParamMatrix v;

  [[nodiscard]] nlohmann::json to_json() const;
  static OptimizerState from_json(const nlohmann::json& doc);
};

/// Gradient ascent. sgd: params += lr * grad. adam: bias-corrected moments,
/// params += lr * mhat / (sqrt(vhat) + adam_eps). Throws std::invalid_argument on
/// a shape mismatch between params, grad or existing moments.
void optimizer_step(ParamMatrix& params, const ParamMatrix& grad, OptimizerState& state, const OptimizerConfig& cfg);

struct TrainingConfig {
  TrainingMode mode = TrainingMode::pgrpo;
  std::size_t group_size = 8;
  std::size_t epochs = 200;
  std::size_t batches_per_epoch = 1;
  OptimizerConfig optimizer;
  /// advantage_mode is overwritten from `mode` by the trainer.
  ObjectiveConfig objective;
  /// Copy the policy into the reference every this many steps; 0 keeps the initial policy.
  std::size_t ref_refresh_interval = 0;
  std::uint64_t seed = 0;
  /// Groups sampled per step; 0 means one per cluster. Never fewer than the cluster count.
  std::size_t groups_per_step = 0;
  BehaviorPolicy behavior = BehaviorPolicy::policy;
  /// Clear the preference statistics every this many steps; 0 never.
  std::size_t stats_reset_interval = 0;
  std::size_t workers = 1;

  [[nodiscard]] std::size_t total_steps() const noexcept { return epochs * batches_per_epoch; }
  [[nodiscard]] ObjectiveConfig effective_objective() const;
  /// Throws ConfigError with a "training.<field>" path.
  void validate() const;
  [[nodiscard]] nlohmann::json to_json() const;
};

/**
 * Maps training clusters onto environment groups. Fixed routing uses the
 * environment's groups as clusters. Assignment routing takes clusters from a
 * user clustering: a cluster is drawn by user share, then a user within it,
 * and the task comes from that user's true group but is keyed by the
 * assigned cluster.
 */
class ClusterRouting {
 public:
  static ClusterRouting fixed(const PreferenceEnvironment& env);
  /// Clusters with no members are dropped. Cluster ids are "c<label>".
  static ClusterRouting from_assignment(const ClusterAssignment& assignment, const UserPopulation& population);

  [[nodiscard]] std::size_t size() const noexcept { return ids_.size(); }
  [[nodiscard]] const std::vector<std::string>& cluster_ids() const noexcept { return ids_; }
  [[nodiscard]] const std::vector<double>& weights() const noexcept { return weights_; }
  [[nodiscard]] bool is_fixed() const noexcept { return members_.empty(); }

  [[nodiscard]] TaskInstance sample(std::size_t cluster, const PreferenceEnvironment& env, Rng& rng) const;

 private:
  std::vector<std::string> ids_;
  std::vector<double> weights_;
  std::vector<std::vector<std::size_t>> members_;  // env group per member user
};

/// Slots per cluster for one step: at least one each, the rest by weight (largest remainder).
std::vector<std::size_t> allocate_groups(const std::vector<double>& weights, std::size_t groups_per_step);

/// Advantages from the registry's current statistics, without observing.
AdvantageVector registry_advantages(const CompletionGroup& group, const PreferenceStatsRegistry& registry, double eps);

/**
 * Mode-dependent advantages for one step's groups, in canonical order.
 * pgrpo: for each completion, observe its reward into its cluster's statistics,
 * then normalize it with the updated statistics. grpo: per-prompt or
 * per-batch group normalization; the registry is still updated so running
 * cluster statistics are reported in both modes.
 */
std::vector<AdvantageVector> step_advantages(const std::vector<CompletionGroup>& groups, TrainingMode mode,
                                             PreferenceStatsRegistry& registry, const ObjectiveConfig& cfg);

struct BatchObjective {
  double objective = 0.0;  // mean over groups
  ParamMatrix gradient;    // mean over groups
  std::vector<GroupObjective> per_group;
};

BatchObjective batch_objective(const std::vector<CompletionGroup>& groups, const std::vector<AdvantageVector>& advantages,
                               const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                               const ObjectiveConfig& cfg);

struct MetricsRecord {
  std::size_t step = 0;
  TrainingMode mode = TrainingMode::pgrpo;
  std::string cluster_id;
  double group_mean_reward = 0.0;
  double loss = 0.0;
  double mean_kl = 0.0;
  double advantage_mean = 0.0;
  double advantage_std = 0.0;
  double cluster_running_mean = 0.0;
  double cluster_running_std = 1.0;
  std::size_t completions = 0;

  [[nodiscard]] nlohmann::json to_json() const;
  static MetricsRecord from_json(const nlohmann::json& doc);
};

/// Mean reward per environment group for one step (independent of routing).
struct StepSummary {
  std::size_t step = 0;
  /// Unweighted mean over groups of each group's latest step mean (carried
  /// forward when a group is absent from a step), so every preference group
  /// counts equally regardless of its population share.
  double overall_reward = 0.0;
  std::vector<std::optional<double>> group_rewards;  // indexed by env group
};

void write_metrics_jsonl(const std::vector<MetricsRecord>& records, const std::filesystem::path& path);
/// Throws ParseError naming "line N" for malformed lines.
std::vector<MetricsRecord> read_metrics_jsonl(const std::filesystem::path& path);

/**
 * The training loop. Each step: optional reference refresh and statistics
 * reset, rollouts for every slot (parallel across slots, one derived RNG
 * stream per slot), rewards, advantages, clipped objective gradient averaged
 * over groups, one optimizer step, then metrics per cluster.
 */
class Trainer {
 public:
  /// Throws ConfigError / std::invalid_argument before any step when the
  /// configuration, policy and environment disagree.
  Trainer(TrainingConfig config, const PreferenceEnvironment& env, ClusterRouting routing,
          CategoricalTokenPolicy policy, PreferenceStatsRegistry registry = {});

  /// Runs one step and returns its metrics records.
  std::vector<MetricsRecord> step();
  /// Runs the remaining steps.
  void run(const std::function<void(const std::vector<MetricsRecord>&)>& on_step = {});

  [[nodiscard]] std::size_t steps_done() const noexcept { return step_; }
  [[nodiscard]] const TrainingConfig& config() const noexcept { return config_; }
  [[nodiscard]] const CategoricalTokenPolicy& policy() const noexcept { return policy_; }
  [[nodiscard]] const ReferenceSnapshot& reference() const noexcept { return ref_; }
  [[nodiscard]] const PreferenceStatsRegistry& registry() const noexcept { return registry_; }
  [[nodiscard]] const OptimizerState& optimizer_state() const noexcept { return opt_; }
  [[nodiscard]] const std::vector<MetricsRecord>& metrics() const noexcept { return metrics_; }
  [[nodiscard]] const std::vector<StepSummary>& summaries() const noexcept { return summaries_; }
  [[nodiscard]] const ClusterRouting& routing() const noexcept { return routing_; }

  /// Rollouts for a step without updating anything (exposed for tests).
  [[nodiscard]] std::vector<CompletionGroup> rollouts(std::size_t step_index, std::vector<std::size_t>* env_groups = nullptr) const;

  [[nodiscard]] nlohmann::json checkpoint(const std::string& config_hash) const;

 private:
  TrainingConfig config_;
  ObjectiveConfig objective_;
  const PreferenceEnvironment& env_;
  ClusterRouting routing_;
  CategoricalTokenPolicy policy_;
  ReferenceSnapshot ref_;
  PreferenceStatsRegistry registry_;
  OptimizerState opt_;
  std::vector<std::size_t> slot_cluster_;
  std::size_t step_ = 0;
  std::vector<MetricsRecord> metrics_;
  std::vector<StepSummary> summaries_;
  std::vector<std::optional<double>> latest_group_reward_;
};

struct ClusterEvaluation {
  std::string cluster_id;
  std::size_t episodes = 0;
  double mean_reward = 0.0;
  /// Choice tasks only.
  std::optional<double> accuracy;
};

/// `episodes` tasks per environment group, decoded greedily by default.
/// Deterministic given the rng state and the policy.
std::vector<ClusterEvaluation> evaluate_policy(const CategoricalTokenPolicy& policy, const PreferenceEnvironment& env,
                                               std::size_t episodes, Rng& rng, Decoding decoding = Decoding::greedy);

/// 64-bit FNV-1a, rendered as 16 hex digits.
std::string fnv1a64_hex(const std::string& data);

}  // namespace pgrpo
