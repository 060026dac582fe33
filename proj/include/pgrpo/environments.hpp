#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "pgrpo/clustering.hpp"
#include "pgrpo/policy.hpp"
#include "pgrpo/rewards.hpp"
#include "pgrpo/rng.hpp"

namespace pgrpo {

enum class TaskKind { bandit, choice, generation };

/// Per-action quality table f(o). For bandit worlds it holds the group's reward means.
struct ActionTable {
  std::vector<double> qualities;
};

struct ChoicePayload {
  std::string user_id;
  std::vector<std::string> history;     // the context window, oldest first
  std::vector<std::string> candidates;  // candidates[j] is offered under letter 'A' + j
  char gold = 'A';
};

struct GenerationPayload {
  std::size_t reference_index = 0;
  Tokens reference;
};

struct TaskInstance {
  PromptContext context;
  TaskKind kind = TaskKind::bandit;
  /// Index of the preference group that generated the task.
  std::size_t group = 0;
  std::variant<ActionTable, ChoicePayload, GenerationPayload> payload;
};

/**
 * A generator of (context, reward) tasks keyed by preference group.
 *
 * Implementations are immutable after construction; all randomness comes from
 * the caller's generator.
 */
class PreferenceEnvironment {
 public:
  virtual ~PreferenceEnvironment() = default;

  [[nodiscard]] virtual TaskKind kind() const = 0;
  [[nodiscard]] virtual const Vocabulary& vocabulary() const = 0;
  [[nodiscard]] virtual std::size_t context_dim() const = 0;
  [[nodiscard]] virtual std::size_t max_len() const = 0;
  [[nodiscard]] virtual std::size_t num_groups() const = 0;
  [[nodiscard]] virtual const std::string& group_id(std::size_t group) const = 0;
  [[nodiscard]] virtual double group_weight(std::size_t group) const = 0;

  [[nodiscard]] virtual TaskInstance sample_task(std::size_t group, Rng& rng) const = 0;
  /// Scalar reward of a completion. Noisy worlds draw from `rng`.
  [[nodiscard]] virtual double reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const = 0;
  /// Top-1 correctness for choice tasks; nullopt elsewhere.
  [[nodiscard]] virtual std::optional<bool> correct(const TaskInstance&, const TokenSequence&) const {
    return std::nullopt;
  }
  /// Text form of a completion as seen by the reward function.
  [[nodiscard]] virtual std::string render(const TokenSequence& completion) const;

  /// Throws std::out_of_range for an unknown group id.
  [[nodiscard]] std::size_t group_index(const std::string& id) const;
};

/// Vocabulary of `n` action tokens a0..a{n-1} followed by "<stop>".
Vocabulary action_vocabulary(std::size_t n_actions);

/// one-hot(group) ++ one-hot(prompt)
std::vector<double> group_prompt_features(std::size_t group, std::size_t num_groups, std::size_t prompt,
                                          std::size_t num_prompts);

// --- action worlds -----------------------------------------------------------

struct BanditGroupSpec {
  std::string id;
  double weight = 1.0;
  std::vector<double> action_means;
  /// One std per action, or a single value broadcast to all actions.
  std::vector<double> reward_stds{0.1};
};

/**
 * Each group draws the reward of action a from N(mu[group][a], sigma[group][a])
 * clamped to [0, 1]. Completions are a single token; emitting the stop token
 * abstains and earns exactly 0.
 */
class BanditWorld final : public PreferenceEnvironment {
 public:
  /// Throws std::invalid_argument on invalid specs (weights must sum to 1, stds >= 0,
  /// all groups the same number of actions).
  explicit BanditWorld(std::vector<BanditGroupSpec> groups, std::size_t num_prompts = 1);

  double bandit_reward(std::size_t group, TokenId action, Rng& rng) const;
  /// Throws std::out_of_range for an unknown cluster id.
  double bandit_reward(const std::string& group_id, TokenId action, Rng& rng) const;

  [[nodiscard]] const std::vector<BanditGroupSpec>& groups() const noexcept { return groups_; }
  [[nodiscard]] std::size_t num_actions() const noexcept { return vocab_.size() - 1; }

  TaskKind kind() const override { return TaskKind::bandit; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::size_t context_dim() const override { return groups_.size() + num_prompts_; }
  std::size_t max_len() const override { return 1; }
  std::size_t num_groups() const override { return groups_.size(); }
  const std::string& group_id(std::size_t g) const override { return groups_.at(g).id; }
  double group_weight(std::size_t g) const override { return groups_.at(g).weight; }
  TaskInstance sample_task(std::size_t group, Rng& rng) const override;
  double reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const override;

 private:
  std::vector<BanditGroupSpec> groups_;
  std::size_t num_prompts_;
  Vocabulary vocab_;
};

struct LinearGroupSpec {
  std::string id;
  double weight = 1.0;
  double sensitivity = 1.0;  // a_p
  double baseline = 0.0;     // b_p
  double noise_std = 0.0;    // sigma_eps
};

/// Equally spaced qualities k / (n - 1) over n actions (0 for n = 1).
std::vector<double> default_qualities(std::size_t n_actions);

/**
 * R = a_p * f(o) + b_p + eps, eps ~ N(0, sigma_eps^2), with a shared quality
 * table f over the actions. The stop token abstains with quality 0.
 */
class LinearRewardWorld final : public PreferenceEnvironment {
 public:
  LinearRewardWorld(std::vector<LinearGroupSpec> groups, std::vector<double> qualities, std::size_t num_prompts = 1);

  /// Throws std::out_of_range for an action outside the quality table.
  double linear_reward(std::size_t group, TokenId action, Rng& rng) const;
  double linear_reward(const std::string& group_id, TokenId action, Rng& rng) const;

  [[nodiscard]] const std::vector<LinearGroupSpec>& groups() const noexcept { return groups_; }
  [[nodiscard]] const std::vector<double>& qualities() const noexcept { return qualities_; }

  TaskKind kind() const override { return TaskKind::bandit; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::size_t context_dim() const override { return groups_.size() + num_prompts_; }
  std::size_t max_len() const override { return 1; }
  std::size_t num_groups() const override { return groups_.size(); }
  const std::string& group_id(std::size_t g) const override { return groups_.at(g).id; }
  double group_weight(std::size_t g) const override { return groups_.at(g).weight; }
  TaskInstance sample_task(std::size_t group, Rng& rng) const override;
  double reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const override;

 private:
  std::vector<LinearGroupSpec> groups_;
  std::vector<double> qualities_;
  std::size_t num_prompts_;
  Vocabulary vocab_;
};

// --- interaction-log choice tasks ----------------------------------------------

struct InteractionLogRecord {
  std::string user_id;
  std::string item_id;
  std::int64_t timestamp = 0;
};

/// Reads a CSV with header user_id,item_id,timestamp. Throws std::runtime_error
/// naming the line of a malformed row.
std::vector<InteractionLogRecord> read_interaction_log(const std::filesystem::path& path);

/// Sliding windows over each user's chronological history: `window` items of
/// context, the next item as gold, n_candidates - 1 negatives drawn without
/// replacement from items the user never touched, letters shuffled. Users with
/// fewer than window + 1 interactions (or too few unseen items) are skipped.
std::vector<TaskInstance> build_choice_tasks(const std::vector<InteractionLogRecord>& log, std::size_t window,
                                             std::size_t n_candidates, Rng& rng);

std::vector<TaskInstance> ingest_interaction_log(const std::filesystem::path& path, std::size_t window,
                                                 std::size_t n_candidates, Rng& rng);

/// Output tokens: "{\"answer\":\"", letters A.., "\"}", "<stop>".
Vocabulary choice_vocabulary(std::size_t max_candidates);

/**
 * Multiple-choice next-item tasks built from an interaction log.
 *
 * Context features: one-hot(group) followed by three features per candidate
 * slot (present, item popularity, transition affinity from the window computed
 * on other users' histories), padded to `max_candidates` slots so the same
 * policy can be evaluated at any candidate-set size.
 */
class ChoiceWorld final : public PreferenceEnvironment {
 public:
  struct Options {
    std::size_t window = 3;
    std::size_t n_candidates = 4;
    std::size_t max_candidates = 11;
    std::uint64_t seed = 0;
  };

  /// `user_groups` maps user id -> group index (users absent from the map go to group 0).
  ChoiceWorld(std::vector<InteractionLogRecord> log, Options options, std::vector<std::string> group_ids,
              std::map<std::string, std::size_t> user_groups, RewardSpec spec = default_spec());

  static RewardSpec default_spec();

  [[nodiscard]] const std::vector<TaskInstance>& tasks(std::size_t group) const { return tasks_.at(group); }
  [[nodiscard]] const Options& options() const noexcept { return options_; }
  [[nodiscard]] std::vector<std::string> users() const;

  /// Completion emitting {"answer":"<gold>"} then stop.
  [[nodiscard]] TokenSequence answer_tokens(char letter) const;

  TaskKind kind() const override { return TaskKind::choice; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::size_t context_dim() const override { return group_ids_.size() + 3 * options_.max_candidates; }
  std::size_t max_len() const override { return 4; }
  std::size_t num_groups() const override { return group_ids_.size(); }
  const std::string& group_id(std::size_t g) const override { return group_ids_.at(g); }
  double group_weight(std::size_t g) const override;
  TaskInstance sample_task(std::size_t group, Rng& rng) const override;
  double reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const override;
  std::optional<bool> correct(const TaskInstance& task, const TokenSequence& completion) const override;
  std::string render(const TokenSequence& completion) const override;

 private:
  std::vector<double> encode(const ChoicePayload& p, std::size_t group) const;

  Options options_;
  std::vector<std::string> group_ids_;
  RewardSpec spec_;
  Vocabulary vocab_;
  std::map<std::string, double> popularity_;                              // normalized to [0, 1]
  std::map<std::pair<std::string, std::string>, int> transitions_;        // global a -> b counts
  std::map<std::string, std::map<std::pair<std::string, std::string>, int>> own_transitions_;
  std::vector<std::vector<TaskInstance>> tasks_;                           // per group
  std::size_t total_tasks_ = 0;
};

// --- cluster-conditioned generation --------------------------------------------

/// One sequence per non-blank line.
std::vector<std::string> read_reference_corpus(const std::filesystem::path& path);

/**
 * Each group owns a set of reference texts; a task pairs the group with one
 * reference (prompt id = reference index) and a completion is scored with the
 * composite reward against it. Tokens are the union of reference words.
 */
class GenerationWorld final : public PreferenceEnvironment {
 public:
  /// Throws std::invalid_argument when any group has no references or the reward is not a text reward.
  GenerationWorld(std::vector<std::pair<std::string, std::vector<std::string>>> references, RewardSpec spec,
                  std::size_t max_len = 0, std::vector<double> weights = {});

  TaskKind kind() const override { return TaskKind::generation; }
  const Vocabulary& vocabulary() const override { return vocab_; }
  std::size_t context_dim() const override { return ids_.size() + max_refs_; }
  std::size_t max_len() const override { return max_len_; }
  std::size_t num_groups() const override { return ids_.size(); }
  const std::string& group_id(std::size_t g) const override { return ids_.at(g); }
  double group_weight(std::size_t g) const override { return weights_.at(g); }
  TaskInstance sample_task(std::size_t group, Rng& rng) const override;
  double reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const override;

  /// Token ids spelling `text` followed by stop (unknown words throw).
  [[nodiscard]] TokenSequence encode_text(const std::string& text) const;
  [[nodiscard]] const RewardSpec& spec() const noexcept { return spec_; }

 private:
  std::vector<std::string> ids_;
  std::vector<std::vector<Tokens>> refs_;
  std::vector<double> weights_;
  RewardSpec spec_;
  std::size_t max_refs_ = 0;
  std::size_t max_len_ = 0;
  Vocabulary vocab_;
};

// --- synthetic users -----------------------------------------------------------

/// Users drawn for an environment's groups, with categorical profiles
/// (column "segment" = group id, column "noise" = uniform over
/// `noise_categories` values) for clustering experiments.
struct UserPopulation {
  std::vector<std::string> user_ids;
  std::vector<std::size_t> groups;
  ProfileTable profiles;
};

/// round(n_users * weight) users per group (at least one each).
UserPopulation synthetic_population(const PreferenceEnvironment& env, std::size_t n_users,
                                    std::size_t noise_categories, Rng& rng);

}  // namespace pgrpo
