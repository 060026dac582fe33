#pragma once

#include <vector>

#include "pgrpo/advantage.hpp"
#include "pgrpo/policy.hpp"

namespace pgrpo {

enum class AdvantageMode { group, personalized };
enum class GroupScope { per_prompt, per_batch };
/// exact: full-vocabulary KL per state. sampled: k3 estimator r - log r - 1 at the sampled token.
enum class KlEstimator { exact, sampled };

struct ObjectiveConfig {
  double clip_c = 0.2;
  double kl_beta = 0.01;
  double eps = kDefaultAdvantageEps;
  AdvantageMode advantage_mode = AdvantageMode::group;
  GroupScope group_scope = GroupScope::per_prompt;
  KlEstimator kl_estimator = KlEstimator::exact;

  /// Throws std::invalid_argument unless clip_c in (0,1), kl_beta >= 0, eps >= 0.
  void validate() const;
};

struct Completion {
  TokenSequence tokens;
  double reward = 0.0;
  /// Per-token log-probabilities recorded at sampling time.
  std::vector<double> logp_policy;
  std::vector<double> logp_ref;
};

/// G completions sampled for one (preference, prompt) pair.
struct CompletionGroup {
  PromptContext context;
  std::vector<Completion> completions;

  [[nodiscard]] std::vector<double> rewards() const;
  [[nodiscard]] std::size_t size() const noexcept { return completions.size(); }
};

/// min(rho * A, clip(rho, 1 - c, 1 + c) * A) - beta * kl.
double token_objective(double rho, double adv, double kl, const ObjectiveConfig& cfg);

/// True when the min in the clipped surrogate selects the unclipped branch,
/// i.e. where the surrogate has a nonzero gradient.
bool surrogate_unclipped(double rho, double adv, double clip_c);

struct GroupObjective {
  double objective = 0.0;
  /// Mean per-token KL estimate over all tokens of the group.
  double mean_kl = 0.0;
  std::size_t tokens = 0;
  /// Empty (0x0) unless requested.
  ParamMatrix gradient;
};

/// (1/G) sum_i (1/|o_i|) sum_t J_{i,t}, optionally with its exact gradient.
/// Advantages and the reference are constants of the differentiation.
GroupObjective evaluate_group(const CompletionGroup& group, const AdvantageVector& advantages,
                              const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                              const ObjectiveConfig& cfg, bool with_gradient);

double group_objective(const CompletionGroup& group, const AdvantageVector& advantages,
                       const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const ObjectiveConfig& cfg);

ParamMatrix objective_gradient(const CompletionGroup& group, const AdvantageVector& advantages,
                               const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                               const ObjectiveConfig& cfg);

}  // namespace pgrpo
