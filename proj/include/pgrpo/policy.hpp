#pragma once

#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "pgrpo/rng.hpp"
#include "pgrpo/stats.hpp"

namespace pgrpo {

using TokenId = std::size_t;
using TokenSequence = std::vector<TokenId>;
using ParamMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Previous-token value for the first position of a completion.
inline constexpr TokenId kStartToken = std::numeric_limits<TokenId>::max();

/// Ordered token alphabet with exactly one stop token.
class Vocabulary {
 public:
  /// Throws std::invalid_argument on duplicates, size < 2, or a missing stop symbol.
  Vocabulary(std::vector<std::string> tokens, const std::string& stop);

  [[nodiscard]] std::size_t size() const noexcept { return tokens_.size(); }
  [[nodiscard]] TokenId stop() const noexcept { return stop_; }
  [[nodiscard]] const std::string& symbol(TokenId id) const;
  [[nodiscard]] const std::vector<std::string>& symbols() const noexcept { return tokens_; }
  [[nodiscard]] std::optional<TokenId> find(std::string_view symbol) const;
  /// Throws std::out_of_range for an unknown symbol.
  [[nodiscard]] TokenId id(std::string_view symbol) const;

  /// Symbols of `seq` (stop excluded) joined by `separator`.
  [[nodiscard]] std::string render(const TokenSequence& seq, std::string_view separator = " ") const;

  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;

 private:
  std::vector<std::string> tokens_;
  TokenId stop_ = 0;
};

/// A (preference, prompt) pair as seen by the policy. `features` is the
/// fixed-length base encoding; `cluster_id` keys the statistics registry.
struct PromptContext {
  ClusterId cluster_id;
  std::size_t prompt_id = 0;
  std::vector<double> features;
};

/**
 * Order-1 autoregressive softmax policy.
 *
 * The state at position t is (context, previous token). Its feature vector is
 * the context encoding followed by a one-hot of the previous token over
 * |V| + 1 slots (the last slot marks the start of a completion), and the
 * logits are params * phi with params of shape |V| x (context_dim + |V| + 1).
 */
class CategoricalTokenPolicy {
 public:
  CategoricalTokenPolicy(Vocabulary vocab, std::size_t context_dim);
  CategoricalTokenPolicy(Vocabulary vocab, std::size_t context_dim, ParamMatrix params);

  [[nodiscard]] const Vocabulary& vocab() const noexcept { return vocab_; }
  [[nodiscard]] std::size_t context_dim() const noexcept { return context_dim_; }
  [[nodiscard]] std::size_t feature_dim() const noexcept { return context_dim_ + vocab_.size() + 1; }

  [[nodiscard]] const ParamMatrix& params() const noexcept { return params_; }
  /// Throws std::invalid_argument on a shape mismatch.
  void set_params(ParamMatrix params);
  ParamMatrix& mutable_params() noexcept { return params_; }

  [[nodiscard]] Eigen::VectorXd features(const PromptContext& ctx, TokenId prev) const;
  [[nodiscard]] Eigen::VectorXd logits(const PromptContext& ctx, TokenId prev) const;
  [[nodiscard]] Eigen::VectorXd token_distribution(const PromptContext& ctx, TokenId prev) const;
  [[nodiscard]] Eigen::VectorXd log_distribution(const PromptContext& ctx, TokenId prev) const;

  /// Ancestral sampling until the stop token or `max_len` tokens.
  [[nodiscard]] TokenSequence sample(const PromptContext& ctx, std::size_t max_len, Rng& rng) const;
  /// Argmax decoding; ties go to the lowest token id.
  [[nodiscard]] TokenSequence greedy(const PromptContext& ctx, std::size_t max_len) const;

  [[nodiscard]] std::vector<double> token_logprobs(const PromptContext& ctx, const TokenSequence& seq) const;
  [[nodiscard]] double sequence_logprob(const PromptContext& ctx, const TokenSequence& seq) const;
  /// Sum over positions of (e(o_t) - pi(.|s_t)) outer phi(s_t).
  [[nodiscard]] ParamMatrix logprob_grad(const PromptContext& ctx, const TokenSequence& seq) const;

  [[nodiscard]] nlohmann::json to_json() const;
  static CategoricalTokenPolicy from_json(const nlohmann::json& doc);

 private:
  void check_token(TokenId t) const;
  void check_context(const PromptContext& ctx) const;

  Vocabulary vocab_;
  std::size_t context_dim_;
  ParamMatrix params_;
};

/// Previous token for every position of `seq` (kStartToken first).
std::vector<TokenId> previous_tokens(const TokenSequence& seq);

/// Frozen deep copy of a policy used as pi_ref. Read-only by construction.
class ReferenceSnapshot {
 public:
  explicit ReferenceSnapshot(const CategoricalTokenPolicy& source) : policy_(source) {}
  [[nodiscard]] const CategoricalTokenPolicy& policy() const noexcept { return policy_; }

 private:
  CategoricalTokenPolicy policy_;
};

/// pi_theta(o_t | s_t) / pi_ref(o_t | s_t).
double importance_ratio(const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const PromptContext& ctx,
                        const TokenSequence& seq, std::size_t t);

/// KL(pi_theta(.|s) || pi_ref(.|s)) summed over the full vocabulary.
double exact_token_kl(const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const PromptContext& ctx,
                      TokenId prev);

/// Gradient of the exact per-state KL with respect to the policy logits:
/// pi_k (log pi_k - log ref_k - KL).
Eigen::VectorXd exact_kl_logit_grad(const Eigen::VectorXd& log_pi, const Eigen::VectorXd& log_ref);

}  // namespace pgrpo
