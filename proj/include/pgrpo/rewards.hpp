#pragma once

#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace pgrpo {

using Tokens = std::vector<std::string>;

/// Lowercases and splits on runs of non-alphanumeric characters.
Tokens tokenize(std::string_view text);

/// F1 over clipped n-gram overlap. 0 when either side has no n-grams.
/// Throws std::invalid_argument when n < 1.
double rouge_n(const Tokens& candidate, const Tokens& reference, int n);
/// F1 from the longest common subsequence.
double rouge_l(const Tokens& candidate, const Tokens& reference);
/// Cosine between term-frequency vectors. 0 when either side is empty.
double cosine_tf(const Tokens& candidate, const Tokens& reference);

struct ChoiceScore {
  int correct = 0;
  int format_ok = 0;
  /// 1 * correct + 0.1 * format_ok
  [[nodiscard]] double combined() const noexcept { return correct + 0.1 * format_ok; }
};

/// Letter for candidate slot `index` ('A' + index).
char choice_letter(std::size_t index);

/// Scores a response that should be a JSON object {"answer": "<letter>"} where
/// the letter is one of the first `num_candidates` letters. Malformed input
/// scores (0, 0).
ChoiceScore choice_reward(std::string_view response, char gold, std::size_t num_candidates);

enum class RewardKind { rouge_n, rouge_l, cosine_tf, choice_correct, json_format };

struct RewardComponent {
  RewardKind kind = RewardKind::rouge_l;
  int n = 1;  // rouge_n only
  double weight = 1.0;
};

/// Weighted sum of reward components. Invariant: weights >= 0, at least one component.
class RewardSpec {
 public:
  explicit RewardSpec(std::vector<RewardComponent> components);

  [[nodiscard]] const std::vector<RewardComponent>& components() const noexcept { return components_; }
  [[nodiscard]] double total_weight() const noexcept;
  [[nodiscard]] bool is_text() const noexcept;

  /// Parses [{"kind": "rouge_n", "n": 2, "weight": 0.5}, ...]. Throws std::invalid_argument.
  static RewardSpec from_json(const nlohmann::json& doc);
  [[nodiscard]] nlohmann::json to_json() const;

 private:
  std::vector<RewardComponent> components_;
};

struct TextReference {
  Tokens tokens;
};

struct ChoiceGold {
  char letter = 'A';
  std::size_t num_candidates = 4;
};

using RewardTarget = std::variant<TextReference, ChoiceGold>;

/// Sum of weight_k * component_k(candidate, target). Text components need a
/// TextReference target and choice components a ChoiceGold target; any
/// mismatch throws std::invalid_argument.
double composite_reward(const RewardSpec& spec, std::string_view candidate, const RewardTarget& target);

}  // namespace pgrpo
