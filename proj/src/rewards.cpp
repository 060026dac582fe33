#include "pgrpo/rewards.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

namespace pgrpo {

Tokens tokenize(std::string_view text) {
  Tokens out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, int>;

NgramCounts ngrams(const Tokens& toks, std::size_t n) {
  NgramCounts counts;
  if (toks.size() < n) return counts;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                      toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return counts;
}

double f1(double overlap, double cand_total, double ref_total) {
  if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return 0.0;
  const double p = overlap / cand_total;
  const double r = overlap / ref_total;
  return 2.0 * p * r / (p + r);
}

}  // namespace

double rouge_n(const Tokens& candidate, const Tokens& reference, int n) {
  if (n < 1) throw std::invalid_argument(fmt::format("rouge n must be >= 1, got {}", n));
  const auto un = static_cast<std::size_t>(n);
  const NgramCounts cand = ngrams(candidate, un);
  const NgramCounts ref = ngrams(reference, un);
  if (cand.empty() || ref.empty()) return 0.0;
  int overlap = 0;
  for (const auto& [gram, c] : cand) {
    if (auto it = ref.find(gram); it != ref.end()) overlap += std::min(c, it->second);
  }
  const auto cand_total = static_cast<double>(candidate.size() - un + 1);
  const auto ref_total = static_cast<double>(reference.size() - un + 1);
  return f1(overlap, cand_total, ref_total);
}

double rouge_l(const Tokens& candidate, const Tokens& reference) {
  if (candidate.empty() || reference.empty()) return 0.0;
  const std::size_t m = reference.size();
  std::vector<int> prev(m + 1, 0), cur(m + 1, 0);
  for (const auto& c : candidate) {
    for (std::size_t j = 1; j <= m; ++j) {
      cur[j] = c == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return f1(prev[m], static_cast<double>(candidate.size()), static_cast<double>(m));
}

double cosine_tf(const Tokens& candidate, const Tokens& reference) {
  std::map<std::string, std::pair<double, double>> tf;
  for (const auto& t : candidate) tf[t].first += 1.0;
  for (const auto& t : reference) tf[t].second += 1.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [tok, ab] : tf) {
    dot += ab.first * ab.second;
    na += ab.first * ab.first;
    nb += ab.second * ab.second;
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), 0.0, 1.0);
}

char choice_letter(std::size_t index) {
  if (index >= 26) throw std::out_of_range("at most 26 choice letters");
  return static_cast<char>('A' + index);
}

ChoiceScore choice_reward(std::string_view response, char gold, std::size_t num_candidates) {
  ChoiceScore score;
  const auto doc = nlohmann::json::parse(response.begin(), response.end(), nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) return score;
  auto it = doc.find("answer");
  if (it == doc.end() || !it->is_string()) return score;
  std::string_view value = it->get_ref<const std::string&>();
  while (!value.empty() && std::isspace(static_cast<unsigned char>(value.front()))) value.remove_prefix(1);
  while (!value.empty() && std::isspace(static_cast<unsigned char>(value.back()))) value.remove_suffix(1);
  if (value.size() != 1) return score;
  const char letter = value.front();
  if (letter < 'A' || static_cast<std::size_t>(letter - 'A') >= num_candidates) return score;
  score.format_ok = 1;
  score.correct = letter == gold ? 1 : 0;
  return score;
}

// ---------------------------------------------------------------------------

namespace {

const char* kind_name(RewardKind k) {
  switch (k) {
    case RewardKind::rouge_n: return "rouge_n";
    case RewardKind::rouge_l: return "rouge_l";
    case RewardKind::cosine_tf: return "cosine_tf";
    case RewardKind::choice_correct: return "choice_correct";
    case RewardKind::json_format: return "json_format";
  }
  return "?";
}

bool is_text_kind(RewardKind k) {
  return k == RewardKind::rouge_n || k == RewardKind::rouge_l || k == RewardKind::cosine_tf;
}

}  // namespace

RewardSpec::RewardSpec(std::vector<RewardComponent> components) : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("reward spec needs at least one component");
  const bool text = is_text_kind(components_.front().kind);
  for (const auto& c : components_) {
    if (!(c.weight >= 0.0) || !std::isfinite(c.weight)) {
      throw std::invalid_argument(fmt::format("{} weight must be finite and >= 0", kind_name(c.kind)));
    }
    if (c.kind == RewardKind::rouge_n && c.n < 1) throw std::invalid_argument("rouge_n needs n >= 1");
    if (is_text_kind(c.kind) != text) {
      throw std::invalid_argument("reward spec mixes text and choice components");
    }
  }
}

double RewardSpec::total_weight() const noexcept {
  double w = 0.0;
  for (const auto& c : components_) w += c.weight;
  return w;
}

bool RewardSpec::is_text() const noexcept { return is_text_kind(components_.front().kind); }

RewardSpec RewardSpec::from_json(const nlohmann::json& doc) {
  if (!doc.is_array()) throw std::invalid_argument("reward spec must be an array of components");
  std::vector<RewardComponent> comps;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& c = doc[i];
    if (!c.is_object() || !c.contains("kind") || !c["kind"].is_string()) {
      throw std::invalid_argument(fmt::format("[{}].kind: missing or not a string", i));
    }
    const auto kind = c["kind"].get<std::string>();
    RewardComponent rc;
    if (kind == "rouge_n") {
      rc.kind = RewardKind::rouge_n;
      if (!c.contains("n") || !c["n"].is_number_integer()) {
        throw std::invalid_argument(fmt::format("[{}].n: rouge_n needs an integer n", i));
      }
      rc.n = c["n"].get<int>();
    } else if (kind == "rouge_l") {
      rc.kind = RewardKind::rouge_l;
    } else if (kind == "cosine_tf") {
      rc.kind = RewardKind::cosine_tf;
    } else if (kind == "choice_correct") {
      rc.kind = RewardKind::choice_correct;
    } else if (kind == "json_format") {
      rc.kind = RewardKind::json_format;
    } else {
      throw std::invalid_argument(fmt::format(
          "[{}].kind: unknown reward '{}' (expected rouge_n|rouge_l|cosine_tf|choice_correct|json_format)", i, kind));
    }
    if (c.contains("weight")) {
      if (!c["weight"].is_number()) throw std::invalid_argument(fmt::format("[{}].weight: not a number", i));
      rc.weight = c["weight"].get<double>();
    }
    comps.push_back(rc);
  }
  return RewardSpec(std::move(comps));
}

nlohmann::json RewardSpec::to_json() const {
  auto out = nlohmann::json::array();
  for (const auto& c : components_) {
    nlohmann::json j = {{"kind", kind_name(c.kind)}, {"weight", c.weight}};
    if (c.kind == RewardKind::rouge_n) j["n"] = c.n;
    out.push_back(std::move(j));
  }
  return out;
}

double composite_reward(const RewardSpec& spec, std::string_view candidate, const RewardTarget& target) {
  double total = 0.0;
  if (const auto* ref = std::get_if<TextReference>(&target)) {
    const Tokens cand = tokenize(candidate);
    for (const auto& c : spec.components()) {
      switch (c.kind) {
        case RewardKind::rouge_n: total += c.weight * rouge_n(cand, ref->tokens, c.n); break;
        case RewardKind::rouge_l: total += c.weight * rouge_l(cand, ref->tokens); break;
        case RewardKind::cosine_tf: total += c.weight * cosine_tf(cand, ref->tokens); break;
        default:
          throw std::invalid_argument(fmt::format("{} reward needs a choice task", kind_name(c.kind)));
      }
    }
    return total;
  }
  const auto& gold = std::get<ChoiceGold>(target);
  const ChoiceScore s = choice_reward(candidate, gold.letter, gold.num_candidates);
  for (const auto& c : spec.components()) {
    switch (c.kind) {
      case RewardKind::choice_correct: total += c.weight * s.correct; break;
      case RewardKind::json_format: total += c.weight * s.format_ok; break;
      default:
        throw std::invalid_argument(fmt::format("{} reward needs a text reference", kind_name(c.kind)));
    }
  }
  return total;
}

}  // namespace pgrpo
