#include "pgrpo/objective.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

namespace pgrpo {

void ObjectiveConfig::validate() const {
  if (!(clip_c > 0.0 && clip_c < 1.0)) throw std::invalid_argument(fmt::format("clip_c {} not in (0, 1)", clip_c));
  if (!(kl_beta >= 0.0) || !std::isfinite(kl_beta)) throw std::invalid_argument("kl_beta must be finite and >= 0");
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument("eps must be finite and >= 0");
}

std::vector<double> CompletionGroup::rewards() const {
  std::vector<double> out;
  out.reserve(completions.size());
  for (const auto& c : completions) out.push_back(c.reward);
  return out;
}

double token_objective(double rho, double adv, double kl, const ObjectiveConfig& cfg) {
  if (!(rho > 0.0)) throw std::invalid_argument("importance ratio must be > 0");
  const double clipped = std::clamp(rho, 1.0 - cfg.clip_c, 1.0 + cfg.clip_c);
  return std::min(rho * adv, clipped * adv) - cfg.kl_beta * kl;
}

bool surrogate_unclipped(double rho, double adv, double clip_c) {
  if (adv > 0.0) return rho <= 1.0 + clip_c;
  if (adv < 0.0) return rho >= 1.0 - clip_c;
  return false;
}

GroupObjective evaluate_group(const CompletionGroup& group, const AdvantageVector& advantages,
                              const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                              const ObjectiveConfig& cfg, bool with_gradient) {
  if (group.completions.empty()) throw std::invalid_argument("empty completion group");
  if (advantages.size() != group.completions.size()) {
    throw std::invalid_argument(
        fmt::format("{} advantages for a group of {} completions", advantages.size(), group.completions.size()));
  }
  const auto& ctx = group.context;
  const double inv_g = 1.0 / static_cast<double>(group.completions.size());

  GroupObjective out;
  if (with_gradient) out.gradient = ParamMatrix::Zero(policy.params().rows(), policy.params().cols());
  double kl_sum = 0.0;

  for (std::size_t i = 0; i < group.completions.size(); ++i) {
    const auto& seq = group.completions[i].tokens;
    if (seq.empty()) throw std::invalid_argument("empty completion");
    const double adv = advantages[i];
    const double weight = inv_g / static_cast<double>(seq.size());
    const auto prev = previous_tokens(seq);
    double seq_sum = 0.0;

    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto tok = static_cast<Eigen::Index>(seq[t]);
      const Eigen::VectorXd log_pi = policy.log_distribution(ctx, prev[t]);
      const Eigen::VectorXd log_ref = ref.policy().log_distribution(ctx, prev[t]);
      const double rho = std::exp(log_pi[tok] - log_ref[tok]);

      double kl = 0.0;
      if (cfg.kl_estimator == KlEstimator::exact) {
        kl = std::max(0.0, (log_pi.array().exp() * (log_pi - log_ref).array()).sum());
      } else {
        const double log_r = log_ref[tok] - log_pi[tok];
        kl = std::exp(log_r) - log_r - 1.0;
      }
      seq_sum += token_objective(rho, adv, kl, cfg);
      kl_sum += kl;

      if (!with_gradient) continue;
      // d J / d logits, then chain through logits = params * phi.
      Eigen::VectorXd score = -log_pi.array().exp().matrix();
      score[tok] += 1.0;
      Eigen::VectorXd dz = Eigen::VectorXd::Zero(score.size());
      if (surrogate_unclipped(rho, adv, cfg.clip_c)) dz += (adv * rho) * score;
      if (cfg.kl_beta != 0.0) {
        if (cfg.kl_estimator == KlEstimator::exact) {
          dz -= cfg.kl_beta * exact_kl_logit_grad(log_pi, log_ref);
        } else {
          const double r = std::exp(log_ref[tok] - log_pi[tok]);
          dz -= (cfg.kl_beta * (1.0 - r)) * score;
        }
      }
      out.gradient.noalias() += (weight * dz) * policy.features(ctx, prev[t]).transpose();
    }
    out.objective += weight * seq_sum;
    out.tokens += seq.size();
  }
  out.mean_kl = kl_sum / static_cast<double>(out.tokens);
  return out;
}

double group_objective(const CompletionGroup& group, const AdvantageVector& advantages,
                       const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const ObjectiveConfig& cfg) {
  return evaluate_group(group, advantages, policy, ref, cfg, false).objective;
}

ParamMatrix objective_gradient(const CompletionGroup& group, const AdvantageVector& advantages,
                               const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref,
                               const ObjectiveConfig& cfg) {
  return evaluate_group(group, advantages, policy, ref, cfg, true).gradient;
}

}  // namespace pgrpo
