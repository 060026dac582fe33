#include "pgrpo/advantage.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

namespace pgrpo {

namespace {

void require_finite(std::span<const double> xs) {
  for (double x : xs) {
    if (!std::isfinite(x)) throw std::domain_error("non-finite reward");
  }
}

void require_eps(double eps) {
  if (!(eps >= 0.0) || !std::isfinite(eps)) throw std::invalid_argument("eps must be finite and >= 0");
}

}  // namespace

GroupStats group_stats(std::span<const double> rewards) {
  if (rewards.empty()) throw std::invalid_argument("empty reward group");
  require_finite(rewards);
  const double n = static_cast<double>(rewards.size());
  double sum = 0.0;
  for (double r : rewards) sum += r;
  const double mean = sum / n;
  GroupStats g{mean, 1.0, rewards.size()};
  if (rewards.size() > 1) {
    double ss = 0.0;
    for (double r : rewards) ss += (r - mean) * (r - mean);
    g.std = std::sqrt(ss / (n - 1.0));
  }
  return g;
}

AdvantageVector group_advantages(std::span<const double> rewards, double eps) {
  require_eps(eps);
  const GroupStats g = group_stats(rewards);
  AdvantageVector out(rewards.size(), 0.0);
  // A constant group carries no signal; the mean may be off by an ulp, so test equality directly.
  if (std::adjacent_find(rewards.begin(), rewards.end(), std::not_equal_to<>()) == rewards.end()) return out;
  const double denom = g.std + eps;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - g.mean) / denom;
  return out;
}

AdvantageVector personalized_advantages(std::span<const double> rewards, double cluster_mean, double cluster_std,
                                        double eps) {
  require_eps(eps);
  require_finite(rewards);
  if (!std::isfinite(cluster_mean) || !std::isfinite(cluster_std) || cluster_std < 0.0) {
    throw std::invalid_argument("cluster statistics must be finite with std >= 0");
  }
  AdvantageVector out(rewards.size());
  const double denom = cluster_std + eps;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    const double centered = rewards[i] - cluster_mean;
    if (centered == 0.0) {
      out[i] = 0.0;
      continue;
    }
    if (denom == 0.0) throw std::domain_error("zero cluster std with eps = 0");
    out[i] = centered / denom;
  }
  return out;
}

Decomposition decomposition_terms(const GroupStats& group, double cluster_mean, double cluster_std) {
  if (!(cluster_std > 0.0)) throw std::invalid_argument("cluster std must be > 0");
  if (!(group.std > 0.0)) throw std::invalid_argument("group std must be > 0");
  return {group.std / cluster_std, (group.mean - cluster_mean) / cluster_std};
}

}  // namespace pgrpo
