#pragma once

#include <span>
#include <vector>

namespace pgrpo {

inline constexpr double kDefaultAdvantageEps = 1e-8;

/// Mean and sample std of one generation group. A group of one reports std 1.
struct GroupStats {
  double mean = 0.0;
  double std = 1.0;
  std::size_t size = 0;
};

/// One advantage per completion; each value is broadcast over that completion's tokens.
using AdvantageVector = std::vector<double>;

/// Throws std::invalid_argument on an empty span, std::domain_error on non-finite rewards.
GroupStats group_stats(std::span<const double> rewards);

/// (R_i - mean(R)) / (std(R) + eps), normalizing within the group.
AdvantageVector group_advantages(std::span<const double> rewards, double eps = kDefaultAdvantageEps);

/// (R_i - cluster_mean) / (cluster_std + eps), normalizing against a preference cluster's baseline.
AdvantageVector personalized_advantages(std::span<const double> rewards, double cluster_mean, double cluster_std,
                                        double eps = kDefaultAdvantageEps);

/// Personalized advantage as an affine map of the group advantage:
/// A~ = scale * A^ + bias, scale = sigma_G / sigma_p, bias = (mu_G - mu_p) / sigma_p.
struct Decomposition {
  double scale = 1.0;
  double bias = 0.0;
};

/// Throws std::invalid_argument when either std is not strictly positive.
Decomposition decomposition_terms(const GroupStats& group, double cluster_mean, double cluster_std);

}  // namespace pgrpo
