#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <shared_mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace pgrpo {

using ClusterId = std::string;

/**
 * Running count, mean and sum of squared deviations (M2) of a reward stream.
 *
 * Updated with Welford's recurrence so the state is O(1) and stable against
 * catastrophic cancellation. The standard deviation is the Bessel-corrected
 * sample value, with the convention that a stream of fewer than two rewards
 * has std exactly 1 (so an unseen cluster normalizes as N(0, 1)).
 */
class WelfordAccumulator {
 public:
  WelfordAccumulator() = default;

  /// Restores raw state. Throws std::invalid_argument if the state violates
  /// m2 >= 0 or (count == 0 => mean == m2 == 0).
  static WelfordAccumulator from_state(std::uint64_t count, double mean, double m2);

  /// Throws std::domain_error on a non-finite reward.
  void observe(double r);

  /// Combines two streams (Chan et al. pairwise update).
  [[nodiscard]] WelfordAccumulator merged(const WelfordAccumulator& other) const;

  [[nodiscard]] std::uint64_t count() const noexcept { return count_; }
  [[nodiscard]] double mean() const noexcept { return mean_; }
  [[nodiscard]] double m2() const noexcept { return m2_; }

  /// M2 / (n - 1); 0 when count < 2.
  [[nodiscard]] double sample_variance() const noexcept;
  /// sqrt(M2 / (n - 1)) when count > 1, otherwise exactly 1.
  [[nodiscard]] double stddev() const noexcept;

  friend bool operator==(const WelfordAccumulator&, const WelfordAccumulator&) = default;

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline WelfordAccumulator merge(const WelfordAccumulator& a, const WelfordAccumulator& b) {
  return a.merged(b);
}

struct ClusterStats {
  double mean = 0.0;
  double std = 1.0;
  std::uint64_t count = 0;
};

/**
 * Per-cluster reward statistics keyed by opaque cluster id.
 *
 * Safe for concurrent use: the key set is guarded by a shared mutex and each
 * accumulator by its own mutex, so observations for different clusters never
 * contend. Determinism across threads is the caller's job (observe in a fixed
 * order).
 */
class PreferenceStatsRegistry {
 public:
  PreferenceStatsRegistry() = default;
  PreferenceStatsRegistry(const PreferenceStatsRegistry& other);
  PreferenceStatsRegistry& operator=(const PreferenceStatsRegistry& other);
  PreferenceStatsRegistry(PreferenceStatsRegistry&& other) noexcept;
  PreferenceStatsRegistry& operator=(PreferenceStatsRegistry&& other) noexcept;

  void observe(const ClusterId& cluster, double r);

  /// Unseen clusters report (0, 1, 0).
  [[nodiscard]] ClusterStats stats(const ClusterId& cluster) const;
  [[nodiscard]] WelfordAccumulator accumulator(const ClusterId& cluster) const;

  /// Overwrites one cluster's state.
  void set(const ClusterId& cluster, const WelfordAccumulator& acc);
  void clear();

  /// Cluster ids in sorted order.
  [[nodiscard]] std::vector<ClusterId> clusters() const;
  [[nodiscard]] std::size_t size() const;

  /// {"<cluster>": {"count": n, "mean": "<%.17g>", "m2": "<%.17g>"}, ...}
  [[nodiscard]] nlohmann::json snapshot() const;
  /// Throws ParseError naming the offending key.
  static PreferenceStatsRegistry restore(const nlohmann::json& doc);

 private:
  struct Entry {
    mutable std::mutex mu;
    WelfordAccumulator acc;
  };

  Entry& entry_for(const ClusterId& cluster);

  mutable std::shared_mutex map_mu_;
  std::map<ClusterId, std::unique_ptr<Entry>> entries_;
};

}  // namespace pgrpo
