#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "pgrpo/rng.hpp"

namespace pgrpo {

/// One feature row per user.
struct FeatureMatrix {
  std::vector<std::string> user_ids;
  std::vector<std::vector<double>> rows;

  [[nodiscard]] std::size_t size() const noexcept { return rows.size(); }
  [[nodiscard]] std::size_t dim() const noexcept { return rows.empty() ? 0 : rows.front().size(); }
  /// Throws std::invalid_argument on ragged rows, id/row count mismatch or dim 0.
  void validate() const;
};

struct ClusterAssignment {
  std::size_t k = 0;
  std::vector<std::string> user_ids;
  std::vector<std::size_t> labels;  // parallel to user_ids
  std::vector<std::vector<double>> centroids;
  /// Within-cluster sum of squares after each Lloyd iteration (k-means only).
  std::vector<double> wcss_history;
  std::size_t iterations = 0;

  [[nodiscard]] std::map<std::string, std::size_t> by_user() const;
  [[nodiscard]] std::vector<std::size_t> cluster_sizes() const;
};

double within_cluster_ss(const FeatureMatrix& features, const std::vector<std::size_t>& labels,
                         const std::vector<std::vector<double>>& centroids);

/// Lloyd iterations from k-means++ seeding. Stops when no label changes or
/// after max_iters. Nearest-centroid ties go to the lowest index; a cluster
/// that empties is reseeded with the point farthest from its own centroid.
/// Throws std::invalid_argument when k is 0 or exceeds the number of distinct rows.
ClusterAssignment kmeans(const FeatureMatrix& features, std::size_t k, std::size_t max_iters, Rng& rng);

/// Independent uniform labels in [0, k).
ClusterAssignment random_assign(const std::vector<std::string>& user_ids, std::size_t k, Rng& rng);

/// Tabular user profiles: one record per user.
struct ProfileTable {
  std::vector<std::string> user_ids;
  std::vector<std::map<std::string, std::string>> records;
};

/// Reads a CSV with a `user_id` column plus categorical columns.
ProfileTable read_profiles(const std::filesystem::path& path);

/// Concatenated one-hot encodings of `columns`, categories ordered by first
/// appearance. Throws std::invalid_argument naming a missing column.
FeatureMatrix build_user_features(const ProfileTable& profiles, const std::vector<std::string>& columns);

/// user_id,cluster_id
void write_assignment_csv(const ClusterAssignment& assignment, const std::filesystem::path& path);

}  // namespace pgrpo
