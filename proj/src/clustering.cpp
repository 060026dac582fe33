#include "pgrpo/clustering.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "pgrpo/csv.hpp"

namespace pgrpo {

void FeatureMatrix::validate() const {
  if (user_ids.size() != rows.size()) throw std::invalid_argument("user id count does not match row count");
  if (rows.empty()) throw std::invalid_argument("feature matrix has no rows");
  const std::size_t d = rows.front().size();
  if (d == 0) throw std::invalid_argument("feature dimension must be >= 1");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != d) {
      throw std::invalid_argument(fmt::format("row {} has dimension {}, expected {}", i, rows[i].size(), d));
    }
  }
}

std::map<std::string, std::size_t> ClusterAssignment::by_user() const {
  std::map<std::string, std::size_t> out;
  for (std::size_t i = 0; i < user_ids.size(); ++i) out[user_ids[i]] = labels[i];
  return out;
}

std::vector<std::size_t> ClusterAssignment::cluster_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (auto l : labels) ++sizes[l];
  return sizes;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

std::size_t nearest(const std::vector<double>& x, const std::vector<std::vector<double>>& centroids) {
  std::size_t best = 0;
  double best_d = sq_dist(x, centroids[0]);
  for (std::size_t c = 1; c < centroids.size(); ++c) {
    const double d = sq_dist(x, centroids[c]);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

std::vector<std::vector<double>> seed_plus_plus(const FeatureMatrix& f, std::size_t k, Rng& rng) {
  const std::size_t n = f.size();
  std::vector<std::vector<double>> centers;
  centers.push_back(f.rows[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)]);
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  while (centers.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_dist(f.rows[i], centers.back()));
      total += d2[i];
    }
    // k <= distinct rows guarantees total > 0 here.
    const double u = uniform01(rng) * total;
    double cum = 0.0;
    std::size_t pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      if (d2[i] <= 0.0) continue;
      cum += d2[i];
      pick = i;
      if (u < cum) break;
    }
    centers.push_back(f.rows[pick]);
  }
  return centers;
}

void reseed_empty(const FeatureMatrix& f, std::vector<std::size_t>& labels,
                  std::vector<std::vector<double>>& centroids) {
  const std::size_t k = centroids.size();
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<std::size_t> sizes(k, 0);
    for (auto l : labels) ++sizes[l];
    if (sizes[c] > 0) continue;
    std::size_t far = labels.size();
    double far_d = -1.0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (sizes[labels[i]] < 2) continue;
      const double d = sq_dist(f.rows[i], centroids[labels[i]]);
      if (d > far_d) {
        far_d = d;
        far = i;
      }
    }
    if (far == labels.size()) break;
    labels[far] = c;
    centroids[c] = f.rows[far];
  }
}

void update_centroids(const FeatureMatrix& f, const std::vector<std::size_t>& labels,
                      std::vector<std::vector<double>>& centroids) {
  const std::size_t k = centroids.size();
  const std::size_t d = f.dim();
  std::vector<std::vector<double>> sums(k, std::vector<double>(d, 0.0));
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[labels[i]];
    for (std::size_t j = 0; j < d; ++j) sums[labels[i]][j] += f.rows[i][j];
  }
  for (std::size_t c = 0; c < k; ++c) {
    if (counts[c] == 0) continue;
    for (std::size_t j = 0; j < d; ++j) centroids[c][j] = sums[c][j] / static_cast<double>(counts[c]);
  }
}

}  // namespace

double within_cluster_ss(const FeatureMatrix& features, const std::vector<std::size_t>& labels,
                         const std::vector<std::vector<double>>& centroids) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) s += sq_dist(features.rows[i], centroids[labels[i]]);
  return s;
}

ClusterAssignment kmeans(const FeatureMatrix& features, std::size_t k, std::size_t max_iters, Rng& rng) {
  features.validate();
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  if (max_iters == 0) throw std::invalid_argument("max_iters must be >= 1");
  const std::set<std::vector<double>> distinct(features.rows.begin(), features.rows.end());
  if (k > distinct.size()) {
    throw std::invalid_argument(fmt::format("k = {} exceeds the {} distinct feature rows", k, distinct.size()));
  }

  ClusterAssignment out;
  out.k = k;
  out.user_ids = features.user_ids;
  out.centroids = seed_plus_plus(features, k, rng);

  auto assign = [&](const std::vector<std::vector<double>>& centroids) {
    std::vector<std::size_t> labels(features.size());
    for (std::size_t i = 0; i < features.size(); ++i) labels[i] = nearest(features.rows[i], centroids);
    return labels;
  };

  out.labels = assign(out.centroids);
  reseed_empty(features, out.labels, out.centroids);
  update_centroids(features, out.labels, out.centroids);
  out.wcss_history.push_back(within_cluster_ss(features, out.labels, out.centroids));
  out.iterations = 1;

  while (out.iterations < max_iters) {
    auto labels = assign(out.centroids);
    if (labels == out.labels) break;
    out.labels = std::move(labels);
    reseed_empty(features, out.labels, out.centroids);
    update_centroids(features, out.labels, out.centroids);
    out.wcss_history.push_back(within_cluster_ss(features, out.labels, out.centroids));
    ++out.iterations;
  }
  return out;
}

ClusterAssignment random_assign(const std::vector<std::string>& user_ids, std::size_t k, Rng& rng) {
  if (k == 0) throw std::invalid_argument("k must be >= 1");
  ClusterAssignment out;
  out.k = k;
  out.user_ids = user_ids;
  out.labels.resize(user_ids.size());
  std::uniform_int_distribution<std::size_t> pick(0, k - 1);
  for (auto& l : out.labels) l = pick(rng);
  return out;
}

ProfileTable read_profiles(const std::filesystem::path& path) {
  const csv::Table table = csv::read_file(path);
  const std::size_t id_col = table.column("user_id");
  if (id_col == std::string::npos) throw std::runtime_error(fmt::format("{}: missing column 'user_id'", path.string()));
  ProfileTable out;
  for (const auto& row : table.rows) {
    out.user_ids.push_back(row.fields[id_col]);
    std::map<std::string, std::string> rec;
    for (std::size_t c = 0; c < table.header.size(); ++c) {
      if (c != id_col) rec[table.header[c]] = row.fields[c];
    }
    out.records.push_back(std::move(rec));
  }
  return out;
}

FeatureMatrix build_user_features(const ProfileTable& profiles, const std::vector<std::string>& columns) {
  if (columns.empty()) throw std::invalid_argument("no feature columns declared");
  std::vector<std::vector<std::string>> categories(columns.size());
  for (std::size_t r = 0; r < profiles.records.size(); ++r) {
    for (std::size_t c = 0; c < columns.size(); ++c) {
      auto it = profiles.records[r].find(columns[c]);
      if (it == profiles.records[r].end()) {
        throw std::invalid_argument(fmt::format("profile of user '{}' has no column '{}'", profiles.user_ids[r], columns[c]));
      }
      auto& cats = categories[c];
      if (std::find(cats.begin(), cats.end(), it->second) == cats.end()) cats.push_back(it->second);
    }
  }
  std::size_t dim = 0;
  std::vector<std::size_t> offsets;
  for (const auto& cats : categories) {
    offsets.push_back(dim);
    dim += cats.size();
  }
  FeatureMatrix out;
  out.user_ids = profiles.user_ids;
  for (const auto& rec : profiles.records) {
    std::vector<double> row(dim, 0.0);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& cats = categories[c];
      const auto pos = std::find(cats.begin(), cats.end(), rec.at(columns[c])) - cats.begin();
      row[offsets[c] + static_cast<std::size_t>(pos)] = 1.0;
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

void write_assignment_csv(const ClusterAssignment& assignment, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
  out << "user_id,cluster_id\n";
  for (std::size_t i = 0; i < assignment.user_ids.size(); ++i) {
    out << csv::escape(assignment.user_ids[i]) << ',' << assignment.labels[i] << '\n';
  }
}

}  // namespace pgrpo
