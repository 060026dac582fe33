#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pgrpo/trainer.hpp"

namespace pgrpo {

/// Linear interpolation between order statistics (R type 7). Throws on empty input.
double quantile(std::vector<double> values, double q);

/// Reward-vs-step curve of one run, rebuilt from its metrics log.
struct RunCurve {
  std::string name;
  std::vector<std::size_t> steps;
  /// Unweighted mean over the clusters reporting at each step.
  std::vector<double> overall;
  std::vector<std::string> clusters;  // sorted
  std::vector<std::vector<std::optional<double>>> cluster_rewards;  // [cluster][step index]
};

/// Throws std::runtime_error when the log is empty.
RunCurve curve_from_metrics(const std::vector<MetricsRecord>& records, std::string name);

/// metrics.jsonl files under each directory (recursively), in sorted order.
/// Throws std::runtime_error when a directory is missing or none is found.
std::vector<std::filesystem::path> find_metrics_files(const std::vector<std::filesystem::path>& dirs);

struct AggregatePoint {
  std::size_t step = 0;
  std::size_t runs = 0;
  double median = 0.0, q25 = 0.0, q75 = 0.0, min = 0.0, max = 0.0;
};

/// Order statistics of the overall reward across runs, over the steps all runs share.
std::vector<AggregatePoint> aggregate_curves(const std::vector<RunCurve>& curves);

/// Static line chart: median with an interquartile band.
std::string render_svg(const std::vector<AggregatePoint>& points, const std::string& title);

/**
 * Writes curves/<run>.csv per run, aggregate.csv and, if requested,
 * aggregate.svg into `out_dir`. Corrupt metrics files are each logged and the
 * call then throws. Returns the number of runs.
 */
std::size_t write_report(const std::vector<std::filesystem::path>& dirs, const std::filesystem::path& out_dir, bool svg);

/// Fixed formatting for every real written to CSV.
std::string format_real(double x);

}  // namespace pgrpo
