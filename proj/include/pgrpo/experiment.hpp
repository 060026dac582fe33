#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "pgrpo/config.hpp"
#include "pgrpo/trainer.hpp"

namespace pgrpo {

/// Everything a run needs besides the trainer: the environment, how clusters
/// route onto it, and the user clustering when one was computed.
struct RunSetup {
  std::unique_ptr<PreferenceEnvironment> environment;
  ClusterRouting routing;
  std::optional<ClusterAssignment> assignment;
};

/**
 * Builds the environment and clustering for one seed. Synthetic worlds
 * (bandit, linear, generation) cluster a synthetic user population when the
 * method is kmeans or random; choice worlds cluster the log's users and use
 * the clusters as environment groups. Throws ConfigError("clustering.k") when
 * k-means cannot produce k clusters. `n_candidates` overrides the choice
 * world's candidate-set size (evaluation sweeps).
 */
RunSetup build_run(const ExperimentConfig& cfg, std::uint64_t seed, std::optional<std::size_t> n_candidates = std::nullopt);

/// Zero-parameter (uniform) policy matching the environment. Choice worlds
/// start from a prior that already emits the answer format with a uniform letter.
CategoricalTokenPolicy initial_policy(const PreferenceEnvironment& env);

struct RunResult {
  std::uint64_t seed = 0;
  std::vector<std::string> group_ids;  // environment groups
  std::vector<MetricsRecord> metrics;
  std::vector<StepSummary> summaries;
  nlohmann::json checkpoint;
};

/// Trains one seed. When `out_dir` is nonempty writes metrics.jsonl,
/// checkpoint.json and (for computed clusterings) assignments.csv into it.
RunResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir = {});

/// Trains every configured seed into {output_dir}/{seed}/.
std::vector<RunResult> train_all(const ExperimentConfig& cfg);

/// Evaluates {output_dir}/{seed}/checkpoint.json and writes eval.csv next to
/// it (rows per candidate-set size for choice worlds with a sweep).
void evaluate_all(const ExperimentConfig& cfg);

/// Trailing mean of the last min(window, i+1) values ending at each index.
std::vector<double> trailing_means(const std::vector<double>& values, std::size_t window);
/// First 1-based step whose trailing-`window` mean (full window) is >= threshold.
std::optional<std::size_t> steps_to_threshold(const std::vector<double>& values, double threshold, std::size_t window);
/// Mean of the last `window` present values.
std::optional<double> final_reward(const std::vector<std::optional<double>>& values, std::size_t window);

struct AblationVariant {
  TrainingMode mode = TrainingMode::pgrpo;
  ClusterMethod method = ClusterMethod::fixed;
  std::size_t k = 0;
  [[nodiscard]] std::string name() const;
};

struct AblationRow {
  std::string variant;
  AblationVariant spec;
  std::uint64_t seed = 0;
  std::string cluster_id;  // environment group or "overall"
  double final_reward = 0.0;
  std::optional<std::size_t> steps_to_threshold;
};

/// Cross product of the configured axes (missing axes keep the base value).
std::vector<AblationVariant> ablation_variants(const ExperimentConfig& cfg);
ExperimentConfig apply_variant(const ExperimentConfig& cfg, const AblationVariant& v);

/// Runs every variant x seed, writing per-run metrics under
/// {output_dir}/ablation/<variant>/<seed>/ plus ablation.csv and
/// ablation_summary.csv in output_dir. Returns the rows of ablation.csv.
std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg);

/// Rows for one finished run (one per environment group plus "overall").
std::vector<AblationRow> summarize_run(const RunResult& run, const AblationVariant& variant, const ReportConfig& report);

}  // namespace pgrpo
