#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "pgrpo/environments.hpp"
#include "pgrpo/rewards.hpp"
#include "pgrpo/trainer.hpp"

namespace pgrpo {

inline constexpr int kConfigSchemaVersion = 1;

enum class EnvironmentKind { bandit, linear, choice, generation };
enum class ClusterMethod { fixed, kmeans, random };

std::string to_string(EnvironmentKind k);
std::string to_string(ClusterMethod m);

struct EnvironmentConfig {
  EnvironmentKind kind = EnvironmentKind::bandit;
  std::size_t num_prompts = 1;
  std::vector<BanditGroupSpec> bandit_groups;
  std::vector<LinearGroupSpec> linear_groups;
  std::vector<double> qualities;  // linear; empty means equally spaced over num_actions
  std::size_t num_actions = 0;
  std::filesystem::path log;      // choice
  ChoiceWorld::Options choice;
  std::vector<std::pair<std::string, std::filesystem::path>> references;  // generation, sorted by id
  std::vector<double> reference_weights;
  std::optional<RewardSpec> reward;
  std::size_t max_len = 0;
};

struct ClusteringConfig {
  ClusterMethod method = ClusterMethod::fixed;
  /// 0 means the number of environment groups.
  std::size_t k = 0;
  std::size_t users = 200;
  std::size_t noise_categories = 3;
  std::size_t max_iters = 100;
  std::filesystem::path profiles;  // choice worlds
  std::vector<std::string> features;
};

struct EvaluationConfig {
  std::size_t episodes = 200;
  Decoding decoding = Decoding::greedy;
  std::vector<std::size_t> candidate_sizes;
};

struct AblationConfig {
  std::vector<TrainingMode> modes;
  std::vector<std::size_t> ks;
  std::vector<ClusterMethod> methods;
};

struct ReportConfig {
  double threshold = 0.5;
  std::size_t window = 20;
};

struct ExperimentConfig {
  EnvironmentConfig environment;
  ClusteringConfig clustering;
  TrainingConfig training;
  EvaluationConfig evaluation;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "runs";
  AblationConfig ablation;
  ReportConfig report;
  /// The source document with overrides applied (keys sorted on dump).
  nlohmann::json document;

  /// Hash of the environment, clustering and training sections plus `seed`.
  [[nodiscard]] std::string run_hash(std::uint64_t seed) const;
};

/// Command-line overrides applied to the document before validation.
struct ConfigOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<std::filesystem::path> output_dir;
};

/// Validates `doc` and resolves relative file paths against `base_dir`.
/// Throws ConfigError naming the dotted path of the first offending field.
ExperimentConfig parse_config(nlohmann::json doc, const std::filesystem::path& base_dir,
                              const ConfigOverrides& overrides = {});

/// Reads and parses a JSON config file; syntax errors are reported as ConfigError("<file>").
ExperimentConfig load_config(const std::filesystem::path& file, const ConfigOverrides& overrides = {});

}  // namespace pgrpo
