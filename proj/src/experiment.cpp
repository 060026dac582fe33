#include "pgrpo/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "pgrpo/errors.hpp"
#include "pgrpo/report.hpp"

namespace pgrpo {

namespace fs = std::filesystem;

namespace {

// Stream ids for derive_rng so clustering, training and evaluation never share draws.
constexpr std::uint64_t kClusterStream = 0xC1;
constexpr std::uint64_t kEvalStream = 0xE7;

ClusterAssignment cluster_users(const ClusteringConfig& c, const ProfileTable& profiles,
                                const std::vector<std::string>& default_columns, Rng& rng) {
  if (c.method == ClusterMethod::random) return random_assign(profiles.user_ids, c.k, rng);
  if (c.k > profiles.user_ids.size()) {
    throw ConfigError("clustering.k", fmt::format("k = {} exceeds the {} users", c.k, profiles.user_ids.size()));
  }
  try {
    const auto features = build_user_features(profiles, c.features.empty() ? default_columns : c.features);
    return kmeans(features, c.k, c.max_iters, rng);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(c.features.empty() ? "clustering.k" : "clustering.features", e.what());
  }
}

std::unique_ptr<PreferenceEnvironment> synthetic_environment(const EnvironmentConfig& env) {
  switch (env.kind) {
    case EnvironmentKind::bandit:
      return std::make_unique<BanditWorld>(env.bandit_groups, env.num_prompts);
    case EnvironmentKind::linear:
      return std::make_unique<LinearRewardWorld>(env.linear_groups, env.qualities, env.num_prompts);
    case EnvironmentKind::generation: {
      std::vector<std::pair<std::string, std::vector<std::string>>> refs;
      for (const auto& [id, path] : env.references) refs.emplace_back(id, read_reference_corpus(path));
      return std::make_unique<GenerationWorld>(std::move(refs), *env.reward, env.max_len, env.reference_weights);
    }
    case EnvironmentKind::choice:
      break;
  }
  throw std::logic_error("not a synthetic environment");
}

RunSetup choice_run(const ExperimentConfig& cfg, std::uint64_t seed, std::optional<std::size_t> n_candidates) {
  const auto& env = cfg.environment;
  const auto log = read_interaction_log(env.log);
  ChoiceWorld::Options options = env.choice;
  if (n_candidates) options.n_candidates = *n_candidates;
  const RewardSpec spec = env.reward ? *env.reward : ChoiceWorld::default_spec();

  RunSetup setup;
  std::vector<std::string> group_ids{"all"};
  std::map<std::string, std::size_t> user_groups;
  if (cfg.clustering.method != ClusterMethod::fixed) {
    Rng rng = derive_rng(seed, {kClusterStream});
    ProfileTable profiles;
    std::vector<std::string> columns;
    if (cfg.clustering.method == ClusterMethod::kmeans) {
      profiles = read_profiles(cfg.clustering.profiles);
      if (!profiles.records.empty()) {
        for (const auto& [col, value] : profiles.records.front()) columns.push_back(col);
      }
    } else {
      std::set<std::string> users;
      for (const auto& r : log) users.insert(r.user_id);
      profiles.user_ids.assign(users.begin(), users.end());
    }
    setup.assignment = cluster_users(cfg.clustering, profiles, columns, rng);
    // Compact labels to the clusters that actually have users.
    const auto sizes = setup.assignment->cluster_sizes();
    std::map<std::size_t, std::size_t> compact;
    group_ids.clear();
    for (std::size_t c = 0; c < sizes.size(); ++c) {
      if (sizes[c] == 0) continue;
      compact[c] = group_ids.size();
      group_ids.push_back(fmt::format("c{}", c));
    }
    for (const auto& [user, label] : setup.assignment->by_user()) user_groups[user] = compact.at(label);
  }

  auto world = std::make_unique<ChoiceWorld>(log, options, group_ids, user_groups, spec);
  // Clusters whose users produce no tasks cannot be sampled; drop them.
  std::vector<std::size_t> keep;
  for (std::size_t g = 0; g < world->num_groups(); ++g) {
    if (!world->tasks(g).empty()) keep.push_back(g);
  }
  if (keep.size() != world->num_groups()) {
    std::vector<std::string> kept_ids;
    std::map<std::size_t, std::size_t> remap;
    for (std::size_t g : keep) {
      remap[g] = kept_ids.size();
      kept_ids.push_back(group_ids[g]);
    }
    std::map<std::string, std::size_t> kept_users;
    for (const auto& [user, g] : user_groups) {
      if (auto it = remap.find(g); it != remap.end()) kept_users[user] = it->second;
    }
    world = std::make_unique<ChoiceWorld>(log, options, kept_ids, kept_users, spec);
  }
  setup.routing = ClusterRouting::fixed(*world);
  setup.environment = std::move(world);
  return setup;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

std::string optional_real(const std::optional<double>& v) { return v ? format_real(*v) : "NA"; }

}  // namespace

RunSetup build_run(const ExperimentConfig& cfg, std::uint64_t seed, std::optional<std::size_t> n_candidates) {
  if (cfg.environment.kind == EnvironmentKind::choice) return choice_run(cfg, seed, n_candidates);

  RunSetup setup;
  setup.environment = synthetic_environment(cfg.environment);
  const auto& env = *setup.environment;
  if (cfg.clustering.method == ClusterMethod::fixed) {
    setup.routing = ClusterRouting::fixed(env);
    return setup;
  }
  Rng rng = derive_rng(seed, {kClusterStream});
  const auto population = synthetic_population(env, cfg.clustering.users, cfg.clustering.noise_categories, rng);
  setup.assignment = cluster_users(cfg.clustering, population.profiles, {"segment", "noise"}, rng);
  setup.routing = ClusterRouting::from_assignment(*setup.assignment, population);
  return setup;
}

namespace {

// Logit bias of the choice-format prior. Large enough that a fresh policy
// emits well-formed answers most of the time, small enough to be unlearned.
constexpr double kFormatBias = 8.0;
constexpr double kOfferedLetterBias = 3.0;

// Stands in for a pretrained model that already knows the answer format:
// start -> prefix -> letter -> suffix -> stop, with letters of offered slots
// preferred. Which letter to pick is left uniform.
void apply_format_prior(CategoricalTokenPolicy& policy, const ChoiceWorld& world) {
  ParamMatrix p = policy.params();
  const auto& v = world.vocabulary();
  const auto ctx = static_cast<Eigen::Index>(world.context_dim());
  const auto prev = [&](TokenId t) { return ctx + static_cast<Eigen::Index>(t); };
  const auto start = ctx + static_cast<Eigen::Index>(v.size());
  const auto row = [&](const std::string& sym) { return static_cast<Eigen::Index>(v.id(sym)); };
  const auto prefix = row("{\"answer\":\"");
  const auto suffix = row("\"}");
  const auto groups = static_cast<Eigen::Index>(world.num_groups());
  p(prefix, start) = kFormatBias;
  for (std::size_t j = 0; j < world.options().max_candidates; ++j) {
    const auto letter = row(std::string(1, choice_letter(j)));
    p(letter, prev(static_cast<TokenId>(prefix))) = kFormatBias;
    p(letter, groups + 3 * static_cast<Eigen::Index>(j)) = kOfferedLetterBias;
    p(suffix, prev(static_cast<TokenId>(letter))) = kFormatBias;
  }
  p(static_cast<Eigen::Index>(v.stop()), prev(static_cast<TokenId>(suffix))) = kFormatBias;
  policy.set_params(std::move(p));
}

}  // namespace

CategoricalTokenPolicy initial_policy(const PreferenceEnvironment& env) {
  CategoricalTokenPolicy policy(env.vocabulary(), env.context_dim());
  if (const auto* choice = dynamic_cast<const ChoiceWorld*>(&env)) apply_format_prior(policy, *choice);
  return policy;
}

RunResult run_training(const ExperimentConfig& cfg, std::uint64_t seed, const fs::path& out_dir) {
  RunSetup setup = build_run(cfg, seed);
  TrainingConfig tc = cfg.training;
  tc.seed = seed;
  Trainer trainer(tc, *setup.environment, setup.routing, initial_policy(*setup.environment));
  spdlog::info("training seed {} ({} steps, mode {}, {} clusters)", seed, tc.total_steps(), to_string(tc.mode),
               setup.routing.size());
  trainer.run();

  RunResult result;
  result.seed = seed;
  for (std::size_t g = 0; g < setup.environment->num_groups(); ++g) result.group_ids.push_back(setup.environment->group_id(g));
  result.metrics = trainer.metrics();
  result.summaries = trainer.summaries();
  result.checkpoint = trainer.checkpoint(cfg.run_hash(seed));

  if (!out_dir.empty()) {
    fs::create_directories(out_dir);
    write_metrics_jsonl(result.metrics, out_dir / "metrics.jsonl");
    write_text(out_dir / "checkpoint.json", result.checkpoint.dump() + "\n");
    if (setup.assignment) write_assignment_csv(*setup.assignment, out_dir / "assignments.csv");
  }
  return result;
}

std::vector<RunResult> train_all(const ExperimentConfig& cfg) {
  std::vector<RunResult> out;
  for (auto seed : cfg.seeds) out.push_back(run_training(cfg, seed, cfg.output_dir / std::to_string(seed)));
  return out;
}

void evaluate_all(const ExperimentConfig& cfg) {
  for (auto seed : cfg.seeds) {
    const fs::path dir = cfg.output_dir / std::to_string(seed);
    const fs::path ckpt_path = dir / "checkpoint.json";
    std::ifstream in(ckpt_path, std::ios::binary);
    if (!in) throw std::runtime_error(fmt::format("'{}' not found; run train first", ckpt_path.string()));
    const auto ckpt = nlohmann::json::parse(in, nullptr, false);
    if (ckpt.is_discarded() || !ckpt.is_object()) throw ParseError(ckpt_path.string(), "invalid checkpoint JSON");
    if (!ckpt.contains("config_hash") || ckpt["config_hash"] != cfg.run_hash(seed)) {
      throw std::runtime_error(fmt::format("{}: produced by a different configuration", ckpt_path.string()));
    }
    if (!ckpt.contains("policy")) throw ParseError(ckpt_path.string() + ": policy", "missing");
    const auto policy = CategoricalTokenPolicy::from_json(ckpt["policy"]);

    std::vector<std::optional<std::size_t>> sizes;
    if (cfg.environment.kind == EnvironmentKind::choice && !cfg.evaluation.candidate_sizes.empty()) {
      for (auto n : cfg.evaluation.candidate_sizes) sizes.emplace_back(n);
    } else {
      sizes.emplace_back(std::nullopt);
    }
    std::string text = "n_candidates,cluster_id,episodes,mean_reward,accuracy\n";
    for (const auto& n : sizes) {
      const RunSetup setup = build_run(cfg, seed, n);
      if (!(policy.vocab() == setup.environment->vocabulary()) || policy.context_dim() != setup.environment->context_dim()) {
        throw std::runtime_error(fmt::format("{}: policy does not match the environment", ckpt_path.string()));
      }
      Rng rng = derive_rng(seed, {kEvalStream, n.value_or(0)});
      const auto report = evaluate_policy(policy, *setup.environment, cfg.evaluation.episodes, rng, cfg.evaluation.decoding);
      const std::string label = n ? std::to_string(*n)
                                  : (cfg.environment.kind == EnvironmentKind::choice
                                         ? std::to_string(cfg.environment.choice.n_candidates)
                                         : std::string("NA"));
      for (const auto& r : report) {
        text += fmt::format("{},{},{},{},{}\n", label, r.cluster_id, r.episodes, format_real(r.mean_reward),
                            optional_real(r.accuracy));
      }
    }
    write_text(dir / "eval.csv", text);
    spdlog::info("wrote {}", (dir / "eval.csv").string());
  }
}

// --- convergence summaries -----------------------------------------------------------

std::vector<double> trailing_means(const std::vector<double>& values, std::size_t window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  std::vector<double> out;
  double sum = 0.0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    sum += values[i];
    if (i >= window) sum -= values[i - window];
    out.push_back(sum / static_cast<double>(std::min(window, i + 1)));
  }
  return out;
}

std::optional<std::size_t> steps_to_threshold(const std::vector<double>& values, double threshold, std::size_t window) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  for (std::size_t end = window; end <= values.size(); ++end) {
    double sum = 0.0;
    for (std::size_t i = end - window; i < end; ++i) sum += values[i];
    if (sum / static_cast<double>(window) >= threshold) return end;
  }
  return std::nullopt;
}

std::optional<double> final_reward(const std::vector<std::optional<double>>& values, std::size_t window) {
  double sum = 0.0;
  std::size_t n = 0;
  for (auto it = values.rbegin(); it != values.rend() && n < window; ++it) {
    if (!*it) continue;
    sum += **it;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return sum / static_cast<double>(n);
}

// --- ablations ---------------------------------------------------------------------

std::string AblationVariant::name() const {
  return fmt::format("mode-{}_method-{}_k-{}", to_string(mode), to_string(method), k);
}

std::vector<AblationVariant> ablation_variants(const ExperimentConfig& cfg) {
  const auto& a = cfg.ablation;
  const std::vector<TrainingMode> modes = a.modes.empty() ? std::vector<TrainingMode>{cfg.training.mode} : a.modes;
  const std::vector<ClusterMethod> methods =
      a.methods.empty() ? std::vector<ClusterMethod>{cfg.clustering.method} : a.methods;
  const std::vector<std::size_t> ks = a.ks.empty() ? std::vector<std::size_t>{cfg.clustering.k} : a.ks;
  std::vector<AblationVariant> out;
  for (auto m : modes) {
    for (auto method : methods) {
      for (auto k : ks) out.push_back({m, method, k});
    }
  }
  return out;
}

ExperimentConfig apply_variant(const ExperimentConfig& cfg, const AblationVariant& v) {
  ExperimentConfig out = cfg;
  out.training.mode = v.mode;
  out.clustering.method = v.method;
  out.clustering.k = v.k;
  if (v.method != ClusterMethod::fixed && v.k < 1) throw ConfigError("ablation.k", "kmeans/random variants need k >= 1");
  if (v.method == ClusterMethod::kmeans && cfg.environment.kind == EnvironmentKind::choice && cfg.clustering.profiles.empty()) {
    throw ConfigError("clustering.profiles", "kmeans on a choice environment needs a profiles CSV");
  }
  // Keep the run hash in step with the variant.
  out.document["clustering"]["method"] = to_string(v.method);
  out.document["clustering"]["k"] = v.k;
  return out;
}

std::vector<AblationRow> summarize_run(const RunResult& run, const AblationVariant& variant, const ReportConfig& report) {
  std::vector<AblationRow> rows;
  auto row = [&](const std::string& cluster, std::optional<double> fin, std::optional<std::size_t> steps) {
    AblationRow r;
    r.variant = variant.name();
    r.spec = variant;
    r.seed = run.seed;
    r.cluster_id = cluster;
    r.final_reward = fin.value_or(std::numeric_limits<double>::quiet_NaN());
    r.steps_to_threshold = steps;
    rows.push_back(std::move(r));
  };
  for (std::size_t g = 0; g < run.group_ids.size(); ++g) {
    std::vector<std::optional<double>> values;
    std::vector<double> present;
    for (const auto& s : run.summaries) {
      values.push_back(s.group_rewards[g]);
      if (s.group_rewards[g]) present.push_back(*s.group_rewards[g]);
    }
    row(run.group_ids[g], final_reward(values, report.window), steps_to_threshold(present, report.threshold, report.window));
  }
  std::vector<std::optional<double>> overall;
  std::vector<double> plain;
  for (const auto& s : run.summaries) {
    overall.emplace_back(s.overall_reward);
    plain.push_back(s.overall_reward);
  }
  row("overall", final_reward(overall, report.window), steps_to_threshold(plain, report.threshold, report.window));
  return rows;
}

std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg) {
  std::vector<AblationRow> rows;
  for (const auto& v : ablation_variants(cfg)) {
    const ExperimentConfig vcfg = apply_variant(cfg, v);
    for (auto seed : cfg.seeds) {
      const auto run = run_training(vcfg, seed, cfg.output_dir / "ablation" / v.name() / std::to_string(seed));
      const auto r = summarize_run(run, v, cfg.report);
      rows.insert(rows.end(), r.begin(), r.end());
    }
  }

  fs::create_directories(cfg.output_dir);
  std::string text = "variant,mode,method,k,seed,cluster_id,final_reward,steps_to_threshold\n";
  for (const auto& r : rows) {
    text += fmt::format("{},{},{},{},{},{},{},{}\n", r.variant, to_string(r.spec.mode), to_string(r.spec.method), r.spec.k,
                        r.seed, r.cluster_id, std::isnan(r.final_reward) ? "NA" : format_real(r.final_reward),
                        r.steps_to_threshold ? std::to_string(*r.steps_to_threshold) : "NA");
  }
  write_text(cfg.output_dir / "ablation.csv", text);

  // Per (variant, cluster): order statistics over seeds. Runs that never reach
  // the threshold count as +inf for the median step.
  std::map<std::pair<std::string, std::string>, std::vector<const AblationRow*>> groups;
  std::vector<std::pair<std::string, std::string>> order;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.variant, r.cluster_id);
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(&r);
  }
  std::string summary =
      "variant,cluster_id,runs,median_final_reward,q25_final_reward,q75_final_reward,median_steps_to_threshold,reached\n";
  for (const auto& key : order) {
    const auto& members = groups[key];
    std::vector<double> finals, steps;
    std::size_t reached = 0;
    for (const auto* r : members) {
      if (!std::isnan(r->final_reward)) finals.push_back(r->final_reward);
      if (r->steps_to_threshold) ++reached;
      steps.push_back(r->steps_to_threshold ? static_cast<double>(*r->steps_to_threshold)
                                            : std::numeric_limits<double>::infinity());
    }
    std::sort(steps.begin(), steps.end());
    const double med_steps = steps.size() % 2 == 1 ? steps[steps.size() / 2]
                                                   : 0.5 * (steps[steps.size() / 2 - 1] + steps[steps.size() / 2]);
    summary += fmt::format("{},{},{},{},{},{},{},{}\n", key.first, key.second, members.size(),
                           finals.empty() ? "NA" : format_real(quantile(finals, 0.5)),
                           finals.empty() ? "NA" : format_real(quantile(finals, 0.25)),
                           finals.empty() ? "NA" : format_real(quantile(finals, 0.75)),
                           std::isfinite(med_steps) ? format_real(med_steps) : "NA", reached);
  }
  write_text(cfg.output_dir / "ablation_summary.csv", summary);
  return rows;
}

}  // namespace pgrpo
