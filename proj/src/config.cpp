#include "pgrpo/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "pgrpo/errors.hpp"

namespace pgrpo {

std::string to_string(EnvironmentKind k) {
  switch (k) {
    case EnvironmentKind::bandit: return "bandit";
    case EnvironmentKind::linear: return "linear";
    case EnvironmentKind::choice: return "choice";
    case EnvironmentKind::generation: return "generation";
  }
  return "?";
}

std::string to_string(ClusterMethod m) {
  switch (m) {
    case ClusterMethod::fixed: return "fixed";
    case ClusterMethod::kmeans: return "kmeans";
    case ClusterMethod::random: return "random";
  }
  return "?";
}

namespace {

using json = nlohmann::json;

std::string join_path(const std::string& base, const std::string& key) { return base.empty() ? key : base + "." + key; }

/// Typed, path-aware access to one JSON object. finish() rejects keys that
/// were never read, so typos surface as errors instead of silent defaults.
class Section {
 public:
  Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
    if (!doc_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "must be an object");
  }

  [[nodiscard]] std::string at(const std::string& key) const { return join_path(path_, key); }
  bool has(const std::string& key) {
    used_.insert(key);
    return doc_.contains(key);
  }
  const json& raw(const std::string& key) {
    used_.insert(key);
    if (!doc_.contains(key)) throw ConfigError(at(key), "required field is missing");
    return doc_[key];
  }

  std::uint64_t uint(const std::string& key, std::optional<std::uint64_t> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "required field is missing");
    }
    return as_uint(doc_[key], at(key));
  }

  double real(const std::string& key, std::optional<double> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "required field is missing");
    }
    return as_real(doc_[key], at(key));
  }

  std::string string(const std::string& key, std::optional<std::string> fallback = std::nullopt) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "required field is missing");
    }
    if (!doc_[key].is_string()) throw ConfigError(at(key), "must be a string");
    return doc_[key].get<std::string>();
  }

  template <typename E>
  E choice(const std::string& key, const std::vector<std::pair<std::string, E>>& options, std::optional<E> fallback) {
    if (!has(key)) {
      if (fallback) return *fallback;
      throw ConfigError(at(key), "required field is missing");
    }
    return as_enum(doc_[key], at(key), options);
  }

  Section object(const std::string& key) { return Section(raw(key), at(key)); }

  void finish() const {
    for (const auto& [key, value] : doc_.items()) {
      if (!used_.count(key)) throw ConfigError(at(key), "unknown field");
    }
  }

  static std::uint64_t as_uint(const json& v, const std::string& path) {
    if (!v.is_number_integer() || (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)) {
      throw ConfigError(path, "must be a nonnegative integer");
    }
    return v.get<std::uint64_t>();
  }

  static double as_real(const json& v, const std::string& path) {
    if (!v.is_number()) throw ConfigError(path, "must be a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "must be finite");
    return d;
  }

  template <typename E>
  static E as_enum(const json& v, const std::string& path, const std::vector<std::pair<std::string, E>>& options) {
    std::vector<std::string> names;
    for (const auto& [name, value] : options) names.push_back(name);
    if (!v.is_string()) throw ConfigError(path, fmt::format("must be one of {}", fmt::join(names, "|")));
    const auto s = v.get<std::string>();
    for (const auto& [name, value] : options) {
      if (name == s) return value;
    }
    throw ConfigError(path, fmt::format("unknown value '{}' (expected {})", s, fmt::join(names, "|")));
  }

 private:
  const json& doc_;
  std::string path_;
  std::set<std::string> used_;
};

const std::vector<std::pair<std::string, TrainingMode>> kModes{{"grpo", TrainingMode::grpo},
                                                                {"pgrpo", TrainingMode::pgrpo}};
const std::vector<std::pair<std::string, ClusterMethod>> kMethods{
    {"fixed", ClusterMethod::fixed}, {"kmeans", ClusterMethod::kmeans}, {"random", ClusterMethod::random}};

std::filesystem::path existing_file(const std::string& value, const std::filesystem::path& base, const std::string& path) {
  std::filesystem::path p(value);
  if (p.is_relative()) p = base / p;
  if (!std::filesystem::is_regular_file(p)) throw ConfigError(path, fmt::format("file '{}' does not exist", value));
  return p;
}

std::vector<double> real_list(const json& v, const std::string& path) {
  if (!v.is_array() || v.empty()) throw ConfigError(path, "must be a nonempty array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v.size(); ++i) out.push_back(Section::as_real(v[i], fmt::format("{}[{}]", path, i)));
  return out;
}

RewardSpec parse_reward(const json& v, const std::string& path) {
  try {
    return RewardSpec::from_json(v);
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    // Component errors come back as "[i].field: what"; fold the prefix into the path.
    const auto colon = msg.find(": ");
    if (!msg.empty() && msg.front() == '[' && colon != std::string::npos) {
      throw ConfigError(path + msg.substr(0, colon), msg.substr(colon + 2));
    }
    throw ConfigError(path, msg);
  }
}

void check_weights(const std::vector<double>& weights, const std::string& path) {
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0 || weights[i] > 1.0) throw ConfigError(fmt::format("{}[{}].weight", path, i), "must be in [0, 1]");
    total += weights[i];
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(path, fmt::format("weights sum to {}, expected 1", total));
}

void check_group_ids(const std::vector<std::string>& ids, const std::string& path) {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i].empty()) throw ConfigError(fmt::format("{}[{}].id", path, i), "must be nonempty");
    if (!seen.insert(ids[i]).second) throw ConfigError(fmt::format("{}[{}].id", path, i), fmt::format("duplicate id '{}'", ids[i]));
  }
}

EnvironmentConfig parse_environment(Section s, const std::filesystem::path& base) {
  EnvironmentConfig env;
  env.kind = s.choice<EnvironmentKind>("kind",
                                       {{"bandit", EnvironmentKind::bandit},
                                        {"linear", EnvironmentKind::linear},
                                        {"choice", EnvironmentKind::choice},
                                        {"generation", EnvironmentKind::generation}},
                                       std::nullopt);
  switch (env.kind) {
    case EnvironmentKind::bandit:
    case EnvironmentKind::linear: {
      env.num_prompts = s.uint("num_prompts", 1);
      if (env.num_prompts < 1) throw ConfigError(s.at("num_prompts"), "must be >= 1");
      const auto& groups = s.raw("groups");
      const std::string gpath = s.at("groups");
      if (!groups.is_array() || groups.empty()) throw ConfigError(gpath, "must be a nonempty array");
      std::vector<std::string> ids;
      std::vector<double> weights;
      std::size_t n_actions = 0;
      if (env.kind == EnvironmentKind::linear) {
        if (s.has("qualities")) env.qualities = real_list(s.raw("qualities"), s.at("qualities"));
        env.num_actions = s.uint("num_actions", env.qualities.empty() ? 4 : env.qualities.size());
        if (env.qualities.empty()) {
          if (env.num_actions < 1) throw ConfigError(s.at("num_actions"), "must be >= 1");
          env.qualities = default_qualities(env.num_actions);
        } else if (env.num_actions != env.qualities.size()) {
          throw ConfigError(s.at("num_actions"), "must equal the number of qualities");
        }
      }
      for (std::size_t i = 0; i < groups.size(); ++i) {
        Section g(groups[i], fmt::format("{}[{}]", gpath, i));
        const auto id = g.string("id");
        const double w = g.real("weight");
        ids.push_back(id);
        weights.push_back(w);
        if (env.kind == EnvironmentKind::bandit) {
          BanditGroupSpec spec;
          spec.id = id;
          spec.weight = w;
          spec.action_means = real_list(g.raw("action_means"), g.at("action_means"));
          if (g.has("reward_stds")) spec.reward_stds = real_list(g.raw("reward_stds"), g.at("reward_stds"));
          if (i == 0) n_actions = spec.action_means.size();
          if (spec.action_means.size() != n_actions) {
            throw ConfigError(g.at("action_means"), fmt::format("expected {} actions like the first group", n_actions));
          }
          if (spec.reward_stds.size() != 1 && spec.reward_stds.size() != n_actions) {
            throw ConfigError(g.at("reward_stds"), fmt::format("needs 1 or {} entries", n_actions));
          }
          for (double sd : spec.reward_stds) {
            if (sd < 0.0) throw ConfigError(g.at("reward_stds"), "stds must be >= 0");
          }
          env.bandit_groups.push_back(std::move(spec));
        } else {
          LinearGroupSpec spec;
          spec.id = id;
          spec.weight = w;
          spec.sensitivity = g.real("sensitivity");
          spec.baseline = g.real("baseline", 0.0);
          spec.noise_std = g.real("noise_std", 0.0);
          if (spec.noise_std < 0.0) throw ConfigError(g.at("noise_std"), "must be >= 0");
          env.linear_groups.push_back(std::move(spec));
        }
        g.finish();
      }
      check_group_ids(ids, gpath);
      check_weights(weights, gpath);
      break;
    }
    case EnvironmentKind::choice: {
      env.log = existing_file(s.string("log"), base, s.at("log"));
      env.choice.window = s.uint("window", 3);
      env.choice.n_candidates = s.uint("n_candidates", 4);
      env.choice.max_candidates = s.uint("max_candidates", 11);
      env.choice.seed = s.uint("task_seed", 0);
      if (env.choice.window < 1) throw ConfigError(s.at("window"), "must be >= 1");
      if (env.choice.n_candidates < 2) throw ConfigError(s.at("n_candidates"), "must be >= 2");
      if (env.choice.max_candidates > 26) throw ConfigError(s.at("max_candidates"), "must be <= 26");
      if (env.choice.n_candidates > env.choice.max_candidates) {
        throw ConfigError(s.at("n_candidates"), "must not exceed max_candidates");
      }
      if (s.has("reward")) {
        env.reward = parse_reward(s.raw("reward"), s.at("reward"));
        if (env.reward->is_text()) throw ConfigError(s.at("reward"), "choice tasks take choice_correct/json_format rewards");
      }
      break;
    }
    case EnvironmentKind::generation: {
      Section refs = s.object("references");
      const auto& raw = s.raw("references");
      if (raw.empty()) throw ConfigError(s.at("references"), "must name at least one cluster");
      for (const auto& [id, value] : raw.items()) {
        const auto path = refs.at(id);
        refs.has(id);
        if (!value.is_string()) throw ConfigError(path, "must be a file path");
        const auto file = existing_file(value.get<std::string>(), base, path);
        if (read_reference_corpus(file).empty()) throw ConfigError(path, "reference file has no sequences");
        env.references.emplace_back(id, file);
      }
      refs.finish();
      if (s.has("weights")) {
        env.reference_weights = real_list(s.raw("weights"), s.at("weights"));
        if (env.reference_weights.size() != env.references.size()) {
          throw ConfigError(s.at("weights"), "needs one weight per reference cluster");
        }
        check_weights(env.reference_weights, s.at("weights"));
      }
      env.reward = parse_reward(s.raw("reward"), s.at("reward"));
      if (!env.reward->is_text()) throw ConfigError(s.at("reward"), "generation tasks take rouge_n/rouge_l/cosine_tf rewards");
      env.max_len = s.uint("max_len", 0);
      break;
    }
  }
  s.finish();
  return env;
}

ClusteringConfig parse_clustering(Section s, const std::filesystem::path& base, const EnvironmentConfig& env) {
  ClusteringConfig c;
  c.method = s.choice<ClusterMethod>("method", kMethods, ClusterMethod::fixed);
  c.k = s.uint("k", 0);
  c.users = s.uint("users", 200);
  c.noise_categories = s.uint("noise_categories", 3);
  c.max_iters = s.uint("max_iters", 100);
  if (s.has("profiles")) c.profiles = existing_file(s.string("profiles"), base, s.at("profiles"));
  if (s.has("features")) {
    const auto& f = s.raw("features");
    if (!f.is_array() || f.empty()) throw ConfigError(s.at("features"), "must be a nonempty array of column names");
    for (std::size_t i = 0; i < f.size(); ++i) {
      if (!f[i].is_string()) throw ConfigError(fmt::format("{}[{}]", s.at("features"), i), "must be a string");
      c.features.push_back(f[i].get<std::string>());
    }
  }
  s.finish();
  if (c.method != ClusterMethod::fixed && c.k < 1) throw ConfigError(s.at("k"), "must be >= 1 for kmeans/random");
  if (c.noise_categories < 1) throw ConfigError(s.at("noise_categories"), "must be >= 1");
  if (c.max_iters < 1) throw ConfigError(s.at("max_iters"), "must be >= 1");
  if (env.kind == EnvironmentKind::choice) {
    if (c.method == ClusterMethod::kmeans && c.profiles.empty()) {
      throw ConfigError(s.at("profiles"), "kmeans on a choice environment needs a profiles CSV");
    }
  } else if (c.method != ClusterMethod::fixed && c.k > c.users) {
    throw ConfigError(s.at("k"), fmt::format("k = {} exceeds the {} users", c.k, c.users));
  }
  return c;
}

TrainingConfig parse_training(Section s) {
  TrainingConfig t;
  t.mode = s.choice<TrainingMode>("mode", kModes, TrainingMode::pgrpo);
  t.group_size = s.uint("group_size", 8);
  t.epochs = s.uint("epochs", 200);
  t.batches_per_epoch = s.uint("batches_per_epoch", 1);
  t.optimizer.kind = s.choice<OptimizerKind>("optimizer", {{"sgd", OptimizerKind::sgd}, {"adam", OptimizerKind::adam}},
                                             OptimizerKind::sgd);
  if (s.has("learning_rate")) {
    t.optimizer.learning_rate = s.real("learning_rate");
    if (!(t.optimizer.learning_rate > 0.0)) throw ConfigError(s.at("learning_rate"), "must be > 0");
  }
  if (s.has("adam")) {
    Section a = s.object("adam");
    t.optimizer.beta1 = a.real("beta1", 0.9);
    t.optimizer.beta2 = a.real("beta2", 0.999);
    t.optimizer.adam_eps = a.real("eps", 1e-8);
    a.finish();
  }
  t.objective.clip_c = s.real("clip_c", 0.2);
  t.objective.kl_beta = s.real("kl_beta", 0.01);
  t.objective.eps = s.real("eps", kDefaultAdvantageEps);
  t.objective.group_scope = s.choice<GroupScope>(
      "group_scope", {{"per_prompt", GroupScope::per_prompt}, {"per_batch", GroupScope::per_batch}}, GroupScope::per_prompt);
  t.objective.kl_estimator = s.choice<KlEstimator>(
      "kl_estimator", {{"exact", KlEstimator::exact}, {"sampled", KlEstimator::sampled}}, KlEstimator::exact);
  t.ref_refresh_interval = s.uint("ref_refresh_interval", 0);
  t.groups_per_step = s.uint("groups_per_step", 0);
  t.behavior = s.choice<BehaviorPolicy>(
      "behavior", {{"policy", BehaviorPolicy::policy}, {"reference", BehaviorPolicy::reference}}, BehaviorPolicy::policy);
  t.stats_reset_interval = s.uint("stats_reset_interval", 0);
  t.workers = s.uint("workers", 1);
  s.finish();
  t.validate();
  return t;
}

}  // namespace

std::string ExperimentConfig::run_hash(std::uint64_t seed) const {
  json key{{"seed", seed}, {"training", training.to_json()}};
  for (const char* section : {"environment", "clustering"}) {
    key[section] = document.contains(section) ? document[section] : json();
  }
  return fnv1a64_hex(key.dump());
}

ExperimentConfig parse_config(json doc, const std::filesystem::path& base_dir, const ConfigOverrides& overrides) {
  if (!doc.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  if (overrides.seed) doc["seeds"] = json::array({*overrides.seed});
  if (overrides.mode) {
    if (!doc.contains("training")) doc["training"] = json::object();
    if (doc["training"].is_object()) doc["training"]["mode"] = *overrides.mode;
  }
  if (overrides.output_dir) doc["output_dir"] = overrides.output_dir->string();

  ExperimentConfig cfg;
  Section root(doc, "");
  const auto version = root.uint("schema_version");
  if (version != static_cast<std::uint64_t>(kConfigSchemaVersion)) {
    throw ConfigError("schema_version", fmt::format("unsupported version {} (expected {})", version, kConfigSchemaVersion));
  }
  cfg.environment = parse_environment(root.object("environment"), base_dir);
  if (root.has("clustering")) {
    cfg.clustering = parse_clustering(root.object("clustering"), base_dir, cfg.environment);
  }
  if (root.has("training")) cfg.training = parse_training(root.object("training"));

  if (root.has("evaluation")) {
    Section e = root.object("evaluation");
    cfg.evaluation.episodes = e.uint("episodes", 200);
    if (cfg.evaluation.episodes < 1) throw ConfigError(e.at("episodes"), "must be >= 1");
    cfg.evaluation.decoding = e.choice<Decoding>("decoding", {{"greedy", Decoding::greedy}, {"sample", Decoding::sample}},
                                                 Decoding::greedy);
    if (e.has("candidate_sizes")) {
      const auto& c = e.raw("candidate_sizes");
      if (!c.is_array()) throw ConfigError(e.at("candidate_sizes"), "must be an array of integers");
      for (std::size_t i = 0; i < c.size(); ++i) {
        const auto path = fmt::format("{}[{}]", e.at("candidate_sizes"), i);
        const auto n = Section::as_uint(c[i], path);
        if (cfg.environment.kind != EnvironmentKind::choice) throw ConfigError(path, "candidate sizes apply to choice environments");
        if (n < 2 || n > cfg.environment.choice.max_candidates) {
          throw ConfigError(path, fmt::format("must be in [2, {}]", cfg.environment.choice.max_candidates));
        }
        cfg.evaluation.candidate_sizes.push_back(n);
      }
    }
    e.finish();
  }

  const auto& seeds = root.raw("seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds", "must be a nonempty array of integers");
  for (std::size_t i = 0; i < seeds.size(); ++i) cfg.seeds.push_back(Section::as_uint(seeds[i], fmt::format("seeds[{}]", i)));

  if (root.has("output_dir")) {
    std::filesystem::path out(root.string("output_dir"));
    cfg.output_dir = out.is_relative() ? base_dir / out : out;
  } else {
    cfg.output_dir = base_dir / "runs";
  }

  if (root.has("ablation")) {
    Section a = root.object("ablation");
    auto list = [&](const std::string& key) -> const json& {
      const auto& v = a.raw(key);
      if (!v.is_array() || v.empty()) throw ConfigError(a.at(key), "must be a nonempty array");
      return v;
    };
    if (a.has("mode")) {
      const auto& v = list("mode");
      for (std::size_t i = 0; i < v.size(); ++i) {
        cfg.ablation.modes.push_back(Section::as_enum(v[i], fmt::format("{}[{}]", a.at("mode"), i), kModes));
      }
    }
    if (a.has("k")) {
      const auto& v = list("k");
      for (std::size_t i = 0; i < v.size(); ++i) {
        const auto path = fmt::format("{}[{}]", a.at("k"), i);
        const auto k = Section::as_uint(v[i], path);
        if (k < 1) throw ConfigError(path, "must be >= 1");
        if (cfg.environment.kind != EnvironmentKind::choice && k > cfg.clustering.users) {
          throw ConfigError(path, fmt::format("k = {} exceeds the {} users", k, cfg.clustering.users));
        }
        cfg.ablation.ks.push_back(k);
      }
    }
    if (a.has("method")) {
      const auto& v = list("method");
      for (std::size_t i = 0; i < v.size(); ++i) {
        cfg.ablation.methods.push_back(Section::as_enum(v[i], fmt::format("{}[{}]", a.at("method"), i), kMethods));
      }
    }
    a.finish();
  }

  if (root.has("report")) {
    Section r = root.object("report");
    cfg.report.threshold = r.real("threshold", 0.5);
    cfg.report.window = r.uint("window", 20);
    if (cfg.report.window < 1) throw ConfigError(r.at("window"), "must be >= 1");
    r.finish();
  }
  root.finish();
  cfg.document = std::move(doc);
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file, const ConfigOverrides& overrides) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError(file.string(), "cannot open config file");
  std::stringstream buf;
  buf << in.rdbuf();
  json doc = json::parse(buf.str(), nullptr, false);
  if (doc.is_discarded()) throw ConfigError(file.string(), "not valid JSON");
  return parse_config(std::move(doc), file.parent_path().empty() ? std::filesystem::path(".") : file.parent_path(),
                      overrides);
}

}  // namespace pgrpo
