#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "pgrpo/errors.hpp"
#include "pgrpo/experiment.hpp"
#include "pgrpo/trainer.hpp"

using namespace pgrpo;
namespace fs = std::filesystem;

namespace {

BanditWorld two_cluster_world() {
  return BanditWorld({{"majority", 0.8, {0.8, 0.2, 0.2}, {0.1}}, {"minority", 0.2, {0.2, 0.3, 0.2}, {0.1}}});
}

TrainingConfig small_config(TrainingMode mode, std::size_t epochs = 20) {
  TrainingConfig cfg;
  cfg.mode = mode;
  cfg.group_size = 6;
  cfg.epochs = epochs;
  cfg.seed = 99;
  cfg.groups_per_step = 4;
  return cfg;
}

Trainer make_trainer(const TrainingConfig& cfg, const PreferenceEnvironment& env) {
  return Trainer(cfg, env, ClusterRouting::fixed(env), initial_policy(env));
}

std::string dump_metrics(const std::vector<MetricsRecord>& records) {
  std::string out;
  for (const auto& r : records) out += r.to_json().dump() + "\n";
  return out;
}

// Wraps a choice world and appends a one-hot of the gold slot to the context,
// so a hand-built policy can answer every task correctly.
class GoldHintWorld final : public PreferenceEnvironment {
 public:
  explicit GoldHintWorld(const ChoiceWorld& inner) : inner_(inner) {}
  TaskKind kind() const override { return inner_.kind(); }
  const Vocabulary& vocabulary() const override { return inner_.vocabulary(); }
  std::size_t context_dim() const override { return inner_.context_dim() + inner_.options().max_candidates; }
  std::size_t max_len() const override { return inner_.max_len(); }
  std::size_t num_groups() const override { return inner_.num_groups(); }
  const std::string& group_id(std::size_t g) const override { return inner_.group_id(g); }
  double group_weight(std::size_t g) const override { return inner_.group_weight(g); }
  TaskInstance sample_task(std::size_t group, Rng& rng) const override {
    auto t = inner_.sample_task(group, rng);
    const auto& p = std::get<ChoicePayload>(t.payload);
    std::vector<double> hint(inner_.options().max_candidates, 0.0);
    hint[static_cast<std::size_t>(p.gold - 'A')] = 1.0;
    t.context.features.insert(t.context.features.end(), hint.begin(), hint.end());
    return t;
  }
  double reward(const TaskInstance& t, const TokenSequence& c, Rng& rng) const override { return inner_.reward(t, c, rng); }
  std::optional<bool> correct(const TaskInstance& t, const TokenSequence& c) const override { return inner_.correct(t, c); }
  std::string render(const TokenSequence& c) const override { return inner_.render(c); }

 private:
  const ChoiceWorld& inner_;
};

// Log with a strong shared item order so transition affinity predicts the next item.
std::vector<InteractionLogRecord> chain_log(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<InteractionLogRecord> log;
  const int items = 40;
  for (int u = 0; u < 80; ++u) {
    int item = static_cast<int>(rng() % items);
    for (int t = 0; t < 8; ++t) {
      log.push_back({"u" + std::to_string(u), "i" + std::to_string(item), t});
      item = (item + 1 + (rng() % 10 == 0 ? 1 : 0)) % items;
    }
  }
  return log;
}

}  // namespace

TEST_CASE("optimizer examples") {
  OptimizerConfig sgd;
  sgd.learning_rate = 0.1;
  OptimizerState st;
  ParamMatrix p = ParamMatrix::Constant(2, 3, 0.5);
  optimizer_step(p, ParamMatrix::Ones(2, 3), st, sgd);
  CHECK((p.array() - 0.6).abs().maxCoeff() < 1e-15);
  CHECK_THROWS_AS((void)optimizer_step(p, ParamMatrix::Ones(3, 2), st, sgd), std::invalid_argument);

  CHECK(OptimizerConfig{}.effective_lr() == 0.05);
  OptimizerConfig adam;
  adam.kind = OptimizerKind::adam;
  CHECK(adam.effective_lr() == 0.005);
  adam.learning_rate = 0.01;

  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    OptimizerState s;
    ParamMatrix q = oracle::random_params(3, 4, rng, 1.0);
    const ParamMatrix before = q;
    const ParamMatrix g = oracle::random_params(3, 4, rng, std::pow(10.0, static_cast<double>(trial % 7) - 3));
    optimizer_step(q, g, s, adam);
    CHECK((q - before).cwiseAbs().maxCoeff() <= adam.learning_rate * (1 + 1e-12));
    // Ascent direction.
    CHECK(((q - before).array() * g.array()).minCoeff() >= 0.0);

    const ParamMatrix m = s.m, v = s.v;
    const ParamMatrix frozen = q;
    // With a zero gradient the parameters move only through the decayed first moment;
    // the moments themselves just decay.
    optimizer_step(q, ParamMatrix::Zero(3, 4), s, adam);
    CHECK((s.m - adam.beta1 * m).cwiseAbs().maxCoeff() < 1e-15);
    CHECK((s.v - adam.beta2 * v).cwiseAbs().maxCoeff() < 1e-15);
    (void)frozen;
  }
  OptimizerState fresh;
  ParamMatrix z = ParamMatrix::Constant(2, 2, 1.5);
  optimizer_step(z, ParamMatrix::Zero(2, 2), fresh, adam);
  CHECK(z == ParamMatrix::Constant(2, 2, 1.5));

  const auto back = OptimizerState::from_json(nlohmann::json::parse(fresh.to_json().dump()));
  CHECK(back.steps == fresh.steps);
  CHECK(back.m == fresh.m);
}

TEST_CASE("training config validation") {
  TrainingConfig cfg;
  cfg.group_size = 1;
  try {
    cfg.validate();
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.path() == "training.group_size");
  }
  cfg.group_size = 4;
  cfg.epochs = 0;
  CHECK_THROWS_AS((void)cfg.validate(), ConfigError);
  cfg.epochs = 3;
  cfg.objective.clip_c = 2.0;
  CHECK_THROWS_AS((void)cfg.validate(), ConfigError);
  cfg.objective.clip_c = 0.2;
  cfg.mode = TrainingMode::grpo;
  CHECK(cfg.effective_objective().advantage_mode == AdvantageMode::group);
  cfg.mode = TrainingMode::pgrpo;
  CHECK(cfg.effective_objective().advantage_mode == AdvantageMode::personalized);
}

TEST_CASE("group allocation") {
  CHECK(allocate_groups({0.8, 0.2}, 5) == std::vector<std::size_t>{4, 1});
  CHECK(allocate_groups({0.8, 0.2}, 0) == std::vector<std::size_t>{1, 1});
  CHECK(allocate_groups({0.98, 0.01, 0.01}, 4) == std::vector<std::size_t>{2, 1, 1});
  CHECK(allocate_groups({0.5, 0.5}, 7) == std::vector<std::size_t>{4, 3});
  std::mt19937_64 rng(72);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t k = 1 + rng() % 6;
    std::vector<double> w(k);
    double sum = 0;
    for (auto& x : w) sum += (x = 0.01 + static_cast<double>(rng() % 100));
    for (auto& x : w) x /= sum;
    const std::size_t n = rng() % 20;
    const auto a = allocate_groups(w, n);
    CHECK(std::accumulate(a.begin(), a.end(), std::size_t{0}) == std::max(n, k));
    for (auto x : a) CHECK(x >= 1);
  }
}

TEST_CASE("constructor rejects mismatched policy") {
  const auto env = two_cluster_world();
  CategoricalTokenPolicy wrong(action_vocabulary(5), env.context_dim());
  CHECK_THROWS_AS((void)Trainer(small_config(TrainingMode::grpo), env, ClusterRouting::fixed(env), wrong), std::invalid_argument);
  CategoricalTokenPolicy wrong_dim(env.vocabulary(), env.context_dim() + 1);
  CHECK_THROWS_AS((void)Trainer(small_config(TrainingMode::grpo), env, ClusterRouting::fixed(env), wrong_dim), std::invalid_argument);
  auto bad = small_config(TrainingMode::grpo);
  bad.group_size = 0;
  CHECK_THROWS_AS((void)make_trainer(bad, env), ConfigError);
}

TEST_CASE("constant rewards with beta 0 leave parameters bitwise unchanged") {
  // Zero sensitivity: every action (stop included) earns exactly 0.5.
  const LinearRewardWorld env({{"a", 0.5, 0.0, 0.5, 0.0}, {"b", 0.5, 0.0, 0.5, 0.0}}, {0.1, 0.9, 0.4});
  auto cfg = small_config(TrainingMode::grpo);
  cfg.objective.kl_beta = 0.0;
  for (auto scope : {GroupScope::per_prompt, GroupScope::per_batch}) {
    cfg.objective.group_scope = scope;
    auto policy = initial_policy(env);
    std::mt19937_64 rng(73);
    policy.set_params(oracle::random_params(policy.params().rows(), policy.params().cols(), rng, 0.5));
    const ParamMatrix before = policy.params();
    Trainer t(cfg, env, ClusterRouting::fixed(env), policy);
    t.run();
    CHECK(t.policy().params() == before);
    for (const auto& r : t.metrics()) CHECK(r.advantage_mean == 0.0);
  }
}

TEST_CASE("runs are deterministic, with and without worker threads") {
  const auto env = two_cluster_world();
  for (auto mode : {TrainingMode::grpo, TrainingMode::pgrpo}) {
    auto cfg = small_config(mode, 30);
    auto a = make_trainer(cfg, env);
    auto b = make_trainer(cfg, env);
    a.run();
    b.run();
    CHECK(dump_metrics(a.metrics()) == dump_metrics(b.metrics()));
    CHECK(a.policy().params() == b.policy().params());

    cfg.workers = 4;
    auto c = make_trainer(cfg, env);
    c.run();
    CHECK(dump_metrics(c.metrics()) == dump_metrics(a.metrics()));
    CHECK(c.policy().params() == a.policy().params());
    CHECK(c.checkpoint("h").dump() == a.checkpoint("h").dump());

    cfg.seed = 100;
    cfg.workers = 1;
    auto d = make_trainer(cfg, env);
    d.run();
    CHECK(dump_metrics(d.metrics()) != dump_metrics(a.metrics()));
  }
}

TEST_CASE("metrics records and step summaries") {
  const auto env = two_cluster_world();
  auto t = make_trainer(small_config(TrainingMode::pgrpo, 5), env);
  const auto first = t.step();
  REQUIRE(first.size() == 2);
  CHECK(first[0].step == 1);
  CHECK(first[0].cluster_id == "majority");
  CHECK(first[0].completions == 18);  // 3 slots x 6
  CHECK(first[1].completions == 6);
  CHECK(first[0].cluster_running_mean == t.registry().stats("majority").mean);
  t.run();
  CHECK(t.steps_done() == 5);
  CHECK_THROWS_AS((void)t.step(), std::logic_error);
  CHECK(t.summaries().size() == 5);
  for (const auto& s : t.summaries()) {
    REQUIRE(s.group_rewards.size() == 2);
    CHECK(s.overall_reward == doctest::Approx((*s.group_rewards[0] + *s.group_rewards[1]) / 2));
  }
  for (const auto& r : t.metrics()) {
    CHECK(std::isfinite(r.loss));
    CHECK(r.mean_kl >= 0.0);
  }

  const auto path = fs::temp_directory_path() / "pgrpo_metrics_test.jsonl";
  write_metrics_jsonl(t.metrics(), path);
  const auto back = read_metrics_jsonl(path);
  CHECK(dump_metrics(back) == dump_metrics(t.metrics()));
  {
    std::ofstream out(path, std::ios::app);
    out << "{\"step\": \"oops\"}\n";
  }
  try {
    (void)read_metrics_jsonl(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("line 11") != std::string::npos);
  }
  fs::remove(path);

  const auto ck = t.checkpoint("abc");
  for (const char* key : {"schema_version", "config_hash", "step", "policy", "reference", "registry", "optimizer"}) {
    CHECK(ck.contains(key));
  }
  CHECK(PreferenceStatsRegistry::restore(ck["registry"]).accumulator("minority") == t.registry().accumulator("minority"));
}

TEST_CASE("pgrpo observes each reward before computing its advantage") {
  CompletionGroup g;
  g.context.cluster_id = "p";
  for (double r : {0.8, 0.3}) {
    Completion c;
    c.tokens = {0};
    c.reward = r;
    g.completions.push_back(c);
  }
  PreferenceStatsRegistry reg;
  ObjectiveConfig cfg;
  cfg.eps = 0.0;
  const auto adv = step_advantages({g}, TrainingMode::pgrpo, reg, cfg);
  CHECK(adv[0][0] == 0.0);  // (0.8 - 0.8) / 1
  CHECK(adv[0][1] == doctest::Approx((0.3 - 0.55) / std::sqrt(0.125)).epsilon(1e-14));
  CHECK(reg.stats("p").count == 2);

  PreferenceStatsRegistry reg2;
  const auto grpo = step_advantages({g}, TrainingMode::grpo, reg2, cfg);
  CHECK(grpo[0][0] == doctest::Approx(std::sqrt(0.5)));
  CHECK(reg2.stats("p").count == 2);  // still tracked for reporting
}

TEST_CASE("per-batch scope normalizes across the whole step") {
  std::vector<CompletionGroup> groups(2);
  groups[0].context.cluster_id = "maj";
  groups[1].context.cluster_id = "min";
  for (double r : {0.8, 0.82}) groups[0].completions.push_back({{0}, r, {}, {}});
  for (double r : {0.3, 0.32}) groups[1].completions.push_back({{0}, r, {}, {}});
  PreferenceStatsRegistry reg;
  ObjectiveConfig cfg;
  cfg.group_scope = GroupScope::per_batch;
  const auto adv = step_advantages(groups, TrainingMode::grpo, reg, cfg);
  const auto want = group_advantages(std::vector<double>{0.8, 0.82, 0.3, 0.32}, cfg.eps);
  CHECK(adv[0][0] == want[0]);
  CHECK(adv[1][1] == want[3]);
  CHECK(adv[1][1] < 0.0);  // minority's best completion is penalized
}

TEST_CASE("gradient reduction: pgrpo with group statistics equals per-prompt grpo") {
  std::mt19937_64 rng(74);
  const auto env = two_cluster_world();
  for (int trial = 0; trial < 50; ++trial) {
    auto policy = initial_policy(env);
    policy.set_params(oracle::random_params(policy.params().rows(), policy.params().cols(), rng, 0.5));
    CategoricalTokenPolicy refp = policy;
    refp.set_params(policy.params() + oracle::random_params(policy.params().rows(), policy.params().cols(), rng, 0.1));
    const ReferenceSnapshot ref(refp);
    ObjectiveConfig cfg;
    cfg.eps = 0.0;
    std::vector<CompletionGroup> groups;
    PreferenceStatsRegistry reg;
    Rng r(rng());
    for (int s = 0; s < 3; ++s) {
      const auto task = env.sample_task(static_cast<std::size_t>(s % 2), r);
      CompletionGroup g;
      g.context = task.context;
      g.context.cluster_id = "slot" + std::to_string(s);
      std::vector<double> rewards;
      for (int i = 0; i < 6; ++i) {
        Completion c;
        c.tokens = policy.sample(g.context, 1, r);
        c.reward = env.reward(task, c.tokens, r);
        rewards.push_back(c.reward);
        g.completions.push_back(c);
      }
      const auto mv = oracle::two_pass(rewards);
      reg.set(g.context.cluster_id,
              WelfordAccumulator::from_state(rewards.size(), mv.mean, mv.sample_variance * (rewards.size() - 1)));
      groups.push_back(g);
    }
    std::vector<AdvantageVector> personal;
    for (const auto& g : groups) personal.push_back(registry_advantages(g, reg, 0.0));
    PreferenceStatsRegistry scratch;
    const auto grouped = step_advantages(groups, TrainingMode::grpo, scratch, cfg);
    for (std::size_t s = 0; s < groups.size(); ++s) {
      for (std::size_t i = 0; i < personal[s].size(); ++i) CHECK(std::abs(personal[s][i] - grouped[s][i]) < 1e-12);
    }
    const auto a = batch_objective(groups, personal, policy, ref, cfg);
    const auto b = batch_objective(groups, grouped, policy, ref, cfg);
    CHECK((a.gradient - b.gradient).cwiseAbs().maxCoeff() < 1e-10);
  }
}

TEST_CASE("running mean converges to the expected reward of a stationary policy") {
  const BanditWorld env({{"only", 1.0, {0.7, 0.4, 0.55}, {0.1}}});
  TrainingConfig cfg;
  cfg.mode = TrainingMode::pgrpo;
  cfg.group_size = 8;
  cfg.epochs = 1250;  // 10^4 observations
  cfg.optimizer.learning_rate = 1e-300;
  cfg.objective.kl_beta = 0.0;
  cfg.seed = 5;
  auto t = make_trainer(cfg, env);
  const auto p = t.policy().token_distribution(env.sample_task(0, *std::make_unique<Rng>(0)).context, kStartToken);
  t.run();
  const double expected = p[0] * 0.7 + p[1] * 0.4 + p[2] * 0.55 + p[3] * 0.0;
  const auto s = t.registry().stats("only");
  CHECK(s.count == 10000);
  CHECK(std::abs(s.mean - expected) < 3 * s.std / std::sqrt(10000.0));
}

TEST_CASE("evaluation: gold-emitting policy and uniform policy") {
  const auto log = read_interaction_log(fs::path(PGRPO_TEST_DATA) / "interactions.csv");
  ChoiceWorld::Options opt;
  opt.window = 3;
  opt.n_candidates = 4;
  opt.max_candidates = 4;
  const ChoiceWorld world(log, opt, {"all"}, {});
  const GoldHintWorld hinted(world);

  // Hand-built policy: prefix, gold letter, suffix, stop.
  const auto& v = world.vocabulary();
  CategoricalTokenPolicy gold(v, hinted.context_dim());
  ParamMatrix m = ParamMatrix::Zero(static_cast<Eigen::Index>(v.size()), static_cast<Eigen::Index>(gold.feature_dim()));
  const auto ctx = static_cast<Eigen::Index>(hinted.context_dim());
  const auto prev_col = [&](TokenId t) { return ctx + static_cast<Eigen::Index>(t); };
  const auto start_col = ctx + static_cast<Eigen::Index>(v.size());
  const auto prefix = static_cast<Eigen::Index>(v.id("{\"answer\":\""));
  const auto suffix = static_cast<Eigen::Index>(v.id("\"}"));
  m(prefix, start_col) = 50.0;
  for (std::size_t j = 0; j < 4; ++j) {
    const auto letter = static_cast<Eigen::Index>(v.id(std::string(1, choice_letter(j))));
    m(letter, ctx - 4 + static_cast<Eigen::Index>(j)) = 20.0;
    m(suffix, prev_col(static_cast<TokenId>(letter))) = 50.0;
  }
  m(static_cast<Eigen::Index>(v.stop()), prev_col(static_cast<TokenId>(suffix))) = 50.0;
  gold.set_params(m);
  Rng rng(9);
  const auto ev = evaluate_policy(gold, hinted, 500, rng);
  REQUIRE(ev.size() == 1);
  CHECK(*ev[0].accuracy == 1.0);
  CHECK(ev[0].mean_reward == doctest::Approx(1.1));

  // Uniform sampling: the exact accuracy is the probability of the single
  // format-valid completion that names the gold letter.
  const CategoricalTokenPolicy uniform(v, world.context_dim());
  PromptContext any = world.sample_task(0, rng).context;
  double p_correct = 0.0;
  for (const auto& seq : oracle::all_completions(v.size(), v.stop(), world.max_len())) {
    if (world.render(seq) == "{\"answer\":\"A\"}") p_correct += oracle::sequence_probability(uniform, any, seq);
  }
  CHECK(p_correct == doctest::Approx(std::pow(1.0 / static_cast<double>(v.size()), 4)).epsilon(1e-12));
  const std::size_t n = 10000;
  Rng erng(10);
  const auto uev = evaluate_policy(uniform, world, n, erng, Decoding::sample);
  const double se = std::sqrt(p_correct * (1 - p_correct) / static_cast<double>(n));
  CHECK(std::abs(*uev[0].accuracy - p_correct) <= 3 * se + 1.0 / static_cast<double>(n));

  const auto bandit = two_cluster_world();
  Rng brng(11);
  const auto bev = evaluate_policy(initial_policy(bandit), bandit, 10, brng);
  CHECK_FALSE(bev[0].accuracy.has_value());
  CHECK(bev[0].mean_reward == doctest::Approx(0.8).epsilon(0.2));  // greedy picks action 0
  CHECK_THROWS_AS((void)evaluate_policy(initial_policy(bandit), bandit, 0, brng), std::invalid_argument);
}

TEST_CASE("candidate-size sweep is non-increasing for a trained policy") {
  const auto log = chain_log(3);
  ChoiceWorld::Options opt;
  opt.window = 3;
  opt.n_candidates = 4;
  opt.max_candidates = 11;
  opt.seed = 1;
  const ChoiceWorld train_world(log, opt, {"all"}, {});
  TrainingConfig cfg;
  cfg.mode = TrainingMode::pgrpo;
  cfg.group_size = 8;
  cfg.epochs = 600;
  cfg.groups_per_step = 4;
  cfg.optimizer.kind = OptimizerKind::sgd;
  cfg.optimizer.learning_rate = 3.0;
  cfg.objective.kl_beta = 0.0;
  cfg.ref_refresh_interval = 1;
  cfg.seed = 12;
  auto t = make_trainer(cfg, train_world);
  t.run();
  CHECK(t.summaries().back().overall_reward > t.summaries().front().overall_reward);

  std::vector<double> acc;
  for (std::size_t n = 4; n <= 11; ++n) {
    auto o = opt;
    o.n_candidates = n;
    o.seed = 100 + n;
    const ChoiceWorld w(log, o, {"all"}, {});
    Rng rng(derive_rng(7, {n}));
    acc.push_back(*evaluate_policy(t.policy(), w, 4000, rng)[0].accuracy);
  }
  MESSAGE("accuracy by candidate size: " << acc[0] << " ... " << acc.back());
  CHECK(acc[0] > 0.5);
  for (std::size_t i = 1; i < acc.size(); ++i) {
    // Sampling noise of two independent 4000-episode estimates.
    const double se = std::sqrt(acc[i] * (1 - acc[i]) / 4000.0 + acc[i - 1] * (1 - acc[i - 1]) / 4000.0);
    CHECK(acc[i] <= acc[i - 1] + 2 * se);
  }
  CHECK(acc.back() < acc.front());
}

TEST_CASE("routing from a clustering") {
  const auto env = two_cluster_world();
  Rng rng(13);
  const auto pop = synthetic_population(env, 100, 2, rng);
  ClusterAssignment a;
  a.k = 3;
  a.user_ids = pop.user_ids;
  for (std::size_t i = 0; i < pop.user_ids.size(); ++i) a.labels.push_back(pop.groups[i] == 0 ? 2 : 0);
  const auto routing = ClusterRouting::from_assignment(a, pop);
  CHECK(routing.cluster_ids() == std::vector<std::string>{"c0", "c2"});
  CHECK(routing.weights()[0] == doctest::Approx(0.2));
  CHECK_FALSE(routing.is_fixed());
  for (int i = 0; i < 20; ++i) {
    const auto task = routing.sample(0, env, rng);
    CHECK(task.group == 1);
    CHECK(task.context.cluster_id == "c0");
  }
  CHECK(fnv1a64_hex("") == "cbf29ce484222325");
  CHECK(fnv1a64_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("minority cluster reaches 0.28 sooner under pgrpo than per-batch grpo") {
  // Two-cluster world: best-action means 0.8 (majority) and 0.3 (minority), sigma 0.1, mix 80/20.
  const BanditWorld env({{"majority", 0.8, {0.8, 0.2, 0.2, 0.2}, {0.1}}, {"minority", 0.2, {0.05, 0.3, 0.05, 0.05}, {0.1}}});
  auto steps_for = [&](TrainingMode mode, std::uint64_t seed) {
    TrainingConfig cfg;
    cfg.mode = mode;
    cfg.group_size = 8;
    cfg.epochs = 300;
    cfg.groups_per_step = 5;
    cfg.optimizer.learning_rate = 0.5;
    cfg.ref_refresh_interval = 1;
    cfg.objective.group_scope = GroupScope::per_batch;
    cfg.seed = seed;
    auto trainer = make_trainer(cfg, env);
    trainer.run();
    std::vector<double> minority;
    for (const auto& r : trainer.metrics()) {
      if (r.cluster_id == "minority") minority.push_back(r.group_mean_reward);
    }
    const auto s = steps_to_threshold(minority, 0.28, 20);
    return s ? static_cast<double>(*s) : static_cast<double>(cfg.epochs + 1);
  };
  std::vector<double> p, g;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    p.push_back(steps_for(TrainingMode::pgrpo, seed));
    g.push_back(steps_for(TrainingMode::grpo, seed));
  }
  std::sort(p.begin(), p.end());
  std::sort(g.begin(), g.end());
  const double mp = (p[4] + p[5]) / 2, mg = (g[4] + g[5]) / 2;
  MESSAGE("median steps to minority 0.28: pgrpo " << mp << ", grpo " << mg);
  CHECK(mp < mg);
}
