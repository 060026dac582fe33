#include "pgrpo/environments.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "pgrpo/csv.hpp"

namespace pgrpo {

std::string PreferenceEnvironment::render(const TokenSequence& completion) const {
  return vocabulary().render(completion, " ");
}

std::size_t PreferenceEnvironment::group_index(const std::string& id) const {
  for (std::size_t g = 0; g < num_groups(); ++g) {
    if (group_id(g) == id) return g;
  }
  throw std::out_of_range(fmt::format("unknown cluster '{}'", id));
}

Vocabulary action_vocabulary(std::size_t n_actions) {
  std::vector<std::string> toks;
  for (std::size_t a = 0; a < n_actions; ++a) toks.push_back(fmt::format("a{}", a));
  toks.emplace_back("<stop>");
  return Vocabulary(std::move(toks), "<stop>");
}

std::vector<double> group_prompt_features(std::size_t group, std::size_t num_groups, std::size_t prompt,
                                          std::size_t num_prompts) {
  std::vector<double> f(num_groups + num_prompts, 0.0);
  f.at(group) = 1.0;
  f.at(num_groups + prompt) = 1.0;
  return f;
}

namespace {

void check_weights(const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw std::invalid_argument(fmt::format("group weight {} not in [0, 1]", w));
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument(fmt::format("group weights sum to {}, not 1", total));
}

void check_unique_ids(const std::vector<std::string>& ids) {
  if (ids.empty()) throw std::invalid_argument("environment needs at least one group");
  std::set<std::string> seen;
  for (const auto& id : ids) {
    if (id.empty()) throw std::invalid_argument("empty group id");
    if (!seen.insert(id).second) throw std::invalid_argument(fmt::format("duplicate group id '{}'", id));
  }
}

TaskInstance action_task(const PreferenceEnvironment& env, std::size_t group, std::size_t num_prompts,
                         std::vector<double> qualities, Rng& rng) {
  if (group >= env.num_groups()) throw std::out_of_range(fmt::format("group index {} out of range", group));
  const std::size_t prompt =
      num_prompts == 1 ? 0 : std::uniform_int_distribution<std::size_t>(0, num_prompts - 1)(rng);
  TaskInstance task;
  task.kind = TaskKind::bandit;
  task.group = group;
  task.context.cluster_id = env.group_id(group);
  task.context.prompt_id = prompt;
  task.context.features = group_prompt_features(group, env.num_groups(), prompt, num_prompts);
  task.payload = ActionTable{std::move(qualities)};
  return task;
}

TokenId single_action(const TokenSequence& completion) {
  if (completion.empty()) throw std::invalid_argument("empty completion");
  return completion.front();
}

}  // namespace

// --- BanditWorld ---------------------------------------------------------------

BanditWorld::BanditWorld(std::vector<BanditGroupSpec> groups, std::size_t num_prompts)
    : groups_(std::move(groups)),
      num_prompts_(num_prompts),
      vocab_(action_vocabulary(groups_.empty() ? 1 : std::max<std::size_t>(1, groups_.front().action_means.size()))) {
  if (num_prompts_ == 0) throw std::invalid_argument("num_prompts must be >= 1");
  std::vector<std::string> ids;
  std::vector<double> weights;
  for (const auto& g : groups_) {
    ids.push_back(g.id);
    weights.push_back(g.weight);
  }
  check_unique_ids(ids);
  check_weights(weights);
  const std::size_t n_actions = groups_.front().action_means.size();
  if (n_actions == 0) throw std::invalid_argument("bandit groups need at least one action");
  for (auto& g : groups_) {
    if (g.action_means.size() != n_actions) {
      throw std::invalid_argument(fmt::format("group '{}' has {} actions, expected {}", g.id, g.action_means.size(), n_actions));
    }
    if (g.reward_stds.size() == 1) g.reward_stds.assign(n_actions, g.reward_stds.front());
    if (g.reward_stds.size() != n_actions) {
      throw std::invalid_argument(fmt::format("group '{}' needs 1 or {} reward stds", g.id, n_actions));
    }
    for (double s : g.reward_stds) {
      if (!(s >= 0.0) || !std::isfinite(s)) throw std::invalid_argument(fmt::format("group '{}' has a negative std", g.id));
    }
    for (double m : g.action_means) {
      if (!std::isfinite(m)) throw std::invalid_argument(fmt::format("group '{}' has a non-finite mean", g.id));
    }
  }
}

double BanditWorld::bandit_reward(std::size_t group, TokenId action, Rng& rng) const {
  const auto& g = groups_.at(group);
  if (action == vocab_.stop()) return 0.0;
  if (action >= g.action_means.size()) throw std::out_of_range(fmt::format("unknown action {}", action));
  return std::clamp(gaussian(rng, g.action_means[action], g.reward_stds[action]), 0.0, 1.0);
}

double BanditWorld::bandit_reward(const std::string& id, TokenId action, Rng& rng) const {
  return bandit_reward(group_index(id), action, rng);
}

TaskInstance BanditWorld::sample_task(std::size_t group, Rng& rng) const {
  return action_task(*this, group, num_prompts_, groups_.at(group).action_means, rng);
}

double BanditWorld::reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const {
  return bandit_reward(task.group, single_action(completion), rng);
}

// --- LinearRewardWorld ---------------------------------------------------------

std::vector<double> default_qualities(std::size_t n_actions) {
  std::vector<double> q(n_actions, 0.0);
  if (n_actions < 2) return q;
  for (std::size_t k = 0; k < n_actions; ++k) q[k] = static_cast<double>(k) / static_cast<double>(n_actions - 1);
  return q;
}

LinearRewardWorld::LinearRewardWorld(std::vector<LinearGroupSpec> groups, std::vector<double> qualities,
                                     std::size_t num_prompts)
    : groups_(std::move(groups)),
      qualities_(std::move(qualities)),
      num_prompts_(num_prompts),
      vocab_(action_vocabulary(std::max<std::size_t>(1, qualities_.size()))) {
  if (qualities_.empty()) throw std::invalid_argument("quality table must be nonempty");
  if (num_prompts_ == 0) throw std::invalid_argument("num_prompts must be >= 1");
  std::vector<std::string> ids;
  std::vector<double> weights;
  for (const auto& g : groups_) {
    ids.push_back(g.id);
    weights.push_back(g.weight);
    if (!(g.noise_std >= 0.0)) throw std::invalid_argument(fmt::format("group '{}' has a negative noise std", g.id));
    if (!std::isfinite(g.sensitivity) || !std::isfinite(g.baseline)) {
      throw std::invalid_argument(fmt::format("group '{}' has non-finite parameters", g.id));
    }
  }
  check_unique_ids(ids);
  check_weights(weights);
}

double LinearRewardWorld::linear_reward(std::size_t group, TokenId action, Rng& rng) const {
  const auto& g = groups_.at(group);
  double f = 0.0;
  if (action != vocab_.stop()) {
    if (action >= qualities_.size()) throw std::out_of_range(fmt::format("action {} has no quality entry", action));
    f = qualities_[action];
  }
  return g.sensitivity * f + g.baseline + gaussian(rng, 0.0, g.noise_std);
}

double LinearRewardWorld::linear_reward(const std::string& id, TokenId action, Rng& rng) const {
  return linear_reward(group_index(id), action, rng);
}

TaskInstance LinearRewardWorld::sample_task(std::size_t group, Rng& rng) const {
  return action_task(*this, group, num_prompts_, qualities_, rng);
}

double LinearRewardWorld::reward(const TaskInstance& task, const TokenSequence& completion, Rng& rng) const {
  return linear_reward(task.group, single_action(completion), rng);
}

// --- interaction logs ------------------------------------------------------------

std::vector<InteractionLogRecord> read_interaction_log(const std::filesystem::path& path) {
  const csv::Table table = csv::read_file(path);
  const std::size_t u = table.column("user_id");
  const std::size_t i = table.column("item_id");
  const std::size_t t = table.column("timestamp");
  if (u == std::string::npos || i == std::string::npos || t == std::string::npos) {
    throw std::runtime_error(fmt::format("{}: header must contain user_id,item_id,timestamp", path.string()));
  }
  std::vector<InteractionLogRecord> out;
  for (const auto& row : table.rows) {
    InteractionLogRecord rec{row.fields[u], row.fields[i], 0};
    if (rec.user_id.empty() || rec.item_id.empty()) {
      throw std::runtime_error(fmt::format("{}: line {}: empty user_id or item_id", path.string(), row.line));
    }
    const auto& ts = row.fields[t];
    std::size_t used = 0;
    try {
      rec.timestamp = std::stoll(ts, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (ts.empty() || used != ts.size()) {
      throw std::runtime_error(fmt::format("{}: line {}: timestamp '{}' is not an integer", path.string(), row.line, ts));
    }
    out.push_back(std::move(rec));
  }
  return out;
}

namespace {

/// user -> chronologically sorted items (stable on ties).
std::map<std::string, std::vector<std::string>> histories(const std::vector<InteractionLogRecord>& log) {
  std::map<std::string, std::vector<std::pair<std::int64_t, std::string>>> by_user;
  for (const auto& r : log) by_user[r.user_id].emplace_back(r.timestamp, r.item_id);
  std::map<std::string, std::vector<std::string>> out;
  for (auto& [user, recs] : by_user) {
    std::stable_sort(recs.begin(), recs.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    auto& items = out[user];
    for (auto& r : recs) items.push_back(std::move(r.second));
  }
  return out;
}

}  // namespace

std::vector<TaskInstance> build_choice_tasks(const std::vector<InteractionLogRecord>& log, std::size_t window,
                                             std::size_t n_candidates, Rng& rng) {
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (n_candidates < 2) throw std::invalid_argument("n_candidates must be >= 2");
  if (n_candidates > 26) throw std::invalid_argument("n_candidates must be <= 26");
  const auto hist = histories(log);
  std::set<std::string> all_items;
  for (const auto& r : log) all_items.insert(r.item_id);

  std::vector<TaskInstance> tasks;
  for (const auto& [user, items] : hist) {
    if (items.size() < window + 1) continue;
    const std::set<std::string> seen(items.begin(), items.end());
    std::vector<std::string> unseen;
    std::set_difference(all_items.begin(), all_items.end(), seen.begin(), seen.end(), std::back_inserter(unseen));
    if (unseen.size() < n_candidates - 1) continue;
    for (std::size_t s = 0; s + window < items.size(); ++s) {
      ChoicePayload p;
      p.user_id = user;
      p.history.assign(items.begin() + static_cast<std::ptrdiff_t>(s),
                       items.begin() + static_cast<std::ptrdiff_t>(s + window));
      // Partial Fisher-Yates over a fresh copy: negatives without replacement.
      std::vector<std::string> pool = unseen;
      std::vector<std::string> cands{items[s + window]};
      for (std::size_t j = 0; j + 1 < n_candidates; ++j) {
        const auto pick = std::uniform_int_distribution<std::size_t>(j, pool.size() - 1)(rng);
        std::swap(pool[j], pool[pick]);
        cands.push_back(pool[j]);
      }
      std::vector<std::size_t> order(cands.size());
      std::iota(order.begin(), order.end(), 0);
      for (std::size_t j = order.size() - 1; j > 0; --j) {
        std::swap(order[j], order[std::uniform_int_distribution<std::size_t>(0, j)(rng)]);
      }
      for (std::size_t j = 0; j < order.size(); ++j) {
        p.candidates.push_back(cands[order[j]]);
        if (order[j] == 0) p.gold = choice_letter(j);
      }
      TaskInstance task;
      task.kind = TaskKind::choice;
      task.context.cluster_id = user;
      task.context.prompt_id = tasks.size();
      task.payload = std::move(p);
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

std::vector<TaskInstance> ingest_interaction_log(const std::filesystem::path& path, std::size_t window,
                                                 std::size_t n_candidates, Rng& rng) {
  return build_choice_tasks(read_interaction_log(path), window, n_candidates, rng);
}

Vocabulary choice_vocabulary(std::size_t max_candidates) {
  std::vector<std::string> toks{"{\"answer\":\""};
  for (std::size_t j = 0; j < max_candidates; ++j) toks.emplace_back(1, choice_letter(j));
  toks.emplace_back("\"}");
  toks.emplace_back("<stop>");
  return Vocabulary(std::move(toks), "<stop>");
}

// --- ChoiceWorld -----------------------------------------------------------------

RewardSpec ChoiceWorld::default_spec() {
  return RewardSpec({{RewardKind::choice_correct, 1, 1.0}, {RewardKind::json_format, 1, 0.1}});
}

ChoiceWorld::ChoiceWorld(std::vector<InteractionLogRecord> log, Options options, std::vector<std::string> group_ids,
                         std::map<std::string, std::size_t> user_groups, RewardSpec spec)
    : options_(options),
      group_ids_(std::move(group_ids)),
      spec_(std::move(spec)),
      vocab_(choice_vocabulary(options.max_candidates)) {
  check_unique_ids(group_ids_);
  if (spec_.is_text()) throw std::invalid_argument("choice tasks need choice_correct/json_format rewards");
  if (options_.n_candidates > options_.max_candidates) {
    throw std::invalid_argument(fmt::format("n_candidates {} exceeds max_candidates {}", options_.n_candidates,
                                            options_.max_candidates));
  }

  std::map<std::string, int> counts;
  for (const auto& r : log) ++counts[r.item_id];
  int max_count = 1;
  for (const auto& [item, c] : counts) max_count = std::max(max_count, c);
  for (const auto& [item, c] : counts) popularity_[item] = static_cast<double>(c) / max_count;

  for (const auto& [user, items] : histories(log)) {
    auto& own = own_transitions_[user];
    for (std::size_t i = 0; i + 1 < items.size(); ++i) {
      ++transitions_[{items[i], items[i + 1]}];
      ++own[{items[i], items[i + 1]}];
    }
  }

  Rng rng(options_.seed);
  auto tasks = build_choice_tasks(log, options_.window, options_.n_candidates, rng);
  tasks_.assign(group_ids_.size(), {});
  for (auto& task : tasks) {
    auto& p = std::get<ChoicePayload>(task.payload);
    auto it = user_groups.find(p.user_id);
    const std::size_t g = it == user_groups.end() ? 0 : it->second;
    if (g >= group_ids_.size()) throw std::out_of_range(fmt::format("user '{}' mapped to group {}", p.user_id, g));
    task.group = g;
    task.context.cluster_id = group_ids_[g];
    task.context.features = encode(p, g);
    tasks_[g].push_back(std::move(task));
  }
  for (const auto& t : tasks_) total_tasks_ += t.size();
  if (total_tasks_ == 0) throw std::invalid_argument("interaction log yields no choice tasks");
}

std::vector<std::string> ChoiceWorld::users() const {
  std::vector<std::string> out;
  for (const auto& [u, m] : own_transitions_) out.push_back(u);
  return out;
}

std::vector<double> ChoiceWorld::encode(const ChoicePayload& p, std::size_t group) const {
  std::vector<double> f(context_dim(), 0.0);
  f[group] = 1.0;
  const auto own_it = own_transitions_.find(p.user_id);
  for (std::size_t j = 0; j < p.candidates.size(); ++j) {
    const auto& item = p.candidates[j];
    double score = 0.0;
    for (const auto& w : p.history) {
      const std::pair<std::string, std::string> key{w, item};
      auto g = transitions_.find(key);
      if (g == transitions_.end()) continue;
      int own = 0;
      if (own_it != own_transitions_.end()) {
        if (auto o = own_it->second.find(key); o != own_it->second.end()) own = o->second;
      }
      score += g->second - own;
    }
    const std::size_t base = group_ids_.size() + 3 * j;
    f[base] = 1.0;
    auto pop = popularity_.find(item);
    f[base + 1] = pop == popularity_.end() ? 0.0 : pop->second;
    f[base + 2] = score / (1.0 + score);
  }
  return f;
}

double ChoiceWorld::group_weight(std::size_t g) const {
  return static_cast<double>(tasks_.at(g).size()) / static_cast<double>(total_tasks_);
}

TaskInstance ChoiceWorld::sample_task(std::size_t group, Rng& rng) const {
  const auto& pool = tasks_.at(group);
  if (pool.empty()) throw std::out_of_range(fmt::format("group '{}' has no tasks", group_ids_[group]));
  return pool[std::uniform_int_distribution<std::size_t>(0, pool.size() - 1)(rng)];
}

std::string ChoiceWorld::render(const TokenSequence& completion) const { return vocab_.render(completion, ""); }

double ChoiceWorld::reward(const TaskInstance& task, const TokenSequence& completion, Rng&) const {
  const auto& p = std::get<ChoicePayload>(task.payload);
  return composite_reward(spec_, render(completion), ChoiceGold{p.gold, p.candidates.size()});
}

std::optional<bool> ChoiceWorld::correct(const TaskInstance& task, const TokenSequence& completion) const {
  const auto& p = std::get<ChoicePayload>(task.payload);
  return choice_reward(render(completion), p.gold, p.candidates.size()).correct == 1;
}

TokenSequence ChoiceWorld::answer_tokens(char letter) const {
  return {vocab_.id("{\"answer\":\""), vocab_.id(std::string(1, letter)), vocab_.id("\"}"), vocab_.stop()};
}

// --- GenerationWorld -------------------------------------------------------------

std::vector<std::string> read_reference_corpus(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(fmt::format("cannot open '{}'", path.string()));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!tokenize(line).empty()) out.push_back(line);
  }
  return out;
}

namespace {

Vocabulary generation_vocabulary(const std::vector<std::pair<std::string, std::vector<std::string>>>& refs) {
  std::set<std::string> words;
  for (const auto& [id, texts] : refs) {
    for (const auto& t : texts) {
      for (auto& w : tokenize(t)) words.insert(std::move(w));
    }
  }
  std::vector<std::string> toks(words.begin(), words.end());
  toks.emplace_back("<stop>");
  if (toks.size() < 2) toks.insert(toks.begin(), "<unk>");
  return Vocabulary(std::move(toks), "<stop>");
}

}  // namespace

GenerationWorld::GenerationWorld(std::vector<std::pair<std::string, std::vector<std::string>>> references,
                                 RewardSpec spec, std::size_t max_len, std::vector<double> weights)
    : spec_(std::move(spec)), vocab_(generation_vocabulary(references)) {
  if (!spec_.is_text()) throw std::invalid_argument("generation tasks need rouge_n/rouge_l/cosine_tf rewards");
  std::size_t longest = 0;
  for (auto& [id, texts] : references) {
    if (texts.empty()) throw std::invalid_argument(fmt::format("cluster '{}' has an empty reference set", id));
    ids_.push_back(id);
    std::vector<Tokens> toks;
    for (const auto& t : texts) {
      toks.push_back(tokenize(t));
      if (toks.back().empty()) throw std::invalid_argument(fmt::format("cluster '{}' has an empty reference", id));
      longest = std::max(longest, toks.back().size());
    }
    max_refs_ = std::max(max_refs_, toks.size());
    refs_.push_back(std::move(toks));
  }
  check_unique_ids(ids_);
  max_len_ = max_len == 0 ? longest + 1 : max_len;
  if (weights.empty()) weights.assign(ids_.size(), 1.0 / static_cast<double>(ids_.size()));
  if (weights.size() != ids_.size()) throw std::invalid_argument("one weight per cluster required");
  check_weights(weights);
  weights_ = std::move(weights);
}

TaskInstance GenerationWorld::sample_task(std::size_t group, Rng& rng) const {
  const auto& refs = refs_.at(group);
  const std::size_t r = std::uniform_int_distribution<std::size_t>(0, refs.size() - 1)(rng);
  TaskInstance task;
  task.kind = TaskKind::generation;
  task.group = group;
  task.context.cluster_id = ids_[group];
  task.context.prompt_id = r;
  task.context.features = group_prompt_features(group, ids_.size(), r, max_refs_);
  task.payload = GenerationPayload{r, refs[r]};
  return task;
}

double GenerationWorld::reward(const TaskInstance& task, const TokenSequence& completion, Rng&) const {
  const auto& p = std::get<GenerationPayload>(task.payload);
  return composite_reward(spec_, render(completion), TextReference{p.reference});
}

TokenSequence GenerationWorld::encode_text(const std::string& text) const {
  TokenSequence seq;
  for (const auto& w : tokenize(text)) seq.push_back(vocab_.id(w));
  seq.push_back(vocab_.stop());
  return seq;
}

// --- synthetic users ---------------------------------------------------------------

UserPopulation synthetic_population(const PreferenceEnvironment& env, std::size_t n_users,
                                    std::size_t noise_categories, Rng& rng) {
  if (noise_categories == 0) throw std::invalid_argument("noise_categories must be >= 1");
  UserPopulation pop;
  std::size_t next = 0;
  for (std::size_t g = 0; g < env.num_groups(); ++g) {
    const auto count = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::llround(static_cast<double>(n_users) * env.group_weight(g))));
    for (std::size_t i = 0; i < count; ++i) {
      const std::string id = fmt::format("u{:05d}", next++);
      const auto noise = std::uniform_int_distribution<std::size_t>(0, noise_categories - 1)(rng);
      pop.user_ids.push_back(id);
      pop.groups.push_back(g);
      pop.profiles.user_ids.push_back(id);
      pop.profiles.records.push_back({{"segment", env.group_id(g)}, {"noise", fmt::format("n{}", noise)}});
    }
  }
  return pop;
}

}  // namespace pgrpo
