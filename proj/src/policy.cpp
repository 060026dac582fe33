#include "pgrpo/policy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include <fmt/format.h>

#include "pgrpo/errors.hpp"

namespace pgrpo {

Vocabulary::Vocabulary(std::vector<std::string> tokens, const std::string& stop) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 2) throw std::invalid_argument("vocabulary needs at least 2 tokens");
  std::unordered_set<std::string> seen;
  for (const auto& t : tokens_) {
    if (!seen.insert(t).second) throw std::invalid_argument(fmt::format("duplicate token '{}'", t));
  }
  auto it = std::find(tokens_.begin(), tokens_.end(), stop);
  if (it == tokens_.end()) throw std::invalid_argument(fmt::format("stop token '{}' not in vocabulary", stop));
  stop_ = static_cast<TokenId>(it - tokens_.begin());
}

const std::string& Vocabulary::symbol(TokenId id) const {
  if (id >= tokens_.size()) throw std::out_of_range(fmt::format("unknown token id {}", id));
  return tokens_[id];
}

std::optional<TokenId> Vocabulary::find(std::string_view symbol) const {
  auto it = std::find(tokens_.begin(), tokens_.end(), symbol);
  if (it == tokens_.end()) return std::nullopt;
  return static_cast<TokenId>(it - tokens_.begin());
}

TokenId Vocabulary::id(std::string_view symbol) const {
  if (auto t = find(symbol)) return *t;
  throw std::out_of_range(fmt::format("unknown token '{}'", symbol));
}

std::string Vocabulary::render(const TokenSequence& seq, std::string_view separator) const {
  std::string out;
  bool first = true;
  for (TokenId t : seq) {
    if (t == stop_) continue;
    if (!first) out += separator;
    out += symbol(t);
    first = false;
  }
  return out;
}

// ---------------------------------------------------------------------------

CategoricalTokenPolicy::CategoricalTokenPolicy(Vocabulary vocab, std::size_t context_dim)
    : vocab_(std::move(vocab)), context_dim_(context_dim) {
  params_ = ParamMatrix::Zero(static_cast<Eigen::Index>(vocab_.size()), static_cast<Eigen::Index>(feature_dim()));
}

CategoricalTokenPolicy::CategoricalTokenPolicy(Vocabulary vocab, std::size_t context_dim, ParamMatrix params)
    : CategoricalTokenPolicy(std::move(vocab), context_dim) {
  set_params(std::move(params));
}

void CategoricalTokenPolicy::set_params(ParamMatrix params) {
  if (params.rows() != params_.rows() || params.cols() != params_.cols()) {
    throw std::invalid_argument(fmt::format("params shape {}x{} does not match policy shape {}x{}", params.rows(),
                                            params.cols(), params_.rows(), params_.cols()));
  }
  params_ = std::move(params);
}

void CategoricalTokenPolicy::check_token(TokenId t) const {
  if (t >= vocab_.size()) throw std::out_of_range(fmt::format("unknown token id {}", t));
}

void CategoricalTokenPolicy::check_context(const PromptContext& ctx) const {
  if (ctx.features.size() != context_dim_) {
    throw std::invalid_argument(
        fmt::format("context has {} features, policy expects {}", ctx.features.size(), context_dim_));
  }
}

Eigen::VectorXd CategoricalTokenPolicy::features(const PromptContext& ctx, TokenId prev) const {
  check_context(ctx);
  if (prev != kStartToken) check_token(prev);
  Eigen::VectorXd phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(feature_dim()));
  for (std::size_t i = 0; i < context_dim_; ++i) phi[static_cast<Eigen::Index>(i)] = ctx.features[i];
  const std::size_t slot = prev == kStartToken ? vocab_.size() : prev;
  phi[static_cast<Eigen::Index>(context_dim_ + slot)] = 1.0;
  return phi;
}

Eigen::VectorXd CategoricalTokenPolicy::logits(const PromptContext& ctx, TokenId prev) const {
  return params_ * features(ctx, prev);
}

Eigen::VectorXd CategoricalTokenPolicy::log_distribution(const PromptContext& ctx, TokenId prev) const {
  const Eigen::VectorXd z = logits(ctx, prev);
  const double zmax = z.maxCoeff();
  const double lse = zmax + std::log((z.array() - zmax).exp().sum());
  return (z.array() - lse).matrix();
}

Eigen::VectorXd CategoricalTokenPolicy::token_distribution(const PromptContext& ctx, TokenId prev) const {
  const Eigen::VectorXd z = logits(ctx, prev);
  const double zmax = z.maxCoeff();
  Eigen::VectorXd p = (z.array() - zmax).exp().matrix();
  p /= p.sum();
  return p;
}

TokenSequence CategoricalTokenPolicy::sample(const PromptContext& ctx, std::size_t max_len, Rng& rng) const {
  if (max_len == 0) throw std::invalid_argument("max_len must be >= 1");
  TokenSequence seq;
  TokenId prev = kStartToken;
  while (seq.size() < max_len) {
    const Eigen::VectorXd p = token_distribution(ctx, prev);
    const double u = uniform01(rng);
    double cum = 0.0;
    TokenId pick = vocab_.size() - 1;
    for (Eigen::Index k = 0; k < p.size(); ++k) {
      cum += p[k];
      if (u < cum) {
        pick = static_cast<TokenId>(k);
        break;
      }
    }
    seq.push_back(pick);
    if (pick == vocab_.stop()) break;
    prev = pick;
  }
  return seq;
}

TokenSequence CategoricalTokenPolicy::greedy(const PromptContext& ctx, std::size_t max_len) const {
  if (max_len == 0) throw std::invalid_argument("max_len must be >= 1");
  TokenSequence seq;
  TokenId prev = kStartToken;
  while (seq.size() < max_len) {
    const Eigen::VectorXd z = logits(ctx, prev);
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < z.size(); ++k) {
      if (z[k] > z[best]) best = k;
    }
    const auto pick = static_cast<TokenId>(best);
    seq.push_back(pick);
    if (pick == vocab_.stop()) break;
    prev = pick;
  }
  return seq;
}

std::vector<TokenId> previous_tokens(const TokenSequence& seq) {
  std::vector<TokenId> prev(seq.size());
  for (std::size_t t = 0; t < seq.size(); ++t) prev[t] = t == 0 ? kStartToken : seq[t - 1];
  return prev;
}

std::vector<double> CategoricalTokenPolicy::token_logprobs(const PromptContext& ctx, const TokenSequence& seq) const {
  for (TokenId t : seq) check_token(t);
  std::vector<double> out(seq.size());
  const auto prev = previous_tokens(seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    out[t] = log_distribution(ctx, prev[t])[static_cast<Eigen::Index>(seq[t])];
  }
  return out;
}

double CategoricalTokenPolicy::sequence_logprob(const PromptContext& ctx, const TokenSequence& seq) const {
  double total = 0.0;
  for (double lp : token_logprobs(ctx, seq)) total += lp;
  return total;
}

ParamMatrix CategoricalTokenPolicy::logprob_grad(const PromptContext& ctx, const TokenSequence& seq) const {
  for (TokenId t : seq) check_token(t);
  ParamMatrix grad = ParamMatrix::Zero(params_.rows(), params_.cols());
  const auto prev = previous_tokens(seq);
  for (std::size_t t = 0; t < seq.size(); ++t) {
    const Eigen::VectorXd phi = features(ctx, prev[t]);
    const Eigen::VectorXd z = params_ * phi;
    Eigen::VectorXd coef = (z.array() - z.maxCoeff()).exp().matrix();
    coef /= -coef.sum();
    coef[static_cast<Eigen::Index>(seq[t])] += 1.0;
    grad.noalias() += coef * phi.transpose();
  }
  return grad;
}

nlohmann::json CategoricalTokenPolicy::to_json() const {
  std::vector<double> data(params_.data(), params_.data() + params_.size());
  return {
      {"vocab", vocab_.symbols()},
      {"stop", vocab_.symbol(vocab_.stop())},
      {"feature_spec", {{"context_dim", context_dim_}, {"prev_token_slots", vocab_.size() + 1}}},
      {"params", {{"rows", params_.rows()}, {"cols", params_.cols()}, {"data", data}}},
  };
}

CategoricalTokenPolicy CategoricalTokenPolicy::from_json(const nlohmann::json& doc) {
  auto field = [&](const nlohmann::json& obj, const std::string& key, const std::string& path) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(path, "missing field");
    return obj.at(key);
  };
  try {
    const auto& vocab_doc = field(doc, "vocab", "vocab");
    const auto& stop_doc = field(doc, "stop", "stop");
    Vocabulary vocab(vocab_doc.get<std::vector<std::string>>(), stop_doc.get<std::string>());
    const auto& spec = field(doc, "feature_spec", "feature_spec");
    const auto context_dim = field(spec, "context_dim", "feature_spec.context_dim").get<std::size_t>();
    const auto& p = field(doc, "params", "params");
    const auto rows = field(p, "rows", "params.rows").get<Eigen::Index>();
    const auto cols = field(p, "cols", "params.cols").get<Eigen::Index>();
    const auto data = field(p, "data", "params.data").get<std::vector<double>>();
    if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
      throw ParseError("params.data", fmt::format("expected {} values, got {}", rows * cols, data.size()));
    }
    ParamMatrix params = Eigen::Map<const ParamMatrix>(data.data(), rows, cols);
    return CategoricalTokenPolicy(std::move(vocab), context_dim, std::move(params));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("policy", e.what());
  } catch (const std::invalid_argument& e) {
    throw ParseError("policy", e.what());
  }
}

// ---------------------------------------------------------------------------

double importance_ratio(const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const PromptContext& ctx,
                        const TokenSequence& seq, std::size_t t) {
  if (t >= seq.size()) throw std::out_of_range(fmt::format("position {} outside sequence of length {}", t, seq.size()));
  const TokenId prev = t == 0 ? kStartToken : seq[t - 1];
  const auto tok = static_cast<Eigen::Index>(seq[t]);
  const double lp = policy.log_distribution(ctx, prev)[tok];
  const double lr = ref.policy().log_distribution(ctx, prev)[tok];
  return std::exp(lp - lr);
}

double exact_token_kl(const CategoricalTokenPolicy& policy, const ReferenceSnapshot& ref, const PromptContext& ctx,
                      TokenId prev) {
  const Eigen::VectorXd lp = policy.log_distribution(ctx, prev);
  const Eigen::VectorXd lr = ref.policy().log_distribution(ctx, prev);
  const double kl = (lp.array().exp() * (lp - lr).array()).sum();
  return std::max(kl, 0.0);
}

Eigen::VectorXd exact_kl_logit_grad(const Eigen::VectorXd& log_pi, const Eigen::VectorXd& log_ref) {
  const Eigen::ArrayXd pi = log_pi.array().exp();
  const Eigen::ArrayXd diff = (log_pi - log_ref).array();
  const double kl = (pi * diff).sum();
  return (pi * (diff - kl)).matrix();
}

}  // namespace pgrpo
