// Independent reference computations used by the unit and acceptance tests.
// Nothing here calls into the code under test except for plain accessors.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "pgrpo/policy.hpp"

namespace oracle {

struct MeanVar {
  double mean = 0.0;
  double sample_variance = 0.0;
};

/// Two-pass mean and sample variance in long double, with the usual
/// correction term for the residual error of the first pass.
inline MeanVar two_pass(const std::vector<double>& xs) {
  MeanVar out;
  if (xs.empty()) return out;
  long double sum = 0.0L;
  for (double x : xs) sum += x;
  const long double n = static_cast<long double>(xs.size());
  const long double mean = sum / n;
  long double ss = 0.0L, comp = 0.0L;
  for (double x : xs) {
    const long double d = static_cast<long double>(x) - mean;
    ss += d * d;
    comp += d;
  }
  out.mean = static_cast<double>(mean + comp / n);
  if (xs.size() > 1) out.sample_variance = static_cast<double>((ss - comp * comp / n) / (n - 1.0L));
  return out;
}

inline double relative_error(double got, double want) {
  const double scale = std::max(std::abs(want), 1e-300);
  return std::abs(got - want) / scale;
}

/// Central finite differences of f over every entry of `params`.
inline pgrpo::ParamMatrix finite_difference(const std::function<double(const pgrpo::ParamMatrix&)>& f,
                                            const pgrpo::ParamMatrix& params, double h) {
  pgrpo::ParamMatrix grad(params.rows(), params.cols());
  pgrpo::ParamMatrix p = params;
  for (Eigen::Index r = 0; r < params.rows(); ++r) {
    for (Eigen::Index c = 0; c < params.cols(); ++c) {
      const double orig = p(r, c);
      p(r, c) = orig + h;
      const double up = f(p);
      p(r, c) = orig - h;
      const double down = f(p);
      p(r, c) = orig;
      grad(r, c) = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

/// max |a - b| / max(max |b|, floor): the normwise relative error used for gradient checks.
inline double normwise_relative_error(const pgrpo::ParamMatrix& a, const pgrpo::ParamMatrix& b, double floor = 1e-6) {
  const double denom = std::max(b.cwiseAbs().maxCoeff(), floor);
  return (a - b).cwiseAbs().maxCoeff() / denom;
}

/// Every completion a policy can emit with `max_len` tokens over a vocabulary
/// of size v with stop token `stop`: sequences ending at stop, plus the
/// stop-free sequences of exactly max_len tokens.
inline std::vector<pgrpo::TokenSequence> all_completions(std::size_t v, pgrpo::TokenId stop, std::size_t max_len) {
  std::vector<pgrpo::TokenSequence> out;
  std::vector<pgrpo::TokenSequence> frontier{{}};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<pgrpo::TokenSequence> next;
    for (const auto& prefix : frontier) {
      for (pgrpo::TokenId t = 0; t < v; ++t) {
        auto seq = prefix;
        seq.push_back(t);
        if (t == stop || len == max_len) {
          out.push_back(seq);
        } else {
          next.push_back(seq);
        }
      }
    }
    frontier = std::move(next);
  }
  return out;
}

/// Probability of `seq` as a product of per-position softmax probabilities,
/// computed from the logits directly (not via token_distribution).
inline double sequence_probability(const pgrpo::CategoricalTokenPolicy& policy, const pgrpo::PromptContext& ctx,
                                   const pgrpo::TokenSequence& seq) {
  double p = 1.0;
  pgrpo::TokenId prev = pgrpo::kStartToken;
  for (auto tok : seq) {
    const Eigen::VectorXd z = policy.params() * policy.features(ctx, prev);
    double denom = 0.0;
    for (Eigen::Index i = 0; i < z.size(); ++i) denom += std::exp(z[i]);
    p *= std::exp(z[static_cast<Eigen::Index>(tok)]) / denom;
    prev = tok;
  }
  return p;
}

inline pgrpo::ParamMatrix random_params(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> n(0.0, scale);
  pgrpo::ParamMatrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Best split of sorted 1-D points into a prefix and a suffix by total squared deviation.
inline std::size_t best_two_split(std::vector<double> xs) {
  std::sort(xs.begin(), xs.end());
  auto sse = [&](std::size_t lo, std::size_t hi) {
    double m = 0.0;
    for (std::size_t i = lo; i < hi; ++i) m += xs[i];
    m /= static_cast<double>(hi - lo);
    double s = 0.0;
    for (std::size_t i = lo; i < hi; ++i) s += (xs[i] - m) * (xs[i] - m);
    return s;
  };
  std::size_t best = 1;
  double best_cost = INFINITY;
  for (std::size_t cut = 1; cut < xs.size(); ++cut) {
    const double cost = sse(0, cut) + sse(cut, xs.size());
    if (cost < best_cost) {
      best_cost = cost;
      best = cut;
    }
  }
  return best;
}

inline double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  return sab / std::sqrt(saa * sbb);
}

}  // namespace oracle
