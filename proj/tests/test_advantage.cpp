#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "pgrpo/advantage.hpp"

using namespace pgrpo;

namespace {

std::vector<double> random_rewards(std::mt19937_64& rng, std::size_t min_size = 2) {
  std::uniform_int_distribution<std::size_t> g(min_size, 16);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  std::vector<double> r(g(rng));
  for (auto& x : r) x = u(rng);
  return r;
}

// Direct formula with a two-pass sample std; independent of group_stats.
std::vector<double> oracle_group(const std::vector<double>& r) {
  const auto mv = oracle::two_pass(r);
  const double s = r.size() > 1 ? std::sqrt(mv.sample_variance) : 1.0;
  std::vector<double> out;
  for (double x : r) out.push_back((x - mv.mean) / s);
  return out;
}

}  // namespace

TEST_CASE("group advantage examples") {
  const std::vector<double> r{1, 2, 3, 4};
  const auto a = group_advantages(r, 0.0);
  const double s = std::sqrt(5.0 / 3.0);
  const std::vector<double> want{-1.5 / s, -0.5 / s, 0.5 / s, 1.5 / s};
  for (std::size_t i = 0; i < 4; ++i) CHECK(a[i] == doctest::Approx(want[i]).epsilon(1e-14));
  CHECK(a[0] == doctest::Approx(-1.16190).epsilon(1e-5));

  for (double eps : {0.0, 1e-8, 0.5}) {
    for (double v : group_advantages(std::vector<double>{0.5, 0.5, 0.5}, eps)) CHECK(v == 0.0);
  }
  const auto two = group_advantages(std::vector<double>{0.9, 0.7}, 0.0);
  CHECK(two[0] == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(-std::sqrt(0.5)).epsilon(1e-12));

  const auto gs = group_stats(std::vector<double>{3.0});
  CHECK(gs.std == 1.0);
  CHECK(gs.size == 1);
  CHECK(group_advantages(std::vector<double>{3.0}, 0.0)[0] == 0.0);
  CHECK_THROWS_AS((void)group_advantages(std::vector<double>{}, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)group_advantages(std::vector<double>{1.0, NAN}, 0.0), std::domain_error);
}

TEST_CASE("personalized advantage examples") {
  CHECK(personalized_advantages(std::vector<double>{0.3}, 0.3, 0.1, 1e-8)[0] == 0.0);
  CHECK(personalized_advantages(std::vector<double>{0.8}, 0.3, 0.1, 0.0)[0] == doctest::Approx(5.0).epsilon(1e-14));
  const std::vector<double> r{0.1, -2.0, 7.5};
  CHECK(personalized_advantages(r, 0.0, 1.0, 0.0) == r);
}

TEST_CASE("decomposition examples") {
  const auto g = group_stats(std::vector<double>{0.2, 0.4});
  const auto d = decomposition_terms(g, 0.5, 0.2);
  CHECK(d.scale == doctest::Approx(std::sqrt(0.5)).epsilon(1e-12));
  CHECK(d.bias == doctest::Approx(-1.0).epsilon(1e-12));
  const double a_hat = group_advantages(std::vector<double>{0.2, 0.4}, 0.0)[1];
  CHECK(d.scale * a_hat + d.bias == doctest::Approx(-0.5).epsilon(1e-12));
  CHECK(personalized_advantages(std::vector<double>{0.4}, 0.5, 0.2, 0.0)[0] == doctest::Approx(-0.5).epsilon(1e-12));

  const auto same = decomposition_terms(g, g.mean, g.std);
  CHECK(same.scale == 1.0);
  CHECK(same.bias == 0.0);

  const auto scaled = decomposition_terms(g, g.mean, 2.0 * g.std);
  CHECK(scaled.bias == 0.0);
  CHECK(scaled.scale == doctest::Approx(0.5));

  CHECK_THROWS_AS((void)decomposition_terms(g, 0.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)decomposition_terms(group_stats(std::vector<double>{1, 1}), 0.0, 1.0), std::invalid_argument);
}

TEST_CASE("property: group advantages match the direct formula and sum to zero") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = random_rewards(rng);
    const auto a = group_advantages(r, 0.0);
    const auto want = oracle_group(r);
    double sum = 0.0;
    for (std::size_t i = 0; i < r.size(); ++i) {
      CHECK(std::abs(a[i] - want[i]) < 1e-12);
      sum += a[i];
    }
    CHECK(std::abs(sum) <= 1e-12 * static_cast<double>(r.size()));
  }
}

TEST_CASE("property: affine invariance") {
  std::mt19937_64 rng(22);
  std::uniform_real_distribution<double> scale(0.01, 100.0), shift(-50.0, 50.0);
  for (int trial = 0; trial < 500; ++trial) {
    const auto r = random_rewards(rng);
    const double a = scale(rng), b = shift(rng);
    std::vector<double> t;
    for (double x : r) t.push_back(a * x + b);
    const auto base = group_advantages(r, 0.0), moved = group_advantages(t, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(base[i] - moved[i]) < 1e-12 * std::max(1.0, a));

    // Consistent rescaling of rewards and cluster statistics.
    const double mu = shift(rng) / 10.0, sigma = scale(rng) / 10.0;
    const auto p = personalized_advantages(r, mu, sigma, 0.0);
    const auto q = personalized_advantages(t, a * mu + b, a * sigma, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(p[i] - q[i]) < 1e-12 * std::max(1.0, std::abs(p[i])));
  }
}

TEST_CASE("property: decomposition identity and reduction") {
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> mu(-3.0, 3.0), sig(0.05, 4.0);
  for (int trial = 0; trial < 2000; ++trial) {
    const auto r = random_rewards(rng);
    const double mp = mu(rng), sp = sig(rng);
    const auto g = group_stats(r);
    const auto d = decomposition_terms(g, mp, sp);
    const auto hat = group_advantages(r, 0.0);
    const auto tilde = personalized_advantages(r, mp, sp, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(tilde[i] - (d.scale * hat[i] + d.bias)) < 1e-12 * std::max(1.0, std::abs(tilde[i])));

    const auto reduced = personalized_advantages(r, g.mean, g.std, 0.0);
    for (std::size_t i = 0; i < r.size(); ++i) CHECK(std::abs(reduced[i] - hat[i]) < 1e-12);
  }
}
