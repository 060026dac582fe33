#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <thread>

#include "oracles.hpp"
#include "pgrpo/errors.hpp"
#include "pgrpo/stats.hpp"

using namespace pgrpo;

namespace {

WelfordAccumulator of(const std::vector<double>& xs) {
  WelfordAccumulator acc;
  for (double x : xs) acc.observe(x);
  return acc;
}

std::vector<double> random_stream(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> len(1, 200);
  std::uniform_real_distribution<double> loc(-1e3, 1e3);
  std::lognormal_distribution<double> scale(0.0, 2.0);
  const double mu = loc(rng), s = scale(rng);
  std::normal_distribution<double> n(mu, s);
  std::vector<double> xs(static_cast<std::size_t>(len(rng)));
  for (auto& x : xs) x = n(rng);
  return xs;
}

void check_against_oracle(const WelfordAccumulator& acc, const std::vector<double>& xs) {
  const auto want = oracle::two_pass(xs);
  REQUIRE(acc.count() == xs.size());
  CHECK(std::abs(acc.mean() - want.mean) <= 1e-9 * std::max(std::abs(want.mean), 1e-12));
  if (xs.size() > 1) {
    CHECK(oracle::relative_error(acc.sample_variance(), want.sample_variance) <= 1e-9);
  }
}

}  // namespace

TEST_CASE("welford examples") {
  auto acc = of({2, 4, 4, 4, 5, 5, 7, 9});
  CHECK(acc.mean() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(acc.sample_variance() == doctest::Approx(32.0 / 7.0).epsilon(1e-14));

  auto one = of({3});
  CHECK(one.count() == 1);
  CHECK(one.mean() == 3.0);
  CHECK(one.m2() == 0.0);
  CHECK(one.stddev() == 1.0);

  auto big = of({1e8 + 1, 1e8 + 2, 1e8 + 3});
  CHECK(oracle::relative_error(big.sample_variance(), 1.0) <= 1e-6);

  CHECK(of({0, 0, 0, 0}).stddev() == 0.0);
  CHECK(of({1, 2, 3, 4}).stddev() == doctest::Approx(std::sqrt(5.0 / 3.0)).epsilon(1e-14));
  CHECK(WelfordAccumulator{}.stddev() == 1.0);
}

TEST_CASE("non-finite rewards are rejected") {
  WelfordAccumulator acc;
  CHECK_THROWS_AS((void)acc.observe(std::numeric_limits<double>::quiet_NaN()), std::domain_error);
  CHECK_THROWS_AS((void)acc.observe(std::numeric_limits<double>::infinity()), std::domain_error);
  CHECK(acc.count() == 0);
  PreferenceStatsRegistry reg;
  CHECK_THROWS_AS((void)reg.observe("a", -std::numeric_limits<double>::infinity()), std::domain_error);
}

TEST_CASE("from_state enforces the invariants") {
  CHECK_THROWS_AS((void)WelfordAccumulator::from_state(0, 1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS((void)WelfordAccumulator::from_state(3, 1.0, -1.0), std::invalid_argument);
  auto acc = WelfordAccumulator::from_state(4, 2.5, 5.0);
  CHECK(acc == of({1, 2, 3, 4}));
}

TEST_CASE("merge examples") {
  auto m = merge(of({1, 2}), of({3, 4}));
  CHECK(m.count() == 4);
  CHECK(m.mean() == 2.5);
  CHECK(m.m2() == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(merge(WelfordAccumulator{}, of({7})) == of({7}));
  CHECK(merge(of({7}), WelfordAccumulator{}) == of({7}));
  auto c = merge(of({5, 5}), of({5}));
  CHECK(c.mean() == 5.0);
  CHECK(c.m2() == 0.0);
}

TEST_CASE("property: observe matches two-pass oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 300; ++trial) {
    const auto xs = random_stream(rng);
    check_against_oracle(of(xs), xs);
  }
}

TEST_CASE("property: permutation invariance") {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 200; ++trial) {
    auto xs = random_stream(rng);
    const auto a = of(xs);
    std::shuffle(xs.begin(), xs.end(), rng);
    const auto b = of(xs);
    CHECK(oracle::relative_error(b.mean(), a.mean()) <= 1e-9 + 1e-12 / std::max(std::abs(a.mean()), 1e-3));
    if (xs.size() > 1) CHECK(oracle::relative_error(b.sample_variance(), a.sample_variance()) <= 1e-9);
  }
}

TEST_CASE("property: merge equals concatenation, associative and commutative") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 200; ++trial) {
    const auto xs = random_stream(rng), ys = random_stream(rng), zs = random_stream(rng);
    std::vector<double> all = xs;
    all.insert(all.end(), ys.begin(), ys.end());
    check_against_oracle(merge(of(xs), of(ys)), all);

    const auto left = merge(merge(of(xs), of(ys)), of(zs));
    const auto right = merge(of(xs), merge(of(ys), of(zs)));
    const auto swapped = merge(of(ys), of(xs));
    const auto ab = merge(of(xs), of(ys));
    CHECK(left.count() == right.count());
    CHECK(std::abs(left.mean() - right.mean()) <= 1e-9 * std::max(std::abs(left.mean()), 1.0));
    CHECK(oracle::relative_error(left.m2(), right.m2()) <= 1e-9);
    CHECK(std::abs(ab.mean() - swapped.mean()) <= 1e-9 * std::max(std::abs(ab.mean()), 1.0));
    CHECK(oracle::relative_error(ab.m2(), swapped.m2()) <= 1e-9);
  }
}

TEST_CASE("property: std is never negative and is 1 for count <= 1") {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 100; ++trial) {
    const auto xs = random_stream(rng);
    const auto acc = of(xs);
    CHECK(acc.stddev() >= 0.0);
    CHECK(acc.m2() >= 0.0);
    if (xs.size() <= 1) CHECK(acc.stddev() == 1.0);
  }
}

TEST_CASE("registry examples") {
  PreferenceStatsRegistry reg;
  reg.observe("a", 0.3);
  const auto a = reg.stats("a");
  CHECK(a.mean == 0.3);
  CHECK(a.std == 1.0);
  CHECK(a.count == 1);

  const auto unseen = reg.stats("never");
  CHECK(unseen.mean == 0.0);
  CHECK(unseen.std == 1.0);
  CHECK(unseen.count == 0);
  CHECK(reg.size() == 1);

  PreferenceStatsRegistry iso;
  const std::vector<double> as{1, 5, 2, 8}, bs{-3, 0.5, 4};
  for (std::size_t i = 0; i < 4; ++i) {
    iso.observe("a", as[i]);
    if (i < bs.size()) iso.observe("b", bs[i]);
  }
  CHECK(iso.accumulator("a") == of(as));
  CHECK(iso.accumulator("b") == of(bs));
  CHECK(iso.clusters() == std::vector<ClusterId>{"a", "b"});
}

TEST_CASE("registry snapshot round trip is bit exact") {
  PreferenceStatsRegistry empty;
  CHECK(PreferenceStatsRegistry::restore(empty.snapshot()).size() == 0);

  PreferenceStatsRegistry reg;
  std::mt19937_64 rng(15);
  std::normal_distribution<double> n(0.37, 0.11);
  for (int i = 0; i < 50; ++i) {
    reg.observe("maj", n(rng));
    if (i % 3 == 0) reg.observe("min", n(rng) * 1e-7);
  }
  reg.observe("single", 1.0 / 3.0);
  const auto back = PreferenceStatsRegistry::restore(reg.snapshot());
  REQUIRE(back.clusters() == reg.clusters());
  for (const auto& id : reg.clusters()) CHECK(back.accumulator(id) == reg.accumulator(id));
  // Through text as well.
  const auto text = reg.snapshot().dump();
  const auto back2 = PreferenceStatsRegistry::restore(nlohmann::json::parse(text));
  for (const auto& id : reg.clusters()) CHECK(back2.accumulator(id) == reg.accumulator(id));
}

TEST_CASE("registry restore rejects malformed documents") {
  auto doc = nlohmann::json::parse(R"({"a": {"count": -1, "mean": "0", "m2": "0"}})");
  try {
    (void)PreferenceStatsRegistry::restore(doc);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("a") != std::string::npos);
  }
  CHECK_THROWS_AS((void)PreferenceStatsRegistry::restore(nlohmann::json::array()), ParseError);
  CHECK_THROWS_AS((void)PreferenceStatsRegistry::restore(nlohmann::json::parse(R"({"b": {"count": 2}})")), ParseError);
  CHECK_THROWS_AS((void)PreferenceStatsRegistry::restore(nlohmann::json::parse(R"({"b": {"count": 2, "mean": "x", "m2": "1"}})")),
                  ParseError);
  CHECK_THROWS_AS((void)PreferenceStatsRegistry::restore(nlohmann::json::parse(R"({"b": {"count": 2, "mean": "1", "m2": "-1"}})")),
                  ParseError);
}

TEST_CASE("registry tolerates concurrent observers on distinct clusters") {
  PreferenceStatsRegistry reg;
  std::vector<std::thread> threads;
  for (int t = 0; t < 4; ++t) {
    threads.emplace_back([&reg, t] {
      for (int i = 0; i < 1000; ++i) reg.observe("c" + std::to_string(t), static_cast<double>(i));
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 4; ++t) {
    const auto s = reg.stats("c" + std::to_string(t));
    CHECK(s.count == 1000);
    CHECK(s.mean == doctest::Approx(499.5));
  }
}
