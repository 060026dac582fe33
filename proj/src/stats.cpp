#include "pgrpo/stats.hpp"

#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "pgrpo/errors.hpp"

namespace pgrpo {

WelfordAccumulator WelfordAccumulator::from_state(std::uint64_t count, double mean, double m2) {
  if (!std::isfinite(mean) || !std::isfinite(m2)) throw std::invalid_argument("non-finite accumulator state");
  if (m2 < 0.0) throw std::invalid_argument("m2 must be non-negative");
  if (count == 0 && (mean != 0.0 || m2 != 0.0)) throw std::invalid_argument("empty accumulator must have mean = m2 = 0");
  WelfordAccumulator acc;
  acc.count_ = count;
  acc.mean_ = mean;
  acc.m2_ = m2;
  return acc;
}

void WelfordAccumulator::observe(double r) {
  if (!std::isfinite(r)) throw std::domain_error(fmt::format("non-finite reward {}", r));
  ++count_;
  const double delta_old = r - mean_;
  mean_ += delta_old / static_cast<double>(count_);
  const double delta_new = r - mean_;
  m2_ += delta_old * delta_new;
  // delta_old * delta_new >= 0 analytically; guard the last ulp.
  if (m2_ < 0.0) m2_ = 0.0;
}

WelfordAccumulator WelfordAccumulator::merged(const WelfordAccumulator& other) const {
  if (other.count_ == 0) return *this;
  if (count_ == 0) return other;
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  const double delta = other.mean_ - mean_;
  WelfordAccumulator out;
  out.count_ = count_ + other.count_;
  out.mean_ = mean_ + delta * (nb / n);
  out.m2_ = m2_ + other.m2_ + delta * delta * (na * nb / n);
  return out;
}

double WelfordAccumulator::sample_variance() const noexcept {
  if (count_ < 2) return 0.0;
  return m2_ / static_cast<double>(count_ - 1);
}

double WelfordAccumulator::stddev() const noexcept {
  if (count_ <= 1) return 1.0;
  return std::sqrt(sample_variance());
}

// ---------------------------------------------------------------------------

PreferenceStatsRegistry::PreferenceStatsRegistry(const PreferenceStatsRegistry& other) {
  std::shared_lock lock(other.map_mu_);
  for (const auto& [id, e] : other.entries_) {
    std::lock_guard g(e->mu);
    auto copy = std::make_unique<Entry>();
    copy->acc = e->acc;
    entries_.emplace(id, std::move(copy));
  }
}

PreferenceStatsRegistry& PreferenceStatsRegistry::operator=(const PreferenceStatsRegistry& other) {
  if (this == &other) return *this;
  PreferenceStatsRegistry tmp(other);
  std::unique_lock lock(map_mu_);
  entries_ = std::move(tmp.entries_);
  return *this;
}

PreferenceStatsRegistry::PreferenceStatsRegistry(PreferenceStatsRegistry&& other) noexcept {
  std::unique_lock lock(other.map_mu_);
  entries_ = std::move(other.entries_);
}

PreferenceStatsRegistry& PreferenceStatsRegistry::operator=(PreferenceStatsRegistry&& other) noexcept {
  if (this == &other) return *this;
  std::scoped_lock lock(map_mu_, other.map_mu_);
  entries_ = std::move(other.entries_);
  return *this;
}

PreferenceStatsRegistry::Entry& PreferenceStatsRegistry::entry_for(const ClusterId& cluster) {
  {
    std::shared_lock lock(map_mu_);
    if (auto it = entries_.find(cluster); it != entries_.end()) return *it->second;
  }
  std::unique_lock lock(map_mu_);
  auto [it, inserted] = entries_.try_emplace(cluster, nullptr);
  if (inserted) it->second = std::make_unique<Entry>();
  return *it->second;
}

void PreferenceStatsRegistry::observe(const ClusterId& cluster, double r) {
  if (!std::isfinite(r)) throw std::domain_error(fmt::format("non-finite reward {} for cluster '{}'", r, cluster));
  Entry& e = entry_for(cluster);
  std::lock_guard g(e.mu);
  e.acc.observe(r);
}

WelfordAccumulator PreferenceStatsRegistry::accumulator(const ClusterId& cluster) const {
  std::shared_lock lock(map_mu_);
  auto it = entries_.find(cluster);
  if (it == entries_.end()) return {};
  std::lock_guard g(it->second->mu);
  return it->second->acc;
}

ClusterStats PreferenceStatsRegistry::stats(const ClusterId& cluster) const {
  const WelfordAccumulator acc = accumulator(cluster);
  return {acc.mean(), acc.stddev(), acc.count()};
}

void PreferenceStatsRegistry::set(const ClusterId& cluster, const WelfordAccumulator& acc) {
  Entry& e = entry_for(cluster);
  std::lock_guard g(e.mu);
  e.acc = acc;
}

void PreferenceStatsRegistry::clear() {
  std::unique_lock lock(map_mu_);
  entries_.clear();
}

std::vector<ClusterId> PreferenceStatsRegistry::clusters() const {
  std::shared_lock lock(map_mu_);
  std::vector<ClusterId> ids;
  ids.reserve(entries_.size());
  for (const auto& [id, e] : entries_) ids.push_back(id);
  return ids;
}

std::size_t PreferenceStatsRegistry::size() const {
  std::shared_lock lock(map_mu_);
  return entries_.size();
}

nlohmann::json PreferenceStatsRegistry::snapshot() const {
  nlohmann::json doc = nlohmann::json::object();
  std::shared_lock lock(map_mu_);
  for (const auto& [id, e] : entries_) {
    std::lock_guard g(e->mu);
    doc[id] = {
        {"count", e->acc.count()},
        {"mean", fmt::format("{:.17g}", e->acc.mean())},
        {"m2", fmt::format("{:.17g}", e->acc.m2())},
    };
  }
  return doc;
}

namespace {

double read_real(const nlohmann::json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (!v.is_string()) throw ParseError(key, "expected a real (number or decimal string)");
  const auto& s = v.get_ref<const std::string&>();
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(s, &used);
  } catch (const std::exception&) {
    throw ParseError(key, fmt::format("cannot parse '{}' as a real", s));
  }
  if (used != s.size()) throw ParseError(key, fmt::format("trailing characters in '{}'", s));
  return out;
}

}  // namespace

PreferenceStatsRegistry PreferenceStatsRegistry::restore(const nlohmann::json& doc) {
  if (!doc.is_object()) throw ParseError("", "registry snapshot must be a JSON object");
  PreferenceStatsRegistry reg;
  for (const auto& [id, v] : doc.items()) {
    if (!v.is_object()) throw ParseError(id, "expected an object {count, mean, m2}");
    for (const char* field : {"count", "mean", "m2"}) {
      if (!v.contains(field)) throw ParseError(id + "." + field, "missing field");
    }
    const auto& c = v.at("count");
    if (!c.is_number_integer()) throw ParseError(id + ".count", "expected an integer");
    if (c.is_number_unsigned() == false && c.get<std::int64_t>() < 0) {
      throw ParseError(id + ".count", "count must be non-negative");
    }
    const double mean = read_real(v.at("mean"), id + ".mean");
    const double m2 = read_real(v.at("m2"), id + ".m2");
    WelfordAccumulator acc;
    try {
      acc = WelfordAccumulator::from_state(c.get<std::uint64_t>(), mean, m2);
    } catch (const std::invalid_argument& e) {
      throw ParseError(id, e.what());
    }
    reg.set(id, acc);
  }
  return reg;
}

}  // namespace pgrpo
