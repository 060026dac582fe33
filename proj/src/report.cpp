#include "pgrpo/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace pgrpo {

namespace fs = std::filesystem;

std::string format_real(double x) { return fmt::format("{:.10g}", x); }

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = std::clamp(q, 0.0, 1.0) * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

RunCurve curve_from_metrics(const std::vector<MetricsRecord>& records, std::string name) {
  if (records.empty()) throw std::runtime_error("metrics log is empty");
  RunCurve curve;
  curve.name = std::move(name);
  std::map<std::size_t, std::map<std::string, const MetricsRecord*>> by_step;
  std::map<std::string, int> clusters;
  for (const auto& r : records) {
    by_step[r.step][r.cluster_id] = &r;
    clusters[r.cluster_id] = 0;
  }
  for (const auto& [id, unused] : clusters) curve.clusters.push_back(id);
  curve.cluster_rewards.assign(curve.clusters.size(), {});
  for (const auto& [step, rows] : by_step) {
    curve.steps.push_back(step);
    double total = 0.0;
    std::size_t n = 0;
    for (std::size_t c = 0; c < curve.clusters.size(); ++c) {
      auto it = rows.find(curve.clusters[c]);
      if (it == rows.end()) {
        curve.cluster_rewards[c].push_back(std::nullopt);
        continue;
      }
      curve.cluster_rewards[c].push_back(it->second->group_mean_reward);
      total += it->second->group_mean_reward;
      ++n;
    }
    curve.overall.push_back(n > 0 ? total / static_cast<double>(n) : 0.0);
  }
  return curve;
}

std::vector<fs::path> find_metrics_files(const std::vector<fs::path>& dirs) {
  std::vector<fs::path> out;
  for (const auto& dir : dirs) {
    if (!fs::is_directory(dir)) throw std::runtime_error(fmt::format("'{}' is not a directory", dir.string()));
    std::vector<fs::path> found;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
      if (entry.is_regular_file() && entry.path().filename() == "metrics.jsonl") found.push_back(entry.path());
    }
    std::sort(found.begin(), found.end());
    out.insert(out.end(), found.begin(), found.end());
  }
  if (out.empty()) throw std::runtime_error("no metrics.jsonl files found");
  return out;
}

std::vector<AggregatePoint> aggregate_curves(const std::vector<RunCurve>& curves) {
  std::vector<AggregatePoint> out;
  if (curves.empty()) return out;
  // Steps present in every run.
  std::vector<std::size_t> common = curves.front().steps;
  for (const auto& c : curves) {
    std::vector<std::size_t> keep;
    std::set_intersection(common.begin(), common.end(), c.steps.begin(), c.steps.end(), std::back_inserter(keep));
    common = std::move(keep);
  }
  for (std::size_t step : common) {
    std::vector<double> values;
    for (const auto& c : curves) {
      const auto at = std::lower_bound(c.steps.begin(), c.steps.end(), step) - c.steps.begin();
      values.push_back(c.overall[static_cast<std::size_t>(at)]);
    }
    AggregatePoint p;
    p.step = step;
    p.runs = values.size();
    p.median = quantile(values, 0.5);
    p.q25 = quantile(values, 0.25);
    p.q75 = quantile(values, 0.75);
    p.min = *std::min_element(values.begin(), values.end());
    p.max = *std::max_element(values.begin(), values.end());
    out.push_back(p);
  }
  return out;
}

std::string render_svg(const std::vector<AggregatePoint>& points, const std::string& title) {
  const double width = 640, height = 400, left = 60, right = 20, top = 40, bottom = 50;
  double lo = 0.0, hi = 1.0;
  std::size_t max_step = 1;
  if (!points.empty()) {
    lo = points.front().q25;
    hi = points.front().q75;
    for (const auto& p : points) {
      lo = std::min({lo, p.q25, p.median});
      hi = std::max({hi, p.q75, p.median});
      max_step = std::max(max_step, p.step);
    }
  }
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  auto x = [&](std::size_t step) { return left + (width - left - right) * static_cast<double>(step) / static_cast<double>(max_step); };
  auto y = [&](double v) { return top + (height - top - bottom) * (hi - v) / (hi - lo); };

  std::string svg = fmt::format(
      "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{0}\" height=\"{1}\" viewBox=\"0 0 {0} {1}\">\n"
      "<rect width=\"{0}\" height=\"{1}\" fill=\"white\"/>\n"
      "<text x=\"{2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"14\">{3}</text>\n",
      width, height, left, title);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1:.2f}\" x2=\"{2:.2f}\" y2=\"{1:.2f}\" stroke=\"black\"/>\n", left,
                     height - bottom, width - right);
  svg += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2:.2f}\" stroke=\"black\"/>\n", left, top,
                     height - bottom);
  svg += fmt::format("<text x=\"{:.2f}\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"12\">step</text>\n",
                     (width - right) - 30, height - 15);
  for (double v : {lo, (lo + hi) / 2, hi}) {
    svg += fmt::format("<text x=\"4\" y=\"{:.2f}\" font-family=\"sans-serif\" font-size=\"11\">{:.3f}</text>\n", y(v) + 4, v);
  }
  if (!points.empty()) {
    std::string band = "<polygon fill=\"#9ecae1\" fill-opacity=\"0.5\" stroke=\"none\" points=\"";
    for (const auto& p : points) band += fmt::format("{:.2f},{:.2f} ", x(p.step), y(p.q75));
    for (auto it = points.rbegin(); it != points.rend(); ++it) band += fmt::format("{:.2f},{:.2f} ", x(it->step), y(it->q25));
    band.back() = '"';
    svg += band + "/>\n";
    std::string line = "<polyline fill=\"none\" stroke=\"#08519c\" stroke-width=\"1.5\" points=\"";
    for (const auto& p : points) line += fmt::format("{:.2f},{:.2f} ", x(p.step), y(p.median));
    line.back() = '"';
    svg += line + "/>\n";
  }
  svg += "</svg>\n";
  return svg;
}

namespace {

std::string run_name(const fs::path& root, const fs::path& metrics) {
  std::string name = root.filename().empty() ? root.parent_path().filename().string() : root.filename().string();
  const auto rel = fs::relative(metrics.parent_path(), root);
  for (const auto& part : rel) {
    if (part == ".") continue;
    name += "_" + part.string();
  }
  return name.empty() ? "run" : name;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error(fmt::format("cannot write '{}'", path.string()));
}

}  // namespace

std::size_t write_report(const std::vector<fs::path>& dirs, const fs::path& out_dir, bool svg) {
  std::vector<RunCurve> curves;
  std::size_t failures = 0;
  for (const auto& dir : dirs) {
    for (const auto& file : find_metrics_files({dir})) {
      try {
        curves.push_back(curve_from_metrics(read_metrics_jsonl(file), run_name(dir, file)));
      } catch (const std::exception& e) {
        spdlog::error("{}: {}", file.string(), e.what());
        ++failures;
      }
    }
  }
  if (failures > 0) throw std::runtime_error(fmt::format("{} metrics file(s) could not be read", failures));

  fs::create_directories(out_dir / "curves");
  std::map<std::string, int> seen;
  for (auto& c : curves) {
    if (seen[c.name]++ > 0) c.name += fmt::format("_{}", seen[c.name] - 1);
    std::string text = "step,overall_reward";
    for (const auto& id : c.clusters) text += "," + id;
    text += "\n";
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      text += fmt::format("{},{}", c.steps[i], format_real(c.overall[i]));
      for (const auto& col : c.cluster_rewards) text += "," + (col[i] ? format_real(*col[i]) : std::string());
      text += "\n";
    }
    write_text(out_dir / "curves" / (c.name + ".csv"), text);
  }

  const auto points = aggregate_curves(curves);
  std::string text = "step,runs,median,q25,q75,min,max\n";
  for (const auto& p : points) {
    text += fmt::format("{},{},{},{},{},{},{}\n", p.step, p.runs, format_real(p.median), format_real(p.q25),
                        format_real(p.q75), format_real(p.min), format_real(p.max));
  }
  write_text(out_dir / "aggregate.csv", text);
  if (svg) write_text(out_dir / "aggregate.svg", render_svg(points, fmt::format("overall reward, {} run(s)", curves.size())));
  return curves.size();
}

}  // namespace pgrpo
