// Experiment runner: pgrpo {train,eval,ablate,report}.

#include <cstdlib>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "pgrpo/config.hpp"
#include "pgrpo/errors.hpp"
#include "pgrpo/experiment.hpp"
#include "pgrpo/report.hpp"

namespace {

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("pgrpo");
  logger->set_pattern("[%l] %v");
  spdlog::set_default_logger(logger);
  spdlog::set_level(spdlog::level::info);
  if (const char* level = std::getenv("PGRPO_LOG_LEVEL")) {
    const auto parsed = spdlog::level::from_str(level);
    // from_str maps unknown names to "off"; only accept it when asked for.
    if (parsed != spdlog::level::off || std::string(level) == "off") {
      spdlog::set_level(parsed);
    } else {
      spdlog::warn("ignoring unknown PGRPO_LOG_LEVEL '{}'", level);
    }
  }
}

struct CommonOptions {
  std::string config;
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "experiment config (JSON)")->required();
    cmd->add_option("--out", out, "output directory (overrides output_dir)");
    cmd->add_option("--seed", seed, "run only this seed");
    cmd->add_option("--mode", mode, "training mode override (grpo|pgrpo)");
  }

  pgrpo::ExperimentConfig load() const {
    pgrpo::ConfigOverrides o;
    o.seed = seed;
    o.mode = mode;
    if (out) o.output_dir = std::filesystem::absolute(*out);
    return pgrpo::load_config(config, o);
  }
};

}  // namespace

int main(int argc, char** argv) {
  setup_logging();
  CLI::App app{"GRPO / P-GRPO experiment runner"};
  app.require_subcommand(1);

  CommonOptions train_opts, eval_opts, ablate_opts;
  auto* train = app.add_subcommand("train", "train one run per seed into <out>/<seed>/");
  train_opts.attach(train);
  auto* eval = app.add_subcommand("eval", "evaluate trained checkpoints into <out>/<seed>/eval.csv");
  eval_opts.attach(eval);
  auto* ablate = app.add_subcommand("ablate", "run the ablation cross product and write ablation.csv");
  ablate_opts.attach(ablate);

  std::vector<std::string> report_dirs;
  std::string report_out;
  bool report_svg = false;
  auto* report = app.add_subcommand("report", "aggregate metrics.jsonl files into plot-data CSVs");
  report->add_option("dirs", report_dirs, "run directories")->required();
  report->add_option("--out", report_out, "report directory (default <first dir>/report)");
  report->add_flag("--svg", report_svg, "also write aggregate.svg");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      const auto cfg = train_opts.load();
      pgrpo::train_all(cfg);
      spdlog::info("wrote {} run(s) under {}", cfg.seeds.size(), cfg.output_dir.string());
    } else if (*eval) {
      pgrpo::evaluate_all(eval_opts.load());
    } else if (*ablate) {
      const auto cfg = ablate_opts.load();
      const auto rows = pgrpo::run_ablation(cfg);
      spdlog::info("wrote {} ablation rows to {}", rows.size(), (cfg.output_dir / "ablation.csv").string());
    } else if (*report) {
      std::vector<std::filesystem::path> dirs(report_dirs.begin(), report_dirs.end());
      const std::filesystem::path out = report_out.empty() ? dirs.front() / "report" : std::filesystem::path(report_out);
      const auto runs = pgrpo::write_report(dirs, out, report_svg);
      spdlog::info("reported {} run(s) into {}", runs, out.string());
    }
  } catch (const pgrpo::ConfigError& e) {
    spdlog::error("invalid config: {}", e.what());
    return 2;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
