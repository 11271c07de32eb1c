// tsscale: generate, sweep, fit, plot, evaluate, report.
// Exit codes: 0 ok, 1 usage, 2 data error, 3 run failure.

#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "tsscale/harness/commands.hpp"

namespace h = tsscale::harness;

namespace {

struct Common {
  std::string config;
  std::string output_dir;
  std::size_t parallelism = 0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "Experiment config (JSON)")->required();
  sub->add_option("-o,--output-dir", c.output_dir, "Output directory (overrides config and TSSCALE_OUTPUT_DIR)");
  sub->add_option("-j,--parallelism", c.parallelism, "Concurrent runs (overrides config and TSSCALE_PARALLELISM)")
      ->check(CLI::PositiveNumber);
}

h::ExperimentConfig load(const Common& c) {
  auto cfg = h::load_experiment(c.config);
  h::apply_environment(cfg);
  if (!c.output_dir.empty()) cfg.output_dir = c.output_dir;
  if (c.parallelism) cfg.parallelism = c.parallelism;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scaling-law laboratory for patch-transformer forecasters"};
  app.require_subcommand(1);

  Common common;
  auto* gen = app.add_subcommand("generate", "Generate, curate and partition the synthetic corpus");
  add_common(gen, common);

  h::SweepOptions sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "Train the model x subset grid");
  add_common(sweep, common);
  sweep->add_flag("--resume", sweep_opts.resume, "Skip complete runs and restart incomplete ones");
  sweep->add_option("--max-runs", sweep_opts.max_runs, "Stop after starting this many runs");

  std::string axis, metric, split;
  auto* fit = app.add_subcommand("fit", "Fit power laws over N, D and C");
  add_common(fit, common);
  fit->add_option("--axis", axis, "Only this axis")->check(CLI::IsMember({"N", "C", "D"}));
  fit->add_option("--metric", metric, "Only this metric");
  fit->add_option("--split", split, "Only this split");

  auto* plot = app.add_subcommand("plot", "Write SVG plots of the fits");
  add_common(plot, common);

  h::EvaluateCmdOptions eval_opts;
  auto* eval = app.add_subcommand("evaluate", "Score a checkpoint on dataset files or the store's splits");
  add_common(eval, common);
  eval->add_option("-r,--run", eval_opts.run_id, "Run id")->required();
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint file (default: the run's latest)");
  eval->add_option("-d,--dataset", eval_opts.datasets, "CSV or JSONL dataset file (repeatable)");

  auto* report = app.add_subcommand("report", "Write a Markdown summary of runs and fits");
  add_common(report, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    auto cfg = load(common);
    if (gen->parsed()) {
      h::cmd_generate(cfg, std::cout);
    } else if (sweep->parsed()) {
      sweep_opts.parallelism = cfg.parallelism;
      h::cmd_sweep(cfg, sweep_opts, std::cout);
    } else if (fit->parsed()) {
      h::FitOptions fo;
      if (!axis.empty()) fo.axis = tsscale::scaling::parse_axis(axis);
      if (!metric.empty()) fo.metric = metric;
      if (!split.empty()) fo.split = split;
      h::cmd_fit(cfg, fo, std::cout);
    } else if (plot->parsed()) {
      h::cmd_plot(cfg, std::cout);
    } else if (eval->parsed()) {
      h::cmd_evaluate(cfg, eval_opts, std::cout);
    } else if (report->parsed()) {
      h::cmd_report(cfg, std::cout);
    }
  } catch (const h::UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const h::DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const h::RunFailure& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
