// Experiment CLI: demo generation, pretraining, training grids, aggregation
// and learning-curve plots.

#include <CLI11.hpp>
#include <cstdio>
#include <exception>
#include <string>

#include "xqcfd/experiment.hpp"

using namespace xqcfd;

namespace {

// Applies the shared command-line overrides on top of an optional config file.
struct CommonArgs {
  std::string config_path;
  std::string env;
  std::string variant;
  std::string out;
  std::string demos;
  long steps = -1;
  long long seed = -1;

  ExperimentConfig resolve() const {
    ExperimentConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path);
    if (!env.empty()) cfg.env_id = env;
    if (!variant.empty()) {
      cfg.variants.clear();
      cfg.variants.push_back(parse_variant(variant));
    }
    if (!out.empty()) cfg.out_dir = out;
    if (!demos.empty()) cfg.demo_path = demos;
    if (steps >= 0) cfg.base.total_steps = steps;
    if (seed >= 0) cfg.seeds = {static_cast<std::uint64_t>(seed)};
    return cfg;
  }

  void attach(CLI::App* app, bool with_variant = true) {
    app->add_option("--config", config_path, "experiment config file (key = value)");
    app->add_option("--env", env, "environment id");
    if (with_variant) app->add_option("--variant", variant, "agent variant");
    app->add_option("--out", out, "output directory");
    app->add_option("--demos", demos, "demo file path");
    app->add_option("--steps", steps, "total environment steps");
    app->add_option("--seed", seed, "single seed override");
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"xqcfd experiments"};
  app.require_subcommand(1);

  // gen-demos
  auto* gen = app.add_subcommand("gen-demos", "generate expert demonstrations");
  std::string gen_env = kPointReachId, gen_out = "demos.txt";
  std::size_t gen_n = 50;
  long long gen_seed = 0;
  gen->add_option("--env", gen_env, "environment id");
  gen->add_option("--n", gen_n, "number of successful trajectories");
  gen->add_option("--seed", gen_seed, "rng seed");
  gen->add_option("--out", gen_out, "output demo file");

  CommonArgs pretrain_args, train_args, sweep_t_args, sweep_d_args;
  auto* pre = app.add_subcommand("pretrain", "behavioral-cloning pretraining only");
  pretrain_args.attach(pre, false);
  auto* train = app.add_subcommand("train", "run the variant x seed grid");
  train_args.attach(train);
  auto* sweep_t = app.add_subcommand("sweep-temperature", "grid per KL temperature");
  sweep_t_args.attach(sweep_t);
  auto* sweep_d = app.add_subcommand("sweep-demos", "grid per demo count");
  sweep_d_args.attach(sweep_d);

  auto* agg = app.add_subcommand("aggregate", "IQM + bootstrap bands over seeds");
  std::string agg_dir = "runs";
  agg->add_option("--out", agg_dir, "run directory to aggregate");

  auto* plot = app.add_subcommand("plot", "render learning curves to svg");
  std::string plot_dir = "runs", plot_out = "curves.svg";
  plot->add_option("--out", plot_dir, "run directory with aggregate csvs");
  plot->add_option("--svg", plot_out, "output svg path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      return cmd_gen_demos(gen_env, gen_n, static_cast<std::uint64_t>(gen_seed), gen_out);
    }
    if (pre->parsed()) return cmd_pretrain(pretrain_args.resolve());
    if (train->parsed()) return cmd_train(train_args.resolve());
    if (sweep_t->parsed()) return cmd_sweep_temperature(sweep_t_args.resolve());
    if (sweep_d->parsed()) return cmd_sweep_demos(sweep_d_args.resolve());
    if (agg->parsed()) return cmd_aggregate(agg_dir);
    if (plot->parsed()) return cmd_plot(plot_dir, plot_out);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
