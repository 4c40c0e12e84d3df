#pragma once

#include <string>
#include <vector>

#include "xqcfd/agent.hpp"
#include "xqcfd/evalstats.hpp"

namespace xqcfd {

// Experiment grid: variants x seeds, optionally swept over temperature or
// demo count (each sweep value gets its own subdirectory).
struct ExperimentConfig {
  std::string env_id = kPointReachId;
  std::vector<Variant> variants{Variant::kXqcfd};
  std::vector<std::uint64_t> seeds{0};
  AgentConfig base;
  std::string out_dir = "runs";
  std::string demo_path;
  std::size_t n_demos = 50;
  std::vector<double> temperature_sweep;
  std::vector<int> demo_count_sweep;
};

// Flat `key = value` format, '#' comments, comma-separated lists; unknown or
// duplicate keys are rejected.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::string& path);

// Worker-thread cap from XQCFD_THREADS (defaults to the hardware count).
unsigned worker_thread_cap();

// Deterministic per-run csv path: {out}/{env}_{variant}_{seed}.csv.
std::string run_csv_path(const std::string& out_dir, const std::string& env_id, Variant v,
                         std::uint64_t seed);

int cmd_gen_demos(const std::string& env_id, std::size_t n, std::uint64_t seed,
                  const std::string& out_path);
int cmd_pretrain(const ExperimentConfig& cfg);
int cmd_train(const ExperimentConfig& cfg);
int cmd_aggregate(const std::string& run_dir);
int cmd_plot(const std::string& run_dir, const std::string& out_svg);
int cmd_sweep_temperature(const ExperimentConfig& cfg);
int cmd_sweep_demos(const ExperimentConfig& cfg);

// Aggregated curve as written by cmd_aggregate.
struct AggregateCurve {
  std::string variant;
  std::vector<long> steps;
  std::vector<double> iqm, lo, hi;
};

// Parses runs named {env}_{variant}_{seed}.csv under run_dir into per-variant
// matrices and writes {env}_{variant}_agg.csv files; returns the curves.
std::vector<AggregateCurve> aggregate_run_dir(const std::string& run_dir);

// Hand-emitted SVG with one IQM polyline and CI band per variant; byte
// deterministic for fixed input.
std::string render_learning_curves_svg(const std::vector<AggregateCurve>& curves);

}  // namespace xqcfd
