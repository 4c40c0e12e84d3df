#include "xqcfd/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace xqcfd {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "' expects a boolean, got '" + v + "'");
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects a number, got '" + v + "'");
  }
}

long parse_long(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long x = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("");
    return x;
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' expects an integer, got '" + v + "'");
  }
}

}  // namespace

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::set<std::string> seen;
  std::stringstream ss(text);
  std::string line;
  while (std::getline(ss, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: expected key = value, got '" + line + "'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty() || value.empty()) {
      throw std::invalid_argument("config: malformed line '" + line + "'");
    }
    if (!seen.insert(key).second) {
      throw std::invalid_argument("config: duplicate key '" + key + "'");
    }

    if (key == "env") {
      cfg.env_id = value;
    } else if (key == "variant") {
      cfg.variants.clear();
      for (const auto& name : split_list(value)) cfg.variants.push_back(parse_variant(name));
      if (cfg.variants.empty()) throw std::invalid_argument("config: empty variant list");
    } else if (key == "seed") {
      cfg.seeds.clear();
      for (const auto& s : split_list(value)) {
        cfg.seeds.push_back(static_cast<std::uint64_t>(parse_long(key, s)));
      }
      if (cfg.seeds.empty()) throw std::invalid_argument("config: empty seed list");
    } else if (key == "out") {
      cfg.out_dir = value;
    } else if (key == "demos") {
      cfg.demo_path = value;
    } else if (key == "n_demos") {
      cfg.n_demos = static_cast<std::size_t>(parse_long(key, value));
    } else if (key == "steps") {
      cfg.base.total_steps = parse_long(key, value);
    } else if (key == "temperature") {
      cfg.base.temperature = parse_double(key, value);
    } else if (key == "use_kl") {
      cfg.base.use_kl = parse_bool(key, value);
    } else if (key == "auto_temperature") {
      cfg.base.auto_temperature = parse_bool(key, value);
    } else if (key == "policy") {
      if (value == "hetstat") cfg.base.policy_kind = PolicyKind::kHetStat;
      else if (value == "mlp") cfg.base.policy_kind = PolicyKind::kMlp;
      else throw std::invalid_argument("config: policy must be hetstat or mlp");
    } else if (key == "hidden") {
      cfg.base.hidden = static_cast<std::size_t>(parse_long(key, value));
    } else if (key == "rff_dim") {
      cfg.base.rff_dim = static_cast<std::size_t>(parse_long(key, value));
    } else if (key == "batch_size") {
      cfg.base.batch_size = static_cast<std::size_t>(parse_long(key, value));
    } else if (key == "utd_ratio") {
      cfg.base.utd_ratio = static_cast<int>(parse_long(key, value));
    } else if (key == "policy_delay") {
      cfg.base.policy_delay = static_cast<int>(parse_long(key, value));
    } else if (key == "eval_every") {
      cfg.base.eval_every = parse_long(key, value);
    } else if (key == "eval_episodes") {
      cfg.base.eval_episodes = static_cast<int>(parse_long(key, value));
    } else if (key == "atom_count") {
      cfg.base.atom_count = static_cast<int>(parse_long(key, value));
    } else if (key == "learning_rate") {
      cfg.base.learning_rate = parse_double(key, value);
    } else if (key == "alpha_learning_rate") {
      cfg.base.alpha_learning_rate = parse_double(key, value);
    } else if (key == "bc_epochs") {
      cfg.base.bc_epochs = static_cast<int>(parse_long(key, value));
    } else if (key == "bc_learning_rate") {
      cfg.base.bc_learning_rate = parse_double(key, value);
    } else if (key == "critic_pretrain_steps") {
      cfg.base.critic_pretrain_steps = static_cast<int>(parse_long(key, value));
    } else if (key == "bn_wn_actor") {
      cfg.base.bn_wn_actor = parse_bool(key, value);
    } else if (key == "use_target_network") {
      cfg.base.use_target_network = parse_bool(key, value);
    } else if (key == "warmup_steps") {
      cfg.base.warmup_steps = parse_long(key, value);
    } else if (key == "polyak_tau") {
      cfg.base.polyak_tau = parse_double(key, value);
    } else if (key == "v_max") {
      cfg.base.v_max = parse_double(key, value);
    } else if (key == "init_logit_ramp") {
      cfg.base.init_logit_ramp = parse_double(key, value);
    } else if (key == "sweep_temperature") {
      for (const auto& s : split_list(value)) {
        cfg.temperature_sweep.push_back(parse_double(key, s));
      }
    } else if (key == "sweep_demos") {
      for (const auto& s : split_list(value)) {
        cfg.demo_count_sweep.push_back(static_cast<int>(parse_long(key, s)));
      }
    } else {
      throw std::invalid_argument("config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

unsigned worker_thread_cap() {
  unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const char* env = std::getenv("XQCFD_THREADS");
  if (env != nullptr) {
    long v = std::atol(env);
    if (v >= 1) return static_cast<unsigned>(std::min<long>(v, 256));
  }
  return hw;
}

std::string run_csv_path(const std::string& out_dir, const std::string& env_id, Variant v,
                         std::uint64_t seed) {
  return out_dir + "/" + env_id + "_" + variant_name(v) + "_" + std::to_string(seed) + ".csv";
}

int cmd_gen_demos(const std::string& env_id, std::size_t n, std::uint64_t seed,
                  const std::string& out_path) {
  PointEnv env = PointEnv::make(env_id);
  ScriptedExpert expert(env_id);
  Rng rng(seed);
  std::size_t attempts = 0;
  DemoDataset demos = generate_demos(env, expert, n, rng, &attempts);
  if (!out_path.empty()) {
    fs::path parent = fs::path(out_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
  }
  demos.save(out_path);
  std::printf("wrote %zu trajectories (%zu transitions) to %s; expert success rate %.3f\n",
              demos.trajectory_count(), demos.size(), out_path.c_str(),
              static_cast<double>(n) / static_cast<double>(attempts));
  return 0;
}

namespace {

struct RunTask {
  AgentConfig cfg;
  std::string csv_path;
  std::string checkpoint_prefix;
  const DemoDataset* demos = nullptr;
};

// Executes the grid across worker threads; each run owns its agent, env and
// rng streams. Returns the number of failed runs.
int execute_tasks(std::vector<RunTask>& tasks) {
  std::atomic<std::size_t> next{0};
  std::atomic<int> failures{0};
  std::mutex io_mutex;
  unsigned workers = std::min<unsigned>(worker_thread_cap(),
                                        static_cast<unsigned>(std::max<std::size_t>(tasks.size(), 1)));
  auto worker = [&] {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= tasks.size()) return;
      RunTask& task = tasks[i];
      try {
        if (fs::exists(task.csv_path)) {
          std::lock_guard<std::mutex> lock(io_mutex);
          std::printf("[skip] %s (already complete)\n", task.csv_path.c_str());
          std::fflush(stdout);
          continue;
        }
        XqcfdAgent agent(task.cfg, task.demos);
        MetricsLog log = agent.run();
        {
          std::ofstream out(task.csv_path);
          if (!out) throw std::runtime_error("cannot write " + task.csv_path);
          log.write_csv(out, task.cfg);
        }
        agent.save_checkpoints(task.checkpoint_prefix);
        std::lock_guard<std::mutex> lock(io_mutex);
        std::printf("[done] %s (final success %.3f)\n", task.csv_path.c_str(),
                    log.rows.empty() ? 0.0 : log.rows.back().success_rate);
        std::fflush(stdout);
      } catch (const std::exception& e) {
        failures.fetch_add(1);
        std::lock_guard<std::mutex> lock(io_mutex);
        std::fprintf(stderr, "[fail] %s: %s\n", task.csv_path.c_str(), e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  return failures.load();
}

// Builds the variant x seed grid under `out_dir` with the given base config.
std::vector<RunTask> make_grid(const ExperimentConfig& cfg, const std::string& out_dir,
                               const DemoDataset* demos) {
  std::vector<RunTask> tasks;
  for (Variant v : cfg.variants) {
    for (std::uint64_t seed : cfg.seeds) {
      RunTask task;
      task.cfg = cfg.base;
      task.cfg.env_id = cfg.env_id;
      task.cfg.variant = v;
      task.cfg.seed = seed;
      task.csv_path = run_csv_path(out_dir, cfg.env_id, v, seed);
      task.checkpoint_prefix = out_dir + "/" + cfg.env_id + "_" + variant_name(v) + "_" +
                               std::to_string(seed);
      bool needs = task.cfg.resolved_traits().use_demos ||
                   task.cfg.resolved_traits().pretrain_policy ||
                   task.cfg.resolved_traits().pretrain_critic;
      if (needs) {
        if (demos == nullptr) {
          throw std::invalid_argument("variant " + variant_name(v) +
                                      " needs demos; pass demos = <path> (see gen-demos)");
        }
        task.demos = demos;
      }
      tasks.push_back(std::move(task));
    }
  }
  return tasks;
}

DemoDataset load_demos_or_throw(const ExperimentConfig& cfg) {
  if (cfg.demo_path.empty()) {
    throw std::invalid_argument("config: demos = <path> is required for this command");
  }
  DemoDataset demos = DemoDataset::load(cfg.demo_path);
  if (demos.env_id() != cfg.env_id) {
    throw std::invalid_argument("demo file is for env '" + demos.env_id() + "', config says '" +
                                cfg.env_id + "'");
  }
  return demos;
}

bool grid_needs_demos(const ExperimentConfig& cfg) {
  for (Variant v : cfg.variants) {
    AgentConfig probe = cfg.base;
    probe.variant = v;
    auto t = probe.resolved_traits();
    if (t.use_demos || t.pretrain_policy || t.pretrain_critic) return true;
  }
  return false;
}

}  // namespace

int cmd_train(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  DemoDataset demos;
  const DemoDataset* demos_ptr = nullptr;
  if (grid_needs_demos(cfg)) {
    demos = load_demos_or_throw(cfg);
    demos_ptr = &demos;
  }
  auto tasks = make_grid(cfg, cfg.out_dir, demos_ptr);
  return execute_tasks(tasks) == 0 ? 0 : 1;
}

int cmd_pretrain(const ExperimentConfig& cfg) {
  fs::create_directories(cfg.out_dir);
  DemoDataset demos = load_demos_or_throw(cfg);
  int failures = 0;
  for (std::uint64_t seed : cfg.seeds) {
    try {
      AgentConfig acfg = cfg.base;
      acfg.env_id = cfg.env_id;
      acfg.variant = Variant::kXqcfd;
      acfg.seed = seed;
      XqcfdAgent agent(acfg, &demos);
      agent.pretrain();
      double success = agent.evaluate(0);
      std::string prefix = cfg.out_dir + "/" + cfg.env_id + "_bc_" + std::to_string(seed);
      agent.policy().save(prefix + "_policy.ckpt");
      std::printf("[pretrain] seed %llu: BC success %.3f -> %s_policy.ckpt\n",
                  static_cast<unsigned long long>(seed), success, prefix.c_str());
    } catch (const std::exception& e) {
      ++failures;
      std::fprintf(stderr, "[fail] pretrain seed %llu: %s\n",
                   static_cast<unsigned long long>(seed), e.what());
    }
  }
  return failures == 0 ? 0 : 1;
}

namespace {

struct ParsedRun {
  std::string variant;
  std::vector<long> steps;
  std::vector<double> success;
};

ParsedRun parse_run_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty csv: " + path.string());
  ParsedRun run;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(ss, field, ',')) fields.push_back(field);
    if (fields.size() < 4) throw std::runtime_error("malformed csv row in " + path.string());
    run.steps.push_back(std::stol(fields[0]));
    run.variant = fields[1];
    run.success.push_back(std::stod(fields[3]));
  }
  return run;
}

}  // namespace

std::vector<AggregateCurve> aggregate_run_dir(const std::string& run_dir) {
  // Group per-seed csvs by (env, variant) from their filenames.
  std::map<std::string, std::vector<fs::path>> groups;
  for (const auto& entry : fs::directory_iterator(run_dir)) {
    if (!entry.is_regular_file()) continue;
    std::string name = entry.path().filename().string();
    if (name.size() < 5 || name.substr(name.size() - 4) != ".csv") continue;
    if (name.size() > 8 && name.substr(name.size() - 8) == "_agg.csv") continue;
    auto last = name.rfind('_');
    if (last == std::string::npos) continue;
    groups[name.substr(0, last)].push_back(entry.path());
  }
  if (groups.empty()) throw std::runtime_error("no run csv files under " + run_dir);

  std::vector<AggregateCurve> curves;
  for (auto& [prefix, paths] : groups) {
    std::sort(paths.begin(), paths.end());
    std::vector<ParsedRun> runs;
    for (const auto& p : paths) runs.push_back(parse_run_csv(p));
    for (const auto& r : runs) {
      if (r.steps != runs.front().steps) {
        throw std::runtime_error("runs under prefix " + prefix + " have mismatched step grids");
      }
    }
    RunMatrix matrix;
    matrix.seeds = runs.size();
    matrix.points = runs.front().steps.size();
    matrix.values.reserve(matrix.seeds * matrix.points);
    for (const auto& r : runs) {
      matrix.values.insert(matrix.values.end(), r.success.begin(), r.success.end());
    }
    Rng rng(20260811);
    BootstrapBands bands = stratified_bootstrap_ci(matrix, 2000, 10.0, 90.0, rng);

    AggregateCurve curve;
    curve.variant = runs.front().variant;
    curve.steps = runs.front().steps;
    curve.iqm = bands.point_iqm;
    curve.lo = bands.lo;
    curve.hi = bands.hi;
    curves.push_back(curve);

    std::string agg_path = run_dir + "/" + prefix + "_agg.csv";
    std::ofstream out(agg_path);
    if (!out) throw std::runtime_error("cannot write " + agg_path);
    out << "step,variant,iqm,ci_lo,ci_hi\n";
    char buf[160];
    for (std::size_t i = 0; i < curve.steps.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%ld,%s,%.10g,%.10g,%.10g\n", curve.steps[i],
                    curve.variant.c_str(), curve.iqm[i], curve.lo[i], curve.hi[i]);
      out << buf;
    }
  }
  std::sort(curves.begin(), curves.end(),
            [](const AggregateCurve& a, const AggregateCurve& b) { return a.variant < b.variant; });
  return curves;
}

int cmd_aggregate(const std::string& run_dir) {
  auto curves = aggregate_run_dir(run_dir);
  for (const auto& c : curves) {
    std::printf("[aggregate] %s: %zu points, final iqm %.3f\n", c.variant.c_str(),
                c.steps.size(), c.iqm.empty() ? 0.0 : c.iqm.back());
  }
  return 0;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

}  // namespace

std::string render_learning_curves_svg(const std::vector<AggregateCurve>& curves) {
  if (curves.empty()) throw std::invalid_argument("render: no curves");
  const double width = 640, height = 420;
  const double ml = 60, mr = 16, mt = 20, mb = 44;
  const double pw = width - ml - mr, ph = height - mt - mb;
  long max_step = 1;
  for (const auto& c : curves) {
    for (long s : c.steps) max_step = std::max(max_step, s);
  }
  // The pretraining evaluation sits left of the dashed online-start line.
  double x_min = -0.05 * static_cast<double>(max_step);
  auto xpos = [&](double step) {
    return ml + (step - x_min) / (static_cast<double>(max_step) - x_min) * pw;
  };
  auto ypos = [&](double v) { return mt + (1.0 - std::clamp(v, 0.0, 1.0)) * ph; };

  std::string svg;
  svg += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt(width) + "\" height=\"" +
         fmt(height) + "\" viewBox=\"0 0 " + fmt(width) + " " + fmt(height) + "\">\n";
  svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  // Axes and y grid.
  for (int i = 0; i <= 5; ++i) {
    double v = i / 5.0;
    svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(ypos(v)) + "\" x2=\"" + fmt(width - mr) +
           "\" y2=\"" + fmt(ypos(v)) + "\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n";
    svg += "<text x=\"" + fmt(ml - 8) + "\" y=\"" + fmt(ypos(v) + 4) +
           "\" text-anchor=\"end\" font-size=\"12\" font-family=\"sans-serif\">" + fmt(v) +
           "</text>\n";
  }
  svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(ml) + "\" y2=\"" +
         fmt(height - mb) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  svg += "<line x1=\"" + fmt(ml) + "\" y1=\"" + fmt(height - mb) + "\" x2=\"" + fmt(width - mr) +
         "\" y2=\"" + fmt(height - mb) + "\" stroke=\"black\" stroke-width=\"1\"/>\n";
  // Dashed separator between the BC evaluation point and online training.
  svg += "<line x1=\"" + fmt(xpos(0)) + "\" y1=\"" + fmt(mt) + "\" x2=\"" + fmt(xpos(0)) +
         "\" y2=\"" + fmt(height - mb) +
         "\" stroke=\"#555555\" stroke-width=\"1\" stroke-dasharray=\"6,4\"/>\n";
  // X labels.
  for (int i = 0; i <= 4; ++i) {
    double s = max_step * i / 4.0;
    svg += "<text x=\"" + fmt(xpos(s)) + "\" y=\"" + fmt(height - mb + 18) +
           "\" text-anchor=\"middle\" font-size=\"12\" font-family=\"sans-serif\">" + fmt(s) +
           "</text>\n";
  }
  svg += "<text x=\"" + fmt(ml + pw / 2) + "\" y=\"" + fmt(height - 8) +
         "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\">environment "
         "steps</text>\n";
  svg += "<text x=\"14\" y=\"" + fmt(mt + ph / 2) +
         "\" text-anchor=\"middle\" font-size=\"13\" font-family=\"sans-serif\" "
         "transform=\"rotate(-90 14 " +
         fmt(mt + ph / 2) + ")\">success rate</text>\n";

  for (std::size_t k = 0; k < curves.size(); ++k) {
    const AggregateCurve& c = curves[k];
    const char* color = kPalette[k % 6];
    // The pretraining point (step 0) is drawn left of the dashed line.
    auto draw_x = [&](std::size_t i) {
      return c.steps[i] == 0 ? xpos(x_min * 0.6) : xpos(static_cast<double>(c.steps[i]));
    };
    std::string band = "<path d=\"M";
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      band += fmt(draw_x(i)) + " " + fmt(ypos(c.hi[i])) + (i + 1 < c.steps.size() ? " L" : "");
    }
    for (std::size_t j = c.steps.size(); j-- > 0;) {
      band += " L" + fmt(draw_x(j)) + " " + fmt(ypos(c.lo[j]));
    }
    band += " Z\" fill=\"" + std::string(color) + "\" fill-opacity=\"0.18\" stroke=\"none\"/>\n";
    svg += band;
    std::string line = "<polyline fill=\"none\" stroke=\"" + std::string(color) +
                       "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < c.steps.size(); ++i) {
      line += fmt(draw_x(i)) + "," + fmt(ypos(c.iqm[i])) + " ";
    }
    line += "\"/>\n";
    svg += line;
    // Legend entry.
    double ly = mt + 16 + 16 * static_cast<double>(k);
    svg += "<line x1=\"" + fmt(ml + 10) + "\" y1=\"" + fmt(ly - 4) + "\" x2=\"" + fmt(ml + 34) +
           "\" y2=\"" + fmt(ly - 4) + "\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
    svg += "<text x=\"" + fmt(ml + 40) + "\" y=\"" + fmt(ly) +
           "\" font-size=\"12\" font-family=\"sans-serif\">" + c.variant + "</text>\n";
  }
  svg += "</svg>\n";
  return svg;
}

int cmd_plot(const std::string& run_dir, const std::string& out_svg) {
  std::vector<AggregateCurve> curves = aggregate_run_dir(run_dir);
  std::string svg = render_learning_curves_svg(curves);
  std::ofstream out(out_svg, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + out_svg);
  out << svg;
  std::printf("[plot] wrote %s (%zu curves)\n", out_svg.c_str(), curves.size());
  return 0;
}

int cmd_sweep_temperature(const ExperimentConfig& cfg) {
  if (cfg.temperature_sweep.empty()) {
    throw std::invalid_argument("sweep-temperature: set sweep_temperature = a, b, ... ");
  }
  int rc = 0;
  for (double alpha : cfg.temperature_sweep) {
    ExperimentConfig sub = cfg;
    sub.base.temperature = alpha;
    sub.out_dir = cfg.out_dir + "/alpha_" + fmt(alpha);
    std::printf("[sweep] temperature %.4g -> %s\n", alpha, sub.out_dir.c_str());
    rc |= cmd_train(sub);
  }
  return rc;
}

int cmd_sweep_demos(const ExperimentConfig& cfg) {
  if (cfg.demo_count_sweep.empty()) {
    throw std::invalid_argument("sweep-demos: set sweep_demos = n1, n2, ...");
  }
  int rc = 0;
  for (int n : cfg.demo_count_sweep) {
    ExperimentConfig sub = cfg;
    sub.out_dir = cfg.out_dir + "/demos_" + std::to_string(n);
    fs::create_directories(sub.out_dir);
    // Each demo budget gets its own deterministic demo file.
    sub.demo_path = sub.out_dir + "/" + cfg.env_id + "_demos_" + std::to_string(n) + ".txt";
    if (!fs::exists(sub.demo_path)) {
      cmd_gen_demos(cfg.env_id, static_cast<std::size_t>(n), 9000 + static_cast<std::uint64_t>(n),
                    sub.demo_path);
    }
    std::printf("[sweep] %d demos -> %s\n", n, sub.out_dir.c_str());
    rc |= cmd_train(sub);
  }
  return rc;
}

}  // namespace xqcfd
