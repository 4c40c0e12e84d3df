#pragma once

#include <array>
#include <string>
#include <vector>

#include "xqcfd/replay.hpp"
#include "xqcfd/rng.hpp"

namespace xqcfd {

inline constexpr char kPointReachId[] = "point-reach-v0";
inline constexpr char kObstructedReachId[] = "obstructed-reach-v0";

struct EnvSpec {
  std::string env_id;
  std::size_t obs_dim = 4;  // [position, goal]
  std::size_t act_dim = 2;
  int horizon = 100;
  double goal_radius = 0.1;
  double step_scale = 0.05;
};

// Sparse-reward point navigation in the unit box. Reward 1 exactly when the
// position enters the goal ball; episodes end on success or at the horizon.
// The obstructed variant adds an impassable wall segment between start and
// goal so undirected exploration almost never succeeds.
class PointEnv {
 public:
  static constexpr double kWallY = 0.2;
  static constexpr double kWallXMin = -0.3;
  static constexpr double kWallXMax = 0.3;
  static constexpr double kWallContactMargin = 1e-3;
  static constexpr double kGoalX = 0.8;
  static constexpr double kGoalY = 0.8;

  static PointEnv make(const std::string& env_id);

  const EnvSpec& spec() const { return spec_; }
  bool has_wall() const { return wall_; }

  std::vector<double> reset(Rng& rng);

  struct StepResult {
    std::vector<double> observation;
    double reward = 0.0;
    bool done = false;
  };
  StepResult step(const std::vector<double>& action);

  const std::array<double, 2>& position() const { return pos_; }
  int steps_taken() const { return t_; }

  // Test hook: places the agent mid-episode.
  void set_position(const std::array<double, 2>& p) { pos_ = p; }

 private:
  PointEnv(EnvSpec spec, bool wall) : spec_(std::move(spec)), wall_(wall) {}
  std::vector<double> observation() const;

  EnvSpec spec_;
  bool wall_ = false;
  std::array<double, 2> pos_{0.0, 0.0};
  int t_ = 0;
  bool episode_over_ = true;
};

// Proportional controller toward per-environment waypoints, with clipped
// Gaussian action noise. The wall course routes through a corner waypoint.
class ScriptedExpert {
 public:
  static constexpr double kGain = 2.0;
  static constexpr double kWaypointRadius = 0.15;

  explicit ScriptedExpert(const std::string& env_id, double noise_std = 0.05);

  void reset() { waypoint_ = 0; }
  std::vector<double> action(const std::vector<double>& observation, Rng& rng);
  std::size_t current_waypoint() const { return waypoint_; }

 private:
  std::vector<std::array<double, 2>> waypoints_;
  std::size_t waypoint_ = 0;
  double noise_std_;
};

// Runs expert episodes and keeps the first n successful trajectories.
// Raises if the expert fails 10n episodes in a row (misconfiguration).
// attempts_out, when given, receives the total number of episodes played.
DemoDataset generate_demos(PointEnv& env, ScriptedExpert& expert, std::size_t n, Rng& rng,
                           std::size_t* attempts_out = nullptr);

// gamma = clip((T/5 - 1) / (T/5), 0.95, 0.995)
double discount_for_horizon(int horizon);

}  // namespace xqcfd
