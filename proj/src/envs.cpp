#include "xqcfd/envs.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xqcfd {

PointEnv PointEnv::make(const std::string& env_id) {
  EnvSpec spec;
  spec.env_id = env_id;
  if (env_id == kPointReachId) return PointEnv(spec, false);
  if (env_id == kObstructedReachId) return PointEnv(spec, true);
  throw std::invalid_argument("unknown environment id: " + env_id);
}

std::vector<double> PointEnv::observation() const {
  return {pos_[0], pos_[1], kGoalX, kGoalY};
}

std::vector<double> PointEnv::reset(Rng& rng) {
  pos_[0] = rng.uniform(-1.0, -0.6);
  pos_[1] = rng.uniform(-1.0, -0.6);
  t_ = 0;
  episode_over_ = false;
  return observation();
}

PointEnv::StepResult PointEnv::step(const std::vector<double>& action) {
  if (episode_over_) throw std::logic_error("step called on a finished episode; reset first");
  if (action.size() != spec_.act_dim) throw std::invalid_argument("action dimension mismatch");
  for (double a : action) {
    if (!(a >= -1.0 - 1e-12 && a <= 1.0 + 1e-12)) {
      throw std::invalid_argument("action outside [-1, 1]");
    }
  }
  double tx = std::clamp(pos_[0] + spec_.step_scale * action[0], -1.0, 1.0);
  double ty = std::clamp(pos_[1] + spec_.step_scale * action[1], -1.0, 1.0);
  if (wall_) {
    double y0 = pos_[1], y1 = ty;
    bool crosses = (y0 - kWallY) * (y1 - kWallY) < 0.0 || (y1 == kWallY && y0 != kWallY);
    if (crosses) {
      double frac = (kWallY - y0) / (y1 - y0);
      double cx = pos_[0] + frac * (tx - pos_[0]);
      if (cx >= kWallXMin && cx <= kWallXMax) {
        // Truncate the motion at contact, a hair on the approach side.
        double dir = y1 > y0 ? 1.0 : -1.0;
        tx = cx;
        ty = kWallY - dir * kWallContactMargin;
      }
    }
  }
  pos_[0] = tx;
  pos_[1] = ty;
  ++t_;
  double dx = pos_[0] - kGoalX, dy = pos_[1] - kGoalY;
  double reward = std::sqrt(dx * dx + dy * dy) < spec_.goal_radius ? 1.0 : 0.0;
  bool done = reward == 1.0 || t_ >= spec_.horizon;
  episode_over_ = done;
  return {observation(), reward, done};
}

ScriptedExpert::ScriptedExpert(const std::string& env_id, double noise_std)
    : noise_std_(noise_std) {
  if (env_id == kObstructedReachId) {
    waypoints_.push_back({0.45, PointEnv::kWallY});
  } else if (env_id != kPointReachId) {
    throw std::invalid_argument("unknown environment id: " + env_id);
  }
  waypoints_.push_back({PointEnv::kGoalX, PointEnv::kGoalY});
}

std::vector<double> ScriptedExpert::action(const std::vector<double>& observation, Rng& rng) {
  double px = observation[0], py = observation[1];
  const auto& wp = waypoints_[waypoint_];
  double dx = wp[0] - px, dy = wp[1] - py;
  if (waypoint_ + 1 < waypoints_.size() && std::sqrt(dx * dx + dy * dy) < kWaypointRadius) {
    ++waypoint_;
    const auto& next = waypoints_[waypoint_];
    dx = next[0] - px;
    dy = next[1] - py;
  }
  double ax = kGain * dx + noise_std_ * rng.normal();
  double ay = kGain * dy + noise_std_ * rng.normal();
  return {std::clamp(ax, -1.0, 1.0), std::clamp(ay, -1.0, 1.0)};
}

DemoDataset generate_demos(PointEnv& env, ScriptedExpert& expert, std::size_t n, Rng& rng,
                           std::size_t* attempts_out) {
  if (n == 0) throw std::invalid_argument("generate_demos: n must be positive");
  DemoDataset demos(env.spec().env_id, env.spec().obs_dim, env.spec().act_dim);
  std::size_t successes = 0, consecutive_failures = 0, attempts = 0;
  while (successes < n) {
    ++attempts;
    std::vector<Transition> traj;
    std::vector<double> obs = env.reset(rng);
    expert.reset();
    bool success = false;
    while (true) {
      Transition t;
      t.state = obs;
      t.action = expert.action(obs, rng);
      auto result = env.step(t.action);
      t.reward = result.reward;
      t.next_state = result.observation;
      t.done = result.done;
      obs = result.observation;
      traj.push_back(std::move(t));
      if (result.done) {
        success = result.reward == 1.0;
        break;
      }
    }
    if (success) {
      demos.add_trajectory(traj);
      ++successes;
      consecutive_failures = 0;
    } else if (++consecutive_failures > 10 * n) {
      throw std::runtime_error("generate_demos: expert failed too many episodes in a row");
    }
  }
  if (attempts_out != nullptr) *attempts_out = attempts;
  return demos;
}

double discount_for_horizon(int horizon) {
  if (horizon < 1) throw std::invalid_argument("discount_for_horizon: horizon must be >= 1");
  double x = static_cast<double>(horizon) / 5.0;
  return std::clamp((x - 1.0) / x, 0.95, 0.995);
}

}  // namespace xqcfd
