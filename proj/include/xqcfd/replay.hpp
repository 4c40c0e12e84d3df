#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xqcfd/rng.hpp"

namespace xqcfd {

struct Transition {
  std::vector<double> state;
  std::vector<double> action;  // components in [-1, 1]
  double reward = 0.0;         // raw environment reward
  std::vector<double> next_state;
  bool done = false;
};

// Fixed-capacity ring; oldest entries are overwritten first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 1000000);

  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& at(std::size_t i) const { return items_[i]; }

 private:
  std::size_t capacity_;
  std::size_t obs_dim_ = 0, act_dim_ = 0;
  std::vector<Transition> items_;
  std::size_t cursor_ = 0;
};

// Immutable expert set, grouped by trajectory; every trajectory ends done.
class DemoDataset {
 public:
  DemoDataset() = default;
  DemoDataset(std::string env_id, std::size_t obs_dim, std::size_t act_dim)
      : env_id_(std::move(env_id)), obs_dim_(obs_dim), act_dim_(act_dim) {}

  void add_trajectory(const std::vector<Transition>& trajectory);

  std::size_t size() const { return items_.size(); }
  const Transition& at(std::size_t i) const { return items_[i]; }
  int traj_id(std::size_t i) const { return traj_ids_[i]; }
  std::size_t trajectory_count() const { return trajectories_; }
  const std::string& env_id() const { return env_id_; }
  std::size_t obs_dim() const { return obs_dim_; }
  std::size_t act_dim() const { return act_dim_; }

  // Newline-delimited text format. Header names the environment and dims;
  // each record is `traj_id [s,..] [a,..] r [s',..] done` with values printed
  // to 17 significant digits so fp64 round-trips exactly.
  void save(const std::string& path) const;
  static DemoDataset load(const std::string& path);

  std::uint64_t checksum() const;

 private:
  std::string env_id_;
  std::size_t obs_dim_ = 0, act_dim_ = 0;
  std::vector<Transition> items_;
  std::vector<int> traj_ids_;
  std::size_t trajectories_ = 0;
};

// Affine map fitted on demo rewards so they land in [0, 1]. Online rewards
// above the demo maximum map above 1 and are handled by the critic's support
// clipping.
struct RewardNormalizer {
  double scale = 1.0;
  double shift = 0.0;
  double operator()(double r) const { return r * scale + shift; }
};

RewardNormalizer fit_normalizer(const DemoDataset& demos);

// Flat minibatch (struct of arrays, row-major).
struct Batch {
  std::size_t n = 0, obs_dim = 0, act_dim = 0;
  std::vector<double> states;
  std::vector<double> actions;
  std::vector<double> rewards;  // normalized
  std::vector<double> next_states;
  std::vector<unsigned char> dones;
};

// Half the minibatch uniformly (with replacement) from the online buffer,
// half from the demos, in that order; rewards normalized on the way out.
Batch sample_symmetric(const ReplayBuffer& buffer, const DemoDataset& demos,
                       std::size_t batch_size, const RewardNormalizer& norm, Rng& rng);
Batch sample_from_buffer(const ReplayBuffer& buffer, std::size_t batch_size,
                         const RewardNormalizer& norm, Rng& rng);
Batch sample_from_demos(const DemoDataset& demos, std::size_t batch_size,
                        const RewardNormalizer& norm, Rng& rng);

}  // namespace xqcfd
