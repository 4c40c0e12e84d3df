#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "xqcfd/bc.hpp"
#include "xqcfd/critic.hpp"
#include "xqcfd/envs.hpp"
#include "xqcfd/policy.hpp"
#include "xqcfd/replay.hpp"

namespace xqcfd {

enum class Variant { kXqcfd, kXqcBc, kXqcOd, kXqcScratch, kMaxEntSac };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

// What a variant does by default; use_kl / auto_temperature can be forced
// through the config overrides.
struct VariantTraits {
  bool pretrain_policy = false;
  bool pretrain_critic = false;
  bool use_demos = false;  // symmetric sampling from B and D
  bool use_kl = false;     // KL to the frozen BC prior vs max-entropy term
  bool auto_temperature = false;
  long warmup_steps = 0;  // uniform-random data collection before updates
};

VariantTraits default_traits(Variant v);

struct AgentConfig {
  std::string env_id = kPointReachId;
  Variant variant = Variant::kXqcfd;
  std::uint64_t seed = 0;

  double temperature = 0.1;  // alpha (initial alpha when auto-tuned)
  std::optional<bool> use_kl;
  std::optional<bool> auto_temperature;

  int utd_ratio = 2;
  int policy_delay = 3;
  double polyak_tau = 0.005;
  double learning_rate = 3e-4;
  double alpha_learning_rate = 1e-3;
  std::size_t hidden = 64;
  std::size_t rff_dim = 128;
  std::size_t batch_size = 256;
  long total_steps = 20000;
  long eval_every = 1000;
  int eval_episodes = 50;
  int atom_count = 101;
  double v_max = 0.0;  // atom support ceiling; 0 selects the return bound
  // Initial downward logit ramp of the critic head. Negative selects the
  // variant default: pretrained variants start pessimistic about unexplored
  // actions so nothing outbids the demonstrated returns, while from-scratch
  // variants keep the flat mid-support init whose optimism drives their
  // exploration.
  double init_logit_ramp = -1.0;
  PolicyKind policy_kind = PolicyKind::kHetStat;
  bool bn_wn_actor = true;
  bool use_target_network = true;
  long warmup_steps = 1000;  // applies to variants without BC pretraining
  std::size_t buffer_capacity = 1000000;

  int bc_epochs = 200;
  int critic_pretrain_steps = 5000;
  double bc_learning_rate = 1e-3;

  VariantTraits resolved_traits() const;
};

struct StepMetrics {
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double kl_to_prior = 0.0;
  double entropy = 0.0;
  double temperature = 0.0;
  std::size_t buffer_size = 0;
  int critic_updates = 0;
  int actor_updates = 0;
};

struct EvalRow {
  long step = 0;
  double success_rate = 0.0;
  double actor_loss = 0.0;
  double critic_loss = 0.0;
  double kl_to_prior = 0.0;
  double temperature = 0.0;
  std::size_t buffer_size = 0;
};

struct MetricsLog {
  std::vector<EvalRow> rows;
  // Schema: step,variant,seed,success_rate,actor_loss,critic_loss,
  //         kl_to_prior,temperature,buffer_size
  void write_csv(std::ostream& out, const AgentConfig& cfg) const;
};

// Deterministic-policy success rate over fresh episodes.
double eval_policy(Policy& policy, const std::string& env_id, int episodes, Rng& rng);
// Same protocol for an arbitrary controller; episode_start marks resets.
double eval_rollouts(const std::function<std::vector<double>(const std::vector<double>& obs,
                                                             bool episode_start)>& act,
                     const std::string& env_id, int episodes, Rng& rng);

// Full training state for one run: policy, frozen prior, critic pair, online
// buffer, demo handle and counters.
class XqcfdAgent {
 public:
  XqcfdAgent(const AgentConfig& cfg, const DemoDataset* demos);

  // Per-variant BC and critic pretraining (Algorithm 1 lines 1-2).
  void pretrain();

  // One environment interaction followed by utd_ratio critic updates and a
  // delayed actor update (Algorithm 1 loop body).
  StepMetrics train_step();

  double evaluate(long at_step);

  // pretrain + total_steps train_steps with periodic evaluation rows.
  MetricsLog run();

  Policy& policy() { return *policy_; }
  const Policy* prior() const { return prior_.get(); }
  Policy* prior() { return prior_.get(); }
  CriticPair& critics() { return critics_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  const AgentConfig& config() const { return cfg_; }
  const VariantTraits& traits() const { return traits_; }
  double gamma() const { return gamma_; }
  double temperature() const;
  long steps_done() const { return step_; }
  Rng& update_rng() { return update_rng_; }

  void save_checkpoints(const std::string& path_prefix);

  // Exposed for tests: one actor update on the given minibatch.
  double actor_update(const Batch& batch, StepMetrics* metrics);

 private:
  Batch next_batch();
  std::vector<double> behavior_action(const std::vector<double>& obs);

  AgentConfig cfg_;
  VariantTraits traits_;
  PointEnv env_;
  std::unique_ptr<Policy> policy_;
  std::unique_ptr<Policy> prior_;
  CriticPair critics_;
  ReplayBuffer buffer_;
  const DemoDataset* demos_;
  RewardNormalizer norm_;
  double gamma_;
  Rng env_rng_;
  Rng update_rng_;
  Tape tape_;
  Param log_alpha_;
  AdamConfig adam_;
  AdamConfig alpha_adam_;
  std::vector<double> obs_;
  bool episode_done_ = true;
  long step_ = 0;
  long critic_update_count_ = 0;
};

struct MonotonicCheck {
  double pseudo_posterior_value = 0.0;
  double prior_value = 0.0;
  double improvement() const { return pseudo_posterior_value - prior_value; }
  bool improved(double tol = 1e-12) const { return improvement() >= -tol; }
};

// Discretizes a 1-D action space on [-1, 1], forms pi ~ exp(Q/alpha) * prior
// on the grid and compares the two expected values (property-test helper,
// not used in training).
MonotonicCheck monotonic_improvement_check(const std::function<double(double)>& q_fn,
                                           const std::function<double(double)>& prior_density,
                                           double alpha, int grid_size);

}  // namespace xqcfd
