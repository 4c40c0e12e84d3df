#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xqcfd/nn.hpp"
#include "xqcfd/policy.hpp"
#include "xqcfd/replay.hpp"
#include "xqcfd/rng.hpp"
#include "xqcfd/tensor.hpp"

namespace xqcfd {

inline constexpr char kCriticMagic[4] = {'X', 'Q', 'C', 'C'};

// Fixed, uniformly spaced return atoms z_1..z_N.
struct AtomSupport {
  double v_min = 0.0;
  double v_max = 1.0;
  int count = 101;
  double delta = 0.0;
  std::vector<double> atoms;

  static AtomSupport make(double v_min, double v_max, int count);
};

// Projects the Bellman target r + gamma * Z' onto the fixed atoms by linear
// interpolation with clipping; terminal transitions project r alone. Output
// is a probability vector over the atoms.
void project_target(const AtomSupport& support, double r, bool done, double gamma,
                    std::span<const double> next_probs, std::span<double> out);

double expected_value(std::span<const double> probs, const AtomSupport& support);

// Index of the pessimistic distribution (smaller expected value; ties to a).
int aggregate_pick(std::span<const double> probs_a, std::span<const double> probs_b,
                   const AtomSupport& support);

struct CriticConfig {
  std::size_t obs_dim = 4;
  std::size_t act_dim = 2;
  std::size_t hidden = 64;
  int atom_count = 101;
  double v_min = 0.0;
  double v_max = 20.0;  // r_max / (1 - gamma) with normalized rewards
  double polyak_tau = 0.005;
  bool use_target_network = true;
  // Depth of the initial downward logit ramp across the support; untrained
  // inputs then read as low value instead of mid-support.
  double init_logit_ramp = 10.0;
  double bn_momentum = 0.01;
  double bn_epsilon = 1e-5;
};

// MLP over concat(state, action) emitting per-atom logits, with batch norm
// after each hidden linear layer and weight-normalized matrices throughout.
class CategoricalCritic {
 public:
  CategoricalCritic() = default;
  CategoricalCritic(const std::string& name, const CriticConfig& cfg, Rng& rng);

  Tensor logits(Tape& t, const Tensor& state_action, bool train_params, NormMode mode);
  // Eval-mode per-atom probabilities as plain values (no recording).
  std::vector<double> probabilities(const Tensor& state_action);

  std::vector<Param*> params();
  std::vector<ArrayRef> arrays(const std::string& prefix);

 private:
  Mlp net_;
};

// Two online critics and their polyak target copies. Target parameters and
// batch-norm running statistics follow target <- (1-tau) target + tau online.
class CriticPair {
 public:
  CriticPair(const CriticConfig& cfg, Rng& rng);

  const CriticConfig& config() const { return cfg_; }
  const AtomSupport& support() const { return support_; }

  CategoricalCritic& online_a() { return a_; }
  CategoricalCritic& online_b() { return b_; }
  CategoricalCritic& target_a() { return cfg_.use_target_network ? ta_ : a_; }
  CategoricalCritic& target_b() { return cfg_.use_target_network ? tb_ : b_; }

  void target_update();
  void target_update(double tau);

  std::vector<Param*> online_params();
  std::vector<ArrayRef> arrays();  // online + targets, for checkpoints

  void save(const std::string& path);
  void load(const std::string& path);

  // Joint-batch critic pass: the online critics run in train mode on the
  // concatenated [(s,a); (s',a')] rows so batch statistics cover both
  // marginals; only the first B rows' log-probabilities feed the loss. The
  // next-state distribution comes from the target networks in eval mode.
  struct JointForward {
    Tensor logp_a;                     // [B, N] on tape
    Tensor logp_b;                     // [B, N] on tape
    std::vector<double> target_probs;  // [B*N] aggregated pessimistic rows
  };
  JointForward forward_joint(Tape& t, const Tensor& states, const Tensor& actions,
                             const Tensor& next_states, const Tensor& next_actions);

 private:
  CriticConfig cfg_;
  AtomSupport support_;
  CategoricalCritic a_, b_, ta_, tb_;
  std::vector<ArrayRef> online_refs_, target_refs_;
};

struct CriticLossResult {
  Tensor loss;          // scalar on tape: cross-entropy summed over both critics
  double value = 0.0;   // loss value
  double mean_q = 0.0;  // mean expected value of the aggregated target
};

// Cross-entropy of both online critics against the projected target built
// from a' ~ policy(s') and the pessimistic aggregate of the target pair.
CriticLossResult critic_loss(Tape& t, CriticPair& pair, const Batch& batch, Policy& policy,
                             double gamma, Rng& rng);

}  // namespace xqcfd
