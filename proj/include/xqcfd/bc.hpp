#pragma once

#include <memory>
#include <vector>

#include "xqcfd/critic.hpp"
#include "xqcfd/policy.hpp"
#include "xqcfd/replay.hpp"
#include "xqcfd/rng.hpp"

namespace xqcfd {

struct BcConfig {
  int epochs = 200;
  std::size_t batch_size = 256;
  double learning_rate = 3e-4;
  int critic_pretrain_steps = 5000;
};

// Margin of the demo-action clip before atanh. Saturation amplifies action
// noise by 1/(1 - a^2) in latent space, so a tiny margin inflates the BC
// prior's variance and weakens the KL anchor.
double demo_action_clip();
void set_demo_action_clip(double margin);

// Heteroscedastic regression loss with a faithful split: the mean trains on
// squared error in action space, the variance head trains on the latent
// negative log-likelihood with the mean and features stopped. The tanh
// log-det correction depends only on the data, so it enters as a constant.
struct FaithfulLoss {
  Tensor loss;  // scalar on tape: mse + nllh
  Tensor mse;   // scalar on tape
  Tensor nllh;  // scalar on tape (includes the log-det constant)
  double total_value = 0.0;
  double mse_value = 0.0;
  double nllh_value = 0.0;
};

// Demo actions are clipped to +-(1 - 1e-6) before atanh. Actions outside
// [-1, 1] raise.
FaithfulLoss faithful_loss(Tape& t, Policy& policy, const Tensor& states, const Tensor& actions);

struct PretrainPolicyResult {
  std::unique_ptr<Policy> prior;    // frozen deep copy of the trained policy
  std::vector<double> epoch_loss;   // mean faithful loss per epoch
};

// Minibatch Adam on the faithful loss over the demo set; returns the frozen
// copy that serves as the KL prior.
PretrainPolicyResult pretrain_policy(Policy& policy, const DemoDataset& demos,
                                     const BcConfig& cfg, Rng& rng);

// Critic pretraining on demos only, with a' drawn from the given (already
// pretrained) policy; polyak target update after every step.
std::vector<double> pretrain_critic(CriticPair& pair, const DemoDataset& demos, Policy& policy,
                                    double gamma, int steps, std::size_t batch_size,
                                    double learning_rate, const RewardNormalizer& norm, Rng& rng);

}  // namespace xqcfd
