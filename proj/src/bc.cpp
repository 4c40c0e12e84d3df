#include "xqcfd/bc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace xqcfd {

namespace op = ops;

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
double g_action_clip_margin = 1e-2;
}  // namespace

double demo_action_clip() { return 1.0 - g_action_clip_margin; }
void set_demo_action_clip(double margin) { g_action_clip_margin = margin; }

FaithfulLoss faithful_loss(Tape& t, Policy& policy, const Tensor& states, const Tensor& actions) {
  const std::size_t batch = states.rows();
  const std::size_t adim = actions.cols();
  double inv_b = 1.0 / static_cast<double>(batch);

  // Clip to the open interval and precompute latents; both are data.
  std::vector<double> clipped(actions.data(), actions.data() + actions.size());
  std::vector<double> latent(actions.size());
  double log_det_total = 0.0;
  for (std::size_t i = 0; i < clipped.size(); ++i) {
    if (!(clipped[i] >= -1.0 && clipped[i] <= 1.0)) {
      throw std::invalid_argument("faithful_loss: action outside [-1, 1]");
    }
    clipped[i] = std::clamp(clipped[i], -demo_action_clip(), demo_action_clip());
    latent[i] = std::atanh(clipped[i]);
    log_det_total += tanh_log_det(latent[i]);
  }
  Tensor a_const = Tensor::mat(batch, adim, std::move(clipped));
  Tensor z_const = Tensor::mat(batch, adim, std::move(latent));

  DistBatch dist = policy.predict(t, states, true, NormMode::kTrain);

  Tensor diff = op::sub(t, a_const, op::tanh(t, dist.mean));
  Tensor mse = op::scale(t, op::sum(t, op::square(t, diff)), inv_b);

  // NLLH on the stopped mean: gradients reach only the variance parameters.
  Tensor mean_sg = op::stop_gradient(dist.mean);
  Tensor resid = op::sub(t, z_const, mean_sg);
  Tensor quad = op::sum(t, op::div(t, op::square(t, resid), op::scale(t, dist.var, 2.0)));
  Tensor logvar = op::scale(t, op::sum(t, op::log(t, dist.var)), 0.5);
  Tensor nll = op::add(t, quad, logvar);
  nll = op::add_const(t, nll, 0.5 * kLog2Pi * static_cast<double>(batch * adim));
  // - log |d tanh / dz| summed over the batch, a per-sample constant.
  Tensor nllh = op::scale(t, op::add_const(t, nll, -log_det_total), inv_b);

  Tensor loss = op::add(t, mse, nllh);
  return {loss, mse, nllh, loss.scalar_value(), mse.scalar_value(), nllh.scalar_value()};
}

PretrainPolicyResult pretrain_policy(Policy& policy, const DemoDataset& demos,
                                     const BcConfig& cfg, Rng& rng) {
  if (demos.size() == 0) throw std::invalid_argument("pretrain_policy: empty demos");
  if (cfg.epochs < 0 || cfg.batch_size == 0) {
    throw std::invalid_argument("pretrain_policy: invalid budget");
  }
  const std::size_t obs = demos.obs_dim(), act = demos.act_dim();
  AdamConfig adam;
  adam.lr = cfg.learning_rate;
  auto params = policy.params();

  PretrainPolicyResult result;
  std::vector<std::size_t> order(demos.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Tape t;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Fisher-Yates shuffle driven by the run rng.
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[rng.uniform_index(i)]);
    }
    double epoch_loss = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      std::size_t end = std::min(start + cfg.batch_size, order.size());
      if (end - start < 2) continue;  // train-mode batch norm needs >= 2 rows
      std::size_t n = end - start;
      std::vector<double> s(n * obs), a(n * act);
      for (std::size_t i = 0; i < n; ++i) {
        const Transition& tr = demos.at(order[start + i]);
        std::copy(tr.state.begin(), tr.state.end(), s.begin() + i * obs);
        std::copy(tr.action.begin(), tr.action.end(), a.begin() + i * act);
      }
      t.reset();
      FaithfulLoss fl =
          faithful_loss(t, policy, Tensor::mat(n, obs, std::move(s)), Tensor::mat(n, act, std::move(a)));
      t.backward(fl.loss);
      adam_step(t, params, adam);
      epoch_loss += fl.total_value;
      ++batches;
    }
    result.epoch_loss.push_back(batches > 0 ? epoch_loss / static_cast<double>(batches) : 0.0);
  }
  result.prior = policy.clone();
  return result;
}

std::vector<double> pretrain_critic(CriticPair& pair, const DemoDataset& demos, Policy& policy,
                                    double gamma, int steps, std::size_t batch_size,
                                    double learning_rate, const RewardNormalizer& norm, Rng& rng) {
  if (steps < 0) throw std::invalid_argument("pretrain_critic: negative steps");
  AdamConfig adam;
  adam.lr = learning_rate;
  auto params = pair.online_params();
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(std::max(steps, 0)));
  Tape t;
  for (int i = 0; i < steps; ++i) {
    Batch batch = sample_from_demos(demos, batch_size, norm, rng);
    t.reset();
    auto res = critic_loss(t, pair, batch, policy, gamma, rng);
    t.backward(res.loss);
    adam_step(t, params, adam);
    pair.target_update();
    losses.push_back(res.value);
  }
  return losses;
}

}  // namespace xqcfd
