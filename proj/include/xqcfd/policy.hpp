#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xqcfd/nn.hpp"
#include "xqcfd/rng.hpp"
#include "xqcfd/tensor.hpp"

namespace xqcfd {

inline constexpr char kPolicyMagic[4] = {'X', 'Q', 'C', 'P'};

// Diagonal latent Gaussian over pre-squash actions z; the emitted action is
// tanh(z), so actions live in (-1, 1) componentwise.
struct ActionDistribution {
  std::vector<double> mean;
  std::vector<double> var;

  std::size_t dims() const { return mean.size(); }
  std::vector<double> sample_latent(Rng& rng) const;
  // Log density of the squashed action expressed through its latent z:
  // Gaussian log pdf of z minus sum_d log(1 - tanh(z_d)^2).
  double log_prob_latent(const std::vector<double>& z) const;
  double kl_to(const ActionDistribution& prior) const;
};

// log(1 - tanh(z)^2) in the overflow-safe form 2*(log 2 - z - softplus(-2z)).
double tanh_log_det(double z);

std::vector<double> tanh_all(const std::vector<double>& z);

// Fixed random projection onto paired cos/sin features:
// phi = sqrt(2/F) * interleave(cos(V h), sin(V h)), so |phi|^2 = 1 exactly.
struct RffLayer {
  Tensor projection;  // [F/2, trunk_dim], N(0,1) entries, never trained
  std::size_t feature_dim = 0;

  RffLayer() = default;
  RffLayer(std::size_t trunk_dim, std::size_t feature_dim, Rng& rng);
  Tensor features(Tape& t, const Tensor& trunk_out) const;
};

enum class PolicyKind { kHetStat, kMlp };

struct PolicyConfig {
  std::size_t obs_dim = 4;
  std::size_t act_dim = 2;
  std::size_t hidden = 64;
  std::size_t rff_dim = 128;  // feature dim F of the stationary layer (even)
  PolicyKind kind = PolicyKind::kHetStat;
  bool bn_wn = true;  // batch/weight norm in the trunk
  double init_log_std = -0.6931471805599453;  // log(0.5)
  double logstd_min = -10.0;                  // mlp head clip
  double logstd_max = 2.0;
  double bn_momentum = 0.01;
  double bn_epsilon = 1e-5;
};

// Batched distribution parameters living on the tape.
struct DistBatch {
  Tensor mean;  // [B, A]
  Tensor var;   // [B, A], strictly positive
};

struct SquashedSample {
  Tensor latent;  // z = mean + sqrt(var) * noise
  Tensor action;  // tanh(z)
};

class Policy {
 public:
  virtual ~Policy() = default;

  // The variance path always consumes stop-gradient features, so variance
  // gradients reach only the variance parameters.
  virtual DistBatch predict(Tape& t, const Tensor& states, bool train_params, NormMode mode) = 0;
  virtual std::vector<Param*> params() = 0;
  // Parameter values plus non-trained state (projections, BN statistics).
  virtual std::vector<ArrayRef> arrays() = 0;
  virtual const PolicyConfig& config() const = 0;

  std::unique_ptr<Policy> clone();

  ActionDistribution predict_one(const std::vector<double>& state, NormMode mode = NormMode::kEval);
  std::vector<double> deterministic_action(const std::vector<double>& state);
  // Stochastic squashed action under eval-mode normalization (environment
  // interaction path).
  std::vector<double> sample_action(const std::vector<double>& state, Rng& rng);

  void save(const std::string& path);
  void load(const std::string& path);
};

std::unique_ptr<Policy> make_policy(const PolicyConfig& cfg, Rng& rng);

// Latent Gaussian with stationary random Fourier features. Predictive
// variance per action dim is sum_p exp(2 rho_{d,p}) (cos_p^2 + sin_p^2) (2/F),
// which pair-tying makes independent of the state.
class HetStatPolicy final : public Policy {
 public:
  HetStatPolicy(const PolicyConfig& cfg, Rng& rng);

  DistBatch predict(Tape& t, const Tensor& states, bool train_params, NormMode mode) override;
  std::vector<Param*> params() override;
  std::vector<ArrayRef> arrays() override;
  const PolicyConfig& config() const override { return cfg_; }

 private:
  PolicyConfig cfg_;
  Mlp trunk_;
  RffLayer rff_;
  Param mu_;   // [A, F]
  Param rho_;  // [A, F/2], tied across each cos/sin pair
};

// Plain tanh-Gaussian baseline: mean and clipped log-std heads on a shared
// trunk.
class MlpPolicy final : public Policy {
 public:
  MlpPolicy(const PolicyConfig& cfg, Rng& rng);

  DistBatch predict(Tape& t, const Tensor& states, bool train_params, NormMode mode) override;
  std::vector<Param*> params() override;
  std::vector<ArrayRef> arrays() override;
  const PolicyConfig& config() const override { return cfg_; }

 private:
  PolicyConfig cfg_;
  Mlp trunk_;
  LinearLayer mean_head_;
  LinearLayer logstd_head_;
};

// Reparameterized sample; noise is a constant [B, A] standard-normal draw.
SquashedSample sample_squashed(Tape& t, const DistBatch& dist, const Tensor& noise);

// Sum over the batch of log pi(a|s) evaluated at the given latents,
// including the tanh log-det correction.
Tensor log_prob_sum(Tape& t, const DistBatch& dist, const Tensor& latent);

// Sum over the batch of the closed-form diagonal-Gaussian KL(q || p); equals
// the KL between the squashed distributions by bijection invariance.
Tensor kl_sum(Tape& t, const DistBatch& q, const DistBatch& p);

// Fold of all parameter/state arrays, for immutability assertions.
std::uint64_t arrays_checksum(const std::vector<ArrayRef>& arrays);

}  // namespace xqcfd
