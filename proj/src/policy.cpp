#include "xqcfd/policy.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace xqcfd {

namespace op = ops;

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLog2 = 0.69314718055994530941723212145818;
}  // namespace

double tanh_log_det(double z) {
  return 2.0 * (kLog2 - z - (std::fmax(-2.0 * z, 0.0) + std::log1p(std::exp(-std::fabs(2.0 * z)))));
}

std::vector<double> tanh_all(const std::vector<double>& z) {
  std::vector<double> a(z.size());
  for (std::size_t i = 0; i < z.size(); ++i) a[i] = std::tanh(z[i]);
  return a;
}

std::vector<double> ActionDistribution::sample_latent(Rng& rng) const {
  std::vector<double> z(mean.size());
  for (std::size_t i = 0; i < z.size(); ++i) {
    z[i] = mean[i] + std::sqrt(var[i]) * rng.normal();
  }
  return z;
}

double ActionDistribution::log_prob_latent(const std::vector<double>& z) const {
  double lp = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    double d = z[i] - mean[i];
    lp += -0.5 * (kLog2Pi + std::log(var[i])) - d * d / (2.0 * var[i]);
    lp -= tanh_log_det(z[i]);
  }
  return lp;
}

double ActionDistribution::kl_to(const ActionDistribution& prior) const {
  if (prior.mean.size() != mean.size()) {
    throw std::invalid_argument("kl_to: action dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < mean.size(); ++i) {
    double dm = mean[i] - prior.mean[i];
    kl += 0.5 * std::log(prior.var[i] / var[i]) + (var[i] + dm * dm) / (2.0 * prior.var[i]) - 0.5;
  }
  return kl;
}

RffLayer::RffLayer(std::size_t trunk_dim, std::size_t feature_dim_, Rng& rng)
    : feature_dim(feature_dim_) {
  if (feature_dim % 2 != 0 || feature_dim == 0) {
    throw std::invalid_argument("RffLayer: feature_dim must be positive and even");
  }
  std::vector<double> v(feature_dim / 2 * trunk_dim);
  for (double& x : v) x = rng.normal();
  projection = Tensor::mat(feature_dim / 2, trunk_dim, std::move(v));
}

Tensor RffLayer::features(Tape& t, const Tensor& trunk_out) const {
  Tensor u = op::matmul_nt(t, trunk_out, projection);
  Tensor phi = op::interleave_cols(t, op::cos(t, u), op::sin(t, u));
  return op::scale(t, phi, std::sqrt(2.0 / static_cast<double>(feature_dim)));
}

namespace {

MlpConfig trunk_config(const PolicyConfig& cfg) {
  MlpConfig mc;
  mc.in = cfg.obs_dim;
  mc.hidden = cfg.hidden;
  mc.hidden_layers = 2;
  mc.final_layer = false;
  mc.batch_norm = cfg.bn_wn;
  mc.weight_norm = cfg.bn_wn;
  mc.bn_momentum = cfg.bn_momentum;
  mc.bn_epsilon = cfg.bn_epsilon;
  return mc;
}

Tensor single_state(const std::vector<double>& s) {
  return Tensor::mat(1, s.size(), s);
}

}  // namespace

HetStatPolicy::HetStatPolicy(const PolicyConfig& cfg, Rng& rng)
    : cfg_(cfg),
      trunk_("policy.trunk", trunk_config(cfg), rng),
      rff_(cfg.hidden, cfg.rff_dim, rng),
      mu_("policy.mu", Tensor::zeros(Shape::mat(cfg.act_dim, cfg.rff_dim))),
      rho_("policy.rho", Tensor::full(Shape::mat(cfg.act_dim, cfg.rff_dim / 2), cfg.init_log_std)) {}

DistBatch HetStatPolicy::predict(Tape& t, const Tensor& states, bool train_params, NormMode mode) {
  Tensor h = trunk_.forward(t, states, train_params, mode);
  Tensor phi = rff_.features(t, h);
  Tensor mean = op::matmul_nt(t, phi, mu_.use(t, train_params));
  // Variance head on stopped features: sum_p exp(2 rho) (cos^2 + sin^2) (2/F).
  Tensor rho = rho_.use(t, train_params);
  Tensor rho_expanded = op::interleave_cols(t, rho, rho);
  Tensor weights = op::exp(t, op::scale(t, rho_expanded, 2.0));
  Tensor var = op::matmul_nt(t, op::square(t, op::stop_gradient(phi)), weights);
  return {mean, var};
}

std::vector<Param*> HetStatPolicy::params() {
  std::vector<Param*> ps;
  trunk_.collect(ps);
  ps.push_back(&mu_);
  ps.push_back(&rho_);
  return ps;
}

std::vector<ArrayRef> HetStatPolicy::arrays() {
  std::vector<ArrayRef> refs;
  collect_arrays(params(), refs);
  refs.push_back({"policy.rff.V", &rff_.projection.raw()});
  for (auto& bn : trunk_.norms) collect_bn_arrays(bn.gamma.name + ".state", bn.state, refs);
  return refs;
}

MlpPolicy::MlpPolicy(const PolicyConfig& cfg, Rng& rng)
    : cfg_(cfg), trunk_("policy.trunk", trunk_config(cfg), rng) {
  mean_head_ = LinearLayer("policy.mean_head", cfg.hidden, cfg.act_dim, false, rng);
  for (double& w : mean_head_.weight.value.raw()) w *= 0.01;
  logstd_head_ = LinearLayer("policy.logstd_head", cfg.hidden, cfg.act_dim, false, rng);
  for (double& w : logstd_head_.weight.value.raw()) w = 0.0;
  for (double& b : logstd_head_.bias.value.raw()) b = cfg.init_log_std;
}

DistBatch MlpPolicy::predict(Tape& t, const Tensor& states, bool train_params, NormMode mode) {
  Tensor h = trunk_.forward(t, states, train_params, mode);
  Tensor mean = mean_head_.forward(t, h, train_params);
  Tensor logstd = logstd_head_.forward(t, op::stop_gradient(h), train_params);
  logstd = op::clip(t, logstd, cfg_.logstd_min, cfg_.logstd_max);
  Tensor var = op::exp(t, op::scale(t, logstd, 2.0));
  return {mean, var};
}

std::vector<Param*> MlpPolicy::params() {
  std::vector<Param*> ps;
  trunk_.collect(ps);
  mean_head_.collect(ps);
  logstd_head_.collect(ps);
  return ps;
}

std::vector<ArrayRef> MlpPolicy::arrays() {
  std::vector<ArrayRef> refs;
  collect_arrays(params(), refs);
  for (auto& bn : trunk_.norms) collect_bn_arrays(bn.gamma.name + ".state", bn.state, refs);
  return refs;
}

std::unique_ptr<Policy> Policy::clone() {
  Rng dummy(0);
  std::unique_ptr<Policy> copy = make_policy(config(), dummy);
  auto src = arrays();
  auto dst = copy->arrays();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].data = *src[i].data;
  return copy;
}

ActionDistribution Policy::predict_one(const std::vector<double>& state, NormMode mode) {
  Tape t;
  NoGradGuard guard(t);
  DistBatch d = predict(t, single_state(state), false, mode);
  std::size_t a = d.mean.cols();
  ActionDistribution out;
  out.mean.assign(d.mean.data(), d.mean.data() + a);
  out.var.assign(d.var.data(), d.var.data() + a);
  return out;
}

std::vector<double> Policy::deterministic_action(const std::vector<double>& state) {
  return tanh_all(predict_one(state, NormMode::kEval).mean);
}

std::vector<double> Policy::sample_action(const std::vector<double>& state, Rng& rng) {
  return tanh_all(predict_one(state, NormMode::kEval).sample_latent(rng));
}

void Policy::save(const std::string& path) { save_arrays(path, kPolicyMagic, arrays()); }

void Policy::load(const std::string& path) { load_arrays(path, kPolicyMagic, arrays()); }

std::unique_ptr<Policy> make_policy(const PolicyConfig& cfg, Rng& rng) {
  if (cfg.kind == PolicyKind::kHetStat) return std::make_unique<HetStatPolicy>(cfg, rng);
  return std::make_unique<MlpPolicy>(cfg, rng);
}

SquashedSample sample_squashed(Tape& t, const DistBatch& dist, const Tensor& noise) {
  Tensor z = op::add(t, dist.mean, op::mul(t, op::sqrt(t, dist.var), noise));
  return {z, op::tanh(t, z)};
}

Tensor log_prob_sum(Tape& t, const DistBatch& dist, const Tensor& latent) {
  double n = static_cast<double>(latent.size());
  Tensor diff = op::sub(t, latent, dist.mean);
  Tensor quad = op::sum(t, op::div(t, op::square(t, diff), op::scale(t, dist.var, 2.0)));
  Tensor logvar = op::scale(t, op::sum(t, op::log(t, dist.var)), 0.5);
  Tensor gauss = op::sub(t, op::scale(t, op::add(t, quad, logvar), -1.0),
                         Tensor::scalar(0.5 * kLog2Pi * n));
  // sum log(1 - tanh(z)^2) = 2 (n log2 - sum z - sum softplus(-2z))
  Tensor sp = op::sum(t, op::softplus(t, op::scale(t, latent, -2.0)));
  Tensor corr = op::scale(t, op::add(t, op::sum(t, latent), sp), -2.0);
  corr = op::add_const(t, corr, 2.0 * kLog2 * n);
  return op::sub(t, gauss, corr);
}

Tensor kl_sum(Tape& t, const DistBatch& q, const DistBatch& p) {
  double n = static_cast<double>(q.mean.size());
  Tensor log_ratio = op::sub(t, op::log(t, p.var), op::log(t, q.var));
  Tensor dm = op::sub(t, q.mean, p.mean);
  Tensor frac = op::div(t, op::add(t, q.var, op::square(t, dm)), op::scale(t, p.var, 2.0));
  Tensor per_elem = op::add(t, op::scale(t, log_ratio, 0.5), frac);
  return op::add_const(t, op::sum(t, per_elem), -0.5 * n);
}

std::uint64_t arrays_checksum(const std::vector<ArrayRef>& arrays) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  for (const auto& a : arrays) {
    for (char c : a.name) mix(static_cast<unsigned char>(c));
    for (double d : *a.data) {
      std::uint64_t bits;
      std::memcpy(&bits, &d, sizeof(bits));
      mix(bits);
    }
  }
  return h;
}

}  // namespace xqcfd
