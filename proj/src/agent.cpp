#include "xqcfd/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace xqcfd {

namespace op = ops;

Variant parse_variant(const std::string& name) {
  if (name == "xqcfd") return Variant::kXqcfd;
  if (name == "xqc-bc") return Variant::kXqcBc;
  if (name == "xqc-od") return Variant::kXqcOd;
  if (name == "xqc-scratch") return Variant::kXqcScratch;
  if (name == "maxent-sac") return Variant::kMaxEntSac;
  throw std::invalid_argument("unknown variant: " + name);
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::kXqcfd: return "xqcfd";
    case Variant::kXqcBc: return "xqc-bc";
    case Variant::kXqcOd: return "xqc-od";
    case Variant::kXqcScratch: return "xqc-scratch";
    case Variant::kMaxEntSac: return "maxent-sac";
  }
  return "?";
}

VariantTraits default_traits(Variant v) {
  switch (v) {
    case Variant::kXqcfd:
      return {true, true, true, true, false, 0};
    case Variant::kXqcBc:
      // BC initialization alone: no demo replay, no critic pretraining.
      return {true, false, false, false, true, 0};
    case Variant::kXqcOd:
      return {false, false, true, false, true, 1000};
    case Variant::kXqcScratch:
      return {false, false, false, false, true, 1000};
    case Variant::kMaxEntSac:
      // The regularization ablation: full pretraining and demo replay, but
      // max-entropy in place of the KL anchor.
      return {true, true, true, false, true, 0};
  }
  return {};
}

VariantTraits AgentConfig::resolved_traits() const {
  VariantTraits t = default_traits(variant);
  if (use_kl.has_value()) t.use_kl = *use_kl;
  if (auto_temperature.has_value()) t.auto_temperature = *auto_temperature;
  if (t.warmup_steps > 0) t.warmup_steps = warmup_steps;
  return t;
}

void MetricsLog::write_csv(std::ostream& out, const AgentConfig& cfg) const {
  out << "step,variant,seed,success_rate,actor_loss,critic_loss,kl_to_prior,temperature,"
         "buffer_size\n";
  char line[256];
  for (const EvalRow& r : rows) {
    std::snprintf(line, sizeof(line), "%ld,%s,%llu,%.10g,%.10g,%.10g,%.10g,%.10g,%zu\n", r.step,
                  variant_name(cfg.variant).c_str(),
                  static_cast<unsigned long long>(cfg.seed), r.success_rate, r.actor_loss,
                  r.critic_loss, r.kl_to_prior, r.temperature, r.buffer_size);
    out << line;
  }
}

double eval_rollouts(const std::function<std::vector<double>(const std::vector<double>& obs,
                                                             bool episode_start)>& act,
                     const std::string& env_id, int episodes, Rng& rng) {
  if (episodes < 1) throw std::invalid_argument("eval_rollouts: episodes must be >= 1");
  PointEnv env = PointEnv::make(env_id);
  int wins = 0;
  for (int e = 0; e < episodes; ++e) {
    std::vector<double> obs = env.reset(rng);
    bool first = true;
    while (true) {
      auto result = env.step(act(obs, first));
      first = false;
      obs = result.observation;
      if (result.done) {
        wins += result.reward == 1.0 ? 1 : 0;
        break;
      }
    }
  }
  return static_cast<double>(wins) / static_cast<double>(episodes);
}

double eval_policy(Policy& policy, const std::string& env_id, int episodes, Rng& rng) {
  return eval_rollouts(
      [&policy](const std::vector<double>& obs, bool) { return policy.deterministic_action(obs); },
      env_id, episodes, rng);
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

PolicyConfig policy_config(const AgentConfig& cfg, const EnvSpec& spec) {
  PolicyConfig pc;
  pc.obs_dim = spec.obs_dim;
  pc.act_dim = spec.act_dim;
  pc.hidden = cfg.hidden;
  pc.rff_dim = cfg.rff_dim;
  pc.kind = cfg.policy_kind;
  pc.bn_wn = cfg.bn_wn_actor;
  return pc;
}

CriticConfig critic_config(const AgentConfig& cfg, const EnvSpec& spec, double gamma) {
  VariantTraits traits = cfg.resolved_traits();
  CriticConfig cc;
  cc.obs_dim = spec.obs_dim;
  cc.act_dim = spec.act_dim;
  cc.hidden = cfg.hidden;
  cc.atom_count = cfg.atom_count;
  cc.v_min = 0.0;
  // Episodes terminate on their single normalized unit reward, so the return
  // is bounded by 1, not by the geometric series; the tighter support keeps
  // the categorical prior calibrated instead of optimistic.
  cc.v_max = cfg.v_max > 0.0 ? cfg.v_max : 1.0;
  (void)gamma;
  cc.polyak_tau = cfg.polyak_tau;
  cc.use_target_network = cfg.use_target_network;
  cc.init_logit_ramp =
      cfg.init_logit_ramp >= 0.0 ? cfg.init_logit_ramp : (traits.pretrain_policy ? 10.0 : 0.0);
  return cc;
}

}  // namespace

XqcfdAgent::XqcfdAgent(const AgentConfig& cfg, const DemoDataset* demos)
    : cfg_(cfg),
      traits_(cfg.resolved_traits()),
      env_(PointEnv::make(cfg.env_id)),
      critics_([&] {
        Rng init(mix_seed(cfg.seed, 2));
        double g = discount_for_horizon(env_.spec().horizon);
        return CriticPair(critic_config(cfg, env_.spec(), g), init);
      }()),
      buffer_(cfg.buffer_capacity),
      demos_(demos),
      gamma_(discount_for_horizon(env_.spec().horizon)),
      env_rng_(mix_seed(cfg.seed, 3)),
      update_rng_(mix_seed(cfg.seed, 4)),
      log_alpha_("log_alpha", Tensor::scalar(std::log(std::max(cfg.temperature, 1e-12)))) {
  Rng policy_init(mix_seed(cfg.seed, 1));
  policy_ = make_policy(policy_config(cfg, env_.spec()), policy_init);
  adam_.lr = cfg_.learning_rate;
  alpha_adam_.lr = cfg_.alpha_learning_rate;
  if ((traits_.use_demos || traits_.pretrain_policy || traits_.pretrain_critic) &&
      (demos_ == nullptr || demos_->size() == 0)) {
    throw std::invalid_argument("variant " + variant_name(cfg.variant) + " requires demos");
  }
  if (demos_ != nullptr && demos_->size() > 0) {
    norm_ = fit_normalizer(*demos_);
  }
  if (traits_.use_kl && !traits_.pretrain_policy) {
    throw std::invalid_argument("use_kl requires a BC-pretrained prior");
  }
}

double XqcfdAgent::temperature() const {
  // log-alpha parameterization only drives the auto-tuned max-entropy path;
  // the KL temperature is a fixed constant.
  if (!traits_.use_kl && traits_.auto_temperature) return std::exp(log_alpha_.value.at(0));
  return cfg_.temperature;
}

void XqcfdAgent::pretrain() {
  Rng bc_rng(mix_seed(cfg_.seed, 5));
  if (traits_.pretrain_policy) {
    BcConfig bc;
    bc.epochs = cfg_.bc_epochs;
    bc.batch_size = cfg_.batch_size;
    bc.learning_rate = cfg_.bc_learning_rate;
    auto result = pretrain_policy(*policy_, *demos_, bc, bc_rng);
    prior_ = std::move(result.prior);
  }
  if (traits_.pretrain_critic) {
    pretrain_critic(critics_, *demos_, *policy_, gamma_, cfg_.critic_pretrain_steps,
                    cfg_.batch_size, cfg_.bc_learning_rate, norm_, bc_rng);
  }
}

Batch XqcfdAgent::next_batch() {
  if (traits_.use_demos) {
    return sample_symmetric(buffer_, *demos_, cfg_.batch_size, norm_, update_rng_);
  }
  return sample_from_buffer(buffer_, cfg_.batch_size, norm_, update_rng_);
}

std::vector<double> XqcfdAgent::behavior_action(const std::vector<double>& obs) {
  bool warmup = !traits_.pretrain_policy && step_ < traits_.warmup_steps;
  if (warmup) {
    std::vector<double> a(env_.spec().act_dim);
    for (double& x : a) x = env_rng_.uniform(-1.0, 1.0);
    return a;
  }
  return policy_->sample_action(obs, env_rng_);
}

double XqcfdAgent::actor_update(const Batch& batch, StepMetrics* metrics) {
  tape_.reset();
  const std::size_t n = batch.n;
  Tensor states = Tensor::mat(n, batch.obs_dim, batch.states);
  DistBatch dist = policy_->predict(tape_, states, true, NormMode::kTrain);
  std::vector<double> noise(n * batch.act_dim);
  for (double& x : noise) x = update_rng_.normal();
  SquashedSample sample = sample_squashed(tape_, dist, Tensor::mat(n, batch.act_dim, noise));

  // Q of the sampled action under eval-mode normalization; critic parameters
  // stay constant so gradients reach only the actor.
  Tensor sa = op::concat_cols(tape_, states, sample.action);
  const AtomSupport& support = critics_.support();
  Tensor atoms_col = Tensor::mat(support.atoms.size(), 1, support.atoms);
  Tensor qa = op::matmul(
      tape_, op::softmax_rows(tape_, critics_.online_a().logits(tape_, sa, false, NormMode::kEval)),
      atoms_col);
  Tensor qb = op::matmul(
      tape_, op::softmax_rows(tape_, critics_.online_b().logits(tape_, sa, false, NormMode::kEval)),
      atoms_col);
  std::vector<double> pick_a(n);
  for (std::size_t i = 0; i < n; ++i) pick_a[i] = qa.at(i) <= qb.at(i) ? 1.0 : 0.0;
  Tensor mask = Tensor::mat(n, 1, pick_a);
  Tensor q = op::add(tape_, op::mul(tape_, mask, qa),
                     op::mul(tape_, op::scale(tape_, op::add_const(tape_, mask, -1.0), -1.0), qb));
  double inv_n = 1.0 / static_cast<double>(n);
  Tensor neg_q = op::scale(tape_, op::sum(tape_, q), -inv_n);

  double alpha = temperature();
  double kl_value = 0.0;
  double entropy_value = 0.0;
  Tensor loss;
  if (traits_.use_kl) {
    if (prior_ == nullptr) {
      throw std::logic_error("actor update with use_kl requires pretrain() to have run");
    }
    DistBatch prior_dist = prior_->predict(tape_, states, false, NormMode::kEval);
    Tensor kl_mean = op::scale(tape_, kl_sum(tape_, dist, prior_dist), inv_n);
    kl_value = kl_mean.scalar_value();
    loss = op::add(tape_, neg_q, op::scale(tape_, kl_mean, alpha));
  } else {
    Tensor logp_mean = op::scale(tape_, log_prob_sum(tape_, dist, sample.latent), inv_n);
    entropy_value = -logp_mean.scalar_value();
    loss = op::add(tape_, neg_q, op::scale(tape_, logp_mean, alpha));
  }
  double loss_value = loss.scalar_value();
  tape_.backward(loss);
  adam_step(tape_, policy_->params(), adam_);

  if (!traits_.use_kl && traits_.auto_temperature) {
    // d/dlog(alpha) of alpha * (entropy - target), target = act_dim / 2.
    double target_entropy = static_cast<double>(env_.spec().act_dim) / 2.0;
    double grad = alpha * (entropy_value - target_entropy);
    tape_.reset();
    Tensor la = log_alpha_.use(tape_, true);
    tape_.backward(op::scale(tape_, la, grad));
    adam_step(tape_, {&log_alpha_}, alpha_adam_);
  }
  if (metrics != nullptr) {
    metrics->actor_loss += loss_value;
    metrics->kl_to_prior += kl_value;
    metrics->entropy += entropy_value;
    ++metrics->actor_updates;
  }
  return loss_value;
}

StepMetrics XqcfdAgent::train_step() {
  StepMetrics metrics;
  if (episode_done_) {
    obs_ = env_.reset(env_rng_);
    episode_done_ = false;
  }
  std::vector<double> action = behavior_action(obs_);
  auto result = env_.step(action);
  Transition t;
  t.state = obs_;
  t.action = std::move(action);
  t.reward = result.reward;
  t.next_state = result.observation;
  t.done = result.done;
  buffer_.push(std::move(t));
  obs_ = result.observation;
  episode_done_ = result.done;
  ++step_;

  bool updates_active = traits_.pretrain_policy || step_ > traits_.warmup_steps;
  if (updates_active) {
    auto critic_params = critics_.online_params();
    for (int n = 0; n < cfg_.utd_ratio; ++n) {
      Batch batch = next_batch();
      tape_.reset();
      auto res = critic_loss(tape_, critics_, batch, *policy_, gamma_, update_rng_);
      tape_.backward(res.loss);
      adam_step(tape_, critic_params, adam_);
      critics_.target_update();
      ++critic_update_count_;
      metrics.critic_loss += res.value;
      ++metrics.critic_updates;
      if (critic_update_count_ % cfg_.policy_delay == 0) {
        actor_update(next_batch(), &metrics);
      }
    }
  }
  metrics.temperature = temperature();
  metrics.buffer_size = buffer_.size();
  return metrics;
}

double XqcfdAgent::evaluate(long at_step) {
  Rng rng(mix_seed(cfg_.seed ^ 0xE7A1C0DEull, static_cast<std::uint64_t>(at_step)));
  return eval_policy(*policy_, cfg_.env_id, cfg_.eval_episodes, rng);
}

MetricsLog XqcfdAgent::run() {
  pretrain();
  MetricsLog log;
  EvalRow first;
  first.step = 0;
  first.success_rate = evaluate(0);
  first.temperature = temperature();
  log.rows.push_back(first);

  StepMetrics acc;
  for (long s = 1; s <= cfg_.total_steps; ++s) {
    StepMetrics m = train_step();
    acc.critic_loss += m.critic_loss;
    acc.actor_loss += m.actor_loss;
    acc.kl_to_prior += m.kl_to_prior;
    acc.critic_updates += m.critic_updates;
    acc.actor_updates += m.actor_updates;
    if (s % cfg_.eval_every == 0) {
      EvalRow row;
      row.step = s;
      row.success_rate = evaluate(s);
      row.critic_loss = acc.critic_updates > 0 ? acc.critic_loss / acc.critic_updates : 0.0;
      row.actor_loss = acc.actor_updates > 0 ? acc.actor_loss / acc.actor_updates : 0.0;
      row.kl_to_prior = acc.actor_updates > 0 ? acc.kl_to_prior / acc.actor_updates : 0.0;
      row.temperature = temperature();
      row.buffer_size = buffer_.size();
      log.rows.push_back(row);
      acc = StepMetrics{};
    }
  }
  return log;
}

void XqcfdAgent::save_checkpoints(const std::string& path_prefix) {
  policy_->save(path_prefix + "_policy.ckpt");
  critics_.save(path_prefix + "_critic.ckpt");
}

MonotonicCheck monotonic_improvement_check(const std::function<double(double)>& q_fn,
                                           const std::function<double(double)>& prior_density,
                                           double alpha, int grid_size) {
  if (grid_size < 100) throw std::invalid_argument("monotonic check: grid_size must be >= 100");
  if (!(alpha > 0.0)) throw std::invalid_argument("monotonic check: alpha must be positive");
  std::vector<double> q(grid_size), logp(grid_size);
  double prior_sum = 0.0;
  for (int i = 0; i < grid_size; ++i) {
    double a = -1.0 + 2.0 * static_cast<double>(i) / static_cast<double>(grid_size - 1);
    q[i] = q_fn(a);
    if (!std::isfinite(q[i])) throw std::domain_error("monotonic check: non-finite Q on grid");
    double p = prior_density(a);
    if (!(p >= 0.0) || !std::isfinite(p)) {
      throw std::domain_error("monotonic check: invalid prior density on grid");
    }
    logp[i] = std::log(p + 1e-300);
    prior_sum += p;
  }
  // pi ~ exp(Q / alpha) * p, normalized on the grid via log-sum-exp.
  std::vector<double> logits(grid_size);
  double mx = -1e300;
  for (int i = 0; i < grid_size; ++i) {
    logits[i] = q[i] / alpha + logp[i];
    mx = std::max(mx, logits[i]);
  }
  double z = 0.0;
  for (int i = 0; i < grid_size; ++i) z += std::exp(logits[i] - mx);
  MonotonicCheck out;
  for (int i = 0; i < grid_size; ++i) {
    double pi = std::exp(logits[i] - mx) / z;
    double p = std::exp(logp[i]) / prior_sum;
    out.pseudo_posterior_value += pi * q[i];
    out.prior_value += p * q[i];
  }
  return out;
}

}  // namespace xqcfd
