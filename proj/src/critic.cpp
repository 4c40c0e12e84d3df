#include "xqcfd/critic.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace xqcfd {

namespace op = ops;

AtomSupport AtomSupport::make(double v_min, double v_max, int count) {
  if (count < 2) throw std::invalid_argument("AtomSupport: need at least 2 atoms");
  if (!(v_min < v_max)) throw std::invalid_argument("AtomSupport: v_min must be < v_max");
  AtomSupport s;
  s.v_min = v_min;
  s.v_max = v_max;
  s.count = count;
  s.delta = (v_max - v_min) / static_cast<double>(count - 1);
  s.atoms.resize(count);
  for (int i = 0; i < count; ++i) {
    s.atoms[i] = v_min + s.delta * static_cast<double>(i);
  }
  s.atoms.back() = v_max;
  return s;
}

void project_target(const AtomSupport& support, double r, bool done, double gamma,
                    std::span<const double> next_probs, std::span<double> out) {
  const int n = support.count;
  if (static_cast<int>(out.size()) != n) {
    throw std::invalid_argument("project_target: output size mismatch");
  }
  std::fill(out.begin(), out.end(), 0.0);
  auto scatter = [&](double value, double mass) {
    double clipped = std::clamp(value, support.v_min, support.v_max);
    double b = (clipped - support.v_min) / support.delta;
    int lo = static_cast<int>(std::floor(b));
    lo = std::clamp(lo, 0, n - 1);
    int hi = std::min(lo + 1, n - 1);
    if (lo == hi) {
      out[lo] += mass;
    } else {
      out[lo] += mass * (static_cast<double>(hi) - b);
      out[hi] += mass * (b - static_cast<double>(lo));
    }
  };
  if (done) {
    // Terminal: the target is the reward alone.
    scatter(r, 1.0);
    return;
  }
  if (static_cast<int>(next_probs.size()) != n) {
    throw std::invalid_argument("project_target: next_probs size mismatch");
  }
  for (int j = 0; j < n; ++j) {
    if (next_probs[j] != 0.0) scatter(r + gamma * support.atoms[j], next_probs[j]);
  }
}

double expected_value(std::span<const double> probs, const AtomSupport& support) {
  double v = 0.0;
  for (int i = 0; i < support.count; ++i) v += probs[i] * support.atoms[i];
  return v;
}

int aggregate_pick(std::span<const double> probs_a, std::span<const double> probs_b,
                   const AtomSupport& support) {
  return expected_value(probs_a, support) <= expected_value(probs_b, support) ? 0 : 1;
}

namespace {

MlpConfig critic_net_config(const CriticConfig& cfg) {
  MlpConfig mc;
  mc.in = cfg.obs_dim + cfg.act_dim;
  mc.hidden = cfg.hidden;
  mc.out = static_cast<std::size_t>(cfg.atom_count);
  mc.hidden_layers = 2;
  mc.final_layer = true;
  mc.batch_norm = true;
  mc.weight_norm = true;
  mc.bn_momentum = cfg.bn_momentum;
  mc.bn_epsilon = cfg.bn_epsilon;
  return mc;
}

}  // namespace

CategoricalCritic::CategoricalCritic(const std::string& name, const CriticConfig& cfg, Rng& rng)
    : net_(name, critic_net_config(cfg), rng) {
  // Initial logits ramp down across the support so untrained inputs read as
  // low value rather than mid-support; unexplored actions must not outbid
  // the returns the data actually supports.
  auto& bias = net_.head.bias.value.raw();
  for (std::size_t i = 0; i < bias.size(); ++i) {
    bias[i] = -cfg.init_logit_ramp * static_cast<double>(i) /
              static_cast<double>(bias.size() - 1);
  }
}

Tensor CategoricalCritic::logits(Tape& t, const Tensor& state_action, bool train_params,
                                 NormMode mode) {
  return net_.forward(t, state_action, train_params, mode);
}

std::vector<double> CategoricalCritic::probabilities(const Tensor& state_action) {
  Tape t;
  NoGradGuard guard(t);
  Tensor p = op::softmax_rows(t, net_.forward(t, state_action, false, NormMode::kEval));
  return {p.data(), p.data() + p.size()};
}

std::vector<Param*> CategoricalCritic::params() {
  std::vector<Param*> ps;
  net_.collect(ps);
  return ps;
}

std::vector<ArrayRef> CategoricalCritic::arrays(const std::string& prefix) {
  std::vector<ArrayRef> refs;
  for (Param* p : params()) refs.push_back({prefix + p->name, &p->value.raw()});
  for (auto& bn : net_.norms) {
    collect_bn_arrays(prefix + bn.gamma.name + ".state", bn.state, refs);
  }
  return refs;
}

CriticPair::CriticPair(const CriticConfig& cfg, Rng& rng)
    : cfg_(cfg),
      support_(AtomSupport::make(cfg.v_min, cfg.v_max, cfg.atom_count)),
      a_("critic_a", cfg, rng),
      b_("critic_b", cfg, rng),
      ta_("target_a", cfg, rng),
      tb_("target_b", cfg, rng) {
  online_refs_ = a_.arrays("");
  auto more = b_.arrays("");
  online_refs_.insert(online_refs_.end(), more.begin(), more.end());
  target_refs_ = ta_.arrays("");
  more = tb_.arrays("");
  target_refs_.insert(target_refs_.end(), more.begin(), more.end());
  // Targets start as exact copies of the online networks.
  polyak_update(target_refs_, online_refs_, 1.0);
}

void CriticPair::target_update() { target_update(cfg_.polyak_tau); }

void CriticPair::target_update(double tau) { polyak_update(target_refs_, online_refs_, tau); }

std::vector<Param*> CriticPair::online_params() {
  std::vector<Param*> ps = a_.params();
  auto more = b_.params();
  ps.insert(ps.end(), more.begin(), more.end());
  return ps;
}

std::vector<ArrayRef> CriticPair::arrays() {
  std::vector<ArrayRef> refs = a_.arrays("online.");
  for (auto& group : {b_.arrays("online."), ta_.arrays("target."), tb_.arrays("target.")}) {
    refs.insert(refs.end(), group.begin(), group.end());
  }
  return refs;
}

void CriticPair::save(const std::string& path) { save_arrays(path, kCriticMagic, arrays()); }

void CriticPair::load(const std::string& path) { load_arrays(path, kCriticMagic, arrays()); }

CriticPair::JointForward CriticPair::forward_joint(Tape& t, const Tensor& states,
                                                   const Tensor& actions,
                                                   const Tensor& next_states,
                                                   const Tensor& next_actions) {
  if (states.rows() != next_states.rows() || actions.rows() != next_actions.rows() ||
      states.rows() != actions.rows()) {
    throw std::invalid_argument("forward_joint: batch size mismatch");
  }
  const std::size_t batch = states.rows();
  if (batch < 2) throw std::invalid_argument("forward_joint: batch must be >= 2");
  const int n = cfg_.atom_count;

  Tensor sa = op::concat_cols(t, states, actions);
  Tensor sa_next = op::concat_cols(t, next_states, next_actions);
  Tensor joint = op::concat_rows(t, sa, sa_next);

  JointForward out;
  Tensor logits_a = a_.logits(t, joint, true, NormMode::kTrain);
  Tensor logits_b = b_.logits(t, joint, true, NormMode::kTrain);
  out.logp_a = op::log_softmax_rows(t, op::slice_rows(t, logits_a, 0, batch));
  out.logp_b = op::log_softmax_rows(t, op::slice_rows(t, logits_b, 0, batch));

  std::vector<double> pa, pb;
  {
    NoGradGuard guard(t);
    Tensor sa_next_det = sa_next.detached();
    Tensor probs_a =
        op::softmax_rows(t, target_a().logits(t, sa_next_det, false, NormMode::kEval));
    Tensor probs_b =
        op::softmax_rows(t, target_b().logits(t, sa_next_det, false, NormMode::kEval));
    pa.assign(probs_a.data(), probs_a.data() + probs_a.size());
    pb.assign(probs_b.data(), probs_b.data() + probs_b.size());
  }
  out.target_probs.resize(batch * static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < batch; ++i) {
    std::span<const double> row_a(pa.data() + i * n, static_cast<std::size_t>(n));
    std::span<const double> row_b(pb.data() + i * n, static_cast<std::size_t>(n));
    const double* src = aggregate_pick(row_a, row_b, support_) == 0 ? row_a.data() : row_b.data();
    std::copy(src, src + n, out.target_probs.data() + i * n);
  }
  return out;
}

CriticLossResult critic_loss(Tape& t, CriticPair& pair, const Batch& batch, Policy& policy,
                             double gamma, Rng& rng) {
  const std::size_t bsz = batch.n;
  const int n = pair.config().atom_count;
  Tensor states = Tensor::mat(bsz, batch.obs_dim, batch.states);
  Tensor actions = Tensor::mat(bsz, batch.act_dim, batch.actions);
  Tensor next_states = Tensor::mat(bsz, batch.obs_dim, batch.next_states);

  // a' ~ pi(.|s'), sampled without recording; gradients never flow into the
  // target side of the Bellman backup.
  Tensor next_actions;
  {
    NoGradGuard guard(t);
    DistBatch dist = policy.predict(t, next_states, false, NormMode::kEval);
    std::vector<double> noise(bsz * batch.act_dim);
    for (double& x : noise) x = rng.normal();
    SquashedSample s = sample_squashed(t, dist, Tensor::mat(bsz, batch.act_dim, noise));
    next_actions = s.action.detached();
  }

  auto joint = pair.forward_joint(t, states, actions, next_states, next_actions);

  const AtomSupport& support = pair.support();
  std::vector<double> m(bsz * static_cast<std::size_t>(n));
  double mean_q = 0.0;
  for (std::size_t i = 0; i < bsz; ++i) {
    std::span<const double> next_row(joint.target_probs.data() + i * n,
                                     static_cast<std::size_t>(n));
    std::span<double> out_row(m.data() + i * n, static_cast<std::size_t>(n));
    project_target(support, batch.rewards[i], batch.dones[i] != 0, gamma, next_row, out_row);
    mean_q += expected_value(next_row, support);
  }
  mean_q /= static_cast<double>(bsz);

  Tensor m_const = Tensor::mat(bsz, static_cast<std::size_t>(n), std::move(m));
  double inv_b = -1.0 / static_cast<double>(bsz);
  Tensor loss_a = op::scale(t, op::sum(t, op::mul(t, m_const, joint.logp_a)), inv_b);
  Tensor loss_b = op::scale(t, op::sum(t, op::mul(t, m_const, joint.logp_b)), inv_b);
  Tensor loss = op::add(t, loss_a, loss_b);
  return {loss, loss.scalar_value(), mean_q};
}

}  // namespace xqcfd
