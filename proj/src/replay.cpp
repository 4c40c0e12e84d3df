#include "xqcfd/replay.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace xqcfd {

namespace {

void validate(const Transition& t, std::size_t obs_dim, std::size_t act_dim) {
  if (t.state.size() != obs_dim || t.next_state.size() != obs_dim) {
    throw std::invalid_argument("transition state dimension mismatch");
  }
  if (t.action.size() != act_dim) {
    throw std::invalid_argument("transition action dimension mismatch");
  }
  for (double a : t.action) {
    if (!(a >= -1.0 && a <= 1.0)) {
      throw std::invalid_argument("transition action outside [-1, 1]");
    }
  }
}

}  // namespace

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::push(Transition t) {
  if (items_.empty() && obs_dim_ == 0) {
    obs_dim_ = t.state.size();
    act_dim_ = t.action.size();
  }
  validate(t, obs_dim_, act_dim_);
  if (items_.size() < capacity_) {
    items_.push_back(std::move(t));
  } else {
    items_[cursor_] = std::move(t);
  }
  cursor_ = (cursor_ + 1) % capacity_;
}

void DemoDataset::add_trajectory(const std::vector<Transition>& trajectory) {
  if (trajectory.empty()) throw std::invalid_argument("empty trajectory");
  if (!trajectory.back().done) {
    throw std::invalid_argument("trajectory must end with done = true");
  }
  for (const Transition& t : trajectory) {
    validate(t, obs_dim_, act_dim_);
    items_.push_back(t);
    traj_ids_.push_back(static_cast<int>(trajectories_));
  }
  ++trajectories_;
}

namespace {

void print_list(std::FILE* f, const std::vector<double>& v) {
  std::fputc('[', f);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::fprintf(f, "%.17g", v[i]);
    if (i + 1 < v.size()) std::fputc(',', f);
  }
  std::fputc(']', f);
}

std::vector<double> parse_list(const std::string& token) {
  if (token.size() < 2 || token.front() != '[' || token.back() != ']') {
    throw std::runtime_error("demo file: malformed list " + token);
  }
  std::vector<double> out;
  std::string body = token.substr(1, token.size() - 2);
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    out.push_back(std::stod(item));
  }
  return out;
}

}  // namespace

void DemoDataset::save(const std::string& path) const {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("cannot open demo file for writing: " + path);
  std::fprintf(f, "env=%s obs=%zu act=%zu\n", env_id_.c_str(), obs_dim_, act_dim_);
  for (std::size_t i = 0; i < items_.size(); ++i) {
    const Transition& t = items_[i];
    std::fprintf(f, "%d ", traj_ids_[i]);
    print_list(f, t.state);
    std::fputc(' ', f);
    print_list(f, t.action);
    std::fprintf(f, " %.17g ", t.reward);
    print_list(f, t.next_state);
    std::fprintf(f, " %d\n", t.done ? 1 : 0);
  }
  std::fclose(f);
}

DemoDataset DemoDataset::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open demo file: " + path);
  std::string header;
  if (!std::getline(in, header)) throw std::runtime_error("demo file is empty: " + path);
  std::string env_id;
  std::size_t obs_dim = 0, act_dim = 0;
  {
    std::stringstream ss(header);
    std::string token;
    while (ss >> token) {
      if (token.rfind("env=", 0) == 0) env_id = token.substr(4);
      else if (token.rfind("obs=", 0) == 0) obs_dim = std::stoul(token.substr(4));
      else if (token.rfind("act=", 0) == 0) act_dim = std::stoul(token.substr(4));
    }
  }
  if (env_id.empty() || obs_dim == 0 || act_dim == 0) {
    throw std::runtime_error("demo file header is malformed: " + header);
  }
  DemoDataset demos(env_id, obs_dim, act_dim);
  std::vector<Transition> current;
  int current_id = -1;
  std::string line;
  auto flush = [&] {
    if (!current.empty()) {
      demos.add_trajectory(current);
      current.clear();
    }
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    int tid;
    std::string s, a, s2;
    double r;
    int done;
    if (!(ss >> tid >> s >> a >> r >> s2 >> done)) {
      throw std::runtime_error("demo file: malformed record: " + line);
    }
    if (tid != current_id) {
      flush();
      current_id = tid;
    }
    Transition t;
    t.state = parse_list(s);
    t.action = parse_list(a);
    t.reward = r;
    t.next_state = parse_list(s2);
    t.done = done != 0;
    current.push_back(std::move(t));
  }
  flush();
  return demos;
}

std::uint64_t DemoDataset::checksum() const {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 1099511628211ull;
  };
  auto mix_d = [&](double d) {
    std::uint64_t bits;
    std::memcpy(&bits, &d, sizeof(bits));
    mix(bits);
  };
  for (std::size_t i = 0; i < items_.size(); ++i) {
    mix(static_cast<std::uint64_t>(traj_ids_[i]));
    const Transition& t = items_[i];
    for (double v : t.state) mix_d(v);
    for (double v : t.action) mix_d(v);
    mix_d(t.reward);
    for (double v : t.next_state) mix_d(v);
    mix(t.done ? 1 : 0);
  }
  return h;
}

RewardNormalizer fit_normalizer(const DemoDataset& demos) {
  if (demos.size() == 0) throw std::invalid_argument("fit_normalizer: empty demos");
  double lo = demos.at(0).reward, hi = demos.at(0).reward;
  for (std::size_t i = 1; i < demos.size(); ++i) {
    lo = std::min(lo, demos.at(i).reward);
    hi = std::max(hi, demos.at(i).reward);
  }
  if (hi - lo <= 0.0) {
    throw std::invalid_argument("fit_normalizer: constant demo rewards give zero range");
  }
  RewardNormalizer n;
  n.scale = 1.0 / (hi - lo);
  n.shift = -lo * n.scale;
  return n;
}

namespace {

Batch empty_batch(std::size_t n, std::size_t obs_dim, std::size_t act_dim) {
  Batch b;
  b.n = n;
  b.obs_dim = obs_dim;
  b.act_dim = act_dim;
  b.states.reserve(n * obs_dim);
  b.actions.reserve(n * act_dim);
  b.rewards.reserve(n);
  b.next_states.reserve(n * obs_dim);
  b.dones.reserve(n);
  return b;
}

void append(Batch& b, const Transition& t, const RewardNormalizer& norm) {
  b.states.insert(b.states.end(), t.state.begin(), t.state.end());
  b.actions.insert(b.actions.end(), t.action.begin(), t.action.end());
  b.rewards.push_back(norm(t.reward));
  b.next_states.insert(b.next_states.end(), t.next_state.begin(), t.next_state.end());
  b.dones.push_back(t.done ? 1 : 0);
}

}  // namespace

Batch sample_symmetric(const ReplayBuffer& buffer, const DemoDataset& demos,
                       std::size_t batch_size, const RewardNormalizer& norm, Rng& rng) {
  if (batch_size % 2 != 0) throw std::invalid_argument("sample_symmetric: batch size must be even");
  if (buffer.size() == 0) throw std::invalid_argument("sample_symmetric: empty buffer");
  if (demos.size() == 0) throw std::invalid_argument("sample_symmetric: empty demos");
  Batch b = empty_batch(batch_size, demos.obs_dim(), demos.act_dim());
  for (std::size_t i = 0; i < batch_size / 2; ++i) {
    append(b, buffer.at(rng.uniform_index(buffer.size())), norm);
  }
  for (std::size_t i = 0; i < batch_size / 2; ++i) {
    append(b, demos.at(rng.uniform_index(demos.size())), norm);
  }
  return b;
}

Batch sample_from_buffer(const ReplayBuffer& buffer, std::size_t batch_size,
                         const RewardNormalizer& norm, Rng& rng) {
  if (buffer.size() == 0) throw std::invalid_argument("sample_from_buffer: empty buffer");
  const Transition& probe = buffer.at(0);
  Batch b = empty_batch(batch_size, probe.state.size(), probe.action.size());
  for (std::size_t i = 0; i < batch_size; ++i) {
    append(b, buffer.at(rng.uniform_index(buffer.size())), norm);
  }
  return b;
}

Batch sample_from_demos(const DemoDataset& demos, std::size_t batch_size,
                        const RewardNormalizer& norm, Rng& rng) {
  if (demos.size() == 0) throw std::invalid_argument("sample_from_demos: empty demos");
  Batch b = empty_batch(batch_size, demos.obs_dim(), demos.act_dim());
  for (std::size_t i = 0; i < batch_size; ++i) {
    append(b, demos.at(rng.uniform_index(demos.size())), norm);
  }
  return b;
}

}  // namespace xqcfd
