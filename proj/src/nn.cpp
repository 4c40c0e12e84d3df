#include "xqcfd/nn.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <stdexcept>

namespace xqcfd {

Tensor Param::use(Tape& t, bool trainable) {
  if (!trainable || !t.recording()) return value;
  if (used_tape_ == &t && used_epoch_ == t.epoch() && used_.on_tape()) return used_;
  used_ = value;
  t.watch(used_);
  used_tape_ = &t;
  used_epoch_ = t.epoch();
  return used_;
}

bool Param::used_on(const Tape& t) const {
  return used_tape_ == &t && used_epoch_ == t.epoch() && used_.on_tape();
}

void adam_step(Tape& t, const std::vector<Param*>& params, const AdamConfig& cfg) {
  for (Param* p : params) {
    if (!p->used_on(t) || !t.has_grad(p->used_tensor())) continue;
    auto g = t.grad(p->used_tensor());
    std::size_t n = p->value.size();
    if (p->m.size() != n) {
      p->m.assign(n, 0.0);
      p->v.assign(n, 0.0);
    }
    ++p->steps;
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(p->steps));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(p->steps));
    double* w = p->value.raw().data();
    for (std::size_t i = 0; i < n; ++i) {
      p->m[i] = cfg.beta1 * p->m[i] + (1.0 - cfg.beta1) * g[i];
      p->v[i] = cfg.beta2 * p->v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      double mhat = p->m[i] / bc1;
      double vhat = p->v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
    }
  }
}

Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng) {
  std::vector<double> w(rows * cols);
  for (double& x : w) x = rng.normal();
  // Modified Gram-Schmidt over the shorter side.
  bool by_rows = rows <= cols;
  std::size_t nvec = by_rows ? rows : cols;
  std::size_t dim = by_rows ? cols : rows;
  auto at = [&](std::size_t vec, std::size_t d) -> double& {
    return by_rows ? w[vec * cols + d] : w[d * cols + vec];
  };
  for (std::size_t i = 0; i < nvec; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t d = 0; d < dim; ++d) dot += at(i, d) * at(j, d);
      for (std::size_t d = 0; d < dim; ++d) at(i, d) -= dot * at(j, d);
    }
    double norm = 0.0;
    for (std::size_t d = 0; d < dim; ++d) norm += at(i, d) * at(i, d);
    norm = std::sqrt(norm);
    if (norm < 1e-12) {
      // Degenerate draw; re-randomize this vector and redo it.
      for (std::size_t d = 0; d < dim; ++d) at(i, d) = rng.normal();
      --i;
      continue;
    }
    double inv = gain / norm;
    for (std::size_t d = 0; d < dim; ++d) at(i, d) *= inv;
  }
  return Tensor::mat(rows, cols, std::move(w));
}

LinearLayer::LinearLayer(const std::string& name, std::size_t in, std::size_t out, bool wn,
                         Rng& rng)
    : weight(name + ".W", orthogonal_init(out, in, 1.0, rng)),
      bias(name + ".b", Tensor::zeros(Shape::vec(out))),
      weight_norm(wn) {}

Tensor LinearLayer::forward(Tape& t, const Tensor& x, bool train_params) {
  Tensor w = weight.use(t, train_params);
  if (weight_norm) w = ops::weight_norm_project(t, w);
  return ops::linear_nt(t, x, w, bias.use(t, train_params));
}

void LinearLayer::collect(std::vector<Param*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

BatchNormLayer::BatchNormLayer(const std::string& name, std::size_t features, double momentum,
                               double epsilon)
    : gamma(name + ".gamma", Tensor::full(Shape::vec(features), 1.0)),
      beta(name + ".beta", Tensor::zeros(Shape::vec(features))),
      state(features, momentum, epsilon) {}

Tensor BatchNormLayer::forward(Tape& t, const Tensor& x, bool train_params, NormMode mode) {
  return ops::batch_norm(t, x, gamma.use(t, train_params), beta.use(t, train_params), state,
                         mode);
}

void BatchNormLayer::collect(std::vector<Param*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

Mlp::Mlp(const std::string& name, const MlpConfig& c, Rng& rng) : cfg(c) {
  std::size_t in = cfg.in;
  for (int i = 0; i < cfg.hidden_layers; ++i) {
    linears.emplace_back(name + ".l" + std::to_string(i), in, cfg.hidden, cfg.weight_norm, rng);
    if (cfg.batch_norm) {
      norms.emplace_back(name + ".bn" + std::to_string(i), cfg.hidden, cfg.bn_momentum,
                         cfg.bn_epsilon);
    }
    in = cfg.hidden;
  }
  if (cfg.final_layer) {
    head = LinearLayer(name + ".head", in, cfg.out, cfg.weight_norm, rng);
  }
}

Tensor Mlp::forward(Tape& t, const Tensor& x, bool train_params, NormMode mode) {
  Tensor h = x;
  for (std::size_t i = 0; i < linears.size(); ++i) {
    h = linears[i].forward(t, h, train_params);
    if (cfg.batch_norm) h = norms[i].forward(t, h, train_params, mode);
    h = ops::tanh(t, h);
  }
  if (cfg.final_layer) h = head.forward(t, h, train_params);
  return h;
}

void Mlp::collect(std::vector<Param*>& out) {
  for (auto& l : linears) l.collect(out);
  for (auto& n : norms) n.collect(out);
  if (cfg.final_layer) head.collect(out);
}

void collect_arrays(const std::vector<Param*>& params, std::vector<ArrayRef>& out) {
  for (Param* p : params) out.push_back({p->name, &p->value.raw()});
}

void collect_bn_arrays(const std::string& prefix, BatchNormState& st, std::vector<ArrayRef>& out) {
  out.push_back({prefix + ".running_mean", &st.running_mean});
  out.push_back({prefix + ".running_var", &st.running_var});
}

void polyak_update(const std::vector<ArrayRef>& target, const std::vector<ArrayRef>& online,
                   double tau) {
  if (target.size() != online.size()) {
    throw std::invalid_argument("polyak_update: array list size mismatch");
  }
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& tgt = *target[i].data;
    auto& src = *online[i].data;
    if (tgt.size() != src.size()) {
      throw std::invalid_argument("polyak_update: array size mismatch at " + target[i].name);
    }
    for (std::size_t j = 0; j < tgt.size(); ++j) {
      tgt[j] = (1.0 - tau) * tgt[j] + tau * src[j];
    }
  }
}

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void write_u32(std::FILE* f, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint write failed");
}

void write_u64(std::FILE* f, std::uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  if (std::fwrite(b, 1, 8, f) != 8) throw std::runtime_error("checkpoint write failed");
}

std::uint32_t read_u32(std::FILE* f) {
  unsigned char b[4];
  if (std::fread(b, 1, 4, f) != 4) throw std::runtime_error("checkpoint read failed");
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::FILE* f) {
  unsigned char b[8];
  if (std::fread(b, 1, 8, f) != 8) throw std::runtime_error("checkpoint read failed");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

constexpr std::uint32_t kCheckpointVersion = 1;

}  // namespace

void save_arrays(const std::string& path, const char magic[4],
                 const std::vector<ArrayRef>& arrays) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  if (std::fwrite(magic, 1, 4, f.get()) != 4) throw std::runtime_error("checkpoint write failed");
  write_u32(f.get(), kCheckpointVersion);
  write_u32(f.get(), static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    write_u32(f.get(), static_cast<std::uint32_t>(a.name.size()));
    if (std::fwrite(a.name.data(), 1, a.name.size(), f.get()) != a.name.size()) {
      throw std::runtime_error("checkpoint write failed");
    }
    write_u64(f.get(), a.data->size());
    static_assert(sizeof(double) == 8);
    // Raw doubles; this artifact targets little-endian hosts.
    if (std::fwrite(a.data->data(), sizeof(double), a.data->size(), f.get()) != a.data->size()) {
      throw std::runtime_error("checkpoint write failed");
    }
  }
}

void load_arrays(const std::string& path, const char magic[4],
                 const std::vector<ArrayRef>& arrays) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char got[4];
  if (std::fread(got, 1, 4, f.get()) != 4 || std::memcmp(got, magic, 4) != 0) {
    throw std::runtime_error("bad checkpoint magic in " + path);
  }
  std::uint32_t version = read_u32(f.get());
  if (version != kCheckpointVersion) {
    throw std::runtime_error("unsupported checkpoint version in " + path);
  }
  std::uint32_t count = read_u32(f.get());
  if (count != arrays.size()) {
    throw std::runtime_error("checkpoint array count mismatch in " + path);
  }
  for (const auto& a : arrays) {
    std::uint32_t name_len = read_u32(f.get());
    std::string name(name_len, '\0');
    if (std::fread(name.data(), 1, name_len, f.get()) != name_len) {
      throw std::runtime_error("checkpoint read failed");
    }
    if (name != a.name) {
      throw std::runtime_error("checkpoint array '" + name + "' does not match expected '" +
                               a.name + "'");
    }
    std::uint64_t n = read_u64(f.get());
    if (n != a.data->size()) {
      throw std::runtime_error("checkpoint array size mismatch for " + name);
    }
    if (std::fread(a.data->data(), sizeof(double), n, f.get()) != n) {
      throw std::runtime_error("checkpoint read failed");
    }
  }
}

}  // namespace xqcfd
