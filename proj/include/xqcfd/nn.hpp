#pragma once

#include <string>
#include <vector>

#include "xqcfd/rng.hpp"
#include "xqcfd/tensor.hpp"

namespace xqcfd {

// Trainable array plus its Adam accumulators. `use` registers the value on
// the tape (once per graph) so the optimizer can look the gradient up later.
struct Param {
  std::string name;
  Tensor value;
  std::vector<double> m, v;
  long steps = 0;

  Param() = default;
  Param(std::string n, Tensor init) : name(std::move(n)), value(std::move(init)) {}

  Tensor use(Tape& t, bool trainable);
  bool used_on(const Tape& t) const;
  const Tensor& used_tensor() const { return used_; }

 private:
  const Tape* used_tape_ = nullptr;
  std::uint64_t used_epoch_ = 0;
  Tensor used_;
};

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

// Bias-corrected Adam update from the gradients held by the tape. Params that
// were not used in the current graph are left untouched.
void adam_step(Tape& t, const std::vector<Param*>& params, const AdamConfig& cfg);

// Rows orthonormalized when rows <= cols (columns otherwise), scaled by gain.
Tensor orthogonal_init(std::size_t rows, std::size_t cols, double gain, Rng& rng);

struct LinearLayer {
  Param weight;  // [out, in], applied as x @ W^T
  Param bias;    // [out]
  bool weight_norm = false;

  LinearLayer() = default;
  LinearLayer(const std::string& name, std::size_t in, std::size_t out, bool wn, Rng& rng);
  Tensor forward(Tape& t, const Tensor& x, bool train_params);
  void collect(std::vector<Param*>& out);
};

struct BatchNormLayer {
  Param gamma;  // [f], init 1
  Param beta;   // [f], init 0
  BatchNormState state;

  BatchNormLayer() = default;
  BatchNormLayer(const std::string& name, std::size_t features, double momentum, double epsilon);
  Tensor forward(Tape& t, const Tensor& x, bool train_params, NormMode mode);
  void collect(std::vector<Param*>& out);
};

// Linear [-> batch norm] -> tanh stack with a final plain linear head.
// This is the body shared by the critic and the policy trunks.
struct MlpConfig {
  std::size_t in = 0;
  std::size_t hidden = 64;
  std::size_t out = 0;
  int hidden_layers = 2;
  bool batch_norm = true;
  bool weight_norm = true;
  bool final_layer = true;  // when false the output is the last hidden activation
  double bn_momentum = 0.01;
  double bn_epsilon = 1e-5;
};

struct Mlp {
  MlpConfig cfg;
  std::vector<LinearLayer> linears;
  std::vector<BatchNormLayer> norms;
  LinearLayer head;

  Mlp() = default;
  Mlp(const std::string& name, const MlpConfig& cfg, Rng& rng);
  Tensor forward(Tape& t, const Tensor& x, bool train_params, NormMode mode);
  void collect(std::vector<Param*>& out);
  std::size_t out_dim() const { return cfg.final_layer ? cfg.out : cfg.hidden; }
};

// Named fp64 array reference for checkpointing and polyak averaging.
struct ArrayRef {
  std::string name;
  std::vector<double>* data;
};

// Parameter values plus batch-norm running statistics, in declaration order.
void collect_arrays(const std::vector<Param*>& params, std::vector<ArrayRef>& out);
void collect_bn_arrays(const std::string& prefix, BatchNormState& st, std::vector<ArrayRef>& out);

// target <- (1 - tau) * target + tau * online, elementwise over all arrays.
void polyak_update(const std::vector<ArrayRef>& target, const std::vector<ArrayRef>& online,
                   double tau);

// Flat binary checkpoint: magic (4 bytes), version u32, then per array a
// length-prefixed name, u64 element count and raw little-endian fp64 values.
void save_arrays(const std::string& path, const char magic[4],
                 const std::vector<ArrayRef>& arrays);
void load_arrays(const std::string& path, const char magic[4],
                 const std::vector<ArrayRef>& arrays);

}  // namespace xqcfd
