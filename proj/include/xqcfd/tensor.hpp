#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace xqcfd {

// Rank 0 (scalar), 1 (vector of `cols`) or 2 (rows x cols, row-major).
struct Shape {
  int rank = 0;
  std::size_t rows = 1;
  std::size_t cols = 1;

  static Shape scalar() { return {0, 1, 1}; }
  static Shape vec(std::size_t n) { return {1, 1, n}; }
  static Shape mat(std::size_t r, std::size_t c) { return {2, r, c}; }

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tape;

// Dense fp64 array with value semantics. Storage is shared and treated as
// immutable once the tensor participates in an op; `node` links the tensor
// to the tape that recorded it (-1 for constants).
class Tensor {
 public:
  Tensor() = default;

  static Tensor scalar(double v);
  static Tensor vec(std::vector<double> v);
  static Tensor mat(std::size_t r, std::size_t c, std::vector<double> v);
  static Tensor zeros(const Shape& s);
  static Tensor full(const Shape& s, double v);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return shape_.size(); }
  std::size_t rows() const { return shape_.rows; }
  std::size_t cols() const { return shape_.cols; }
  int rank() const { return shape_.rank; }
  bool empty() const { return !data_; }

  const double* data() const { return data_->data(); }
  double* mutable_data() { return data_->data(); }
  std::span<const double> values() const { return {data_->data(), data_->size()}; }
  double at(std::size_t i) const { return (*data_)[i]; }
  double at(std::size_t r, std::size_t c) const { return (*data_)[r * shape_.cols + c]; }
  double scalar_value() const;

  int node() const { return node_; }
  bool on_tape() const { return node_ >= 0; }

  // Same values, detached from the tape: gradients never flow past this.
  Tensor detached() const {
    Tensor t = *this;
    t.node_ = -1;
    return t;
  }

  // Deep copy of the storage (constant, off-tape).
  Tensor clone() const {
    Tensor t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<double>>(*data_);
    return t;
  }

  // Direct storage access for parameter updates and checkpointing.
  std::vector<double>& raw() { return *data_; }
  const std::vector<double>& raw() const { return *data_; }

 private:
  friend class Tape;
  friend Tensor make_tensor(const Shape&, std::shared_ptr<std::vector<double>>, int);
  friend const std::shared_ptr<std::vector<double>>& storage_of(const Tensor&);
  friend void attach_node(Tensor&, int);

  Shape shape_;
  std::shared_ptr<std::vector<double>> data_;
  int node_ = -1;
};

Tensor make_tensor(const Shape& s, std::shared_ptr<std::vector<double>> data, int node);
inline const std::shared_ptr<std::vector<double>>& storage_of(const Tensor& t) { return t.data_; }
// Internal: links an op result to its tape node.
inline void attach_node(Tensor& t, int node) { t.node_ = node; }

// Records one backward step per op. The closure receives the tape and the
// accumulated upstream gradient of the op's output.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::span<const double>)>;

  bool recording() const { return recording_; }
  void set_recording(bool on) { recording_ = on; }

  // Registers t as a leaf so gradients can be queried for it.
  void watch(Tensor& t);

  // Records an op node. Parents must already be on this tape (topological
  // order is enforced); returns the new node id.
  int record(std::initializer_list<int> parents, std::size_t out_size, BackwardFn fn);

  // Reverse sweep from a scalar loss; each node is visited exactly once.
  void backward(const Tensor& loss);

  bool has_grad(const Tensor& t) const;
  // Gradient of the last backward() w.r.t. t (zeros if nothing reached it).
  std::span<const double> grad(const Tensor& t);

  // Accumulation buffer for node `id`, zero-initialised to `size` on first use.
  std::vector<double>& grad_acc(int id, std::size_t size);

  void reset();
  // Globally unique per graph generation, so cached per-graph state can never
  // alias across tape instances or resets.
  std::uint64_t epoch() const { return epoch_; }
  std::size_t num_nodes() const { return nodes_.size(); }

  Tape() : epoch_(next_epoch()) {}

 private:
  static std::uint64_t next_epoch();

  struct Node {
    std::size_t out_size;
    BackwardFn backward;
  };
  std::vector<Node> nodes_;
  std::vector<std::vector<double>> grads_;
  bool recording_ = true;
  bool consumed_ = false;
  std::uint64_t epoch_ = 0;
};

// RAII guard suspending tape recording (forward-only evaluation).
class NoGradGuard {
 public:
  explicit NoGradGuard(Tape& t) : tape_(t), prev_(t.recording()) { tape_.set_recording(false); }
  ~NoGradGuard() { tape_.set_recording(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  Tape& tape_;
  bool prev_;
};

enum class NormMode { kTrain, kEval };

// Running statistics for batch normalization. Construction counts as the
// first update (identity stats), so eval mode is always well defined.
struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.01;
  double epsilon = 1e-5;

  explicit BatchNormState(std::size_t features = 0, double momentum_ = 0.01,
                          double epsilon_ = 1e-5)
      : running_mean(features, 0.0),
        running_var(features, 1.0),
        momentum(momentum_),
        epsilon(epsilon_) {}
};

namespace ops {

// Elementwise binary ops require identical shapes; use broadcast() first.
Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor div(Tape& t, const Tensor& a, const Tensor& b);

// x * c and x + c for a plain constant c.
Tensor scale(Tape& t, const Tensor& x, double c);
Tensor add_const(Tape& t, const Tensor& x, double c);

// Scalar -> any shape, or vector -> matrix replicating the vector as rows.
Tensor broadcast(Tape& t, const Tensor& x, const Shape& target);

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b);     // [m,k]@[k,n]
Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b);  // [m,k]@[n,k]^T
// x @ w^T + bias, the fused affine layer: w is [out, in], bias is [out].
Tensor linear_nt(Tape& t, const Tensor& x, const Tensor& w, const Tensor& bias);

Tensor tanh(Tape& t, const Tensor& x);
Tensor exp(Tape& t, const Tensor& x);
Tensor log(Tape& t, const Tensor& x);
Tensor sin(Tape& t, const Tensor& x);
Tensor cos(Tape& t, const Tensor& x);
Tensor square(Tape& t, const Tensor& x);
Tensor sqrt(Tape& t, const Tensor& x);
Tensor softplus(Tape& t, const Tensor& x);

Tensor sum(Tape& t, const Tensor& x);   // scalar
Tensor mean(Tape& t, const Tensor& x);  // scalar

Tensor clip(Tape& t, const Tensor& x, double lo, double hi);

Tensor concat_rows(Tape& t, const Tensor& a, const Tensor& b);
Tensor concat_cols(Tape& t, const Tensor& a, const Tensor& b);
Tensor slice_rows(Tape& t, const Tensor& x, std::size_t begin, std::size_t end);
// Columns of a and b alternated: out[:, 2j] = a[:, j], out[:, 2j+1] = b[:, j].
Tensor interleave_cols(Tape& t, const Tensor& a, const Tensor& b);

Tensor softmax_rows(Tape& t, const Tensor& x);
Tensor log_softmax_rows(Tape& t, const Tensor& x);

// Forward identity; contributes no gradient to x's ancestors.
Tensor stop_gradient(const Tensor& x);

// Train mode normalizes by in-batch statistics (biased variance) and updates
// the running statistics; eval mode normalizes by the running statistics.
// gamma/beta are the learnable per-feature scale and shift.
Tensor batch_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, NormMode mode);

// Rows of w divided by their Euclidean norms (no learnable gain).
Tensor weight_norm_project(Tape& t, const Tensor& w);

}  // namespace ops
}  // namespace xqcfd
