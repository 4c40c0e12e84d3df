#include "xqcfd/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <stdexcept>

#include <cblas-openblas.h>
#if defined(__GLIBC__)
#include <malloc.h>
#endif

#include "xqcfd/vmath.hpp"

namespace xqcfd {

namespace {
// Runs are parallelized across worker threads, one BLAS call at a time each;
// OpenBLAS spawning its own pool on top would oversubscribe the cores. The
// mmap threshold is raised so per-step activation buffers recycle through the
// freelist instead of being returned to the kernel and re-faulted.
struct RuntimeTuning {
  RuntimeTuning() {
    openblas_set_num_threads(1);
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 64 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 64 * 1024 * 1024);
#endif
  }
};
const RuntimeTuning runtime_tuning;
}  // namespace

std::string Shape::str() const {
  if (rank == 0) return "[]";
  if (rank == 1) return "[" + std::to_string(cols) + "]";
  return "[" + std::to_string(rows) + "x" + std::to_string(cols) + "]";
}

Tensor make_tensor(const Shape& s, std::shared_ptr<std::vector<double>> data, int node) {
  Tensor t;
  t.shape_ = s;
  t.data_ = std::move(data);
  t.node_ = node;
  return t;
}

Tensor Tensor::scalar(double v) {
  return make_tensor(Shape::scalar(), std::make_shared<std::vector<double>>(1, v), -1);
}

Tensor Tensor::vec(std::vector<double> v) {
  Shape s = Shape::vec(v.size());
  return make_tensor(s, std::make_shared<std::vector<double>>(std::move(v)), -1);
}

Tensor Tensor::mat(std::size_t r, std::size_t c, std::vector<double> v) {
  if (v.size() != r * c) throw std::invalid_argument("Tensor::mat: data size mismatch");
  return make_tensor(Shape::mat(r, c), std::make_shared<std::vector<double>>(std::move(v)), -1);
}

Tensor Tensor::zeros(const Shape& s) {
  return make_tensor(s, std::make_shared<std::vector<double>>(s.size(), 0.0), -1);
}

Tensor Tensor::full(const Shape& s, double v) {
  return make_tensor(s, std::make_shared<std::vector<double>>(s.size(), v), -1);
}

double Tensor::scalar_value() const {
  if (size() != 1) throw std::invalid_argument("scalar_value on tensor of shape " + shape_.str());
  return (*data_)[0];
}

void Tape::watch(Tensor& t) {
  if (!recording_) return;
  if (t.empty()) throw std::invalid_argument("cannot watch empty tensor");
  if (t.on_tape()) return;
  nodes_.push_back({t.size(), nullptr});
  grads_.emplace_back();
  t.node_ = static_cast<int>(nodes_.size()) - 1;
}

int Tape::record(std::initializer_list<int> parents, std::size_t out_size, BackwardFn fn) {
  int id = static_cast<int>(nodes_.size());
  for (int p : parents) {
    if (p >= id) throw std::logic_error("tape parents must precede the op");
  }
  nodes_.push_back({out_size, std::move(fn)});
  grads_.emplace_back();
  return id;
}

std::vector<double>& Tape::grad_acc(int id, std::size_t size) {
  auto& g = grads_.at(static_cast<std::size_t>(id));
  if (g.empty()) g.assign(size, 0.0);
  return g;
}

void Tape::backward(const Tensor& loss) {
  if (!loss.on_tape()) throw std::invalid_argument("backward: loss is not on the tape");
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (consumed_) throw std::logic_error("backward: tape already consumed");
  consumed_ = true;
  int root = loss.node();
  grad_acc(root, 1)[0] += 1.0;
  for (int i = root; i >= 0; --i) {
    auto& g = grads_[static_cast<std::size_t>(i)];
    if (g.empty()) continue;
    auto& fn = nodes_[static_cast<std::size_t>(i)].backward;
    if (fn) fn(*this, std::span<const double>(g.data(), g.size()));
  }
}

bool Tape::has_grad(const Tensor& t) const {
  return t.on_tape() && !grads_.at(static_cast<std::size_t>(t.node())).empty();
}

std::span<const double> Tape::grad(const Tensor& t) {
  if (!t.on_tape()) throw std::invalid_argument("grad: tensor is not on the tape");
  auto& g = grad_acc(t.node(), t.size());
  return {g.data(), g.size()};
}

void Tape::reset() {
  nodes_.clear();
  grads_.clear();
  consumed_ = false;
  epoch_ = next_epoch();
}

std::uint64_t Tape::next_epoch() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

namespace ops {
namespace {

void check_finite(const Tensor& t, const char* op) {
  if (!std::isfinite(abs_sum(t.data(), t.size()))) {
    throw std::domain_error(std::string("non-finite values produced by op '") + op + "'");
  }
}

Tensor alloc(const Shape& s) {
  return make_tensor(s, std::make_shared<std::vector<double>>(s.size()), -1);
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k,
          double alpha, const double* a, std::size_t lda, const double* b, std::size_t ldb,
          double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), alpha, a, static_cast<int>(lda), b, static_cast<int>(ldb),
              beta, c, static_cast<int>(ldc));
}

}  // namespace

namespace detail {

// Shared implementation for elementwise binaries with per-element local grads.
template <typename Fwd, typename Bwd>
Tensor binary_op(Tape& t, const Tensor& a, const Tensor& b, const char* name, Fwd fwd, Bwd bwd) {
  require(a.shape() == b.shape(),
          std::string(name) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  Tensor out = alloc(a.shape());
  fwd(a.data(), b.data(), out.mutable_data(), a.size());
  check_finite(out, name);
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b, bwd](Tape& tp, std::span<const double> g) {
                           bwd(tp, a, b, g);
                         }));
  }
  return out;
}

// Elementwise unaries where the local gradient is a function of (x, y).
template <typename Fwd, typename Bwd>
Tensor unary_op(Tape& t, const Tensor& x, const char* name, Fwd fwd, Bwd bwd) {
  Tensor out = alloc(x.shape());
  fwd(x.data(), out.mutable_data(), x.size());
  check_finite(out, name);
  if (t.recording() && x.on_tape()) {
    Tensor y = out;
    attach_node(out, t.record({x.node()}, out.size(), [x, y, bwd](Tape& tp, std::span<const double> g) {
      auto& gx = tp.grad_acc(x.node(), x.size());
      bwd(x.data(), y.data(), g.data(), gx.data(), x.size());
    }));
  }
  return out;
}

}  // namespace detail

using detail::binary_op;
using detail::unary_op;

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_op(
      t, a, b, "add",
      [](const double* pa, const double* pb, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
      },
      [](Tape& tp, const Tensor& a, const Tensor& b, std::span<const double> g) {
        if (a.on_tape()) {
          auto& ga = tp.grad_acc(a.node(), a.size());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.on_tape()) {
          auto& gb = tp.grad_acc(b.node(), b.size());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        }
      });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_op(
      t, a, b, "sub",
      [](const double* pa, const double* pb, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
      },
      [](Tape& tp, const Tensor& a, const Tensor& b, std::span<const double> g) {
        if (a.on_tape()) {
          auto& ga = tp.grad_acc(a.node(), a.size());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        }
        if (b.on_tape()) {
          auto& gb = tp.grad_acc(b.node(), b.size());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        }
      });
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_op(
      t, a, b, "mul",
      [](const double* pa, const double* pb, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
      },
      [](Tape& tp, const Tensor& a, const Tensor& b, std::span<const double> g) {
        if (a.on_tape()) {
          auto& ga = tp.grad_acc(a.node(), a.size());
          const double* pb = b.data();
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb[i];
        }
        if (b.on_tape()) {
          auto& gb = tp.grad_acc(b.node(), b.size());
          const double* pa = a.data();
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa[i];
        }
      });
}

Tensor div(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_op(
      t, a, b, "div",
      [](const double* pa, const double* pb, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = pa[i] / pb[i];
      },
      [](Tape& tp, const Tensor& a, const Tensor& b, std::span<const double> g) {
        const double* pa = a.data();
        const double* pb = b.data();
        if (a.on_tape()) {
          auto& ga = tp.grad_acc(a.node(), a.size());
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / pb[i];
        }
        if (b.on_tape()) {
          auto& gb = tp.grad_acc(b.node(), b.size());
          for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * pa[i] / (pb[i] * pb[i]);
        }
      });
}

Tensor scale(Tape& t, const Tensor& x, double c) {
  return unary_op(
      t, x, "scale",
      [c](const double* px, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * c;
      },
      [c](const double*, const double*, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c;
      });
}

Tensor add_const(Tape& t, const Tensor& x, double c) {
  return unary_op(
      t, x, "add_const",
      [c](const double* px, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] + c;
      },
      [](const double*, const double*, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i];
      });
}

Tensor broadcast(Tape& t, const Tensor& x, const Shape& target) {
  if (x.shape() == target) return x;
  bool from_scalar = x.size() == 1;
  bool row_to_mat = x.rank() == 1 && target.rank == 2 && x.cols() == target.cols;
  require(from_scalar || row_to_mat,
          "broadcast: unsupported " + x.shape().str() + " -> " + target.str());
  Tensor out = alloc(target);
  double* po = out.mutable_data();
  if (from_scalar) {
    std::fill(po, po + target.size(), x.at(0));
  } else {
    for (std::size_t r = 0; r < target.rows; ++r) {
      std::copy(x.data(), x.data() + x.cols(), po + r * target.cols);
    }
  }
  if (t.recording() && x.on_tape()) {
    attach_node(out, t.record({x.node()}, out.size(),
                         [x, target, from_scalar](Tape& tp, std::span<const double> g) {
                           auto& gx = tp.grad_acc(x.node(), x.size());
                           if (from_scalar) {
                             double s = 0.0;
                             for (double v : g) s += v;
                             gx[0] += s;
                           } else {
                             for (std::size_t r = 0; r < target.rows; ++r) {
                               const double* gr = g.data() + r * target.cols;
                               for (std::size_t c = 0; c < target.cols; ++c) gx[c] += gr[c];
                             }
                           }
                         }));
  }
  return out;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.rows(),
          "matmul: incompatible shapes " + a.shape().str() + " @ " + b.shape().str());
  std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor out = alloc(Shape::mat(m, n));
  gemm(false, false, m, n, k, 1.0, a.data(), k, b.data(), n, 0.0, out.mutable_data(), n);
  check_finite(out, "matmul");
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b, m, n, k](Tape& tp, std::span<const double> g) {
                           if (a.on_tape()) {
                             auto& ga = tp.grad_acc(a.node(), a.size());
                             gemm(false, true, m, k, n, 1.0, g.data(), n, b.data(), n, 1.0,
                                  ga.data(), k);
                           }
                           if (b.on_tape()) {
                             auto& gb = tp.grad_acc(b.node(), b.size());
                             gemm(true, false, k, n, m, 1.0, a.data(), k, g.data(), n, 1.0,
                                  gb.data(), n);
                           }
                         }));
  }
  return out;
}

Tensor matmul_nt(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "matmul_nt: incompatible shapes " + a.shape().str() + " @ " + b.shape().str() + "^T");
  std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor out = alloc(Shape::mat(m, n));
  gemm(false, true, m, n, k, 1.0, a.data(), k, b.data(), k, 0.0, out.mutable_data(), n);
  check_finite(out, "matmul_nt");
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b, m, n, k](Tape& tp, std::span<const double> g) {
                           if (a.on_tape()) {
                             auto& ga = tp.grad_acc(a.node(), a.size());
                             gemm(false, false, m, k, n, 1.0, g.data(), n, b.data(), k, 1.0,
                                  ga.data(), k);
                           }
                           if (b.on_tape()) {
                             auto& gb = tp.grad_acc(b.node(), b.size());
                             gemm(true, false, n, k, m, 1.0, g.data(), n, a.data(), k, 1.0,
                                  gb.data(), k);
                           }
                         }));
  }
  return out;
}

Tensor linear_nt(Tape& t, const Tensor& x, const Tensor& w, const Tensor& bias) {
  require(x.rank() == 2 && w.rank() == 2 && x.cols() == w.cols(),
          "linear_nt: incompatible shapes " + x.shape().str() + " @ " + w.shape().str() + "^T");
  require(bias.size() == w.rows(), "linear_nt: bias size mismatch");
  std::size_t m = x.rows(), k = x.cols(), n = w.rows();
  Tensor out = alloc(Shape::mat(m, n));
  double* po = out.mutable_data();
  gemm(false, true, m, n, k, 1.0, x.data(), k, w.data(), k, 0.0, po, n);
  const double* pb = bias.data();
  double guard = 0.0;
  for (std::size_t r = 0; r < m; ++r) {
    double* row = po + r * n;
    for (std::size_t c = 0; c < n; ++c) {
      row[c] += pb[c];
      guard += std::fabs(row[c]);
    }
  }
  if (!std::isfinite(guard)) throw std::domain_error("non-finite values produced by op 'linear_nt'");
  if (t.recording() && (x.on_tape() || w.on_tape() || bias.on_tape())) {
    attach_node(out, t.record({x.node(), w.node(), bias.node()}, out.size(),
                              [x, w, bias, m, n, k](Tape& tp, std::span<const double> g) {
                                if (x.on_tape()) {
                                  auto& gx = tp.grad_acc(x.node(), x.size());
                                  gemm(false, false, m, k, n, 1.0, g.data(), n, w.data(), k, 1.0,
                                       gx.data(), k);
                                }
                                if (w.on_tape()) {
                                  auto& gw = tp.grad_acc(w.node(), w.size());
                                  gemm(true, false, n, k, m, 1.0, g.data(), n, x.data(), k, 1.0,
                                       gw.data(), k);
                                }
                                if (bias.on_tape()) {
                                  auto& gb = tp.grad_acc(bias.node(), bias.size());
                                  for (std::size_t r = 0; r < m; ++r) {
                                    const double* row = g.data() + r * n;
                                    for (std::size_t c = 0; c < n; ++c) gb[c] += row[c];
                                  }
                                }
                              }));
  }
  return out;
}

Tensor tanh(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "tanh", [](const double* px, double* po, std::size_t n) { vtanh(px, po, n); },
      [](const double*, const double* y, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
      });
}

Tensor exp(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "exp", [](const double* px, double* po, std::size_t n) { vexp(px, po, n); },
      [](const double*, const double* y, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * y[i];
      });
}

Tensor log(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "log", [](const double* px, double* po, std::size_t n) { vlog(px, po, n); },
      [](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / px[i];
      });
}

Tensor sin(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "sin", [](const double* px, double* po, std::size_t n) { vsin(px, po, n); },
      [](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        std::vector<double> c(n);
        vcos(px, c.data(), n);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] * c[i];
      });
}

Tensor cos(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "cos", [](const double* px, double* po, std::size_t n) { vcos(px, po, n); },
      [](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        std::vector<double> s(n);
        vsin(px, s.data(), n);
        for (std::size_t i = 0; i < n; ++i) gx[i] -= g[i] * s[i];
      });
}

Tensor square(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "square",
      [](const double* px, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = px[i] * px[i];
      },
      [](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += 2.0 * g[i] * px[i];
      });
}

Tensor sqrt(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "sqrt",
      [](const double* px, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = std::sqrt(px[i]);
      },
      [](const double*, const double* y, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) gx[i] += 0.5 * g[i] / y[i];
      });
}

Tensor softplus(Tape& t, const Tensor& x) {
  return unary_op(
      t, x, "softplus", [](const double* px, double* po, std::size_t n) { vsoftplus(px, po, n); },
      [](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        // d softplus / dx = sigmoid(x) = 1 / (1 + e^{-x})
        std::vector<double> e(n);
        for (std::size_t i = 0; i < n; ++i) e[i] = -px[i];
        vexp(e.data(), e.data(), n);
        for (std::size_t i = 0; i < n; ++i) gx[i] += g[i] / (1.0 + e[i]);
      });
}

Tensor sum(Tape& t, const Tensor& x) {
  double s = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += px[i];
  Tensor out = Tensor::scalar(s);
  check_finite(out, "sum");
  if (t.recording() && x.on_tape()) {
    attach_node(out, t.record({x.node()}, 1, [x](Tape& tp, std::span<const double> g) {
      auto& gx = tp.grad_acc(x.node(), x.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0];
    }));
  }
  return out;
}

Tensor mean(Tape& t, const Tensor& x) {
  require(x.size() > 0, "mean: empty tensor");
  double s = 0.0;
  const double* px = x.data();
  for (std::size_t i = 0; i < x.size(); ++i) s += px[i];
  double inv_n = 1.0 / static_cast<double>(x.size());
  Tensor out = Tensor::scalar(s * inv_n);
  check_finite(out, "mean");
  if (t.recording() && x.on_tape()) {
    attach_node(out, t.record({x.node()}, 1, [x, inv_n](Tape& tp, std::span<const double> g) {
      auto& gx = tp.grad_acc(x.node(), x.size());
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[0] * inv_n;
    }));
  }
  return out;
}

Tensor clip(Tape& t, const Tensor& x, double lo, double hi) {
  require(lo <= hi, "clip: lo > hi");
  return unary_op(
      t, x, "clip",
      [lo, hi](const double* px, double* po, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) po[i] = std::min(std::max(px[i], lo), hi);
      },
      [lo, hi](const double* px, const double*, const double* g, double* gx, std::size_t n) {
        for (std::size_t i = 0; i < n; ++i) {
          if (px[i] >= lo && px[i] <= hi) gx[i] += g[i];
        }
      });
}

Tensor concat_rows(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.cols() == b.cols(),
          "concat_rows: incompatible shapes " + a.shape().str() + ", " + b.shape().str());
  Tensor out = alloc(Shape::mat(a.rows() + b.rows(), a.cols()));
  double* po = out.mutable_data();
  std::copy(a.data(), a.data() + a.size(), po);
  std::copy(b.data(), b.data() + b.size(), po + a.size());
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b](Tape& tp, std::span<const double> g) {
                           if (a.on_tape()) {
                             auto& ga = tp.grad_acc(a.node(), a.size());
                             for (std::size_t i = 0; i < a.size(); ++i) ga[i] += g[i];
                           }
                           if (b.on_tape()) {
                             auto& gb = tp.grad_acc(b.node(), b.size());
                             for (std::size_t i = 0; i < b.size(); ++i) gb[i] += g[a.size() + i];
                           }
                         }));
  }
  return out;
}

Tensor concat_cols(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && b.rank() == 2 && a.rows() == b.rows(),
          "concat_cols: incompatible shapes " + a.shape().str() + ", " + b.shape().str());
  std::size_t rows = a.rows(), ca = a.cols(), cb = b.cols();
  Tensor out = alloc(Shape::mat(rows, ca + cb));
  double* po = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy(a.data() + r * ca, a.data() + (r + 1) * ca, po + r * (ca + cb));
    std::copy(b.data() + r * cb, b.data() + (r + 1) * cb, po + r * (ca + cb) + ca);
  }
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b, rows, ca, cb](Tape& tp, std::span<const double> g) {
                           if (a.on_tape()) {
                             auto& ga = tp.grad_acc(a.node(), a.size());
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < ca; ++c)
                                 ga[r * ca + c] += g[r * (ca + cb) + c];
                           }
                           if (b.on_tape()) {
                             auto& gb = tp.grad_acc(b.node(), b.size());
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t c = 0; c < cb; ++c)
                                 gb[r * cb + c] += g[r * (ca + cb) + ca + c];
                           }
                         }));
  }
  return out;
}

Tensor slice_rows(Tape& t, const Tensor& x, std::size_t begin, std::size_t end) {
  require(x.rank() == 2 && begin < end && end <= x.rows(), "slice_rows: bad range");
  std::size_t cols = x.cols();
  Tensor out = alloc(Shape::mat(end - begin, cols));
  std::copy(x.data() + begin * cols, x.data() + end * cols, out.mutable_data());
  if (t.recording() && x.on_tape()) {
    attach_node(out, t.record({x.node()}, out.size(),
                         [x, begin, cols](Tape& tp, std::span<const double> g) {
                           auto& gx = tp.grad_acc(x.node(), x.size());
                           for (std::size_t i = 0; i < g.size(); ++i)
                             gx[begin * cols + i] += g[i];
                         }));
  }
  return out;
}

Tensor interleave_cols(Tape& t, const Tensor& a, const Tensor& b) {
  require(a.rank() == 2 && a.shape() == b.shape(), "interleave_cols: shapes must match");
  std::size_t rows = a.rows(), c = a.cols();
  Tensor out = alloc(Shape::mat(rows, 2 * c));
  double* po = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pa = a.data() + r * c;
    const double* pb = b.data() + r * c;
    double* pr = po + r * 2 * c;
    for (std::size_t j = 0; j < c; ++j) {
      pr[2 * j] = pa[j];
      pr[2 * j + 1] = pb[j];
    }
  }
  if (t.recording() && (a.on_tape() || b.on_tape())) {
    attach_node(out, t.record({a.node(), b.node()}, out.size(),
                         [a, b, rows, c](Tape& tp, std::span<const double> g) {
                           if (a.on_tape()) {
                             auto& ga = tp.grad_acc(a.node(), a.size());
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < c; ++j)
                                 ga[r * c + j] += g[r * 2 * c + 2 * j];
                           }
                           if (b.on_tape()) {
                             auto& gb = tp.grad_acc(b.node(), b.size());
                             for (std::size_t r = 0; r < rows; ++r)
                               for (std::size_t j = 0; j < c; ++j)
                                 gb[r * c + j] += g[r * 2 * c + 2 * j + 1];
                           }
                         }));
  }
  return out;
}

namespace {

// Shared softmax forward; writes row-wise softmax of x into out.
void softmax_forward(const Tensor& x, double* out) {
  std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> row(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * cols;
    double mx = px[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, px[c]);
    for (std::size_t c = 0; c < cols; ++c) row[c] = px[c] - mx;
    vexp(row.data(), row.data(), cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c];
    double inv = 1.0 / s;
    double* po = out + r * cols;
    for (std::size_t c = 0; c < cols; ++c) po[c] = row[c] * inv;
  }
}

}  // namespace

Tensor softmax_rows(Tape& t, const Tensor& x) {
  require(x.rank() == 2, "softmax_rows: expected matrix");
  Tensor out = alloc(x.shape());
  softmax_forward(x, out.mutable_data());
  check_finite(out, "softmax_rows");
  if (t.recording() && x.on_tape()) {
    Tensor y = out;
    attach_node(out, t.record({x.node()}, out.size(), [x, y](Tape& tp, std::span<const double> g) {
      auto& gx = tp.grad_acc(x.node(), x.size());
      std::size_t rows = x.rows(), cols = x.cols();
      for (std::size_t r = 0; r < rows; ++r) {
        const double* py = y.data() + r * cols;
        const double* pg = g.data() + r * cols;
        double dot = 0.0;
        for (std::size_t c = 0; c < cols; ++c) dot += pg[c] * py[c];
        double* pgx = gx.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) pgx[c] += py[c] * (pg[c] - dot);
      }
    }));
  }
  return out;
}

Tensor log_softmax_rows(Tape& t, const Tensor& x) {
  require(x.rank() == 2, "log_softmax_rows: expected matrix");
  std::size_t rows = x.rows(), cols = x.cols();
  Tensor out = alloc(x.shape());
  double* po = out.mutable_data();
  std::vector<double> row(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* px = x.data() + r * cols;
    double mx = px[0];
    for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, px[c]);
    for (std::size_t c = 0; c < cols; ++c) row[c] = px[c] - mx;
    vexp(row.data(), row.data(), cols);
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += row[c];
    double lse = mx + std::log(s);
    for (std::size_t c = 0; c < cols; ++c) po[r * cols + c] = px[c] - lse;
  }
  check_finite(out, "log_softmax_rows");
  if (t.recording() && x.on_tape()) {
    Tensor y = out;
    attach_node(out, t.record({x.node()}, out.size(), [x, y](Tape& tp, std::span<const double> g) {
      auto& gx = tp.grad_acc(x.node(), x.size());
      std::size_t rows = x.rows(), cols = x.cols();
      std::vector<double> p(cols);
      for (std::size_t r = 0; r < rows; ++r) {
        const double* py = y.data() + r * cols;
        const double* pg = g.data() + r * cols;
        vexp(py, p.data(), cols);
        double gsum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) gsum += pg[c];
        double* pgx = gx.data() + r * cols;
        for (std::size_t c = 0; c < cols; ++c) pgx[c] += pg[c] - p[c] * gsum;
      }
    }));
  }
  return out;
}

Tensor stop_gradient(const Tensor& x) { return x.detached(); }

Tensor batch_norm(Tape& t, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormState& state, NormMode mode) {
  require(x.rank() == 2, "batch_norm: expected matrix input");
  std::size_t batch = x.rows(), f = x.cols();
  require(gamma.size() == f && beta.size() == f, "batch_norm: scale/shift size mismatch");
  require(state.running_mean.size() == f, "batch_norm: state size mismatch");
  if (mode == NormMode::kTrain) require(batch >= 2, "batch_norm: train mode needs batch >= 2");

  auto xhat_sp = std::make_shared<std::vector<double>>(x.size());
  auto inv_std_sp = std::make_shared<std::vector<double>>(f);
  std::vector<double>& xhat = *xhat_sp;
  std::vector<double>& inv_std = *inv_std_sp;
  const double* px = x.data();

  std::vector<double> mu(f, 0.0);
  if (mode == NormMode::kTrain) {
    std::vector<double> sumsq(f, 0.0);
    for (std::size_t r = 0; r < batch; ++r) {
      const double* pr = px + r * f;
      for (std::size_t c = 0; c < f; ++c) {
        mu[c] += pr[c];
        sumsq[c] += pr[c] * pr[c];
      }
    }
    double inv_b = 1.0 / static_cast<double>(batch);
    double m = state.momentum;
    for (std::size_t c = 0; c < f; ++c) {
      mu[c] *= inv_b;
      double var = std::max(sumsq[c] * inv_b - mu[c] * mu[c], 0.0);
      inv_std[c] = 1.0 / std::sqrt(var + state.epsilon);
      state.running_mean[c] = (1.0 - m) * state.running_mean[c] + m * mu[c];
      state.running_var[c] = (1.0 - m) * state.running_var[c] + m * var;
    }
  } else {
    for (std::size_t c = 0; c < f; ++c) {
      mu[c] = state.running_mean[c];
      inv_std[c] = 1.0 / std::sqrt(state.running_var[c] + state.epsilon);
    }
  }

  Tensor out = alloc(x.shape());
  double* po = out.mutable_data();
  const double* pg = gamma.data();
  const double* pb = beta.data();
  double guard = 0.0;
  for (std::size_t r = 0; r < batch; ++r) {
    const double* pr = px + r * f;
    double* ph = xhat.data() + r * f;
    double* pout = po + r * f;
    for (std::size_t c = 0; c < f; ++c) {
      double h = (pr[c] - mu[c]) * inv_std[c];
      ph[c] = h;
      double v = pg[c] * h + pb[c];
      pout[c] = v;
      guard += std::fabs(v);
    }
  }
  if (!std::isfinite(guard)) throw std::domain_error("non-finite values produced by op 'batch_norm'");

  if (t.recording() && (x.on_tape() || gamma.on_tape() || beta.on_tape())) {
    bool train = mode == NormMode::kTrain;
    attach_node(out, t.record(
        {x.node(), gamma.node(), beta.node()}, out.size(),
        [x, gamma, beta, xhat_sp, inv_std_sp, batch, f, train](Tape& tp,
                                                               std::span<const double> g) {
          const std::vector<double>& xh = *xhat_sp;
          const std::vector<double>& is = *inv_std_sp;
          const double* pgam = gamma.data();
          if (beta.on_tape()) {
            auto& gb = tp.grad_acc(beta.node(), f);
            for (std::size_t r = 0; r < batch; ++r) {
              const double* gr = g.data() + r * f;
              for (std::size_t c = 0; c < f; ++c) gb[c] += gr[c];
            }
          }
          if (gamma.on_tape()) {
            auto& gg = tp.grad_acc(gamma.node(), f);
            for (std::size_t r = 0; r < batch; ++r) {
              const double* gr = g.data() + r * f;
              const double* hr = xh.data() + r * f;
              for (std::size_t c = 0; c < f; ++c) gg[c] += gr[c] * hr[c];
            }
          }
          if (!x.on_tape()) return;
          auto& gx = tp.grad_acc(x.node(), x.size());
          if (!train) {
            for (std::size_t r = 0; r < batch; ++r) {
              const double* gr = g.data() + r * f;
              double* gxr = gx.data() + r * f;
              for (std::size_t c = 0; c < f; ++c) gxr[c] += gr[c] * pgam[c] * is[c];
            }
            return;
          }
          // Train mode couples the whole batch through mu and var.
          std::vector<double> sum_dh(f, 0.0), sum_dh_h(f, 0.0);
          for (std::size_t r = 0; r < batch; ++r) {
            const double* gr = g.data() + r * f;
            const double* hr = xh.data() + r * f;
            for (std::size_t c = 0; c < f; ++c) {
              double dh = gr[c] * pgam[c];
              sum_dh[c] += dh;
              sum_dh_h[c] += dh * hr[c];
            }
          }
          double inv_b = 1.0 / static_cast<double>(batch);
          for (std::size_t r = 0; r < batch; ++r) {
            const double* gr = g.data() + r * f;
            const double* hr = xh.data() + r * f;
            double* gxr = gx.data() + r * f;
            for (std::size_t c = 0; c < f; ++c) {
              double dh = gr[c] * pgam[c];
              gxr[c] += is[c] * (dh - inv_b * sum_dh[c] - hr[c] * inv_b * sum_dh_h[c]);
            }
          }
        }));
  }
  return out;
}

Tensor weight_norm_project(Tape& t, const Tensor& w) {
  require(w.rank() == 2, "weight_norm_project: expected matrix");
  std::size_t rows = w.rows(), cols = w.cols();
  auto norms_sp = std::make_shared<std::vector<double>>(rows);
  std::vector<double>& norms = *norms_sp;
  Tensor out = alloc(w.shape());
  double* po = out.mutable_data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pw = w.data() + r * cols;
    double s = 0.0;
    for (std::size_t c = 0; c < cols; ++c) s += pw[c] * pw[c];
    double norm = std::sqrt(s);
    if (norm < 1e-150) throw std::domain_error("weight_norm_project: zero-norm row");
    norms[r] = norm;
    double inv = 1.0 / norm;
    double* pr = po + r * cols;
    for (std::size_t c = 0; c < cols; ++c) pr[c] = pw[c] * inv;
  }
  check_finite(out, "weight_norm_project");
  if (t.recording() && w.on_tape()) {
    Tensor y = out;
    attach_node(out, t.record({w.node()}, out.size(),
                         [w, y, norms_sp, rows, cols](Tape& tp, std::span<const double> g) {
                           auto& gw = tp.grad_acc(w.node(), w.size());
                           const std::vector<double>& ns = *norms_sp;
                           for (std::size_t r = 0; r < rows; ++r) {
                             const double* py = y.data() + r * cols;
                             const double* pg = g.data() + r * cols;
                             double dot = 0.0;
                             for (std::size_t c = 0; c < cols; ++c) dot += pg[c] * py[c];
                             double inv = 1.0 / ns[r];
                             double* pgw = gw.data() + r * cols;
                             for (std::size_t c = 0; c < cols; ++c) {
                               pgw[c] += (pg[c] - dot * py[c]) * inv;
                             }
                           }
                         }));
  }
  return out;
}

}  // namespace ops
}  // namespace xqcfd
