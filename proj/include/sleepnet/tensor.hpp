#pragma once

// Dense tensors with reverse-mode automatic differentiation. Operations run
// eagerly and record their backward rules on the thread's active Tape; a
// backward() traversal replays the records in reverse. Real is float for
// training and double for gradient checks.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "sleepnet/common.hpp"

namespace sleepnet {

template <typename Real>
struct Storage {
  std::vector<Real> data;
  std::vector<Real> grad;  // allocated on first accumulation
  bool requires_grad = false;
  bool is_leaf = true;  // leaves keep their gradient across backward calls

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  }
};

template <typename Real>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), {}, requires_grad, true);
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.store_->data.begin(), t.store_->data.end(), value);
    return t;
  }

  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false) {
    if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values do not fill shape " + shape_to_string(shape));
    return Tensor(std::move(shape), std::move(values), requires_grad, false);
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(store_); }
  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t size() const { return static_cast<std::int64_t>(store_->data.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }

  std::span<Real> data() { return store_->data; }
  std::span<const Real> data() const { return store_->data; }
  Real item() const {
    if (size() != 1) throw ContractError("item: tensor has " + std::to_string(size()) + " elements");
    return store_->data[0];
  }

  bool requires_grad() const { return store_ && store_->requires_grad; }
  bool is_leaf() const { return store_ && store_->is_leaf; }

  // Gradient accumulated so far; empty span if none has been written.
  std::span<const Real> grad() const {
    if (!store_ || store_->grad.empty()) return {};
    return store_->grad;
  }

  void zero_grad() {
    if (store_ && store_->requires_grad) store_->grad.assign(store_->data.size(), Real(0));
  }

  // Same storage under a different shape; no data copied, gradients flow through.
  Tensor reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != size())
      throw DimensionError("reshape: cannot view " + shape_to_string(shape_) + " as " +
                           shape_to_string(new_shape));
    Tensor t;
    t.shape_ = std::move(new_shape);
    t.store_ = store_;
    return t;
  }

  // Deep copy. The copy is a leaf.
  Tensor clone(bool requires_grad) const {
    Tensor t = from(shape_, store_->data, requires_grad);
    return t;
  }

  Storage<Real>* storage() const { return store_.get(); }
  const std::shared_ptr<Storage<Real>>& storage_ptr() const { return store_; }

  // Accumulates `g` (same length as data) into the gradient buffer.
  void accumulate_grad(std::span<const Real> g) {
    store_->ensure_grad();
    Real* dst = store_->grad.data();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  }

 private:
  Tensor(Shape shape, std::vector<Real> values, bool requires_grad, bool zero_fill)
      : shape_(std::move(shape)), store_(std::make_shared<Storage<Real>>()) {
    if (zero_fill)
      store_->data.assign(static_cast<std::size_t>(shape_numel(shape_)), Real(0));
    else
      store_->data = std::move(values);
    store_->requires_grad = requires_grad;
  }

  Shape shape_;
  std::shared_ptr<Storage<Real>> store_;
};

// Records the backward rules of every differentiable operation executed while
// the tape is active. Creation order is a topological order of the graph, so
// one reverse sweep propagates all gradients. A tape must be driven by a
// single thread; distinct threads use distinct tapes.
template <typename Real>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  static Tape*& current() {
    thread_local Tape* cur = nullptr;
    return cur;
  }

  void record(std::shared_ptr<Storage<Real>> output, std::function<void()> backward_rule) {
    output->is_leaf = false;
    output->requires_grad = true;
    nodes_.push_back(Node{std::move(output), std::move(backward_rule)});
  }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and replays the tape in reverse. Gradients of
  // leaf tensors accumulate across calls; intermediate gradients are reset at
  // the start of every call.
  void backward(const Tensor<Real>& loss) {
    if (!loss.defined() || loss.size() != 1)
      throw ContractError("backward: loss must be a scalar tensor, got shape " +
                          (loss.defined() ? shape_to_string(loss.shape()) : std::string("<empty>")));
    for (auto& n : nodes_) {
      n.output->grad.assign(n.output->data.size(), Real(0));
    }
    loss.storage()->ensure_grad();
    loss.storage()->grad[0] = Real(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      if (!it->output->grad.empty()) it->rule();
    }
  }

 private:
  struct Node {
    std::shared_ptr<Storage<Real>> output;
    std::function<void()> rule;
  };
  std::vector<Node> nodes_;
};

// Installs a tape as the thread's active tape for the enclosing scope.
template <typename Real>
class TapeScope {
 public:
  explicit TapeScope(Tape<Real>& tape) : prev_(Tape<Real>::current()) {
    Tape<Real>::current() = &tape;
  }
  ~TapeScope() { Tape<Real>::current() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape<Real>* prev_;
};

// ---------------------------------------------------------------------------
// Kernels. Row-major contiguous matrices, double accumulators.
// ---------------------------------------------------------------------------

namespace kernels {

// C [m x n] (+)= A [m x k] * B [k x n]
template <typename Real>
void mm_nn(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
  std::vector<double> row(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < m; ++i) {
    std::fill(row.begin(), row.end(), 0.0);
    const Real* arow = a + i * k;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(arow[p]);
      if (av == 0.0) continue;
      const Real* brow = b + p * n;
      for (std::int64_t j = 0; j < n; ++j) row[static_cast<std::size_t>(j)] += av * brow[j];
    }
    Real* crow = c + i * n;
    if (accumulate)
      for (std::int64_t j = 0; j < n; ++j) crow[j] += static_cast<Real>(row[static_cast<std::size_t>(j)]);
    else
      for (std::int64_t j = 0; j < n; ++j) crow[j] = static_cast<Real>(row[static_cast<std::size_t>(j)]);
  }
}

// C [m x n] (+)= A [m x k] * B^T, B given as [n x k]
template <typename Real>
void mm_nt(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
  for (std::int64_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    Real* crow = c + i * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const Real* brow = b + j * k;
      double acc = 0.0;
      for (std::int64_t p = 0; p < k; ++p) acc += static_cast<double>(arow[p]) * static_cast<double>(brow[p]);
      if (accumulate)
        crow[j] += static_cast<Real>(acc);
      else
        crow[j] = static_cast<Real>(acc);
    }
  }
}

// C [k x n] (+)= A^T * B, A given as [m x k], B as [m x n]
template <typename Real>
void mm_tn(const Real* a, const Real* b, Real* c, std::int64_t m, std::int64_t k, std::int64_t n,
           bool accumulate) {
  std::vector<double> acc(static_cast<std::size_t>(k * n), 0.0);
  for (std::int64_t i = 0; i < m; ++i) {
    const Real* arow = a + i * k;
    const Real* brow = b + i * n;
    for (std::int64_t p = 0; p < k; ++p) {
      const double av = static_cast<double>(arow[p]);
      if (av == 0.0) continue;
      double* crow = acc.data() + p * n;
      for (std::int64_t j = 0; j < n; ++j) crow[j] += av * static_cast<double>(brow[j]);
    }
  }
  if (accumulate)
    for (std::int64_t i = 0; i < k * n; ++i) c[i] += static_cast<Real>(acc[static_cast<std::size_t>(i)]);
  else
    for (std::int64_t i = 0; i < k * n; ++i) c[i] = static_cast<Real>(acc[static_cast<std::size_t>(i)]);
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
void record_if_tracked(const Tensor<Real>& out, bool tracked, std::function<void()> rule) {
  auto* tape = Tape<Real>::current();
  if (tape && tracked) tape->record(out.storage_ptr(), std::move(rule));
}

template <typename Real>
inline std::span<const Real> out_grad(const Tensor<Real>& out) {
  return out.storage()->grad;
}

}  // namespace detail

// matmul helpers ---------------------------------------------------------

template <typename Real>
void check_matrix(const Tensor<Real>& t, const char* op) {
  if (!t.defined() || t.rank() != 2)
    throw DimensionError(std::string(op) + ": expected a rank-2 tensor, got " +
                         (t.defined() ? shape_to_string(t.shape()) : std::string("<empty>")));
}

// Standard matrix product a [m x k] * b [k x n].
template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_matrix(a, "matmul");
  check_matrix(b, "matmul");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw DimensionError("matmul: inner dimensions disagree: " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  const bool tracked = a.requires_grad() || b.requires_grad();
  auto out = Tensor<Real>::zeros({m, n});
  kernels::mm_nn(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
  detail::record_if_tracked(out, tracked, [a, b, out, m, k, n]() {
    const Real* go = detail::out_grad(out).data();
    if (a.requires_grad()) {
      a.storage()->ensure_grad();
      kernels::mm_nt(go, b.data().data(), a.storage()->grad.data(), m, n, k, true);
    }
    if (b.requires_grad()) {
      b.storage()->ensure_grad();
      kernels::mm_tn(a.data().data(), go, b.storage()->grad.data(), m, k, n, true);
    }
  });
  return out;
}

// a [m x k] * b^T with b stored [n x k]; the shape every layer keeps its
// weights in, so no transpose copies are needed on the forward path.
template <typename Real>
Tensor<Real> matmul_nt(const Tensor<Real>& a, const Tensor<Real>& b) {
  check_matrix(a, "matmul_nt");
  check_matrix(b, "matmul_nt");
  const std::int64_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k)
    throw DimensionError("matmul_nt: inner dimensions disagree: " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  const bool tracked = a.requires_grad() || b.requires_grad();
  auto out = Tensor<Real>::zeros({m, n});
  kernels::mm_nt(a.data().data(), b.data().data(), out.data().data(), m, k, n, false);
  detail::record_if_tracked(out, tracked, [a, b, out, m, k, n]() {
    const Real* go = detail::out_grad(out).data();
    if (a.requires_grad()) {
      a.storage()->ensure_grad();
      kernels::mm_nn(go, b.data().data(), a.storage()->grad.data(), m, n, k, true);
    }
    if (b.requires_grad()) {
      b.storage()->ensure_grad();
      kernels::mm_tn(go, a.data().data(), b.storage()->grad.data(), m, n, k, true);
    }
  });
  return out;
}

// Batched product a [B x m x k] * b [B x k x n].
template <typename Real>
Tensor<Real> bmm(const Tensor<Real>& a, const Tensor<Real>& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
    throw DimensionError("bmm: incompatible shapes " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  const std::int64_t bs = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  const bool tracked = a.requires_grad() || b.requires_grad();
  auto out = Tensor<Real>::zeros({bs, m, n});
  for (std::int64_t i = 0; i < bs; ++i)
    kernels::mm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n,
                   out.data().data() + i * m * n, m, k, n, false);
  detail::record_if_tracked(out, tracked, [a, b, out, bs, m, k, n]() {
    const Real* go = detail::out_grad(out).data();
    if (a.requires_grad()) {
      a.storage()->ensure_grad();
      for (std::int64_t i = 0; i < bs; ++i)
        kernels::mm_nt(go + i * m * n, b.data().data() + i * k * n,
                       a.storage()->grad.data() + i * m * k, m, n, k, true);
    }
    if (b.requires_grad()) {
      b.storage()->ensure_grad();
      for (std::int64_t i = 0; i < bs; ++i)
        kernels::mm_tn(a.data().data() + i * m * k, go + i * m * n,
                       b.storage()->grad.data() + i * k * n, m, k, n, true);
    }
  });
  return out;
}

// Elementwise binaries ------------------------------------------------------

namespace detail {

// Trailing broadcast: b's shape must equal the trailing suffix of a's.
template <typename Real>
std::int64_t broadcast_span(const Tensor<Real>& a, const Tensor<Real>& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sb.size() > sa.size())
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_to_string(sb) +
                         " onto smaller " + shape_to_string(sa));
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[sb.size() - 1 - i] != sa[sa.size() - 1 - i])
      throw DimensionError(std::string(op) + ": shapes " + shape_to_string(sa) + " and " +
                           shape_to_string(sb) + " do not share a trailing suffix");
  }
  return shape_numel(sb);
}

enum class BinOp { Add, Sub, Mul };

template <typename Real>
Tensor<Real> binary(BinOp which, const Tensor<Real>& a, const Tensor<Real>& b, const char* name) {
  const std::int64_t bn = broadcast_span(a, b, name);
  const std::int64_t an = shape_numel(a.shape());
  const bool tracked = a.requires_grad() || b.requires_grad();
  auto out = Tensor<Real>::zeros(a.shape());
  const Real* pa = a.data().data();
  const Real* pb = b.data().data();
  Real* po = out.data().data();
  switch (which) {
    case BinOp::Add:
      for (std::int64_t i = 0; i < an; ++i) po[i] = pa[i] + pb[i % bn];
      break;
    case BinOp::Sub:
      for (std::int64_t i = 0; i < an; ++i) po[i] = pa[i] - pb[i % bn];
      break;
    case BinOp::Mul:
      for (std::int64_t i = 0; i < an; ++i) po[i] = pa[i] * pb[i % bn];
      break;
  }
  record_if_tracked(out, tracked, [which, a, b, out, an, bn]() {
    const Real* go = out_grad(out).data();
    const Real sign = (which == BinOp::Sub) ? Real(-1) : Real(1);
    if (a.requires_grad()) {
      a.storage()->ensure_grad();
      Real* ga = a.storage()->grad.data();
      if (which == BinOp::Mul) {
        const Real* pb2 = b.data().data();
        for (std::int64_t i = 0; i < an; ++i) ga[i] += go[i] * pb2[i % bn];
      } else {
        for (std::int64_t i = 0; i < an; ++i) ga[i] += go[i];
      }
    }
    if (b.requires_grad()) {
      b.storage()->ensure_grad();
      Real* gb = b.storage()->grad.data();
      if (which == BinOp::Mul) {
        const Real* pa2 = a.data().data();
        for (std::int64_t i = 0; i < an; ++i) gb[i % bn] += go[i] * pa2[i];
      } else {
        for (std::int64_t i = 0; i < an; ++i) gb[i % bn] += sign * go[i];
      }
    }
  });
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(detail::BinOp::Add, a, b, "add");
}
template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(detail::BinOp::Sub, a, b, "sub");
}
template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
  return detail::binary(detail::BinOp::Mul, a, b, "mul");
}

// scale * x + shift, with compile-time-constant coefficients.
template <typename Real>
Tensor<Real> affine(const Tensor<Real>& x, Real scale, Real shift) {
  auto out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = scale * px[i] + shift;
  detail::record_if_tracked(out, x.requires_grad(), [x, out, scale, n]() {
    const Real* go = detail::out_grad(out).data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += scale * go[i];
  });
  return out;
}

// Elementwise unaries --------------------------------------------------------

namespace detail {

template <typename Real, typename Fwd, typename Bwd>
Tensor<Real> unary(const Tensor<Real>& x, Fwd fwd, Bwd bwd_from_out) {
  auto out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  const std::int64_t n = x.size();
  for (std::int64_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
  record_if_tracked(out, x.requires_grad(), [x, out, bwd_from_out, n]() {
    const Real* go = out_grad(out).data();
    const Real* py = out.data().data();
    const Real* px2 = x.data().data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * bwd_from_out(px2[i], py[i]);
  });
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> tanh_op(const Tensor<Real>& x) {
  return detail::unary(
      x, [](Real v) { return std::tanh(v); },
      [](Real, Real y) { return Real(1) - y * y; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& x) {
  return detail::unary(
      x,
      [](Real v) {
        if (v >= Real(0)) {
          const Real e = std::exp(-v);
          return Real(1) / (Real(1) + e);
        }
        const Real e = std::exp(v);
        return e / (Real(1) + e);
      },
      [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> exp_op(const Tensor<Real>& x) {
  return detail::unary(
      x, [](Real v) { return std::exp(v); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log_op(const Tensor<Real>& x) {
  for (Real v : x.data())
    if (!(v > Real(0))) throw DomainError("log: input " + std::to_string(static_cast<double>(v)) + " is not positive");
  return detail::unary(
      x, [](Real v) { return std::log(v); }, [](Real v, Real) { return Real(1) / v; });
}

// log(max(x, floor)); flat (zero-gradient) below the floor.
template <typename Real>
Tensor<Real> log_clipped(const Tensor<Real>& x, Real floor) {
  return detail::unary(
      x, [floor](Real v) { return std::log(v < floor ? floor : v); },
      [floor](Real v, Real) { return v < floor ? Real(0) : Real(1) / v; });
}

// Softmax ---------------------------------------------------------------------

// Numerically stable softmax along `axis`.
template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& x, std::int64_t axis) {
  if (!x.defined() || x.rank() == 0) throw DimensionError("softmax: undefined input");
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
  std::int64_t outer = 1, inner = 1;
  const std::int64_t len = x.dim(axis);
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  auto out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      const std::int64_t base = o * len * inner + in;
      Real mx = px[base];
      for (std::int64_t j = 1; j < len; ++j) mx = std::max(mx, px[base + j * inner]);
      double sum = 0.0;
      for (std::int64_t j = 0; j < len; ++j) {
        const Real e = std::exp(px[base + j * inner] - mx);
        po[base + j * inner] = e;
        sum += static_cast<double>(e);
      }
      const Real norm = static_cast<Real>(1.0 / sum);
      for (std::int64_t j = 0; j < len; ++j) po[base + j * inner] *= norm;
    }
  }
  detail::record_if_tracked(out, x.requires_grad(), [x, out, outer, inner, len]() {
    const Real* go = detail::out_grad(out).data();
    const Real* py = out.data().data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t o = 0; o < outer; ++o) {
      for (std::int64_t in = 0; in < inner; ++in) {
        const std::int64_t base = o * len * inner + in;
        double dot = 0.0;
        for (std::int64_t j = 0; j < len; ++j)
          dot += static_cast<double>(go[base + j * inner]) * static_cast<double>(py[base + j * inner]);
        for (std::int64_t j = 0; j < len; ++j) {
          const std::int64_t idx = base + j * inner;
          gx[idx] += py[idx] * (go[idx] - static_cast<Real>(dot));
        }
      }
    }
  });
  return out;
}

// Reductions -------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum_all(const Tensor<Real>& x) {
  double acc = 0.0;
  for (Real v : x.data()) acc += static_cast<double>(v);
  auto out = Tensor<Real>::scalar(static_cast<Real>(acc));
  const std::int64_t n = x.size();
  detail::record_if_tracked(out, x.requires_grad(), [x, out, n]() {
    const Real g = detail::out_grad(out)[0];
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += g;
  });
  return out;
}

namespace detail {

template <typename Real>
Tensor<Real> reduce_axis(const Tensor<Real>& x, std::int64_t axis, bool mean) {
  if (axis < 0) axis += x.rank();
  if (axis < 0 || axis >= x.rank())
    throw DimensionError("reduce: axis " + std::to_string(axis) + " out of range for " +
                         shape_to_string(x.shape()));
  std::int64_t outer = 1, inner = 1;
  const std::int64_t len = x.dim(axis);
  for (std::int64_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::int64_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  Shape out_shape;
  for (std::int64_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.dim(i));
  if (out_shape.empty()) out_shape.push_back(1);

  auto out = Tensor<Real>::zeros(out_shape);
  const Real* px = x.data().data();
  Real* po = out.data().data();
  const Real scale = mean ? Real(1) / static_cast<Real>(len) : Real(1);
  for (std::int64_t o = 0; o < outer; ++o) {
    for (std::int64_t in = 0; in < inner; ++in) {
      double acc = 0.0;
      for (std::int64_t j = 0; j < len; ++j) acc += static_cast<double>(px[o * len * inner + j * inner + in]);
      po[o * inner + in] = static_cast<Real>(acc) * scale;
    }
  }
  record_if_tracked(out, x.requires_grad(), [x, out, outer, inner, len, scale]() {
    const Real* go = out_grad(out).data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t o = 0; o < outer; ++o)
      for (std::int64_t in = 0; in < inner; ++in) {
        const Real g = go[o * inner + in] * scale;
        for (std::int64_t j = 0; j < len; ++j) gx[o * len * inner + j * inner + in] += g;
      }
  });
  return out;
}

}  // namespace detail

template <typename Real>
Tensor<Real> reduce_sum(const Tensor<Real>& x, std::int64_t axis) {
  return detail::reduce_axis(x, axis, false);
}
template <typename Real>
Tensor<Real> reduce_mean(const Tensor<Real>& x, std::int64_t axis) {
  return detail::reduce_axis(x, axis, true);
}

// Layout ops --------------------------------------------------------------------

// Rows [start, start+count) of a rank-2 tensor.
template <typename Real>
Tensor<Real> row_block(const Tensor<Real>& x, std::int64_t start, std::int64_t count) {
  check_matrix(x, "row_block");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 0 || start + count > rows)
    throw DimensionError("row_block: rows [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_to_string(x.shape()));
  auto out = Tensor<Real>::zeros({count, cols});
  std::memcpy(out.data().data(), x.data().data() + start * cols,
              static_cast<std::size_t>(count * cols) * sizeof(Real));
  detail::record_if_tracked(out, x.requires_grad(), [x, out, start, count, cols]() {
    const Real* go = detail::out_grad(out).data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data() + start * cols;
    for (std::int64_t i = 0; i < count * cols; ++i) gx[i] += go[i];
  });
  return out;
}

// Columns [start, start+count) of a rank-2 tensor.
template <typename Real>
Tensor<Real> col_block(const Tensor<Real>& x, std::int64_t start, std::int64_t count) {
  check_matrix(x, "col_block");
  const std::int64_t rows = x.dim(0), cols = x.dim(1);
  if (start < 0 || count < 0 || start + count > cols)
    throw DimensionError("col_block: cols [" + std::to_string(start) + ", " +
                         std::to_string(start + count) + ") outside " + shape_to_string(x.shape()));
  auto out = Tensor<Real>::zeros({rows, count});
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for (std::int64_t i = 0; i < rows; ++i)
    std::memcpy(po + i * count, px + i * cols + start, static_cast<std::size_t>(count) * sizeof(Real));
  detail::record_if_tracked(out, x.requires_grad(), [x, out, start, count, rows, cols]() {
    const Real* go = detail::out_grad(out).data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < rows; ++i)
      for (std::int64_t j = 0; j < count; ++j) gx[i * cols + start + j] += go[i * count + j];
  });
  return out;
}

// Concatenation of rank-2 tensors along axis 0 or 1.
template <typename Real>
Tensor<Real> concat(const std::vector<Tensor<Real>>& parts, std::int64_t axis) {
  if (parts.empty()) throw ContractError("concat: no tensors given");
  if (axis != 0 && axis != 1) throw DimensionError("concat: axis must be 0 or 1");
  for (const auto& p : parts) check_matrix(p, "concat");
  const std::int64_t other = parts[0].dim(1 - axis);
  std::int64_t total = 0;
  bool tracked = false;
  for (const auto& p : parts) {
    if (p.dim(1 - axis) != other)
      throw DimensionError("concat: mismatched shapes " + shape_to_string(parts[0].shape()) +
                           " vs " + shape_to_string(p.shape()));
    total += p.dim(axis);
    tracked = tracked || p.requires_grad();
  }
  Shape out_shape = (axis == 0) ? Shape{total, other} : Shape{other, total};
  auto out = Tensor<Real>::zeros(out_shape);
  Real* po = out.data().data();
  if (axis == 0) {
    std::int64_t row = 0;
    for (const auto& p : parts) {
      std::memcpy(po + row * other, p.data().data(),
                  static_cast<std::size_t>(p.size()) * sizeof(Real));
      row += p.dim(0);
    }
  } else {
    std::int64_t col = 0;
    for (const auto& p : parts) {
      const std::int64_t pc = p.dim(1);
      const Real* pp = p.data().data();
      for (std::int64_t i = 0; i < other; ++i)
        std::memcpy(po + i * total + col, pp + i * pc, static_cast<std::size_t>(pc) * sizeof(Real));
      col += pc;
    }
  }
  detail::record_if_tracked(out, tracked, [parts, out, axis, other, total]() {
    const Real* go = detail::out_grad(out).data();
    if (axis == 0) {
      std::int64_t row = 0;
      for (const auto& p : parts) {
        if (p.requires_grad()) {
          p.storage()->ensure_grad();
          Real* gp = p.storage()->grad.data();
          const Real* src = go + row * other;
          for (std::int64_t i = 0; i < p.size(); ++i) gp[i] += src[i];
        }
        row += p.dim(0);
      }
    } else {
      std::int64_t col = 0;
      for (const auto& p : parts) {
        const std::int64_t pc = p.dim(1);
        if (p.requires_grad()) {
          p.storage()->ensure_grad();
          Real* gp = p.storage()->grad.data();
          for (std::int64_t i = 0; i < other; ++i)
            for (std::int64_t j = 0; j < pc; ++j) gp[i * pc + j] += go[i * total + col + j];
        }
        col += pc;
      }
    }
  });
  return out;
}

// Swap the first two axes of a rank-3 tensor (copying).
template <typename Real>
Tensor<Real> transpose_01(const Tensor<Real>& x) {
  if (x.rank() != 3) throw DimensionError("transpose_01: expected rank 3, got " + shape_to_string(x.shape()));
  const std::int64_t d0 = x.dim(0), d1 = x.dim(1), d2 = x.dim(2);
  auto out = Tensor<Real>::zeros({d1, d0, d2});
  const Real* px = x.data().data();
  Real* po = out.data().data();
  for (std::int64_t i = 0; i < d0; ++i)
    for (std::int64_t j = 0; j < d1; ++j)
      std::memcpy(po + (j * d0 + i) * d2, px + (i * d1 + j) * d2,
                  static_cast<std::size_t>(d2) * sizeof(Real));
  detail::record_if_tracked(out, x.requires_grad(), [x, out, d0, d1, d2]() {
    const Real* go = detail::out_grad(out).data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < d0; ++i)
      for (std::int64_t j = 0; j < d1; ++j) {
        const Real* src = go + (j * d0 + i) * d2;
        Real* dst = gx + (i * d1 + j) * d2;
        for (std::int64_t k2 = 0; k2 < d2; ++k2) dst[k2] += src[k2];
      }
  });
  return out;
}

// Transpose of a rank-2 tensor (copying).
template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& x) {
  check_matrix(x, "transpose");
  return transpose_01(x.reshape({x.dim(0), x.dim(1), 1})).reshape({x.dim(1), x.dim(0)});
}

// Backward entry point ------------------------------------------------------------

template <typename Real>
void backward(Tape<Real>& tape, const Tensor<Real>& loss) {
  tape.backward(loss);
}

// Gradient check --------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t worst_index = -1;
  bool pass = false;
};

// Compares the analytic gradient of a scalar-valued function against central
// finite differences, element by element. Run at 64-bit only.
template <typename F>
GradCheckReport gradient_check(F&& f, Tensor<double> x, double eps = 1e-5, double tol = 1e-4) {
  if (!x.requires_grad()) throw ContractError("gradient_check: input must require gradients");
  x.zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Tensor<double> y = f(x);
    if (y.size() != 1) throw ContractError("gradient_check: function must be scalar-valued");
    tape.backward(y);
  }
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  if (analytic.empty()) analytic.assign(static_cast<std::size_t>(x.size()), 0.0);

  GradCheckReport report;
  report.checked = x.size();
  auto values = x.data();
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double v = values[i];
    values[i] = v + eps;
    const double fp = f(x).item();
    values[i] = v - eps;
    const double fm = f(x).item();
    values[i] = v;
    const double numeric = (fp - fm) / (2.0 * eps);
    const double a = analytic[static_cast<std::size_t>(i)];
    const double rel = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-6);
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
  }
  report.pass = report.max_rel_error < tol;
  return report;
}

}  // namespace sleepnet
