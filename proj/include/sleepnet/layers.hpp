#pragma once

// Neural building blocks: linear projection, additive attention pooling,
// bidirectional GRU, dropout, masked sequence cross-entropy and Adam.

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sleepnet/common.hpp"
#include "sleepnet/tensor.hpp"

namespace sleepnet {

namespace detail {

template <typename Real>
Tensor<Real> uniform_init(Shape shape, double bound, Rng& rng) {
  std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = static_cast<Real>(rng.uniform(-bound, bound));
  return Tensor<Real>::from(std::move(shape), std::move(v), true);
}

}  // namespace detail

// Affine map along the last dimension. weight is [out x in].
template <typename Real>
struct LinearLayer {
  Tensor<Real> weight;
  Tensor<Real> bias;

  static LinearLayer create(std::int64_t in, std::int64_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    LinearLayer l;
    l.weight = detail::uniform_init<Real>({out, in}, bound, rng);
    l.bias = Tensor<Real>::zeros({out}, true);
    return l;
  }

  std::int64_t in_features() const { return weight.dim(1); }
  std::int64_t out_features() const { return weight.dim(0); }

  Tensor<Real> forward(const Tensor<Real>& x) const {
    if (x.rank() < 1 || x.dim(x.rank() - 1) != in_features())
      throw DimensionError("linear: input " + shape_to_string(x.shape()) +
                           " does not end in " + std::to_string(in_features()) + " features");
    Shape out_shape = x.shape();
    out_shape.back() = out_features();
    const std::int64_t rows = x.size() / in_features();
    auto y = add(matmul_nt(x.reshape({rows, in_features()}), weight), bias);
    return y.reshape(std::move(out_shape));
  }
};

// Additive attention: e_i = u . tanh(W x_i + b), weights = softmax(e),
// output = sum_i weights_i x_i.
template <typename Real>
struct AttentionLayer {
  Tensor<Real> weight;          // [K x d]
  Tensor<Real> bias;            // [K]
  Tensor<Real> context_vector;  // u, [K]

  static AttentionLayer create(std::int64_t d, std::int64_t context_size, Rng& rng) {
    AttentionLayer a;
    const double bound_w = 1.0 / std::sqrt(static_cast<double>(d));
    const double bound_u = 1.0 / std::sqrt(static_cast<double>(context_size));
    a.weight = detail::uniform_init<Real>({context_size, d}, bound_w, rng);
    a.bias = Tensor<Real>::zeros({context_size}, true);
    a.context_vector = detail::uniform_init<Real>({context_size}, bound_u, rng);
    return a;
  }

  std::int64_t feature_size() const { return weight.dim(1); }
  std::int64_t context_size() const { return weight.dim(0); }

  // One raw score per row of items [n x d] -> [n].
  Tensor<Real> scores(const Tensor<Real>& items) const {
    check_matrix(items, "attention");
    const std::int64_t n = items.dim(0);
    auto h = tanh_op(add(matmul_nt(items, weight), bias));          // [n x K]
    auto e = matmul_nt(h, context_vector.reshape({1, context_size()}));  // [n x 1]
    return e.reshape({n});
  }

  // Pools n items of dimension d into one; also returns the weights.
  std::pair<Tensor<Real>, Tensor<Real>> pool(const Tensor<Real>& items) const {
    check_matrix(items, "attention");
    if (items.dim(0) < 1) throw ContractError("attention: nothing to pool");
    const std::int64_t n = items.dim(0), d = items.dim(1);
    auto w = softmax(scores(items), 0);                       // [n]
    auto out = matmul(w.reshape({1, n}), items).reshape({d});  // convex combination
    return {out, w};
  }
};

// Gated recurrent unit, optionally bidirectional. Gate blocks are stacked
// (reset, update, candidate), with separate input and recurrent biases.
template <typename Real>
struct GruLayer {
  struct Direction {
    Tensor<Real> w_ih;  // [3H x in]
    Tensor<Real> w_hh;  // [3H x H]
    Tensor<Real> b_ih;  // [3H]
    Tensor<Real> b_hh;  // [3H]
  };

  std::int64_t input_size = 0;
  std::int64_t hidden_size = 0;
  std::vector<Direction> directions;  // size 1 or 2

  static GruLayer create(std::int64_t in, std::int64_t hidden, bool bidirectional, Rng& rng) {
    GruLayer g;
    g.input_size = in;
    g.hidden_size = hidden;
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
    const int dirs = bidirectional ? 2 : 1;
    for (int d = 0; d < dirs; ++d) {
      Direction dir;
      dir.w_ih = detail::uniform_init<Real>({3 * hidden, in}, 1.0 / std::sqrt(static_cast<double>(in)), rng);
      dir.w_hh = detail::uniform_init<Real>({3 * hidden, hidden}, bound, rng);
      dir.b_ih = Tensor<Real>::zeros({3 * hidden}, true);
      dir.b_hh = Tensor<Real>::zeros({3 * hidden}, true);
      g.directions.push_back(std::move(dir));
    }
    return g;
  }

  std::int64_t output_size() const {
    return hidden_size * static_cast<std::int64_t>(directions.size());
  }
};

// Dropout: in training each element is zeroed with probability p and the
// survivors are scaled by 1/(1-p); in evaluation it is the identity.
template <typename Real>
Tensor<Real> dropout_apply(const Tensor<Real>& x, double p, bool train, Rng& rng) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  if (!train || p == 0.0) return x;
  const std::int64_t n = x.size();
  const Real scale = static_cast<Real>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(n));
  for (auto& m : *mask) m = (rng.uniform() < p) ? Real(0) : scale;

  auto out = Tensor<Real>::zeros(x.shape());
  const Real* px = x.data().data();
  const Real* pm = mask->data();
  Real* po = out.data().data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = px[i] * pm[i];
  detail::record_if_tracked(out, x.requires_grad(), [x, out, mask, n]() {
    const Real* go = detail::out_grad(out).data();
    const Real* pm2 = mask->data();
    x.storage()->ensure_grad();
    Real* gx = x.storage()->grad.data();
    for (std::int64_t i = 0; i < n; ++i) gx[i] += go[i] * pm2[i];
  });
  return out;
}

// GRU over seq [len x batch x in] -> [len x batch x dirs*H]. Dropout with
// probability `dropout_p` is applied to the input and to the output when
// training. The backward direction reads the sequence in reverse; outputs of
// both directions are concatenated per timestep.
template <typename Real>
Tensor<Real> gru_forward(const GruLayer<Real>& layer, const Tensor<Real>& seq, double dropout_p,
                         bool train, Rng* rng) {
  if (seq.rank() != 3)
    throw DimensionError("gru: expected [len x batch x in], got " + shape_to_string(seq.shape()));
  const std::int64_t len = seq.dim(0), batch = seq.dim(1), in = seq.dim(2);
  if (len < 1) throw ContractError("gru: empty sequence");
  if (in != layer.input_size)
    throw DimensionError("gru: input width " + std::to_string(in) + " != layer input size " +
                         std::to_string(layer.input_size));
  const std::int64_t H = layer.hidden_size;

  auto x2d = seq.reshape({len * batch, in});
  if (train && dropout_p > 0.0) {
    if (!rng) throw ContractError("gru: training dropout needs a random stream");
    x2d = dropout_apply(x2d, dropout_p, train, *rng);
  }

  std::vector<std::vector<Tensor<Real>>> states(layer.directions.size());
  for (std::size_t d = 0; d < layer.directions.size(); ++d) {
    const auto& dir = layer.directions[d];
    states[d].resize(static_cast<std::size_t>(len));
    Tensor<Real> h = Tensor<Real>::zeros({batch, H});
    for (std::int64_t s = 0; s < len; ++s) {
      const std::int64_t t = (d == 0) ? s : len - 1 - s;
      auto x_t = row_block(x2d, t * batch, batch);
      auto gi = add(matmul_nt(x_t, dir.w_ih), dir.b_ih);  // [batch x 3H]
      auto gh = add(matmul_nt(h, dir.w_hh), dir.b_hh);
      auto r = sigmoid(add(col_block(gi, 0, H), col_block(gh, 0, H)));
      auto z = sigmoid(add(col_block(gi, H, H), col_block(gh, H, H)));
      auto n = tanh_op(add(col_block(gi, 2 * H, H), mul(r, col_block(gh, 2 * H, H))));
      h = add(n, mul(z, sub(h, n)));  // (1-z)*n + z*h_prev
      states[d][static_cast<std::size_t>(t)] = h;
    }
  }

  std::vector<Tensor<Real>> steps;
  steps.reserve(static_cast<std::size_t>(len));
  for (std::int64_t t = 0; t < len; ++t) {
    if (layer.directions.size() == 2)
      steps.push_back(concat<Real>({states[0][static_cast<std::size_t>(t)],
                                    states[1][static_cast<std::size_t>(t)]},
                                   1));
    else
      steps.push_back(states[0][static_cast<std::size_t>(t)]);
  }
  auto out = concat(steps, 0);  // [len*batch x dirs*H]
  if (train && dropout_p > 0.0) out = dropout_apply(out, dropout_p, train, *rng);
  return out.reshape({len, batch, layer.output_size()});
}

// attention_pool on [n x d] items (free-function form of AttentionLayer::pool).
template <typename Real>
std::pair<Tensor<Real>, Tensor<Real>> attention_pool(const AttentionLayer<Real>& layer,
                                                     const Tensor<Real>& items) {
  return layer.pool(items);
}

// linear_forward on [... x in] (free-function form of LinearLayer::forward).
template <typename Real>
Tensor<Real> linear_forward(const LinearLayer<Real>& layer, const Tensor<Real>& x) {
  return layer.forward(x);
}

// Mean over valid epochs of -log p(true class). probs and one-hot labels are
// [n_classes x T]; mask[t] != 0 marks a scored epoch. Probabilities are
// clipped at 1e-12 before the log, so a saturated softmax cannot produce an
// infinite loss.
template <typename Real>
Tensor<Real> cross_entropy(const Tensor<Real>& probs, const Tensor<Real>& labels,
                           const std::vector<std::uint8_t>& mask) {
  check_matrix(probs, "cross_entropy");
  check_matrix(labels, "cross_entropy");
  if (probs.shape() != labels.shape())
    throw DimensionError("cross_entropy: probs " + shape_to_string(probs.shape()) +
                         " vs labels " + shape_to_string(labels.shape()));
  const std::int64_t T = probs.dim(1);
  if (static_cast<std::int64_t>(mask.size()) != T)
    throw DimensionError("cross_entropy: mask length " + std::to_string(mask.size()) +
                         " != " + std::to_string(T) + " epochs");
  std::int64_t valid = 0;
  std::vector<Real> mask_values(static_cast<std::size_t>(T));
  for (std::int64_t t = 0; t < T; ++t) {
    mask_values[static_cast<std::size_t>(t)] = mask[static_cast<std::size_t>(t)] ? Real(1) : Real(0);
    valid += mask[static_cast<std::size_t>(t)] ? 1 : 0;
  }
  if (valid == 0) throw ContractError("cross_entropy: every epoch is masked out");

  auto mask_t = Tensor<Real>::from({T}, std::move(mask_values));
  auto picked = mul(log_clipped(probs, Real(1e-12)), labels);  // [C x T]
  auto per_epoch = reduce_sum(picked, 0);                      // [T]
  auto masked = mul(per_epoch, mask_t);
  return affine(sum_all(masked), Real(-1) / static_cast<Real>(valid), Real(0));
}

// Adam optimizer state over one flat parameter vector.
class AdamState {
 public:
  AdamState(std::size_t n_params, double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
            double epsilon = 1e-8)
      : m_(n_params, 0.0), v_(n_params, 0.0), lr_(learning_rate), beta1_(beta1), beta2_(beta2),
        eps_(epsilon) {}

  std::int64_t step_count() const { return step_; }
  double learning_rate() const { return lr_; }

  // Bias-corrected update applied in place.
  template <typename Real>
  void step(std::span<Real> params, std::span<const Real> grads) {
    if (params.size() != m_.size() || grads.size() != m_.size())
      throw ContractError("adam: got " + std::to_string(grads.size()) + " gradients for " +
                          std::to_string(m_.size()) + " parameters");
    ++step_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = static_cast<double>(grads[i]);
      m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
      v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g * g;
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      params[i] -= static_cast<Real>(lr_ * mhat / (std::sqrt(vhat) + eps_));
    }
  }

 private:
  std::vector<double> m_;
  std::vector<double> v_;
  std::int64_t step_ = 0;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace sleepnet
