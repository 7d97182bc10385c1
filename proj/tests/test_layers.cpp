#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numeric>
#include <vector>

#include "sleepnet/layers.hpp"
#include "sleepnet/tensor.hpp"

using namespace sleepnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = false) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

// Checks d(loss)/d(target) for a forward pass closed over shared layer state.
template <typename Forward>
double layer_grad_error(Forward&& fwd, Tensor<double> target) {
  return gradient_check([&](const Tensor<double>&) { return fwd(); }, target).max_rel_error;
}

}  // namespace

TEST_CASE("linear identity and constant maps") {
  Rng rng(1);
  auto layer = LinearLayer<double>::create(3, 3, rng);
  layer.weight = Tensor<double>::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, true);
  layer.bias = Tensor<double>::zeros({3}, true);
  auto x = random_tensor({4, 3}, rng);
  auto y = layer.forward(x);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));

  layer.weight = Tensor<double>::zeros({3, 3}, true);
  layer.bias = Tensor<double>::from({3}, {5, 6, 7}, true);
  auto c = layer.forward(x);
  for (std::int64_t i = 0; i < 4; ++i) {
    CHECK(c.data()[i * 3 + 0] == doctest::Approx(5));
    CHECK(c.data()[i * 3 + 1] == doctest::Approx(6));
    CHECK(c.data()[i * 3 + 2] == doctest::Approx(7));
  }
}

TEST_CASE("linear gradient check on a random 5x8 input") {
  Rng rng(2);
  auto layer = LinearLayer<double>::create(8, 4, rng);
  auto x = random_tensor({5, 8}, rng, -1.0, 1.0, true);
  auto r = random_tensor({5, 4}, rng);
  auto fwd = [&]() { return sum_all(mul(layer.forward(x), r)); };
  CHECK(layer_grad_error(fwd, x) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.weight) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.bias) < 1e-4);
}

TEST_CASE("gru with all-zero parameters keeps a zero state") {
  Rng rng(3);
  auto layer = GruLayer<double>::create(3, 5, true, rng);
  for (auto& d : layer.directions) {
    d.w_ih = Tensor<double>::zeros({15, 3}, true);
    d.w_hh = Tensor<double>::zeros({15, 5}, true);
    d.b_ih = Tensor<double>::zeros({15}, true);
    d.b_hh = Tensor<double>::zeros({15}, true);
  }
  auto seq = random_tensor({4, 2, 3}, rng, -2.0, 2.0);
  auto out = gru_forward(layer, seq, 0.0, false, nullptr);
  for (double v : out.data()) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("bidirectional gru output shape is len x batch x 2H") {
  Rng rng(4);
  auto layer = GruLayer<double>::create(3, 5, true, rng);
  auto seq = random_tensor({4, 2, 3}, rng);
  auto out = gru_forward(layer, seq, 0.0, false, nullptr);
  CHECK(out.shape() == Shape{4, 2, 10});
}

TEST_CASE("gru rejects an empty sequence") {
  Rng rng(5);
  auto layer = GruLayer<double>::create(3, 5, false, rng);
  CHECK_THROWS_AS(gru_forward(layer, Tensor<double>::zeros({0, 2, 3}), 0.0, false, nullptr),
                  ContractError);
}

TEST_CASE("gru single step gradient check") {
  Rng rng(6);
  auto layer = GruLayer<double>::create(4, 3, false, rng);
  auto seq = random_tensor({1, 2, 4}, rng, -1.0, 1.0, true);
  auto r = random_tensor({1, 2, 3}, rng);
  auto fwd = [&]() { return sum_all(mul(gru_forward(layer, seq, 0.0, false, nullptr), r)); };
  CHECK(layer_grad_error(fwd, seq) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.directions[0].w_ih) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.directions[0].w_hh) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.directions[0].b_ih) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.directions[0].b_hh) < 1e-4);
}

TEST_CASE("gru multi-step gradient check including recurrence") {
  Rng rng(7);
  auto layer = GruLayer<double>::create(3, 4, true, rng);
  auto seq = random_tensor({5, 2, 3}, rng, -1.0, 1.0, true);
  auto r = random_tensor({5, 2, 8}, rng);
  auto fwd = [&]() { return sum_all(mul(gru_forward(layer, seq, 0.0, false, nullptr), r)); };
  CHECK(layer_grad_error(fwd, seq) < 1e-4);
  for (auto& d : layer.directions) {
    CHECK(layer_grad_error(fwd, d.w_ih) < 1e-4);
    CHECK(layer_grad_error(fwd, d.w_hh) < 1e-4);
    CHECK(layer_grad_error(fwd, d.b_hh) < 1e-4);
  }
}

TEST_CASE("gru direction symmetry under time reversal") {
  // Forward states of the original sequence equal backward states of the
  // reversed sequence once the direction parameters are swapped.
  Rng rng(8);
  auto a = GruLayer<double>::create(3, 4, true, rng);
  auto b = a;
  std::swap(b.directions[0], b.directions[1]);

  auto seq = random_tensor({6, 2, 3}, rng);
  std::vector<double> rev(seq.data().begin(), seq.data().end());
  const std::int64_t step = 2 * 3;
  for (std::int64_t t = 0; t < 6; ++t)
    std::copy(seq.data().begin() + (5 - t) * step, seq.data().begin() + (6 - t) * step,
              rev.begin() + t * step);
  auto seq_rev = Tensor<double>::from({6, 2, 3}, rev);

  auto out_a = gru_forward(a, seq, 0.0, false, nullptr);
  auto out_b = gru_forward(b, seq_rev, 0.0, false, nullptr);
  // out[t, n, 0:H] of A vs out[len-1-t, n, H:2H] of B
  for (std::int64_t t = 0; t < 6; ++t)
    for (std::int64_t n = 0; n < 2; ++n)
      for (std::int64_t h = 0; h < 4; ++h) {
        const double fwd = out_a.data()[(t * 2 + n) * 8 + h];
        const double bwd = out_b.data()[((5 - t) * 2 + n) * 8 + 4 + h];
        CHECK(std::abs(fwd - bwd) < 1e-9);
      }
}

TEST_CASE("attention pooling of a single item returns the item") {
  Rng rng(9);
  auto layer = AttentionLayer<double>::create(6, 4, rng);
  auto item = random_tensor({1, 6}, rng);
  auto [out, w] = layer.pool(item);
  CHECK(w.data()[0] == doctest::Approx(1.0));
  for (std::int64_t i = 0; i < 6; ++i) CHECK(out.data()[i] == doctest::Approx(item.data()[i]));
}

TEST_CASE("attention pooling of identical items returns that item") {
  Rng rng(10);
  auto layer = AttentionLayer<double>::create(6, 4, rng);
  std::vector<double> v(6);
  for (auto& x : v) x = rng.uniform(-2, 2);
  std::vector<double> rows;
  for (int i = 0; i < 5; ++i) rows.insert(rows.end(), v.begin(), v.end());
  auto [out, w] = layer.pool(Tensor<double>::from({5, 6}, rows));
  for (std::int64_t i = 0; i < 6; ++i) CHECK(out.data()[i] == doctest::Approx(v[static_cast<std::size_t>(i)]));
}

TEST_CASE("attention weights form a distribution and output stays in the convex hull") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    auto layer = AttentionLayer<double>::create(5, 3, rng);
    auto items = random_tensor({7, 5}, rng, -3.0, 3.0);
    auto [out, w] = layer.pool(items);
    double sum = 0.0;
    for (double x : w.data()) {
      CHECK(x >= 0.0);
      sum += x;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    for (std::int64_t j = 0; j < 5; ++j) {
      double lo = 1e300, hi = -1e300;
      for (std::int64_t i = 0; i < 7; ++i) {
        lo = std::min(lo, items.data()[i * 5 + j]);
        hi = std::max(hi, items.data()[i * 5 + j]);
      }
      CHECK(out.data()[j] >= lo - 1e-12);
      CHECK(out.data()[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("attention is permutation equivariant in weights and invariant in output") {
  Rng rng(12);
  auto layer = AttentionLayer<double>::create(5, 3, rng);
  auto items = random_tensor({6, 5}, rng);
  auto [out, w] = layer.pool(items);

  std::vector<std::int64_t> perm{3, 0, 5, 1, 4, 2};
  std::vector<double> pdata(6 * 5);
  for (std::int64_t i = 0; i < 6; ++i)
    std::copy(items.data().begin() + perm[static_cast<std::size_t>(i)] * 5,
              items.data().begin() + (perm[static_cast<std::size_t>(i)] + 1) * 5, pdata.begin() + i * 5);
  auto [pout, pw] = layer.pool(Tensor<double>::from({6, 5}, pdata));
  for (std::int64_t i = 0; i < 6; ++i)
    CHECK(std::abs(pw.data()[i] - w.data()[perm[static_cast<std::size_t>(i)]]) < 1e-12);
  for (std::int64_t j = 0; j < 5; ++j) CHECK(std::abs(pout.data()[j] - out.data()[j]) < 1e-12);
}

TEST_CASE("attention layer gradient check on a random 4x32 input") {
  Rng rng(13);
  auto layer = AttentionLayer<double>::create(32, 8, rng);
  auto items = random_tensor({4, 32}, rng, -1.0, 1.0, true);
  auto r = random_tensor({32}, rng);
  auto fwd = [&]() {
    auto [out, w] = layer.pool(items);
    return sum_all(mul(out, r));
  };
  CHECK(layer_grad_error(fwd, items) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.weight) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.bias) < 1e-4);
  CHECK(layer_grad_error(fwd, layer.context_vector) < 1e-4);
}

TEST_CASE("dropout identity cases and contract") {
  Rng rng(14);
  auto x = random_tensor({10, 10}, rng);
  auto same = dropout_apply(x, 0.0, true, rng);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);
  auto eval = dropout_apply(x, 0.7, false, rng);
  for (std::int64_t i = 0; i < x.size(); ++i) CHECK(eval.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(dropout_apply(x, 1.0, true, rng), ContractError);
  CHECK_THROWS_AS(dropout_apply(x, -0.1, true, rng), ContractError);
}

TEST_CASE("dropout statistics at p = 0.5") {
  Rng rng(15);
  const std::int64_t n = 1000000;
  auto x = Tensor<double>::full({n}, 1.0);
  auto y = dropout_apply(x, 0.5, true, rng);
  std::int64_t zeros = 0;
  double mean = 0.0;
  for (double v : y.data()) {
    if (v == 0.0) ++zeros;
    mean += v;
  }
  mean /= static_cast<double>(n);
  const double zero_fraction = static_cast<double>(zeros) / static_cast<double>(n);
  CHECK(zero_fraction > 0.49);
  CHECK(zero_fraction < 0.51);
  CHECK(mean > 0.98);
  CHECK(mean < 1.02);
}

TEST_CASE("cross entropy of a perfect prediction is zero") {
  auto probs = Tensor<double>::from({2, 3}, {1, 0, 1, 0, 1, 0});
  auto labels = Tensor<double>::from({2, 3}, {1, 0, 1, 0, 1, 0});
  auto loss = cross_entropy(probs, labels, {1, 1, 1});
  CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("cross entropy of a uniform prediction is ln 5") {
  std::vector<double> p(5 * 4, 0.2);
  std::vector<double> y(5 * 4, 0.0);
  for (int t = 0; t < 4; ++t) y[static_cast<std::size_t>((t % 5) * 4 + t)] = 1.0;
  auto loss = cross_entropy(Tensor<double>::from({5, 4}, p), Tensor<double>::from({5, 4}, y),
                            {1, 1, 1, 1});
  CHECK(loss.item() == doctest::Approx(std::log(5.0)).epsilon(1e-9));
}

TEST_CASE("cross entropy averages the per-epoch terms") {
  // T=3 hand-picked probabilities of the true class: 0.7, 0.3, 0.9
  auto probs = Tensor<double>::from({2, 3}, {0.7, 0.3, 0.1, 0.3, 0.7, 0.9});
  auto labels = Tensor<double>::from({2, 3}, {1, 1, 0, 0, 0, 1});
  auto loss = cross_entropy(probs, labels, {1, 1, 1});
  const double expected = -(std::log(0.7) + std::log(0.3) + std::log(0.9)) / 3.0;
  CHECK(loss.item() == doctest::Approx(expected).epsilon(1e-12));

  // nonnegative by construction
  CHECK(loss.item() >= 0.0);
}

TEST_CASE("cross entropy skips masked epochs and requires one valid epoch") {
  auto probs = Tensor<double>::from({2, 3}, {0.7, 0.3, 0.1, 0.3, 0.7, 0.9});
  auto labels = Tensor<double>::from({2, 3}, {1, 1, 1, 0, 0, 0});
  auto masked = cross_entropy(probs, labels, {1, 0, 1});
  const double expected = -(std::log(0.7) + std::log(0.1)) / 2.0;
  CHECK(masked.item() == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(cross_entropy(probs, labels, {0, 0, 0}), ContractError);
}

TEST_CASE("masked epochs contribute no gradient") {
  auto probs = Tensor<double>::from({2, 3}, {0.7, 0.3, 0.1, 0.3, 0.7, 0.9}, true);
  auto labels = Tensor<double>::from({2, 3}, {1, 1, 1, 0, 0, 0});
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    tape.backward(cross_entropy(probs, labels, {1, 0, 1}));
  }
  // column 1 (masked) has zero gradient in both classes
  CHECK(probs.grad()[1] == doctest::Approx(0.0));
  CHECK(probs.grad()[4] == doctest::Approx(0.0));
  CHECK(probs.grad()[0] != doctest::Approx(0.0));
}

TEST_CASE("cross entropy gradient check") {
  Rng rng(16);
  auto logits = random_tensor({4, 5}, rng, -1.0, 1.0, true);
  auto labels = Tensor<double>::from(
      {4, 5}, {1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1, 0, 0});
  auto fwd = [&]() { return cross_entropy(softmax(logits, 0), labels, {1, 1, 0, 1, 1}); };
  CHECK(layer_grad_error(fwd, logits) < 1e-4);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  AdamState adam(3, 1e-3);
  std::vector<double> params{1.0, -2.0, 0.5};
  std::vector<double> grads{0.0, 0.0, 0.0};
  auto before = params;
  adam.step<double>(params, grads);
  for (std::size_t i = 0; i < params.size(); ++i) CHECK(params[i] == doctest::Approx(before[i]));
  CHECK(adam.step_count() == 1);
}

TEST_CASE("first adam step moves by about -lr * sign(gradient)") {
  AdamState adam(3, 1e-3);
  std::vector<double> params{1.0, -2.0, 0.5};
  std::vector<double> grads{0.4, -0.01, 2.5};
  adam.step<double>(params, grads);
  CHECK(params[0] == doctest::Approx(1.0 - 1e-3).epsilon(1e-4));
  CHECK(params[1] == doctest::Approx(-2.0 + 1e-3).epsilon(1e-4));
  CHECK(params[2] == doctest::Approx(0.5 - 1e-3).epsilon(1e-4));
}

TEST_CASE("adam requires one gradient per parameter") {
  AdamState adam(3, 1e-3);
  std::vector<double> params{1.0, -2.0, 0.5};
  std::vector<double> grads{0.0, 0.0};
  CHECK_THROWS_AS(adam.step<double>(params, grads), ContractError);
}

TEST_CASE("adam converges on a 2-d quadratic") {
  // f(p) = (p0 - 3)^2 + 2 (p1 + 1)^2, minimizer (3, -1)
  AdamState adam(2, 0.05);
  std::vector<double> p{0.0, 0.0};
  for (int i = 0; i < 200; ++i) {
    std::vector<double> g{2.0 * (p[0] - 3.0), 4.0 * (p[1] + 1.0)};
    adam.step<double>(p, g);
  }
  CHECK(std::abs(p[0] - 3.0) < 1e-3);
  CHECK(std::abs(p[1] + 1.0) < 1e-3);
}
