#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "sleepnet/tensor.hpp"

using namespace sleepnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0,
                             bool requires_grad = false) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor<double>::from(std::move(shape), std::move(v), requires_grad);
}

}  // namespace

TEST_CASE("matmul identity and projector") {
  auto eye = Tensor<double>::from({2, 2}, {1, 0, 0, 1});
  auto m = Tensor<double>::from({2, 2}, {1, 2, 3, 4});
  auto r = matmul(eye, m);
  CHECK(r.data()[0] == doctest::Approx(1));
  CHECK(r.data()[1] == doctest::Approx(2));
  CHECK(r.data()[2] == doctest::Approx(3));
  CHECK(r.data()[3] == doctest::Approx(4));

  auto proj = Tensor<double>::from({2, 2}, {1, 0, 0, 0});
  auto b = Tensor<double>::from({2, 2}, {5, 6, 7, 8});
  auto p = matmul(proj, b);
  CHECK(p.data()[0] == doctest::Approx(5));
  CHECK(p.data()[1] == doctest::Approx(6));
  CHECK(p.data()[2] == doctest::Approx(0));
  CHECK(p.data()[3] == doctest::Approx(0));
}

TEST_CASE("matmul shape mismatch names both shapes") {
  auto a = Tensor<double>::zeros({3, 4});
  auto b = Tensor<double>::zeros({5, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[3, 4]") != std::string::npos);
    CHECK(msg.find("[5, 2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central finite differences") {
  Rng rng(7);
  auto b = random_tensor({4, 2}, rng);
  auto r = random_tensor({3, 2}, rng);  // random cotangent, exercises the full Jacobian
  auto x = random_tensor({3, 4}, rng, -1.0, 1.0, true);
  auto f = [&](const Tensor<double>& v) { return sum_all(mul(matmul(v, b), r)); };
  auto rep = gradient_check(f, x);
  CHECK(rep.max_rel_error < 1e-6);

  auto a = random_tensor({3, 4}, rng);
  auto y = random_tensor({4, 2}, rng, -1.0, 1.0, true);
  auto g = [&](const Tensor<double>& v) { return sum_all(mul(matmul(a, v), r)); };
  CHECK(gradient_check(g, y).max_rel_error < 1e-6);
}

TEST_CASE("matmul_nt and bmm gradients") {
  Rng rng(11);
  auto b = random_tensor({5, 4}, rng);
  auto x = random_tensor({3, 4}, rng, -1.0, 1.0, true);
  auto r = random_tensor({3, 5}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(matmul_nt(v, b), r)); }, x)
            .max_rel_error < 1e-6);
  auto w = random_tensor({5, 4}, rng, -1.0, 1.0, true);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(matmul_nt(x, v), r)); }, w)
            .max_rel_error < 1e-6);

  auto bb = random_tensor({2, 4, 3}, rng);
  auto bx = random_tensor({2, 2, 4}, rng, -1.0, 1.0, true);
  auto br = random_tensor({2, 2, 3}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(bmm(v, bb), br)); }, bx)
            .max_rel_error < 1e-6);
  auto by = random_tensor({2, 4, 3}, rng, -1.0, 1.0, true);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(bmm(bx, v), br)); }, by)
            .max_rel_error < 1e-6);
}

TEST_CASE("elementwise trivial values") {
  auto z = Tensor<double>::scalar(0.0);
  CHECK(tanh_op(z).item() == doctest::Approx(0.0));
  CHECK(sigmoid(z).item() == doctest::Approx(0.5));
  auto s = add(Tensor<double>::from({2}, {1, 2}), Tensor<double>::from({2}, {3, 4}));
  CHECK(s.data()[0] == doctest::Approx(4));
  CHECK(s.data()[1] == doctest::Approx(6));
}

TEST_CASE("every elementwise op gradient matches finite differences on random inputs") {
  Rng rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    auto r = random_tensor({4, 3}, rng);
    auto other = random_tensor({4, 3}, rng);

    auto check = [&](auto&& f, Tensor<double> x, double tol) {
      auto rep = gradient_check(f, x, 1e-5, tol);
      CAPTURE(trial);
      CHECK(rep.max_rel_error < tol);
    };

    auto x = random_tensor({4, 3}, rng, -1.5, 1.5, true);
    check([&](const Tensor<double>& v) { return sum_all(mul(add(v, other), r)); }, x, 1e-6);
    check([&](const Tensor<double>& v) { return sum_all(mul(sub(v, other), r)); }, x, 1e-6);
    check([&](const Tensor<double>& v) { return sum_all(mul(mul(v, other), r)); }, x, 1e-6);
    check([&](const Tensor<double>& v) { return sum_all(mul(tanh_op(v), r)); }, x, 1e-6);
    check([&](const Tensor<double>& v) { return sum_all(mul(sigmoid(v), r)); }, x, 1e-6);
    check([&](const Tensor<double>& v) { return sum_all(mul(exp_op(v), r)); }, x, 1e-6);

    auto pos = random_tensor({4, 3}, rng, 0.5, 2.0, true);
    check([&](const Tensor<double>& v) { return sum_all(mul(log_op(v), r)); }, pos, 1e-6);

    // gradient also flows into the second operand
    auto y = random_tensor({4, 3}, rng, -1.5, 1.5, true);
    check([&](const Tensor<double>& v) { return sum_all(mul(mul(x, v), r)); }, y, 1e-6);
  }
}

TEST_CASE("trailing broadcast add/sub/mul and its gradient") {
  auto a = Tensor<double>::from({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<double>::from({3}, {10, 20, 30});
  auto r = add(a, b);
  CHECK(r.data()[0] == doctest::Approx(11));
  CHECK(r.data()[5] == doctest::Approx(36));

  CHECK_THROWS_AS(add(a, Tensor<double>::from({2}, {1, 2})), DimensionError);

  Rng rng(5);
  auto rr = random_tensor({2, 3}, rng);
  auto bias = random_tensor({3}, rng, -1.0, 1.0, true);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(add(a, v), rr)); }, bias)
            .max_rel_error < 1e-6);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(mul(a, v), rr)); }, bias)
            .max_rel_error < 1e-6);
}

TEST_CASE("log of non-positive input raises a domain error") {
  CHECK_THROWS_AS(log_op(Tensor<double>::from({2}, {1.0, 0.0})), DomainError);
  CHECK_THROWS_AS(log_op(Tensor<double>::from({1}, {-3.0})), DomainError);
}

TEST_CASE("softmax uniform, analytic and overflow cases") {
  auto u = softmax(Tensor<double>::from({3}, {0, 0, 0}), 0);
  for (double v : u.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  auto a = softmax(Tensor<double>::from({2}, {0.0, std::log(2.0)}), 0);
  CHECK(a.data()[0] == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(a.data()[1] == doctest::Approx(2.0 / 3).epsilon(1e-12));

  auto big = softmax(Tensor<double>::from({2}, {1000.0, 1000.0}), 0);
  CHECK(big.data()[0] == doctest::Approx(0.5));
  CHECK(big.data()[1] == doctest::Approx(0.5));
  CHECK(std::isfinite(big.data()[0]));
}

TEST_CASE("softmax sums to one and is shift invariant per slice") {
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    auto x = random_tensor({4, 6}, rng, -5.0, 5.0);
    for (std::int64_t axis : {0, 1}) {
      auto y = softmax(x, axis);
      const std::int64_t outer = (axis == 0) ? 1 : 4;
      const std::int64_t len = x.dim(axis);
      const std::int64_t inner = (axis == 0) ? 6 : 1;
      for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
          double s = 0;
          for (std::int64_t j = 0; j < len; ++j) s += y.data()[o * len * inner + j * inner + in];
          CHECK(std::abs(s - 1.0) < 1e-9);
        }
      // adding a constant to all logits must not change anything
      auto shifted = softmax(affine(x, 1.0, 7.25), axis);
      for (std::int64_t i = 0; i < x.size(); ++i)
        CHECK(std::abs(y.data()[i] - shifted.data()[i]) < 1e-9);
    }
  }
}

TEST_CASE("softmax gradient") {
  Rng rng(37);
  auto r = random_tensor({3, 4}, rng);
  auto x = random_tensor({3, 4}, rng, -2.0, 2.0, true);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(softmax(v, 1), r)); }, x)
            .max_rel_error < 1e-4);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(softmax(v, 0), r)); }, x)
            .max_rel_error < 1e-4);
}

TEST_CASE("backward populates leaf gradients") {
  auto x = Tensor<double>::from({2, 2}, {1, 2, 3, 4}, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum_all(x);
    tape.backward(loss);
  }
  for (double g : x.grad()) CHECK(g == doctest::Approx(1.0));

  auto y = Tensor<double>::from({2}, {1, 2}, true);
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum_all(mul(y, y));
    tape.backward(loss);
  }
  CHECK(y.grad()[0] == doctest::Approx(2.0));
  CHECK(y.grad()[1] == doctest::Approx(4.0));
}

TEST_CASE("backward of a non-scalar loss is a contract error") {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  Tape<double> tape;
  TapeScope<double> scope(tape);
  auto y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), ContractError);
}

TEST_CASE("repeated backward accumulates until gradients are zeroed") {
  auto x = Tensor<double>::from({2}, {1, 2}, true);
  Tape<double> tape;
  {
    TapeScope<double> scope(tape);
    auto loss = sum_all(mul(x, x));
    tape.backward(loss);
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0));
  CHECK(x.grad()[1] == doctest::Approx(8.0));
  x.zero_grad();
  CHECK(x.grad()[0] == doctest::Approx(0.0));
}

TEST_CASE("backward is linear in the loss") {
  Rng rng(41);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = random_tensor({3, 3}, rng, -1.0, 1.0, true);
    auto r1 = random_tensor({3, 3}, rng);
    auto r2 = random_tensor({3, 3}, rng);

    auto run = [&](bool both) {
      x.zero_grad();
      Tape<double> tape;
      TapeScope<double> scope(tape);
      auto l1 = sum_all(mul(tanh_op(x), r1));
      auto l2 = sum_all(mul(sigmoid(x), r2));
      tape.backward(both ? add(l1, l2) : l1);
      if (!both) tape.backward(l2);  // separate traversals accumulate
      return std::vector<double>(x.grad().begin(), x.grad().end());
    };
    auto combined = run(true);
    auto separate = run(false);
    for (std::size_t i = 0; i < combined.size(); ++i)
      CHECK(std::abs(combined[i] - separate[i]) < 1e-12);
  }
}

TEST_CASE("gradient_check of a plain sum reports zero error") {
  auto x = Tensor<double>::from({3}, {0.3, -0.2, 0.9}, true);
  auto rep = gradient_check([](const Tensor<double>& v) { return sum_all(v); }, x);
  CHECK(rep.max_rel_error < 1e-9);
  CHECK(rep.pass);
  CHECK(rep.checked == 3);
}

TEST_CASE("reductions, reshape and layout ops carry gradients") {
  Rng rng(43);
  auto x = random_tensor({2, 3, 4}, rng, -1.0, 1.0, true);
  auto r = random_tensor({2, 4}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(reduce_mean(v, 1), r)); }, x)
            .max_rel_error < 1e-6);
  CHECK(gradient_check(
            [&](const Tensor<double>& v) {
              return sum_all(mul(reduce_sum(v.reshape({6, 4}), 0), random_tensor({4}, rng)));
            },
            x)
            .max_rel_error < 1e-4);

  auto m = random_tensor({4, 5}, rng, -1.0, 1.0, true);
  auto rm = random_tensor({2, 5}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(row_block(v, 1, 2), rm)); }, m)
            .max_rel_error < 1e-6);
  auto rc = random_tensor({4, 2}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(col_block(v, 2, 2), rc)); }, m)
            .max_rel_error < 1e-6);
  auto rt = random_tensor({3, 2, 4}, rng);
  CHECK(gradient_check([&](const Tensor<double>& v) { return sum_all(mul(transpose_01(v), rt)); }, x)
            .max_rel_error < 1e-6);

  auto c1 = random_tensor({2, 3}, rng, -1.0, 1.0, true);
  auto c2 = random_tensor({2, 3}, rng);
  auto rcat = random_tensor({4, 3}, rng);
  CHECK(gradient_check(
            [&](const Tensor<double>& v) { return sum_all(mul(concat<double>({v, c2}, 0), rcat)); }, c1)
            .max_rel_error < 1e-6);
  auto rcat1 = random_tensor({2, 6}, rng);
  CHECK(gradient_check(
            [&](const Tensor<double>& v) { return sum_all(mul(concat<double>({v, c2}, 1), rcat1)); }, c1)
            .max_rel_error < 1e-6);
}

TEST_CASE("forward results stay finite on finite inputs") {
  Rng rng(47);
  auto x = random_tensor({5, 5}, rng, -20.0, 20.0);
  for (double v : softmax(x, 1).data()) CHECK(std::isfinite(v));
  for (double v : tanh_op(x).data()) CHECK(std::isfinite(v));
  for (double v : sigmoid(x).data()) CHECK(std::isfinite(v));
}
