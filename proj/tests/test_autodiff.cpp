#include <doctest.h>

#include <cmath>

#include "brst/ops.hpp"
#include "brst/rng.hpp"

using namespace brst;

namespace {

// naive triple-loop reference, kept independent of matmul_value
Array matmul_oracle(const Array& a, const Array& b) {
  Array c({a.rows(), b.cols()});
  for (int64_t i = 0; i < a.rows(); ++i) {
    for (int64_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (int64_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      c.at(i, j) = s;
    }
  }
  return c;
}

}  // namespace

TEST_CASE("matmul identity and dot product") {
  Tensor i2 = Tensor::constant(Array::eye(2));
  Tensor m = Tensor::constant(Array({2, 2}, {1, 2, 3, 4}));
  Array prod = matmul(i2, m).value();
  CHECK(max_abs_diff(prod, m.value()) == 0.0);

  Tensor row = Tensor::constant(Array({1, 2}, {1, 2}));
  Tensor col = Tensor::constant(Array({2, 1}, {3, 4}));
  CHECK(matmul(row, col).value()[0] == 11.0);
}

TEST_CASE("matmul matches triple-loop oracle") {
  Rng rng(7);
  Array a = Array::uniform({3, 4}, rng, -2, 2);
  Array b = Array::uniform({4, 2}, rng, -2, 2);
  Array got = matmul(Tensor::constant(a), Tensor::constant(b)).value();
  CHECK(max_abs_diff(got, matmul_oracle(a, b)) <= 1e-12);
}

TEST_CASE("matmul shape mismatch throws") {
  Tensor a = Tensor::constant(Array({2, 3}));
  Tensor b = Tensor::constant(Array({2, 3}));
  CHECK_THROWS_AS(matmul(a, b), ShapeError);
}

TEST_CASE("softmax_log symmetry and stabilization") {
  Array two = softmax_log(Tensor::constant(Array({1, 2}, {0, 0})), 1).value();
  CHECK(two[0] == doctest::Approx(std::log(0.5)).epsilon(1e-12));
  CHECK(two[1] == doctest::Approx(std::log(0.5)).epsilon(1e-12));

  Array big = softmax_log(Tensor::constant(Array({1, 2}, {1000, 0})), 1).value();
  CHECK(std::isfinite(big[0]));
  CHECK(std::isfinite(big[1]));
  CHECK(big[0] == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("softmax_log matches extended-precision direct formula") {
  Rng rng(11);
  Array x = Array::uniform({1, 5}, rng, -2, 2);
  Array got = softmax_log(Tensor::constant(x), 1).value();
  long double sum = 0.0L;
  for (int64_t i = 0; i < 5; ++i) sum += expl(static_cast<long double>(x[i]));
  for (int64_t i = 0; i < 5; ++i) {
    const long double expect = logl(expl(static_cast<long double>(x[i])) / sum);
    CHECK(std::abs(got[i] - static_cast<double>(expect)) <= 1e-12);
  }
  // exp of output sums to one along the axis
  double total = 0.0;
  for (int64_t i = 0; i < 5; ++i) total += std::exp(got[i]);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("softmax_log along axis 0") {
  Array x({2, 2}, {0, 10, 1, 10});
  Array got = softmax_log(Tensor::constant(x), 0).value();
  for (int64_t c = 0; c < 2; ++c) {
    const double s = std::exp(got.at(0, c)) + std::exp(got.at(1, c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("layer_norm basics") {
  Tensor gain = Tensor::constant(Array::full({3}, 1.0));
  Tensor bias = Tensor::constant(Array({3}));

  Array constant_row = layer_norm(Tensor::constant(Array::full({1, 3}, 5.0)), gain, bias).value();
  for (int64_t i = 0; i < 3; ++i) CHECK(std::abs(constant_row[i]) <= 1e-9);

  Array xn = layer_norm(Tensor::constant(Array({1, 3}, {1, 2, 3})), gain, bias).value();
  double mean = (xn[0] + xn[1] + xn[2]) / 3.0;
  double var = 0.0;
  for (int64_t i = 0; i < 3; ++i) var += (xn[i] - mean) * (xn[i] - mean) / 3.0;
  CHECK(std::abs(mean) <= 1e-9);
  CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("layer_norm matches two-pass reference") {
  Rng rng(3);
  const int64_t d = 8;
  Array x = Array::uniform({2, d}, rng, -2, 2);
  Array gain = Array::uniform({d}, rng, 0.5, 1.5);
  Array bias = Array::uniform({d}, rng, -0.5, 0.5);
  const double eps = 1e-5;
  Array got = layer_norm(Tensor::constant(x), Tensor::constant(gain), Tensor::constant(bias), eps).value();
  for (int64_t r = 0; r < 2; ++r) {
    double mean = 0.0;
    for (int64_t j = 0; j < d; ++j) mean += x.at(r, j);
    mean /= d;
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) var += (x.at(r, j) - mean) * (x.at(r, j) - mean);
    var /= d;
    for (int64_t j = 0; j < d; ++j) {
      const double expect = gain[j] * (x.at(r, j) - mean) / std::sqrt(var + eps) + bias[j];
      CHECK(std::abs(got.at(r, j) - expect) <= 1e-12);
    }
  }
}

TEST_CASE("relu forward") {
  Array got = relu(Tensor::constant(Array({1, 3}, {-1, 0, 2}))).value();
  CHECK(got[0] == 0.0);
  CHECK(got[1] == 0.0);
  CHECK(got[2] == 2.0);
  Array neg = relu(Tensor::constant(Array({1, 3}, {-5, -1, -0.25}))).value();
  for (int64_t i = 0; i < 3; ++i) CHECK(neg[i] == 0.0);
}

TEST_CASE("backward of sum(W x) gives dW = outer(1, x)") {
  Tensor w = Tensor::leaf(Array({2, 3}, {1, 2, 3, 4, 5, 6}));
  Tensor x = Tensor::constant(Array({3, 1}, {7, 8, 9}));
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum_all(matmul(w, x));
    tape.backward(loss);
  }
  for (int64_t i = 0; i < 2; ++i) {
    for (int64_t j = 0; j < 3; ++j) CHECK(w.grad().at(i, j) == x.value()[j]);
  }
}

TEST_CASE("backward of constant loss leaves gradients zero") {
  Tensor w = Tensor::leaf(Array({2, 2}, {1, 2, 3, 4}));
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = Tensor::constant(Array({1}, {42.0}));
    tape.backward(loss);
  }
  w.ensure_grad();
  for (int64_t i = 0; i < 4; ++i) CHECK(w.grad()[i] == 0.0);
}

TEST_CASE("backward rejects non-scalar loss") {
  Tensor w = Tensor::leaf(Array({2, 2}));
  Tape tape;
  TapeScope scope(tape);
  Tensor out = scale(w, 2.0);
  CHECK_THROWS_AS(tape.backward(out), NumericError);
}

TEST_CASE("finite_diff_check on simple scalars") {
  Tensor w = Tensor::leaf(Array({1, 1}, {3.0}));
  auto square = [&]() { return sum_all(mul(w, w)); };
  CHECK(finite_diff_check(square, {w}) <= 1e-9);

  Tensor v = Tensor::leaf(Array({1, 1}, {1.0}));
  auto rel = [&]() { return sum_all(relu(v)); };
  CHECK(finite_diff_check(rel, {v}) <= 1e-9);
}

TEST_CASE("finite differences pass for every primitive") {
  Rng rng(21);
  const double tol = 1e-5;

  SUBCASE("matmul") {
    Tensor a = Tensor::leaf(Array::uniform({3, 4}, rng, -2, 2));
    Tensor b = Tensor::leaf(Array::uniform({4, 2}, rng, -2, 2));
    auto f = [&]() { return sum_all(matmul(a, b)); };
    CHECK(finite_diff_check(f, {a, b}) <= tol);
  }
  SUBCASE("add, scale, mul") {
    Tensor a = Tensor::leaf(Array::uniform({2, 3}, rng, -2, 2));
    Tensor b = Tensor::leaf(Array::uniform({2, 3}, rng, -2, 2));
    auto f = [&]() { return sum_all(mul(add(a, scale(b, 1.5)), b)); };
    CHECK(finite_diff_check(f, {a, b}) <= tol);
  }
  SUBCASE("add_row_bias") {
    Tensor a = Tensor::leaf(Array::uniform({3, 4}, rng, -2, 2));
    Tensor b = Tensor::leaf(Array::uniform({4}, rng, -2, 2));
    auto f = [&]() { return sum_all(mul(add_row_bias(a, b), add_row_bias(a, b))); };
    CHECK(finite_diff_check(f, {a, b}) <= tol);
  }
  SUBCASE("relu away from the kink") {
    Tensor a = Tensor::leaf(Array({2, 2}, {-1.3, 0.7, 1.9, -0.4}));
    auto f = [&]() { return sum_all(mul(relu(a), relu(a))); };
    CHECK(finite_diff_check(f, {a}) <= tol);
  }
  SUBCASE("layer_norm") {
    Tensor x = Tensor::leaf(Array::uniform({2, 5}, rng, -2, 2));
    Tensor g = Tensor::leaf(Array::uniform({5}, rng, 0.5, 1.5));
    Tensor b = Tensor::leaf(Array::uniform({5}, rng, -0.5, 0.5));
    auto f = [&]() { return sum_all(mul(layer_norm(x, g, b), layer_norm(x, g, b))); };
    CHECK(finite_diff_check(f, {x, g, b}) <= tol);
  }
  SUBCASE("softmax_log") {
    Tensor x = Tensor::leaf(Array::uniform({2, 4}, rng, -2, 2));
    std::vector<int> ids = {1, 3};
    auto f = [&]() { return pick_nll(softmax_log(x, 1), ids); };
    CHECK(finite_diff_check(f, {x}) <= tol);
  }
  SUBCASE("softmax_rows and masked variant") {
    Tensor x = Tensor::leaf(Array::uniform({3, 3}, rng, -2, 2));
    Tensor v = Tensor::leaf(Array::uniform({3, 2}, rng, -2, 2));
    std::vector<uint8_t> causal = {1, 0, 0, 1, 1, 0, 1, 1, 1};
    auto f = [&]() { return sum_all(mul(matmul(masked_softmax_rows(x, causal), v), matmul(softmax_rows(x), v))); };
    CHECK(finite_diff_check(f, {x, v}) <= tol);
  }
  SUBCASE("slice and concat") {
    Tensor x = Tensor::leaf(Array::uniform({2, 6}, rng, -2, 2));
    auto f = [&]() {
      Tensor left = slice_cols(x, 0, 3);
      Tensor right = slice_cols(x, 3, 3);
      return sum_all(mul(concat_cols({right, left}), concat_cols({left, right})));
    };
    CHECK(finite_diff_check(f, {x}) <= tol);
  }
  SUBCASE("embedding_lookup") {
    Tensor table = Tensor::leaf(Array::uniform({5, 3}, rng, -2, 2));
    std::vector<int> ids = {4, 0, 4};
    auto f = [&]() { return sum_all(mul(embedding_lookup(table, ids), embedding_lookup(table, ids))); };
    CHECK(finite_diff_check(f, {table}) <= tol);
  }
  SUBCASE("conv2d_s2 and channels_to_rows") {
    Tensor x = Tensor::leaf(Array::uniform({2, 5, 4}, rng, -2, 2));
    Tensor w = Tensor::leaf(Array::uniform({3, 2 * 9}, rng, -0.5, 0.5));
    Tensor b = Tensor::leaf(Array::uniform({3}, rng, -0.5, 0.5));
    auto f = [&]() {
      Tensor y = channels_to_rows(conv2d_s2(x, w, b));
      return sum_all(mul(y, y));
    };
    CHECK(finite_diff_check(f, {x, w, b}) <= tol);
  }
  SUBCASE("transpose and reshape") {
    Tensor x = Tensor::leaf(Array::uniform({3, 4}, rng, -2, 2));
    auto f = [&]() { return sum_all(mul(reshape(transpose(x), {3, 4}), x)); };
    CHECK(finite_diff_check(f, {x}) <= tol);
  }
}

TEST_CASE("relu gradient mask equals indicator away from zero") {
  Tensor a = Tensor::leaf(Array({1, 4}, {-1.5, 2.5, -0.3, 0.9}));
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(sum_all(relu(a)));
  }
  CHECK(a.grad()[0] == 0.0);
  CHECK(a.grad()[1] == 1.0);
  CHECK(a.grad()[2] == 0.0);
  CHECK(a.grad()[3] == 1.0);
}

TEST_CASE("shared parameters accumulate over repeated application") {
  // f applied three times with the same weights; gradient must equal the
  // sum of gradients of three cloned copies.
  Rng rng(5);
  Array w0 = Array::uniform({4, 4}, rng, -0.5, 0.5);
  Array x0 = Array::uniform({2, 4}, rng, -1, 1);
  const int repeats = 3;

  Tensor shared = Tensor::leaf(w0);
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor h = Tensor::constant(x0);
    for (int i = 0; i < repeats; ++i) h = relu(matmul(h, shared));
    tape.backward(sum_all(h));
  }

  std::vector<Tensor> clones;
  for (int i = 0; i < repeats; ++i) clones.push_back(Tensor::leaf(w0));
  Tape tape2;
  {
    TapeScope scope(tape2);
    Tensor h = Tensor::constant(x0);
    for (int i = 0; i < repeats; ++i) h = relu(matmul(h, clones[static_cast<size_t>(i)]));
    tape2.backward(sum_all(h));
  }

  Array summed = Array::zeros({4, 4});
  for (auto& c : clones) {
    c.ensure_grad();
    for (int64_t i = 0; i < 16; ++i) summed[i] += c.grad()[i];
  }
  CHECK(max_abs_diff(shared.grad(), summed) <= 1e-12);
}

TEST_CASE("forward results are bitwise deterministic") {
  Rng rng(9);
  Array a = Array::uniform({6, 6}, rng, -2, 2);
  Array b = Array::uniform({6, 6}, rng, -2, 2);
  Array r1 = matmul_value(a, b);
  Array r2 = matmul_value(a, b);
  for (int64_t i = 0; i < r1.numel(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("dropout rate zero is the identity, masks are seeded") {
  Rng rng(1);
  Tensor x = Tensor::constant(Array::uniform({4, 4}, rng, -1, 1));
  Tensor same = dropout(x, 0.0, rng);
  CHECK(max_abs_diff(same.value(), x.value()) == 0.0);

  Rng r1(77), r2(77);
  Array d1 = dropout(x, 0.5, r1).value();
  Array d2 = dropout(x, 0.5, r2).value();
  CHECK(max_abs_diff(d1, d2) == 0.0);
}
