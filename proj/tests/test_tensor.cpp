#include <doctest.h>

#include "helpers.hpp"
#include "hptk/ops.hpp"
#include "hptk/tensor.hpp"

using namespace hptk;
using namespace hptk::testutil;

TEST_CASE("tensor shape/data invariant is enforced") {
  CHECK_THROWS_AS(Tensor::from_data({2, 3}, {1.0, 2.0}), DimensionError);
  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  CHECK(t.numel() == 4);
  CHECK(t.dim(0) == 2);
}

TEST_CASE("matmul identity case") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor y = matmul(eye, a);
  for (Index i = 0; i < 4; ++i) CHECK(y.at(i) == a.at(i));
}

TEST_CASE("matmul selector row") {
  Tensor sel = Tensor::from_data({1, 2}, {1, 0});
  Tensor col = Tensor::from_data({2, 1}, {2, 5});
  Tensor y = matmul(sel, col);
  CHECK(y.numel() == 1);
  CHECK(y.at(0) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("matmul matches a triple-loop oracle") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor y = matmul(a, b);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 2; ++j) {
      double acc = 0.0;
      for (Index k = 0; k < 4; ++k) acc += a.at(i * 4 + k) * b.at(k * 2 + j);
      CHECK(std::abs(y.at(i * 2 + j) - acc) <= 1e-12);
    }
  }
}

TEST_CASE("matmul rejects mismatched inner dimensions") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(matmul(a, b), DimensionError);
}

TEST_CASE("backward of sum(W x) is the outer product with x") {
  Rng rng(3);
  Tensor w = random_tensor({3, 4}, rng);
  Tensor x = random_tensor({4, 1}, rng);
  w.set_requires_grad(true);
  GradientMap gm = backward(sum(matmul(w, x)));
  Array g = gm.get(w);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = 0; j < 4; ++j) {
      CHECK(g[i * 4 + j] == doctest::Approx(x.at(j)).epsilon(1e-12));
    }
  }
}

TEST_CASE("constant loss yields all-zero gradients") {
  Rng rng(5);
  Tensor x = random_tensor({2, 3}, rng);
  x.set_requires_grad(true);
  Tensor loss = sum(mul(x, Tensor::zeros({2, 3})));
  GradientMap gm = backward(loss);
  Array g = gm.get(x);
  for (Index i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("gradient of a sum of outputs equals the sum of gradients") {
  Rng rng(7);
  Tensor x = random_tensor({3}, rng);
  x.set_requires_grad(true);
  auto l1 = [&] { return sum(silu(x)); };
  auto l2 = [&] { return sum(mul(x, x)); };
  Array g1 = backward(l1()).get(x);
  Array g2 = backward(l2()).get(x);
  Array g12 = backward(add(l1(), l2())).get(x);
  CHECK(max_abs_diff(g12, (g1 + g2).eval()) <= 1e-12);
}

TEST_CASE("backward rejects non-scalar losses") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  CHECK_THROWS_AS(backward(silu(x)), UsageError);
}

TEST_CASE("backward requires a graph") {
  Tensor c = Tensor::scalar(3.0);
  CHECK_THROWS_AS(backward(c), UsageError);
}

TEST_CASE("rng streams are reproducible") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) {
    CHECK(a.uniform() == b.uniform());
    CHECK(a.normal() == b.normal());
  }
}

TEST_CASE("fkld loss gradient matches central differences") {
  Rng rng(13);
  Tensor teacher = random_tensor({4, 6}, rng);
  Tensor student = random_tensor({4, 6}, rng);
  auto loss = [&] { return kd_fkld(teacher, student, 1.3); };
  CHECK(grad_rel_err(loss, student) <= 1e-5);
}

TEST_CASE("op outputs raise on non-finite results") {
  Tensor big = Tensor::from_data({1}, {800.0});
  CHECK_THROWS_AS(hptk::exp(big), NonFiniteError);
}
