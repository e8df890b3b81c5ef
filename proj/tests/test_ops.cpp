#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "hptk/ops.hpp"

using namespace hptk;
using namespace hptk::testutil;

TEST_CASE("softmax_temp symmetry") {
  Tensor y = softmax_temp(Tensor::from_data({2}, {0, 0}), 1.0);
  CHECK(y.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("softmax_temp tempered hand value") {
  Tensor y = softmax_temp(Tensor::from_data({2}, {2, 0}), 2.0);
  const double e = std::exp(1.0);
  CHECK(y.at(0) == doctest::Approx(e / (e + 1.0)).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(1.0 / (e + 1.0)).epsilon(1e-12));
  CHECK(y.at(0) == doctest::Approx(0.7311).epsilon(1e-4));
}

TEST_CASE("softmax_temp survives huge logits") {
  Tensor y = softmax_temp(Tensor::from_data({2}, {1000, 0}), 1.0);
  CHECK(y.at(0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("softmax_temp rows sum to one") {
  Rng rng(2);
  Tensor x = random_tensor({5, 7}, rng, 3.0);
  Tensor y = softmax_temp(x, 0.7);
  for (Index i = 0; i < 5; ++i) {
    double s = 0.0;
    for (Index j = 0; j < 7; ++j) s += y.at(i * 7 + j);
    CHECK(std::abs(s - 1.0) <= 1e-9);
  }
}

TEST_CASE("softmax_temp parameter and input errors") {
  Tensor x = Tensor::from_data({2}, {1, 2});
  CHECK_THROWS_AS(softmax_temp(x, 0.0), ParameterError);
  CHECK_THROWS_AS(softmax_temp(x, -1.0), ParameterError);
  Tensor bad = Tensor::from_data({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(softmax_temp(bad, 1.0), InputError);
}

TEST_CASE("conv1d_causal running-sum hand case") {
  Tensor x = Tensor::from_data({4, 1}, {1, 2, 3, 4});
  Tensor k = Tensor::from_data({4, 1}, {1, 1, 1, 1});
  Tensor b = Tensor::zeros({1});
  Tensor y = conv1d_causal(x, k, b);
  CHECK(y.at(0) == doctest::Approx(1.0));
  CHECK(y.at(1) == doctest::Approx(3.0));
  CHECK(y.at(2) == doctest::Approx(6.0));
  CHECK(y.at(3) == doctest::Approx(10.0));
}

TEST_CASE("conv1d_causal delta kernel is the identity") {
  Rng rng(4);
  Tensor x = random_tensor({6, 3}, rng);
  Tensor k = Tensor::zeros({4, 3});
  Array kv = k.values();
  for (Index c = 0; c < 3; ++c) kv[3 * 3 + c] = 1.0;  // newest tap
  k.set_values(kv);
  Tensor y = conv1d_causal(x, k, Tensor::zeros({3}));
  CHECK(max_abs_diff(y.values(), x.values()) == 0.0);
}

TEST_CASE("conv1d_causal causality") {
  Rng rng(9);
  Tensor k = random_tensor({3, 2}, rng);
  Tensor b = random_tensor({2}, rng);
  Tensor x1 = random_tensor({6, 2}, rng);
  Array perturbed = x1.values();
  perturbed[3 * 2 + 0] += 5.0;  // position t=3
  Tensor x2 = Tensor::from_array({6, 2}, perturbed);
  Tensor y1 = conv1d_causal(x1, k, b);
  Tensor y2 = conv1d_causal(x2, k, b);
  for (Index t = 0; t < 3; ++t) {
    for (Index c = 0; c < 2; ++c) CHECK(y1.at(t * 2 + c) == y2.at(t * 2 + c));
  }
  CHECK(y1.at(3 * 2 + 0) != y2.at(3 * 2 + 0));
}

TEST_CASE("conv1d_causal channel mismatch") {
  CHECK_THROWS_AS(
      conv1d_causal(Tensor::zeros({4, 2}), Tensor::zeros({3, 3}), Tensor::zeros({3})),
      DimensionError);
  CHECK_THROWS_AS(
      conv1d_causal(Tensor::zeros({4, 2}), Tensor::zeros({3, 2}), Tensor::zeros({5})),
      DimensionError);
}

TEST_CASE("rms_norm of a zero vector is zero") {
  Tensor y = rms_norm(Tensor::zeros({1, 4}), Tensor::full({4}, 2.0));
  for (Index i = 0; i < 4; ++i) CHECK(y.at(i) == 0.0);
}

TEST_CASE("rms_norm with calibrated gamma matches mean-square normalization") {
  Rng rng(21);
  Tensor x = random_tensor({3, 8}, rng);
  Tensor gamma = Tensor::full({8}, init_gamma_for_width(8));
  Tensor y = rms_norm(x, gamma);
  for (Index i = 0; i < 3; ++i) {
    double ms = 0.0;
    for (Index j = 0; j < 8; ++j) ms += x.at(i * 8 + j) * x.at(i * 8 + j);
    ms /= 8.0;
    for (Index j = 0; j < 8; ++j) {
      double expected = x.at(i * 8 + j) / std::sqrt(ms + kNormEps / 8.0);
      CHECK(y.at(i * 8 + j) == doctest::Approx(expected).epsilon(1e-9));
    }
  }
}

TEST_CASE("finite differences validate every differentiable op") {
  Rng rng(31);

  SUBCASE("matmul lhs and rhs") {
    Tensor a = random_tensor({3, 4}, rng);
    Tensor b = random_tensor({4, 2}, rng);
    CHECK(grad_rel_err([&] { return sum(matmul(a, b)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(matmul(a, b)); }, b) <= 1e-5);
  }
  SUBCASE("transpose, slice, concat, reshape") {
    Tensor a = random_tensor({3, 4}, rng);
    CHECK(grad_rel_err([&] { return sum(silu(transpose(a))); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(silu(slice_cols(a, 1, 2))); }, a) <= 1e-5);
    Tensor b = random_tensor({3, 2}, rng);
    CHECK(grad_rel_err([&] { return sum(silu(concat_cols({a, b}))); }, b) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(silu(reshape(a, {4, 3}))); }, a) <= 1e-5);
  }
  SUBCASE("elementwise and scalar ops") {
    Tensor a = random_tensor({5}, rng);
    Tensor b = random_tensor({5}, rng);
    CHECK(grad_rel_err([&] { return sum(mul(a, b)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(add(a, b)); }, b) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(sub(a, b)); }, b) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(scale(a, -2.5)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(hptk::exp(a)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(softplus(a)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(silu(a)); }, a) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(relu_squared(a)); }, a) <= 1e-5);
  }
  SUBCASE("add_row") {
    Tensor m = random_tensor({4, 3}, rng);
    Tensor v = random_tensor({3}, rng);
    CHECK(grad_rel_err([&] { return sum(silu(add_row(m, v))); }, m) <= 1e-5);
    CHECK(grad_rel_err([&] { return sum(silu(add_row(m, v))); }, v) <= 1e-5);
  }
  SUBCASE("rms_norm") {
    Tensor x = random_tensor({3, 5}, rng);
    Tensor gamma = random_tensor({5}, rng);
    Tensor w = random_tensor({3, 5}, rng);
    auto loss = [&] { return sum(mul(rms_norm(x, gamma), w)); };
    CHECK(grad_rel_err(loss, x) <= 1e-5);
    CHECK(grad_rel_err(loss, gamma) <= 1e-5);
  }
  SUBCASE("softmax_temp and causal_softmax") {
    Tensor x = random_tensor({3, 5}, rng);
    Tensor w = random_tensor({3, 5}, rng);
    CHECK(grad_rel_err([&] { return sum(mul(softmax_temp(x, 0.8), w)); }, x) <= 1e-5);
    Tensor s = random_tensor({4, 4}, rng);
    Tensor w2 = random_tensor({4, 4}, rng);
    CHECK(grad_rel_err([&] { return sum(mul(causal_softmax(s, 0.5), w2)); }, s) <= 1e-5);
  }
  SUBCASE("conv1d_causal") {
    Tensor x = random_tensor({5, 2}, rng);
    Tensor k = random_tensor({3, 2}, rng);
    Tensor b = random_tensor({2}, rng);
    auto loss = [&] { return sum(silu(conv1d_causal(x, k, b))); };
    CHECK(grad_rel_err(loss, x) <= 1e-5);
    CHECK(grad_rel_err(loss, k) <= 1e-5);
    CHECK(grad_rel_err(loss, b) <= 1e-5);
  }
  SUBCASE("gather_rows and cross entropy") {
    Tensor table = random_tensor({6, 3}, rng);
    std::vector<Index> ids{1, 4, 1, 0};
    CHECK(grad_rel_err([&] { return sum(silu(gather_rows(table, ids))); }, table) <= 1e-5);
    Tensor logits = random_tensor({4, 6}, rng);
    std::vector<Index> targets{2, 0, 5, 3};
    CHECK(grad_rel_err([&] { return cross_entropy_mean(logits, targets); }, logits) <=
          1e-5);
  }
}

TEST_CASE("gather_rows flags out-of-range ids") {
  Tensor table = Tensor::zeros({4, 2});
  CHECK_THROWS_AS(gather_rows(table, {0, 4}), InputError);
  CHECK_THROWS_AS(gather_rows(table, {-1}), InputError);
}

TEST_CASE("cross_entropy_mean of uniform logits is log vocab") {
  Tensor logits = Tensor::zeros({5, 16});
  Tensor loss = cross_entropy_mean(logits, {0, 3, 15, 7, 1});
  CHECK(loss.scalar_value() == doctest::Approx(std::log(16.0)).epsilon(1e-12));
}
