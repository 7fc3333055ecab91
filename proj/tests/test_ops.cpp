#include <doctest.h>

#include <cmath>
#include <string>

#include "heba/errors.hpp"
#include "heba/gradcheck.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"

using namespace heba;

TEST_CASE("matmul: identity and hand arithmetic") {
  Tensor i2 = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor v = Tensor::from_data({2, 1}, {3, 4});
  Tensor r = matmul(i2, v);
  CHECK(r.values()[0] == 3.0);
  CHECK(r.values()[1] == 4.0);

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  Tensor c = matmul(a, b);
  CHECK(c.values()[0] == 17.0);
  CHECK(c.values()[1] == 39.0);
}

TEST_CASE("matmul: gradient matches the hand derivative and finite differences") {
  Tensor a = Tensor::from_data({1, 2}, {1, 2}, true);
  Tensor b = Tensor::from_data({2, 1}, {3, 4});
  backward(sum(matmul(a, b)));
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(a.grad()[1] == doctest::Approx(4.0));

  auto f = [&](const Tensor& probe) { return sum(matmul(probe.detached_copy(), b)).item(); };
  Tensor fd = finite_diff_grad(f, a, 1e-5);
  CHECK(fd.values()[0] == doctest::Approx(3.0).epsilon(1e-8));
  CHECK(fd.values()[1] == doctest::Approx(4.0).epsilon(1e-8));
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,2]") != std::string::npos);
  }
}

TEST_CASE("conv2d_depthwise: zero kernel, identity kernel, ramp oracle") {
  Rng rng(4);
  Tensor x = Tensor::randn({2, 3, 4, 4}, rng);
  Tensor zero_k = Tensor::zeros({3, 3, 3});
  Tensor out = conv2d_depthwise(x, zero_k);
  for (Index i = 0; i < out.numel(); ++i) CHECK(out.values()[i] == 0.0);

  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  Tensor id_k = Tensor::zeros({1, 3, 3});
  id_k.values()[4] = 1.0;
  Tensor same = conv2d_depthwise(ones, id_k);
  for (Index i = 0; i < 9; ++i) CHECK(same.values()[i] == 1.0);

  // 3x3 ramp against an all-ones kernel: direct padded-window summation
  Tensor ramp = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor ones_k = Tensor::full({1, 3, 3}, 1.0);
  Tensor r = conv2d_depthwise(ramp, ones_k);
  CHECK(r.at({0, 0, 1, 1}) == 45.0);  // full window
  CHECK(r.at({0, 0, 0, 0}) == 12.0);  // corner: 1+2+4+5
}

TEST_CASE("conv2d_depthwise: channel mismatch error") {
  CHECK_THROWS_AS(conv2d_depthwise(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({3, 3, 3})),
                  ShapeError);
  CHECK_THROWS_AS(conv2d_depthwise(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({2, 5, 5})),
                  ShapeError);
}

TEST_CASE("conv2d_pointwise: identity, channel sum, matmul equivalence") {
  Rng rng(6);
  Tensor x = Tensor::randn({2, 2, 3, 3}, rng);
  Tensor id = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor same = conv2d_pointwise(x, id);
  for (Index i = 0; i < x.numel(); ++i) CHECK(same.values()[i] == x.values()[i]);

  Tensor sum_w = Tensor::from_data({1, 2}, {1, 1});
  Tensor summed = conv2d_pointwise(x, sum_w);
  for (Index b = 0; b < 2; ++b) {
    for (Index p = 0; p < 9; ++p) {
      CHECK(summed.values()[b * 9 + p] ==
            doctest::Approx(x.values()[b * 18 + p] + x.values()[b * 18 + 9 + p]));
    }
  }

  // cross-operation oracle: per-pixel channel matmul
  Tensor w = Tensor::randn({5, 2}, rng);
  Tensor conv = conv2d_pointwise(x, w);
  Tensor flat = reshape(permute(x, {0, 2, 3, 1}), {2 * 3 * 3, 2});  // [B*H*W, C_in]
  Tensor mm = matmul(flat, transpose(w));                           // [B*H*W, C_out]
  Tensor back = permute(reshape(mm, {2, 3, 3, 5}), {0, 3, 1, 2});
  for (Index i = 0; i < conv.numel(); ++i) {
    CHECK(std::abs(conv.values()[i] - back.values()[i]) <= 1e-12);
  }

  CHECK_THROWS_AS(conv2d_pointwise(x, Tensor::zeros({4, 3})), ShapeError);
}

TEST_CASE("gelu: exact erf values and derivative") {
  Tensor x = Tensor::from_data({3}, {0.0, 1.0, 0.5}, true);
  Tensor y = gelu(x);
  CHECK(y.values()[0] == 0.0);
  CHECK(std::abs(y.values()[1] - 0.841345) < 1e-5);

  backward(sum(y));
  auto f = [](const Tensor& probe) { return sum(gelu(probe.detached_copy())).item(); };
  Tensor fd = finite_diff_grad(f, x, 1e-5);
  CHECK(std::abs(x.grad()[2] - fd.values()[2]) < 1e-6);
}

TEST_CASE("layer_norm: constant row, unit-variance row, affine-only") {
  const Index d = 6;
  Tensor gamma = Tensor::full({d}, 1.0);
  Tensor beta = Tensor::zeros({d});

  Tensor constant = Tensor::full({1, d}, 3.7);
  Tensor out = layer_norm(constant, gamma, beta, 1e-5);
  for (Index i = 0; i < d; ++i) CHECK(std::abs(out.values()[i]) < 1e-3);

  Tensor pm = Tensor::from_data({1, 2}, {1.0, -1.0});
  Tensor g2 = Tensor::full({2}, 1.0), b2 = Tensor::zeros({2});
  Tensor out2 = layer_norm(pm, g2, b2, 1e-5);
  CHECK(out2.values()[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(out2.values()[1] == doctest::Approx(-1.0).epsilon(1e-4));

  Rng rng(8);
  Tensor x = Tensor::randn({2, d}, rng);
  Tensor zero_gamma = Tensor::zeros({d});
  Tensor some_beta = Tensor::randn({d}, rng);
  Tensor out3 = layer_norm(x, zero_gamma, some_beta, 1e-5);
  for (Index r = 0; r < 2; ++r) {
    for (Index i = 0; i < d; ++i) CHECK(out3.values()[r * d + i] == some_beta.values()[i]);
  }

  CHECK_THROWS_AS(layer_norm(x, Tensor::zeros({d + 1}), beta, 1e-5), ShapeError);
  CHECK_THROWS_AS(layer_norm(x, gamma, beta, 0.0), InvariantError);
}

TEST_CASE("softmax: symmetry, shift invariance, exp-normalize oracle") {
  Tensor u = Tensor::zeros({1, 3});
  Tensor su = softmax(u);
  for (Index i = 0; i < 3; ++i) CHECK(su.values()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));

  Rng rng(12);
  Tensor x = Tensor::randn({4, 5}, rng, 3.0);
  Tensor shifted = add(x, Tensor::full(x.shape(), 17.25));
  Tensor s1 = softmax(x), s2 = softmax(shifted);
  for (Index i = 0; i < x.numel(); ++i) CHECK(std::abs(s1.values()[i] - s2.values()[i]) <= 1e-12);

  Tensor two = Tensor::from_data({1, 2}, {1, 2});
  Tensor s = softmax(two);
  CHECK(std::abs(s.values()[0] - 0.268941) < 1e-6);
  CHECK(std::abs(s.values()[1] - 0.731059) < 1e-6);
}

TEST_CASE("softmax rows sum to one; log_softmax equals log of softmax") {
  Rng rng(13);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::randn({3, 7}, rng, 10.0);  // values within [-30, 30]
    Tensor p = softmax(x);
    Tensor lp = log_softmax(x);
    for (Index r = 0; r < 3; ++r) {
      double row = 0.0;
      for (Index k = 0; k < 7; ++k) row += p.values()[r * 7 + k];
      CHECK(std::abs(row - 1.0) <= 1e-12);
    }
    for (Index i = 0; i < x.numel(); ++i) {
      CHECK(std::abs(lp.values()[i] - std::log(p.values()[i])) <= 1e-9);
    }
  }
}

TEST_CASE("add: suffix broadcast semantics and shape errors") {
  Tensor x = Tensor::from_data({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor v = Tensor::from_data({2}, {10, 20});
  Tensor r = add(x, v);
  CHECK(r.values()[0] == 11.0);
  CHECK(r.values()[1] == 22.0);
  CHECK(r.values()[6] == 17.0);
  CHECK(r.values()[7] == 28.0);

  Tensor m = Tensor::from_data({2, 2}, {1, 1, 2, 2});
  Tensor r2 = add(x, m);
  CHECK(r2.values()[0] == 2.0);
  CHECK(r2.values()[3] == 6.0);

  CHECK_THROWS_AS(add(x, Tensor::zeros({3})), ShapeError);
}

TEST_CASE("slice/concat/permute/tile0 round trips") {
  Rng rng(14);
  Tensor x = Tensor::randn({2, 5, 3}, rng);
  Tensor left = slice(x, 1, 0, 2);
  Tensor right = slice(x, 1, 2, 3);
  Tensor joined = concat(left, right, 1);
  for (Index i = 0; i < x.numel(); ++i) CHECK(joined.values()[i] == x.values()[i]);

  Tensor p = permute(x, {2, 0, 1});
  Tensor back = permute(p, {1, 2, 0});
  for (Index i = 0; i < x.numel(); ++i) CHECK(back.values()[i] == x.values()[i]);

  Tensor t = tile0(x, 3);
  CHECK(t.shape() == Shape{3, 2, 5, 3});
  for (Index i = 0; i < x.numel(); ++i) CHECK(t.values()[2 * x.numel() + i] == x.values()[i]);

  CHECK_THROWS_AS(slice(x, 1, 4, 2), ShapeError);
  CHECK_THROWS_AS(concat(left, Tensor::zeros({2, 3, 4}), 1), ShapeError);
}

TEST_CASE("embedding and take_per_row validate indices") {
  Rng rng(15);
  Tensor table = Tensor::randn({5, 3}, rng);
  Tensor e = embedding(table, {4, 0}, {2});
  for (Index j = 0; j < 3; ++j) {
    CHECK(e.values()[j] == table.values()[4 * 3 + j]);
    CHECK(e.values()[3 + j] == table.values()[j]);
  }
  CHECK_THROWS_AS(embedding(table, {5}, {1}), InvariantError);

  Tensor x = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor g = take_per_row(x, {2, 0, 1, 1}, 2);
  CHECK(g.values()[0] == 3.0);
  CHECK(g.values()[1] == 1.0);
  CHECK(g.values()[2] == 5.0);
  CHECK(g.values()[3] == 5.0);
  CHECK_THROWS_AS(take_per_row(x, {3, 0}, 1), InvariantError);
}

TEST_CASE("l2_normalize: unit rows and zero-norm error") {
  Rng rng(16);
  Tensor x = Tensor::randn({4, 6}, rng);
  Tensor y = l2_normalize(x);
  for (Index r = 0; r < 4; ++r) {
    double n = 0.0;
    for (Index i = 0; i < 6; ++i) n += y.values()[r * 6 + i] * y.values()[r * 6 + i];
    CHECK(std::abs(std::sqrt(n) - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(l2_normalize(Tensor::zeros({1, 4})), NumericError);
}

TEST_CASE("gradient suite: every differentiable op beats 1e-4 against finite differences") {
  // Unit-sized version of the full suite; the acceptance binary runs it with
  // its timing budget.
  for (const auto& report : run_gradient_suite(1e-4, 99)) {
    INFO(report.op, " max_rel_err=", report.max_rel_err);
    CHECK(report.pass);
    CHECK(report.trials >= 10);
  }
}
