#include <doctest.h>

#include <cmath>

#include "heba/adapters.hpp"
#include "heba/errors.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"

using namespace heba;

namespace {

AdapterConfig small_cfg() {
  AdapterConfig cfg;
  cfg.embed_dim = 8;
  cfg.reduction = 4;
  cfg.grid_side = 3;
  return cfg;
}

}  // namespace

TEST_CASE("kaiming_init: sample statistics hit N(0, 2/n_in)") {
  Rng rng(1001);
  const Index n_in = 8;
  Tensor w = kaiming_init(n_in, {100000}, rng);
  const double mean = w.values().mean();
  const double var = (w.values() - mean).square().mean();
  const double target = 2.0 / static_cast<double>(n_in);
  CHECK(target == doctest::Approx(0.25));
  CHECK(std::abs(mean) < 0.01);
  CHECK(var > 0.9 * target);
  CHECK(var < 1.1 * target);
  CHECK(w.requires_grad());
  CHECK_THROWS_AS(kaiming_init(0, {4}, rng), InvariantError);
}

TEST_CASE("init_mode zero: up projection starts at exactly zero") {
  AdapterConfig cfg = small_cfg();
  cfg.init_mode = InitMode::zero;
  Rng rng(5);
  VisualAdapter v = VisualAdapter::init(cfg, rng);
  TextAdapter t = TextAdapter::init(cfg, rng);
  for (Index i = 0; i < v.w_up.numel(); ++i) CHECK(v.w_up.values()[i] == 0.0);
  for (Index i = 0; i < t.w_up.numel(); ++i) CHECK(t.w_up.values()[i] == 0.0);
  CHECK(v.w_up.requires_grad());  // still trainable
}

TEST_CASE("tokens_to_grid: row-major layout, round trip, precondition") {
  Tensor x = Tensor::from_data({1, 4, 1}, {1, 2, 3, 4});
  Tensor g = tokens_to_grid(x, 2);
  CHECK(g.shape() == Shape{1, 1, 2, 2});
  CHECK(g.at({0, 0, 0, 0}) == 1.0);
  CHECK(g.at({0, 0, 0, 1}) == 2.0);
  CHECK(g.at({0, 0, 1, 0}) == 3.0);
  CHECK(g.at({0, 0, 1, 1}) == 4.0);

  Rng rng(2);
  Tensor r = Tensor::randn({2, 9, 4}, rng);
  Tensor round = grid_to_tokens(tokens_to_grid(r, 3));
  for (Index i = 0; i < r.numel(); ++i) CHECK(round.values()[i] == r.values()[i]);

  CHECK_THROWS_AS(tokens_to_grid(Tensor::zeros({1, 5, 2}), 2), ShapeError);
}

TEST_CASE("tokens_to_grid: instrumented call counter") {
  reset_tokens_to_grid_calls();
  CHECK(tokens_to_grid_calls() == 0);
  Tensor x = Tensor::zeros({1, 4, 2});
  tokens_to_grid(x, 2);
  tokens_to_grid(x, 2);
  CHECK(tokens_to_grid_calls() == 2);
  reset_tokens_to_grid_calls();
  CHECK(tokens_to_grid_calls() == 0);
}

TEST_CASE("visual_adapter_forward: zero up projection kills the output") {
  AdapterConfig cfg = small_cfg();
  Rng rng(3);
  VisualAdapter a = VisualAdapter::init(cfg, rng);
  a.w_up.values().setZero();
  Tensor x = Tensor::randn({2, 9, 8}, rng);
  Tensor out = visual_adapter_forward(a, x, cfg);
  CHECK(out.shape() == x.shape());
  for (Index i = 0; i < out.numel(); ++i) CHECK(out.values()[i] == 0.0);
}

TEST_CASE("visual adapter with identity kernels equals the per-token linear bottleneck") {
  AdapterConfig cfg = small_cfg();
  Rng rng(7);
  VisualAdapter vis = VisualAdapter::init(cfg, rng);
  vis.freeze_depthwise_identity();

  TextAdapter txt;
  txt.w_down = vis.w_down;
  txt.b_down = Tensor::zeros({cfg.bottleneck_dim()});
  txt.w_up = vis.w_up;
  txt.b_up = vis.b_up;

  Tensor x = Tensor::randn({2, 9, 8}, rng);
  Tensor from_vis = visual_adapter_forward(vis, x, cfg);
  Tensor from_txt = text_adapter_forward(txt, x);
  for (Index i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(from_vis.values()[i] - from_txt.values()[i]) <= 1e-12);
  }
  CHECK_FALSE(vis.k_dw.requires_grad());  // frozen kernels leave the optimizer list
}

TEST_CASE("visual adapter receptive field is exactly 3x3") {
  AdapterConfig cfg;
  cfg.embed_dim = 8;
  cfg.reduction = 4;
  cfg.grid_side = 7;
  Rng rng(9);
  VisualAdapter a = VisualAdapter::init(cfg, rng);
  a.b_up.values().setZero();  // keep the bias from masking locality

  Tensor x = Tensor::zeros({1, 49, 8});
  const Index token = 3 * 7 + 3;  // grid centre
  for (Index d = 0; d < 8; ++d) x.values()[token * 8 + d] = 1.0;
  Tensor out = visual_adapter_forward(a, x, cfg);

  // GELU(0) = 0 and the up conv has no bias path here, so influence is
  // confined to Chebyshev distance 1 around the lit token.
  for (Index i = 0; i < 7; ++i) {
    for (Index j = 0; j < 7; ++j) {
      double mag = 0.0;
      for (Index d = 0; d < 8; ++d) mag += std::abs(out.values()[(i * 7 + j) * 8 + d]);
      const bool near = std::abs(i - 3) <= 1 && std::abs(j - 3) <= 1;
      if (near) {
        CHECK(mag > 0.0);
      } else {
        CHECK(mag == 0.0);
      }
    }
  }
}

TEST_CASE("text_adapter_forward: zero up projection kills the output") {
  AdapterConfig cfg = small_cfg();
  Rng rng(11);
  TextAdapter a = TextAdapter::init(cfg, rng);
  a.w_up.values().setZero();
  Tensor x = Tensor::randn({2, 5, 8}, rng);
  Tensor out = text_adapter_forward(a, x);
  for (Index i = 0; i < out.numel(); ++i) CHECK(out.values()[i] == 0.0);
}

TEST_CASE("text_adapter_forward: permutation equivariance is exact") {
  AdapterConfig cfg = small_cfg();
  Rng rng(12);
  TextAdapter a = TextAdapter::init(cfg, rng);
  Tensor x = Tensor::randn({1, 4, 8}, rng);
  // reverse the tokens
  Tensor rev = concat(concat(slice(x, 1, 3, 1), slice(x, 1, 2, 1), 1),
                      concat(slice(x, 1, 1, 1), slice(x, 1, 0, 1), 1), 1);
  Tensor out = text_adapter_forward(a, x);
  Tensor out_rev = text_adapter_forward(a, rev);
  for (Index t = 0; t < 4; ++t) {
    for (Index d = 0; d < 8; ++d) {
      CHECK(out.values()[t * 8 + d] == out_rev.values()[(3 - t) * 8 + d]);
    }
  }
}

TEST_CASE("visual adapter is not permutation equivariant (heterogeneity)") {
  AdapterConfig cfg = small_cfg();
  Rng rng(13);
  VisualAdapter a = VisualAdapter::init(cfg, rng);
  Tensor x = Tensor::randn({1, 9, 8}, rng);
  // swap the first two tokens
  Tensor swapped = concat(concat(slice(x, 1, 1, 1), slice(x, 1, 0, 1), 1), slice(x, 1, 2, 7), 1);
  Tensor out = visual_adapter_forward(a, x, cfg);
  Tensor out_swapped = visual_adapter_forward(a, swapped, cfg);
  // if it were equivariant, swapping inputs would swap outputs; find a
  // coordinate where that fails
  bool differs = false;
  for (Index d = 0; d < 8 && !differs; ++d) {
    if (std::abs(out.values()[0 * 8 + d] - out_swapped.values()[1 * 8 + d]) > 1e-9) differs = true;
  }
  CHECK(differs);
}

TEST_CASE("text adapter worked example: (1,5) -> (gelu(1), 0)") {
  TextAdapter a;
  a.w_down = Tensor::from_data({1, 2}, {1, 0});
  a.b_down = Tensor::zeros({1});
  a.w_up = Tensor::from_data({2, 1}, {1, 0});
  a.b_up = Tensor::zeros({2});
  Tensor x = Tensor::from_data({1, 1, 2}, {1, 5});
  Tensor out = text_adapter_forward(a, x);
  CHECK(std::abs(out.values()[0] - 0.841345) < 1e-5);
  CHECK(out.values()[1] == 0.0);
}

TEST_CASE("sample_scale: degenerate probabilities and expectation") {
  Rng rng(21);
  ScaleSchedule never{0.025, 2.25, 0.0, ScaleMode::train};
  ScaleSchedule always{0.025, 2.25, 1.0, ScaleMode::train};
  for (int i = 0; i < 100; ++i) {
    CHECK(sample_scale(never, rng) == 0.025);
    CHECK(sample_scale(always, rng) == 0.025 * 2.25);
  }

  ScaleSchedule sched{0.025, 2.25, 0.8, ScaleMode::train};
  double total = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) total += sample_scale(sched, rng);
  const double mean = total / n;
  const double expected = 0.025 * (0.2 + 0.8 * 2.25);  // 0.050
  CHECK(expected == doctest::Approx(0.050));
  CHECK(std::abs(mean - expected) / expected < 0.02);

  ScaleSchedule eval{0.025, 2.25, 0.8, ScaleMode::eval};
  for (int i = 0; i < 100; ++i) CHECK(sample_scale(eval, rng) == 0.025);
}

TEST_CASE("adapted_residual: zero scale and zero adapter give the frozen output bitwise") {
  Rng rng(23);
  const Index d = 6;
  Tensor x = Tensor::randn({2, 3, d}, rng);
  Tensor branch = Tensor::randn({2, 3, d}, rng);
  Tensor adapter_out = Tensor::randn({2, 3, d}, rng);
  LayerNormParams ln{Tensor::full({d}, 1.0), Tensor::zeros({d})};

  Tensor frozen = layer_norm(add(x, branch), ln.gamma, ln.beta, kLayerNormEps);
  Tensor at_zero = adapted_residual(x, branch, adapter_out, 0.0, ln);
  for (Index i = 0; i < frozen.numel(); ++i) CHECK(at_zero.values()[i] == frozen.values()[i]);

  Tensor zero_adapter = Tensor::zeros({2, 3, d});
  Tensor with_zero = adapted_residual(x, branch, zero_adapter, 0.7, ln);
  for (Index i = 0; i < frozen.numel(); ++i) CHECK(with_zero.values()[i] == frozen.values()[i]);

  CHECK_THROWS_AS(adapted_residual(x, Tensor::zeros({2, 3, d + 1}), adapter_out, 1.0, ln),
                  ShapeError);
}

TEST_CASE("adapted_residual: pre-normalization linearity at representable points") {
  // Dyadic values make the algebraic identity exact in IEEE doubles.
  Tensor x = Tensor::from_data({1, 1, 4}, {1.0, 2.0, -3.5, 0.25});
  Tensor branch = Tensor::from_data({1, 1, 4}, {0.5, -1.0, 2.0, 4.0});
  Tensor adapter_out = Tensor::from_data({1, 1, 4}, {2.0, -4.0, 8.0, 1.0});
  const double sigma = 0.5;

  Tensor with_scale = adapted_residual_presum(x, branch, adapter_out, sigma);
  Tensor without = adapted_residual_presum(x, branch, adapter_out, 0.0);
  for (Index i = 0; i < 4; ++i) {
    CHECK(with_scale.values()[i] - without.values()[i] == sigma * adapter_out.values()[i]);
  }
}

TEST_CASE("param_count: worked counts and the capacity ratio") {
  AdapterConfig cfg;
  cfg.embed_dim = 32;
  cfg.reduction = 4;
  Rng rng(29);
  CHECK(param_count(TextAdapter::init(cfg, rng)) == 552);   // 32*8 + 8 + 8*32 + 32
  CHECK(param_count(VisualAdapter::init(cfg, rng)) == 616); // 8*32 + 8*9 + 32*8 + 32

  for (Index d : {Index{32}, Index{512}, Index{768}}) {
    const Index inverse = linear_hidden_weight_count(d, 4 * d);
    const Index bottleneck = linear_hidden_weight_count(d, d / 4);
    CHECK(inverse == 16 * bottleneck);
  }
}

TEST_CASE("ModelAdapters: variants wire the ablation rows") {
  AdapterConfig cfg = small_cfg();
  Rng rng(31);
  ModelAdapters full = ModelAdapters::init(cfg, Variant::full, 2, rng);
  CHECK(full.vis.size() == 4);
  CHECK(full.txt.size() == 4);
  CHECK(full.vis_1d.empty());

  ModelAdapters oned = ModelAdapters::init(cfg, Variant::no_spatial_1d, 2, rng);
  CHECK(oned.vis.empty());
  CHECK(oned.vis_1d.size() == 4);

  ModelAdapters nodw = ModelAdapters::init(cfg, Variant::no_dwconv, 2, rng);
  for (const auto& a : nodw.vis) {
    CHECK_FALSE(a.k_dw.requires_grad());
    for (Index c = 0; c < cfg.bottleneck_dim(); ++c) {
      for (Index i = 0; i < 9; ++i) {
        CHECK(a.k_dw.values()[c * 9 + i] == (i == 4 ? 1.0 : 0.0));
      }
    }
  }

  ModelAdapters zi = ModelAdapters::init(cfg, Variant::zero_init, 2, rng);
  for (const auto& a : zi.vis) {
    for (Index i = 0; i < a.w_up.numel(); ++i) CHECK(a.w_up.values()[i] == 0.0);
  }

  CHECK(to_string(Variant::no_dwconv) == "no_dwconv");
  CHECK(variant_from_string("zero_init") == Variant::zero_init);
  CHECK_THROWS_AS(variant_from_string("bogus"), InvariantError);
}
