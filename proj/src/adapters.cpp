#include "heba/adapters.hpp"

#include <atomic>
#include <cmath>

#include "heba/errors.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"

namespace heba {

namespace {

// Down projections start at this multiple of the Kaiming scale so the
// scaled residual s*F(x) is on the order of the token scale at the default
// alphas; the up projection keeps the exact N(0, 2/n_in) law.
constexpr double kDownInitGain = 5.0;

std::atomic<std::uint64_t> g_tokens_to_grid_calls{0};

Tensor identity_kernels(Index channels) {
  Tensor k = Tensor::zeros({channels, 3, 3});
  for (Index c = 0; c < channels; ++c) k.values()[c * 9 + 4] = 1.0;
  return k;
}

}  // namespace

void AdapterConfig::validate() const {
  if (embed_dim <= 0 || reduction <= 0) {
    throw InvariantError("adapter config: embed_dim and reduction must be positive");
  }
  if (embed_dim % reduction != 0) {
    throw InvariantError("adapter config: embed_dim " + std::to_string(embed_dim) +
                         " not divisible by reduction " + std::to_string(reduction));
  }
  if (kernel != 3) throw InvariantError("adapter config: kernel size is fixed at 3");
  if (alpha_base < 0 || alpha_novel < 0) {
    throw InvariantError("adapter config: residual scales must be >= 0");
  }
  if (fast_multiplier < 1.0) {
    throw InvariantError("adapter config: fast_multiplier must be >= 1");
  }
  if (fast_prob < 0.0 || fast_prob > 1.0) {
    throw InvariantError("adapter config: fast_prob must be in [0,1]");
  }
  if (grid_side <= 0) throw InvariantError("adapter config: grid_side must be positive");
}

Tensor kaiming_init(Index n_in, Shape shape, Rng& rng) {
  if (n_in < 1) throw InvariantError("kaiming_init: n_in must be >= 1");
  const double stddev = std::sqrt(2.0 / static_cast<double>(n_in));
  return Tensor::randn(std::move(shape), rng, stddev, /*requires_grad=*/true);
}

VisualAdapter VisualAdapter::init(const AdapterConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index d = cfg.embed_dim, h = cfg.bottleneck_dim();
  VisualAdapter a;
  a.w_down = kaiming_init(d, {h, d}, rng);
  a.w_down.values() *= kDownInitGain;
  a.k_dw = kaiming_init(9, {h, 3, 3}, rng);  // depthwise fan-in is the 3x3 window
  a.w_up = cfg.init_mode == InitMode::zero ? Tensor::zeros({d, h}, /*requires_grad=*/true)
                                           : kaiming_init(h, {d, h}, rng);
  a.b_up = Tensor::zeros({d}, /*requires_grad=*/true);
  return a;
}

void VisualAdapter::freeze_depthwise_identity() {
  Tensor id = identity_kernels(k_dw.shape()[0]);
  k_dw.values() = id.values();
  k_dw.set_requires_grad(false);
}

TextAdapter TextAdapter::init(const AdapterConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index d = cfg.embed_dim, h = cfg.bottleneck_dim();
  TextAdapter a;
  a.w_down = kaiming_init(d, {h, d}, rng);
  a.w_down.values() *= kDownInitGain;
  a.b_down = Tensor::zeros({h}, /*requires_grad=*/true);
  a.w_up = cfg.init_mode == InitMode::zero ? Tensor::zeros({d, h}, /*requires_grad=*/true)
                                           : kaiming_init(h, {d, h}, rng);
  a.b_up = Tensor::zeros({d}, /*requires_grad=*/true);
  return a;
}

double sample_scale(const ScaleSchedule& sched, Rng& rng) {
  if (sched.mode == ScaleMode::eval) return sched.base_scale;
  const double u = rng.next_uniform();
  return u < sched.fast_prob ? sched.base_scale * sched.fast_multiplier : sched.base_scale;
}

Tensor tokens_to_grid(const Tensor& x, Index grid_side) {
  if (x.rank() != 3) {
    throw ShapeError("tokens_to_grid: expected [B,N,D], got " + shape_str(x.shape()));
  }
  const Index n = x.dim(1);
  if (n != grid_side * grid_side) {
    throw ShapeError("tokens_to_grid: token count " + std::to_string(n) +
                     " is not grid_side^2 = " + std::to_string(grid_side * grid_side));
  }
  g_tokens_to_grid_calls.fetch_add(1, std::memory_order_relaxed);
  Tensor g = reshape(x, {x.dim(0), grid_side, grid_side, x.dim(2)});
  return permute(g, {0, 3, 1, 2});
}

Tensor grid_to_tokens(const Tensor& grid) {
  if (grid.rank() != 4) {
    throw ShapeError("grid_to_tokens: expected [B,D,g,g], got " + shape_str(grid.shape()));
  }
  Tensor t = permute(grid, {0, 2, 3, 1});
  return reshape(t, {grid.dim(0), grid.dim(2) * grid.dim(3), grid.dim(1)});
}

std::uint64_t tokens_to_grid_calls() {
  return g_tokens_to_grid_calls.load(std::memory_order_relaxed);
}

void reset_tokens_to_grid_calls() { g_tokens_to_grid_calls.store(0, std::memory_order_relaxed); }

Tensor visual_adapter_forward(const VisualAdapter& a, const Tensor& x,
                              const AdapterConfig& cfg) {
  Tensor grid = tokens_to_grid(x, cfg.grid_side);
  Tensor down = conv2d_pointwise(grid, a.w_down);
  Tensor mid = conv2d_depthwise(down, a.k_dw);
  Tensor up = conv2d_pointwise(gelu(mid), a.w_up);
  return add(grid_to_tokens(up), a.b_up);
}

Tensor text_adapter_forward(const TextAdapter& a, const Tensor& x) {
  if (x.rank() != 3) {
    throw ShapeError("text_adapter_forward: expected [B,L,D], got " + shape_str(x.shape()));
  }
  const Index b = x.dim(0), l = x.dim(1), d = x.dim(2);
  Tensor flat = reshape(x, {b * l, d});
  Tensor down = add(matmul(flat, transpose(a.w_down)), a.b_down);
  Tensor up = add(matmul(gelu(down), transpose(a.w_up)), a.b_up);
  return reshape(up, {b, l, d});
}

Tensor adapted_residual_presum(const Tensor& x, const Tensor& branch_out,
                               const Tensor& adapter_out, double s) {
  if (x.shape() != branch_out.shape() || (s != 0.0 && x.shape() != adapter_out.shape())) {
    throw ShapeError("adapted_residual: shape mismatch between x " + shape_str(x.shape()) +
                     ", branch " + shape_str(branch_out.shape()) + ", adapter " +
                     (adapter_out.defined() ? shape_str(adapter_out.shape()) : "<none>"));
  }
  Tensor base = add(x, branch_out);
  if (s == 0.0) return base;  // frozen path, bitwise
  return add(base, scale(adapter_out, s));
}

Tensor adapted_residual(const Tensor& x, const Tensor& branch_out, const Tensor& adapter_out,
                        double s, const LayerNormParams& ln) {
  Tensor pre = adapted_residual_presum(x, branch_out, adapter_out, s);
  return layer_norm(pre, ln.gamma, ln.beta, kLayerNormEps);
}

namespace {

Index count_trainable(const Tensor& t) { return t.requires_grad() ? t.numel() : 0; }

}  // namespace

Index param_count(const VisualAdapter& a) {
  return count_trainable(a.w_down) + count_trainable(a.k_dw) + count_trainable(a.w_up) +
         count_trainable(a.b_up);
}

Index param_count(const TextAdapter& a) {
  return count_trainable(a.w_down) + count_trainable(a.b_down) + count_trainable(a.w_up) +
         count_trainable(a.b_up);
}

Index linear_hidden_weight_count(Index embed_dim, Index hidden) {
  return 2 * embed_dim * hidden;
}

std::string to_string(Variant v) {
  switch (v) {
    case Variant::full: return "full";
    case Variant::zero_init: return "zero_init";
    case Variant::no_spatial_1d: return "no_spatial_1d";
    case Variant::no_dwconv: return "no_dwconv";
  }
  throw InvariantError("unknown variant");
}

Variant variant_from_string(const std::string& s) {
  if (s == "full") return Variant::full;
  if (s == "zero_init") return Variant::zero_init;
  if (s == "no_spatial_1d") return Variant::no_spatial_1d;
  if (s == "no_dwconv") return Variant::no_dwconv;
  throw InvariantError("unknown variant: " + s);
}

ModelAdapters ModelAdapters::init(const AdapterConfig& cfg, Variant variant, Index depth,
                                  Rng& rng) {
  AdapterConfig effective = cfg;
  if (variant == Variant::zero_init) effective.init_mode = InitMode::zero;

  ModelAdapters m;
  m.cfg = effective;
  m.variant = variant;
  const Index sites = depth * 2;  // one adapter beside MSA, one beside MLP
  for (Index s = 0; s < sites; ++s) {
    if (variant == Variant::no_spatial_1d) {
      m.vis_1d.push_back(TextAdapter::init(effective, rng));
    } else {
      VisualAdapter a = VisualAdapter::init(effective, rng);
      if (variant == Variant::no_dwconv) a.freeze_depthwise_identity();
      m.vis.push_back(a);
    }
  }
  for (Index s = 0; s < sites; ++s) m.txt.push_back(TextAdapter::init(effective, rng));
  return m;
}

}  // namespace heba
