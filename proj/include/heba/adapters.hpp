#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "heba/tensor.hpp"

namespace heba {

class Rng;

constexpr double kLayerNormEps = 1e-5;

struct LayerNormParams {
  Tensor gamma;
  Tensor beta;
};

enum class InitMode { kaiming, zero };

// All adapter hyperparameters. alpha_base is the residual scale used during
// training and base-split evaluation; alpha_novel replaces it at novel-split
// evaluation time. The slow-fast schedule multiplies the active scale by
// fast_multiplier with probability fast_prob, one draw per optimizer step.
struct AdapterConfig {
  Index embed_dim = 32;
  Index reduction = 4;
  Index kernel = 3;  // fixed
  double alpha_base = 0.025;
  double alpha_novel = 0.010;
  double fast_multiplier = 2.25;
  double fast_prob = 0.8;
  InitMode init_mode = InitMode::kaiming;
  Index grid_side = 7;

  Index bottleneck_dim() const { return embed_dim / reduction; }
  void validate() const;
};

// Bottleneck over a 2D token grid: 1x1 down conv, 3x3 depthwise conv, GELU,
// 1x1 up conv, output bias.
struct VisualAdapter {
  Tensor w_down;  // [D/r, D]
  Tensor k_dw;    // [D/r, 3, 3]
  Tensor w_up;    // [D, D/r]
  Tensor b_up;    // [D]

  static VisualAdapter init(const AdapterConfig& cfg, Rng& rng);
  // "Pointwise only" ablation: depthwise kernels pinned to identity
  // and excluded from training.
  void freeze_depthwise_identity();
};

// Per-token linear bottleneck.
struct TextAdapter {
  Tensor w_down;  // [D/r, D]
  Tensor b_down;  // [D/r]
  Tensor w_up;    // [D, D/r]
  Tensor b_up;    // [D]

  static TextAdapter init(const AdapterConfig& cfg, Rng& rng);
};

enum class ScaleMode { train, eval };

struct ScaleSchedule {
  double base_scale = 0.025;
  double fast_multiplier = 2.25;
  double fast_prob = 0.8;
  ScaleMode mode = ScaleMode::train;
};

// Up-projection init: W ~ N(0, 2/n_in). The paired bias is created zeroed
// by the adapter constructors.
Tensor kaiming_init(Index n_in, Shape shape, Rng& rng);

// Train mode: base_scale * fast_multiplier with probability fast_prob, else
// base_scale (consumes one uniform draw either way). Eval mode: base_scale,
// no draw.
double sample_scale(const ScaleSchedule& sched, Rng& rng);

// [B,N,D] -> [B,D,g,g] with row-major token order; errors when N != g*g.
// Calls are counted so ablation wiring can prove the 1D variant never
// reshapes.
Tensor tokens_to_grid(const Tensor& x, Index grid_side);
Tensor grid_to_tokens(const Tensor& grid);
std::uint64_t tokens_to_grid_calls();
void reset_tokens_to_grid_calls();

Tensor visual_adapter_forward(const VisualAdapter& a, const Tensor& x, const AdapterConfig& cfg);
Tensor text_adapter_forward(const TextAdapter& a, const Tensor& x);

// x + branch_out + scale * adapter_out, then the frozen block's own layer
// norm. scale == 0 skips the adapter term entirely so the result is bitwise
// the frozen block output.
Tensor adapted_residual(const Tensor& x, const Tensor& branch_out, const Tensor& adapter_out,
                        double s, const LayerNormParams& ln);
Tensor adapted_residual_presum(const Tensor& x, const Tensor& branch_out,
                               const Tensor& adapter_out, double s);

Index param_count(const VisualAdapter& a);
Index param_count(const TextAdapter& a);
// Weight count of the two projections of a D -> hidden -> D bottleneck.
Index linear_hidden_weight_count(Index embed_dim, Index hidden);

// Ablation grid rows.
enum class Variant { full, zero_init, no_spatial_1d, no_dwconv };
std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

// Adapter state for one adapted dual-encoder model: one adapter per
// sublayer site (2 per block) per branch. The no_spatial_1d variant swaps
// the visual adapters for dimension-matched text-style ones.
struct ModelAdapters {
  AdapterConfig cfg;
  Variant variant = Variant::full;
  std::vector<VisualAdapter> vis;
  std::vector<TextAdapter> vis_1d;
  std::vector<TextAdapter> txt;

  static ModelAdapters init(const AdapterConfig& cfg, Variant variant, Index depth, Rng& rng);
};

}  // namespace heba
