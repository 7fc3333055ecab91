#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "heba/adapters.hpp"
#include "heba/optim.hpp"
#include "heba/serialize.hpp"
#include "heba/tensor.hpp"

namespace heba {

class Rng;

struct BackboneConfig {
  Index embed_dim = 32;
  Index depth = 2;
  Index heads = 4;
  Index image_size = 28;
  Index patch_size = 4;
  Index text_len = 8;
  Index vocab_size = 64;
  double logit_temperature = 10.0;

  Index patches_per_side() const { return image_size / patch_size; }
  Index num_patches() const { return patches_per_side() * patches_per_side(); }
  Index image_seq_len() const { return num_patches() + 1; }  // +CLS
  void validate() const;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpWeights {
  Tensor w1, b1, w2, b2;  // D -> 4D -> D
};

struct TransformerBlock {
  AttentionWeights attn;
  MlpWeights mlp;
  LayerNormParams ln1, ln2;  // post-LN convention: x -> LN(x + sublayer(x))
};

struct EncoderBranch {
  std::vector<TransformerBlock> blocks;
  Tensor proj;  // [D,D] projection into the shared embedding space
};

// Frozen dual-encoder transformer. No tensor here ever carries
// requires_grad; the adapters are the only trainable state of an adapted
// model.
struct ToyBackbone {
  BackboneConfig cfg;
  Tensor patch_w;    // [patch*patch, D]
  Tensor patch_b;    // [D]
  Tensor cls_token;  // [1, D]
  Tensor pos_img;    // [N+1, D]
  Tensor tok_embed;  // [vocab, D]
  Tensor pos_txt;    // [text_len, D]
  EncoderBranch img;
  EncoderBranch txt;

  std::vector<NamedTensor> named_tensors() const;  // fixed order
  std::uint64_t weight_hash() const;
};

ToyBackbone init_backbone(const BackboneConfig& cfg, Rng& rng);
// Rebuilds a backbone from checkpointed tensors (frozen, by-value copies).
ToyBackbone backbone_from_tensors(const BackboneConfig& cfg,
                                  const std::map<std::string, Tensor>& tensors);

// Host-side relayout of [B,1,S,S] images into [B, num_patches, patch*patch]
// tokens, row-major over the patch grid and within each patch.
Tensor patchify(const Tensor& images, const BackboneConfig& cfg);

// CLS-pooled, L2-normalized image features [B,D]. Adapters may be null
// (never-adapted forward); scale 0 takes the identical frozen code path.
// Visual adapters see only the patch tokens; CLS bypasses them.
Tensor encode_image(const ToyBackbone& bb, const Tensor& images, const ModelAdapters* adapters,
                    double adapter_scale);

// Last-token-pooled, L2-normalized text features [K,D]; token_ids is a
// row-major [K, text_len] id matrix.
Tensor encode_text(const ToyBackbone& bb, const std::vector<Index>& token_ids, Index num_prompts,
                   const ModelAdapters* adapters, double adapter_scale);

// temperature * (img_feats . txt_feats^T); requires unit-normalized rows.
Tensor class_logits(const Tensor& img_feats, const Tensor& txt_feats, double temperature);

// Adapter tensors in checkpoint naming order; the backbone contributes
// nothing here by construction.
std::vector<ParamRef> trainable_params(const ModelAdapters& adapters);
std::vector<NamedTensor> adapter_named_tensors(const ModelAdapters& adapters);
ModelAdapters adapters_from_tensors(const AdapterConfig& cfg, Variant variant, Index depth,
                                    const std::map<std::string, Tensor>& tensors);

}  // namespace heba
