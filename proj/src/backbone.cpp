#include "heba/backbone.hpp"

#include <cmath>

#include "heba/errors.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"

namespace heba {

namespace {

Tensor attention_forward(const Tensor& x, const AttentionWeights& w, Index heads) {
  const Index b = x.dim(0), n = x.dim(1), d = x.dim(2);
  const Index dh = d / heads;
  Tensor flat = reshape(x, {b * n, d});
  Tensor q = add(matmul(flat, w.wq), w.bq);
  Tensor k = add(matmul(flat, w.wk), w.bk);
  Tensor v = add(matmul(flat, w.wv), w.bv);

  auto split_heads = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {b, n, heads, dh}), {0, 2, 1, 3}), {b * heads, n, dh});
  };
  Tensor q3 = split_heads(q), k3 = split_heads(k), v3 = split_heads(v);

  Tensor scores = scale(bmm(q3, permute(k3, {0, 2, 1})), 1.0 / std::sqrt(double(dh)));
  Tensor ctx = bmm(softmax(scores), v3);
  Tensor merged =
      reshape(permute(reshape(ctx, {b, heads, n, dh}), {0, 2, 1, 3}), {b * n, d});
  return reshape(add(matmul(merged, w.wo), w.bo), {b, n, d});
}

Tensor mlp_forward(const Tensor& x, const MlpWeights& w) {
  const Index b = x.dim(0), n = x.dim(1), d = x.dim(2);
  Tensor flat = reshape(x, {b * n, d});
  Tensor hidden = gelu(add(matmul(flat, w.w1), w.b1));
  return reshape(add(matmul(hidden, w.w2), w.b2), {b, n, d});
}

// Post-LN residual around one image-branch sublayer. The adapter sees the
// patch tokens only; the CLS row receives a zero adapter contribution.
Tensor image_residual(const Tensor& x, const Tensor& branch_out, const ModelAdapters* adapters,
                      Index site, double s, const LayerNormParams& ln) {
  if (adapters == nullptr || s == 0.0) {
    return layer_norm(add(x, branch_out), ln.gamma, ln.beta, kLayerNormEps);
  }
  const Index b = x.dim(0), seq = x.dim(1), d = x.dim(2);
  Tensor patches = slice(x, 1, 1, seq - 1);
  Tensor a = adapters->variant == Variant::no_spatial_1d
                 ? text_adapter_forward(adapters->vis_1d[site], patches)
                 : visual_adapter_forward(adapters->vis[site], patches, adapters->cfg);
  Tensor padded = concat(Tensor::zeros({b, 1, d}), a, 1);
  return adapted_residual(x, branch_out, padded, s, ln);
}

Tensor text_residual(const Tensor& x, const Tensor& branch_out, const ModelAdapters* adapters,
                     Index site, double s, const LayerNormParams& ln) {
  if (adapters == nullptr || s == 0.0) {
    return layer_norm(add(x, branch_out), ln.gamma, ln.beta, kLayerNormEps);
  }
  Tensor a = text_adapter_forward(adapters->txt[site], x);
  return adapted_residual(x, branch_out, a, s, ln);
}

void append_block_tensors(std::vector<NamedTensor>& out, const std::string& prefix,
                          const TransformerBlock& blk) {
  out.push_back({prefix + ".ln1.gamma", blk.ln1.gamma});
  out.push_back({prefix + ".ln1.beta", blk.ln1.beta});
  out.push_back({prefix + ".attn.wq", blk.attn.wq});
  out.push_back({prefix + ".attn.bq", blk.attn.bq});
  out.push_back({prefix + ".attn.wk", blk.attn.wk});
  out.push_back({prefix + ".attn.bk", blk.attn.bk});
  out.push_back({prefix + ".attn.wv", blk.attn.wv});
  out.push_back({prefix + ".attn.bv", blk.attn.bv});
  out.push_back({prefix + ".attn.wo", blk.attn.wo});
  out.push_back({prefix + ".attn.bo", blk.attn.bo});
  out.push_back({prefix + ".ln2.gamma", blk.ln2.gamma});
  out.push_back({prefix + ".ln2.beta", blk.ln2.beta});
  out.push_back({prefix + ".mlp.w1", blk.mlp.w1});
  out.push_back({prefix + ".mlp.b1", blk.mlp.b1});
  out.push_back({prefix + ".mlp.w2", blk.mlp.w2});
  out.push_back({prefix + ".mlp.b2", blk.mlp.b2});
}

const Tensor& fetch(const std::map<std::string, Tensor>& tensors, const std::string& name,
                    const Shape& want) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw InvariantError("missing tensor in checkpoint: " + name);
  if (it->second.shape() != want) {
    throw InvariantError("tensor " + name + " has shape " + shape_str(it->second.shape()) +
                         ", expected " + shape_str(want));
  }
  return it->second;
}

TransformerBlock block_from_tensors(const std::map<std::string, Tensor>& tensors,
                                    const std::string& prefix, Index d) {
  TransformerBlock blk;
  blk.ln1 = {fetch(tensors, prefix + ".ln1.gamma", {d}), fetch(tensors, prefix + ".ln1.beta", {d})};
  blk.attn.wq = fetch(tensors, prefix + ".attn.wq", {d, d});
  blk.attn.bq = fetch(tensors, prefix + ".attn.bq", {d});
  blk.attn.wk = fetch(tensors, prefix + ".attn.wk", {d, d});
  blk.attn.bk = fetch(tensors, prefix + ".attn.bk", {d});
  blk.attn.wv = fetch(tensors, prefix + ".attn.wv", {d, d});
  blk.attn.bv = fetch(tensors, prefix + ".attn.bv", {d});
  blk.attn.wo = fetch(tensors, prefix + ".attn.wo", {d, d});
  blk.attn.bo = fetch(tensors, prefix + ".attn.bo", {d});
  blk.ln2 = {fetch(tensors, prefix + ".ln2.gamma", {d}), fetch(tensors, prefix + ".ln2.beta", {d})};
  blk.mlp.w1 = fetch(tensors, prefix + ".mlp.w1", {d, 4 * d});
  blk.mlp.b1 = fetch(tensors, prefix + ".mlp.b1", {4 * d});
  blk.mlp.w2 = fetch(tensors, prefix + ".mlp.w2", {4 * d, d});
  blk.mlp.b2 = fetch(tensors, prefix + ".mlp.b2", {d});
  return blk;
}

}  // namespace

void BackboneConfig::validate() const {
  if (embed_dim <= 0 || depth <= 0 || heads <= 0) {
    throw InvariantError("backbone config: embed_dim, depth, heads must be positive");
  }
  if (embed_dim % heads != 0) {
    throw InvariantError("backbone config: embed_dim " + std::to_string(embed_dim) +
                         " not divisible by heads " + std::to_string(heads));
  }
  if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
    throw InvariantError("backbone config: image_size must be a positive multiple of patch_size");
  }
  if (text_len <= 0 || vocab_size <= 0) {
    throw InvariantError("backbone config: text_len and vocab_size must be positive");
  }
  if (logit_temperature < 0.0) {
    throw InvariantError("backbone config: logit_temperature must be >= 0");
  }
}

ToyBackbone init_backbone(const BackboneConfig& cfg, Rng& rng) {
  cfg.validate();
  const Index d = cfg.embed_dim;
  const Index pdim = cfg.patch_size * cfg.patch_size;
  const double wd = 1.0 / std::sqrt(static_cast<double>(d));

  auto block = [&]() {
    TransformerBlock blk;
    blk.ln1 = {Tensor::full({d}, 1.0), Tensor::zeros({d})};
    blk.attn.wq = Tensor::randn({d, d}, rng, wd);
    blk.attn.bq = Tensor::zeros({d});
    blk.attn.wk = Tensor::randn({d, d}, rng, wd);
    blk.attn.bk = Tensor::zeros({d});
    blk.attn.wv = Tensor::randn({d, d}, rng, wd);
    blk.attn.bv = Tensor::zeros({d});
    blk.attn.wo = Tensor::randn({d, d}, rng, wd);
    blk.attn.bo = Tensor::zeros({d});
    blk.ln2 = {Tensor::full({d}, 1.0), Tensor::zeros({d})};
    blk.mlp.w1 = Tensor::randn({d, 4 * d}, rng, wd);
    blk.mlp.b1 = Tensor::zeros({4 * d});
    blk.mlp.w2 = Tensor::randn({4 * d, d}, rng, 1.0 / std::sqrt(4.0 * double(d)));
    blk.mlp.b2 = Tensor::zeros({d});
    return blk;
  };

  ToyBackbone bb;
  bb.cfg = cfg;
  // Patch embedding dominates the token stream while positions/CLS stay
  // small, so CLS pooling keeps input-dependent signal instead of
  // collapsing onto the positional structure.
  bb.patch_w = Tensor::randn({pdim, d}, rng, 2.0);
  // Center the embedding at the expected input level (pixels live in [0,1]):
  // patch tokens then encode contrast, not shared brightness.
  bb.patch_b = Tensor::zeros({d});
  for (Index j = 0; j < d; ++j) {
    double colsum = 0.0;
    for (Index i = 0; i < pdim; ++i) colsum += bb.patch_w.values()[i * d + j];
    bb.patch_b.values()[j] = -0.5 * colsum;
  }
  bb.cls_token = Tensor::randn({1, d}, rng, 0.05);
  bb.pos_img = Tensor::randn({cfg.image_seq_len(), d}, rng, 0.1);
  bb.tok_embed = Tensor::randn({cfg.vocab_size, d}, rng, 1.0);
  bb.pos_txt = Tensor::randn({cfg.text_len, d}, rng, 0.5);
  for (Index i = 0; i < cfg.depth; ++i) bb.img.blocks.push_back(block());
  bb.img.proj = Tensor::randn({d, d}, rng, wd);
  for (Index i = 0; i < cfg.depth; ++i) bb.txt.blocks.push_back(block());
  bb.txt.proj = Tensor::randn({d, d}, rng, wd);
  return bb;
}

std::vector<NamedTensor> ToyBackbone::named_tensors() const {
  std::vector<NamedTensor> out;
  out.push_back({"backbone.patch_w", patch_w});
  out.push_back({"backbone.patch_b", patch_b});
  out.push_back({"backbone.cls", cls_token});
  out.push_back({"backbone.pos_img", pos_img});
  out.push_back({"backbone.tok_embed", tok_embed});
  out.push_back({"backbone.pos_txt", pos_txt});
  for (std::size_t i = 0; i < img.blocks.size(); ++i) {
    append_block_tensors(out, "backbone.img." + std::to_string(i), img.blocks[i]);
  }
  out.push_back({"backbone.img.proj", img.proj});
  for (std::size_t i = 0; i < txt.blocks.size(); ++i) {
    append_block_tensors(out, "backbone.txt." + std::to_string(i), txt.blocks[i]);
  }
  out.push_back({"backbone.txt.proj", txt.proj});
  return out;
}

std::uint64_t ToyBackbone::weight_hash() const { return tensors_hash(named_tensors()); }

ToyBackbone backbone_from_tensors(const BackboneConfig& cfg,
                                  const std::map<std::string, Tensor>& tensors) {
  cfg.validate();
  const Index d = cfg.embed_dim;
  const Index pdim = cfg.patch_size * cfg.patch_size;
  ToyBackbone bb;
  bb.cfg = cfg;
  bb.patch_w = fetch(tensors, "backbone.patch_w", {pdim, d});
  bb.patch_b = fetch(tensors, "backbone.patch_b", {d});
  bb.cls_token = fetch(tensors, "backbone.cls", {1, d});
  bb.pos_img = fetch(tensors, "backbone.pos_img", {cfg.image_seq_len(), d});
  bb.tok_embed = fetch(tensors, "backbone.tok_embed", {cfg.vocab_size, d});
  bb.pos_txt = fetch(tensors, "backbone.pos_txt", {cfg.text_len, d});
  for (Index i = 0; i < cfg.depth; ++i) {
    bb.img.blocks.push_back(block_from_tensors(tensors, "backbone.img." + std::to_string(i), d));
  }
  bb.img.proj = fetch(tensors, "backbone.img.proj", {d, d});
  for (Index i = 0; i < cfg.depth; ++i) {
    bb.txt.blocks.push_back(block_from_tensors(tensors, "backbone.txt." + std::to_string(i), d));
  }
  bb.txt.proj = fetch(tensors, "backbone.txt.proj", {d, d});
  return bb;
}

Tensor patchify(const Tensor& images, const BackboneConfig& cfg) {
  if (!images.defined() || images.rank() != 4 || images.dim(1) != 1 ||
      images.dim(2) != cfg.image_size || images.dim(3) != cfg.image_size) {
    throw ShapeError("patchify: expected images [B,1," + std::to_string(cfg.image_size) + "," +
                     std::to_string(cfg.image_size) + "], got " +
                     (images.defined() ? shape_str(images.shape()) : "<undefined>"));
  }
  const Index b = images.dim(0), s = cfg.image_size, p = cfg.patch_size;
  const Index pside = cfg.patches_per_side();
  const Index n = cfg.num_patches(), pdim = p * p;
  Eigen::ArrayXd out(b * n * pdim);
  const double* src = images.values().data();
  for (Index bi = 0; bi < b; ++bi) {
    for (Index pi = 0; pi < pside; ++pi) {
      for (Index pj = 0; pj < pside; ++pj) {
        const Index token = pi * pside + pj;
        for (Index u = 0; u < p; ++u) {
          for (Index v = 0; v < p; ++v) {
            out[(bi * n + token) * pdim + u * p + v] =
                src[bi * s * s + (pi * p + u) * s + (pj * p + v)];
          }
        }
      }
    }
  }
  return Tensor::from_array({b, n, pdim}, std::move(out));
}

Tensor encode_image(const ToyBackbone& bb, const Tensor& images, const ModelAdapters* adapters,
                    double adapter_scale) {
  const BackboneConfig& cfg = bb.cfg;
  Tensor tokens = patchify(images, cfg);
  const Index b = tokens.dim(0), n = cfg.num_patches(), d = cfg.embed_dim;

  Tensor flat = reshape(tokens, {b * n, cfg.patch_size * cfg.patch_size});
  Tensor x = reshape(add(matmul(flat, bb.patch_w), bb.patch_b), {b, n, d});
  x = concat(tile0(bb.cls_token, b), x, 1);  // [B, N+1, D]
  x = add(x, bb.pos_img);

  for (std::size_t i = 0; i < bb.img.blocks.size(); ++i) {
    const TransformerBlock& blk = bb.img.blocks[i];
    const Index site = static_cast<Index>(2 * i);
    x = image_residual(x, attention_forward(x, blk.attn, cfg.heads), adapters, site,
                       adapter_scale, blk.ln1);
    x = image_residual(x, mlp_forward(x, blk.mlp), adapters, site + 1, adapter_scale, blk.ln2);
  }
  Tensor cls = reshape(slice(x, 1, 0, 1), {b, d});
  return l2_normalize(matmul(cls, bb.img.proj));
}

Tensor encode_text(const ToyBackbone& bb, const std::vector<Index>& token_ids, Index num_prompts,
                   const ModelAdapters* adapters, double adapter_scale) {
  const BackboneConfig& cfg = bb.cfg;
  const Index l = cfg.text_len, d = cfg.embed_dim;
  if (static_cast<Index>(token_ids.size()) != num_prompts * l) {
    throw ShapeError("encode_text: expected " + std::to_string(num_prompts * l) +
                     " token ids, got " + std::to_string(token_ids.size()));
  }
  Tensor x = embedding(bb.tok_embed, token_ids, {num_prompts, l});
  x = add(x, bb.pos_txt);

  for (std::size_t i = 0; i < bb.txt.blocks.size(); ++i) {
    const TransformerBlock& blk = bb.txt.blocks[i];
    const Index site = static_cast<Index>(2 * i);
    x = text_residual(x, attention_forward(x, blk.attn, cfg.heads), adapters, site,
                      adapter_scale, blk.ln1);
    x = text_residual(x, mlp_forward(x, blk.mlp), adapters, site + 1, adapter_scale, blk.ln2);
  }
  Tensor last = reshape(slice(x, 1, l - 1, 1), {num_prompts, d});
  return l2_normalize(matmul(last, bb.txt.proj));
}

Tensor class_logits(const Tensor& img_feats, const Tensor& txt_feats, double temperature) {
  if (img_feats.rank() != 2 || txt_feats.rank() != 2 || img_feats.dim(1) != txt_feats.dim(1)) {
    throw ShapeError("class_logits: incompatible feature shapes " + shape_str(img_feats.shape()) +
                     " vs " + shape_str(txt_feats.shape()));
  }
  auto check_unit_rows = [](const Tensor& t, const char* which) {
    const Index d = t.dim(1);
    for (Index r = 0; r < t.dim(0); ++r) {
      const double norm = std::sqrt(t.values().segment(r * d, d).square().sum());
      if (std::abs(norm - 1.0) > 1e-6) {
        throw InvariantError(std::string("class_logits: ") + which + " row " +
                             std::to_string(r) + " is not unit-normalized (|x| = " +
                             std::to_string(norm) + ")");
      }
    }
  };
  check_unit_rows(img_feats, "image feature");
  check_unit_rows(txt_feats, "text feature");
  return scale(matmul(img_feats, transpose(txt_feats)), temperature);
}

namespace {

void push_param(std::vector<ParamRef>& out, const std::string& name, const Tensor& t,
                bool decay) {
  if (t.requires_grad()) out.push_back({name, t, decay});
}

}  // namespace

std::vector<ParamRef> trainable_params(const ModelAdapters& adapters) {
  std::vector<ParamRef> out;
  for (std::size_t s = 0; s < adapters.vis.size(); ++s) {
    const std::string p = "vis_adapter." + std::to_string(s);
    push_param(out, p + ".w_down", adapters.vis[s].w_down, true);
    push_param(out, p + ".k_dw", adapters.vis[s].k_dw, true);  // absent under no_dwconv
    push_param(out, p + ".w_up", adapters.vis[s].w_up, true);
    push_param(out, p + ".b_up", adapters.vis[s].b_up, false);
  }
  for (std::size_t s = 0; s < adapters.vis_1d.size(); ++s) {
    const std::string p = "vis_adapter." + std::to_string(s);
    push_param(out, p + ".w_down", adapters.vis_1d[s].w_down, true);
    push_param(out, p + ".b_down", adapters.vis_1d[s].b_down, false);
    push_param(out, p + ".w_up", adapters.vis_1d[s].w_up, true);
    push_param(out, p + ".b_up", adapters.vis_1d[s].b_up, false);
  }
  for (std::size_t s = 0; s < adapters.txt.size(); ++s) {
    const std::string p = "txt_adapter." + std::to_string(s);
    push_param(out, p + ".w_down", adapters.txt[s].w_down, true);
    push_param(out, p + ".b_down", adapters.txt[s].b_down, false);
    push_param(out, p + ".w_up", adapters.txt[s].w_up, true);
    push_param(out, p + ".b_up", adapters.txt[s].b_up, false);
  }
  return out;
}

std::vector<NamedTensor> adapter_named_tensors(const ModelAdapters& adapters) {
  std::vector<NamedTensor> out;
  for (std::size_t s = 0; s < adapters.vis.size(); ++s) {
    const std::string p = "vis_adapter." + std::to_string(s);
    out.push_back({p + ".w_down", adapters.vis[s].w_down});
    out.push_back({p + ".k_dw", adapters.vis[s].k_dw});
    out.push_back({p + ".w_up", adapters.vis[s].w_up});
    out.push_back({p + ".b_up", adapters.vis[s].b_up});
  }
  for (std::size_t s = 0; s < adapters.vis_1d.size(); ++s) {
    const std::string p = "vis_adapter." + std::to_string(s);
    out.push_back({p + ".w_down", adapters.vis_1d[s].w_down});
    out.push_back({p + ".b_down", adapters.vis_1d[s].b_down});
    out.push_back({p + ".w_up", adapters.vis_1d[s].w_up});
    out.push_back({p + ".b_up", adapters.vis_1d[s].b_up});
  }
  for (std::size_t s = 0; s < adapters.txt.size(); ++s) {
    const std::string p = "txt_adapter." + std::to_string(s);
    out.push_back({p + ".w_down", adapters.txt[s].w_down});
    out.push_back({p + ".b_down", adapters.txt[s].b_down});
    out.push_back({p + ".w_up", adapters.txt[s].w_up});
    out.push_back({p + ".b_up", adapters.txt[s].b_up});
  }
  return out;
}

ModelAdapters adapters_from_tensors(const AdapterConfig& cfg, Variant variant, Index depth,
                                    const std::map<std::string, Tensor>& tensors) {
  cfg.validate();
  const Index d = cfg.embed_dim, h = cfg.bottleneck_dim();
  ModelAdapters m;
  m.cfg = cfg;
  m.variant = variant;
  const Index sites = depth * 2;
  for (Index s = 0; s < sites; ++s) {
    const std::string p = "vis_adapter." + std::to_string(s);
    if (variant == Variant::no_spatial_1d) {
      TextAdapter a;
      a.w_down = fetch(tensors, p + ".w_down", {h, d});
      a.b_down = fetch(tensors, p + ".b_down", {h});
      a.w_up = fetch(tensors, p + ".w_up", {d, h});
      a.b_up = fetch(tensors, p + ".b_up", {d});
      for (Tensor* t : {&a.w_down, &a.b_down, &a.w_up, &a.b_up}) t->set_requires_grad(true);
      m.vis_1d.push_back(a);
    } else {
      VisualAdapter a;
      a.w_down = fetch(tensors, p + ".w_down", {h, d});
      a.k_dw = fetch(tensors, p + ".k_dw", {h, 3, 3});
      a.w_up = fetch(tensors, p + ".w_up", {d, h});
      a.b_up = fetch(tensors, p + ".b_up", {d});
      for (Tensor* t : {&a.w_down, &a.w_up, &a.b_up}) t->set_requires_grad(true);
      a.k_dw.set_requires_grad(variant != Variant::no_dwconv);
      m.vis.push_back(a);
    }
  }
  for (Index s = 0; s < sites; ++s) {
    const std::string p = "txt_adapter." + std::to_string(s);
    TextAdapter a;
    a.w_down = fetch(tensors, p + ".w_down", {h, d});
    a.b_down = fetch(tensors, p + ".b_down", {h});
    a.w_up = fetch(tensors, p + ".w_up", {d, h});
    a.b_up = fetch(tensors, p + ".b_up", {d});
    for (Tensor* t : {&a.w_down, &a.b_down, &a.w_up, &a.b_up}) t->set_requires_grad(true);
    m.txt.push_back(a);
  }
  return m;
}

}  // namespace heba
