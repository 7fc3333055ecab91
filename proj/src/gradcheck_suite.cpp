#include <memory>
#include <utility>

#include "heba/adapters.hpp"
#include "heba/backbone.hpp"
#include "heba/gradcheck.hpp"
#include "heba/ops.hpp"
#include "heba/optim.hpp"
#include "heba/rng.hpp"

namespace heba {

namespace {

// Loss scalarization: sum(out * C) with a fixed random probe C, so the
// upstream gradient is informative (plain sum() collapses to a constant for
// softmax-like ops).
Tensor probe_loss(const Tensor& out, const Tensor& probe) { return sum(mul(out, probe)); }

using Setup = std::pair<std::vector<Tensor>, std::function<Tensor()>>;

GradCheckCase unary_case(std::string name, Shape shape,
                         std::function<Tensor(const Tensor&)> op) {
  GradCheckCase check;
  check.name = std::move(name);
  check.setup = [shape, op](Rng& rng) -> Setup {
    Tensor x = Tensor::randn(shape, rng, 1.0, true);
    Tensor probe;  // sized after one forward, op may reshape
    Tensor out = op(x.detached_copy());
    probe = Tensor::randn(out.shape(), rng);
    auto thunk = [x, probe, op]() { return probe_loss(op(x), probe); };
    return {{x}, thunk};
  };
  return check;
}

}  // namespace

std::vector<GradCheckCase> gradient_suite_cases() {
  std::vector<GradCheckCase> cases;

  {
    GradCheckCase c;
    c.name = "matmul";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({3, 4}, rng, 1.0, true);
      Tensor b = Tensor::randn({4, 2}, rng, 1.0, true);
      Tensor probe = Tensor::randn({3, 2}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(matmul(a, b), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "bmm";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
      Tensor b = Tensor::randn({2, 4, 2}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 3, 2}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(bmm(a, b), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "add";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({2, 5}, rng, 1.0, true);
      Tensor b = Tensor::randn({2, 5}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 5}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(add(a, b), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "add_broadcast";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
      Tensor b = Tensor::randn({4}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 3, 4}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(add(a, b), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "mul";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({2, 5}, rng, 1.0, true);
      Tensor b = Tensor::randn({2, 5}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 5}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(mul(a, b), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  cases.push_back(unary_case("scale", {7}, [](const Tensor& x) { return scale(x, -1.7); }));
  cases.push_back(unary_case("reshape", {2, 6}, [](const Tensor& x) {
    return reshape(x, {3, 4});
  }));
  cases.push_back(unary_case("permute", {2, 3, 4}, [](const Tensor& x) {
    return permute(x, {2, 0, 1});
  }));
  cases.push_back(unary_case("slice", {3, 5, 2}, [](const Tensor& x) {
    return slice(x, 1, 1, 3);
  }));
  {
    GradCheckCase c;
    c.name = "concat";
    c.setup = [](Rng& rng) -> Setup {
      Tensor a = Tensor::randn({2, 3, 4}, rng, 1.0, true);
      Tensor b = Tensor::randn({2, 2, 4}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 5, 4}, rng);
      auto thunk = [a, b, probe]() { return probe_loss(concat(a, b, 1), probe); };
      return {{a, b}, thunk};
    };
    cases.push_back(c);
  }
  cases.push_back(unary_case("tile0", {3, 2}, [](const Tensor& x) { return tile0(x, 4); }));
  {
    GradCheckCase c;
    c.name = "embedding";
    c.setup = [](Rng& rng) -> Setup {
      Tensor table = Tensor::randn({7, 3}, rng, 1.0, true);
      std::vector<Index> ids;
      for (int i = 0; i < 5; ++i) ids.push_back(rng.next_below(7));
      Tensor probe = Tensor::randn({5, 3}, rng);
      auto thunk = [table, ids, probe]() {
        return probe_loss(embedding(table, ids, {5}), probe);
      };
      return {{table}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "take_per_row";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
      std::vector<Index> idx;
      for (int i = 0; i < 6; ++i) idx.push_back(rng.next_below(6));
      Tensor probe = Tensor::randn({3, 2}, rng);
      auto thunk = [x, idx, probe]() { return probe_loss(take_per_row(x, idx, 2), probe); };
      return {{x}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "sum";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
      auto thunk = [x]() { return sum(x); };
      return {{x}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "mean";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({2, 3}, rng, 1.0, true);
      auto thunk = [x]() { return mean(x); };
      return {{x}, thunk};
    };
    cases.push_back(c);
  }
  cases.push_back(unary_case("gelu", {9}, [](const Tensor& x) { return gelu(x); }));
  {
    GradCheckCase c;
    c.name = "layer_norm";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({3, 6}, rng, 1.0, true);
      Tensor gamma = Tensor::randn({6}, rng, 1.0, true);
      Tensor beta = Tensor::randn({6}, rng, 1.0, true);
      Tensor probe = Tensor::randn({3, 6}, rng);
      auto thunk = [x, gamma, beta, probe]() {
        return probe_loss(layer_norm(x, gamma, beta, 1e-5), probe);
      };
      return {{x, gamma, beta}, thunk};
    };
    cases.push_back(c);
  }
  cases.push_back(unary_case("softmax", {3, 5}, [](const Tensor& x) { return softmax(x); }));
  cases.push_back(
      unary_case("log_softmax", {3, 5}, [](const Tensor& x) { return log_softmax(x); }));
  {
    GradCheckCase c;
    c.name = "conv2d_depthwise";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({2, 3, 5, 5}, rng, 1.0, true);
      Tensor k = Tensor::randn({3, 3, 3}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 3, 5, 5}, rng);
      auto thunk = [x, k, probe]() { return probe_loss(conv2d_depthwise(x, k), probe); };
      return {{x, k}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "conv2d_pointwise";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({2, 3, 4, 4}, rng, 1.0, true);
      Tensor w = Tensor::randn({5, 3}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 5, 4, 4}, rng);
      auto thunk = [x, w, probe]() { return probe_loss(conv2d_pointwise(x, w), probe); };
      return {{x, w}, thunk};
    };
    cases.push_back(c);
  }
  cases.push_back(
      unary_case("l2_normalize", {3, 5}, [](const Tensor& x) { return l2_normalize(x); }));

  {
    GradCheckCase c;
    c.name = "visual_adapter_forward";
    c.setup = [](Rng& rng) -> Setup {
      AdapterConfig cfg;
      cfg.embed_dim = 8;
      cfg.reduction = 4;
      cfg.grid_side = 3;
      VisualAdapter a = VisualAdapter::init(cfg, rng);
      // moderate weight scale keeps the h^2 truncation term of the central
      // differences below the 1e-4 tolerance
      a.w_down.values() *= 0.2;
      Tensor x = Tensor::randn({2, 9, 8}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 9, 8}, rng);
      auto thunk = [a, x, cfg, probe]() {
        return probe_loss(visual_adapter_forward(a, x, cfg), probe);
      };
      return {{a.w_down, a.k_dw, a.w_up, a.b_up, x}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "text_adapter_forward";
    c.setup = [](Rng& rng) -> Setup {
      AdapterConfig cfg;
      cfg.embed_dim = 8;
      cfg.reduction = 4;
      TextAdapter a = TextAdapter::init(cfg, rng);
      a.w_down.values() *= 0.2;  // same truncation-control as the visual case
      Tensor x = Tensor::randn({2, 3, 8}, rng, 1.0, true);
      Tensor probe = Tensor::randn({2, 3, 8}, rng);
      auto thunk = [a, x, probe]() { return probe_loss(text_adapter_forward(a, x), probe); };
      return {{a.w_down, a.b_down, a.w_up, a.b_up, x}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "adapted_residual";
    c.setup = [](Rng& rng) -> Setup {
      Tensor x = Tensor::randn({2, 4, 6}, rng, 1.0, true);
      Tensor branch = Tensor::randn({2, 4, 6}, rng, 1.0, true);
      Tensor adapter_out = Tensor::randn({2, 4, 6}, rng, 1.0, true);
      LayerNormParams ln{Tensor::randn({6}, rng, 1.0, true), Tensor::randn({6}, rng, 1.0, true)};
      Tensor probe = Tensor::randn({2, 4, 6}, rng);
      auto thunk = [x, branch, adapter_out, ln, probe]() {
        return probe_loss(adapted_residual(x, branch, adapter_out, 0.7, ln), probe);
      };
      return {{x, branch, adapter_out, ln.gamma, ln.beta}, thunk};
    };
    cases.push_back(c);
  }
  {
    GradCheckCase c;
    c.name = "lsce_loss";
    c.setup = [](Rng& rng) -> Setup {
      Tensor logits = Tensor::randn({4, 5}, rng, 2.0, true);
      std::vector<Index> targets;
      for (int i = 0; i < 4; ++i) targets.push_back(rng.next_below(5));
      auto thunk = [logits, targets]() { return lsce_loss(logits, targets, 0.1); };
      return {{logits}, thunk};
    };
    cases.push_back(c);
  }
  {
    // End to end through one adapted block pair of both encoders: gradients
    // of every adapter parameter against finite differences of the full
    // classification loss.
    GradCheckCase c;
    c.name = "model_1block";
    c.trials = 10;
    c.setup = [](Rng& rng) -> Setup {
      BackboneConfig bcfg;
      bcfg.embed_dim = 16;
      bcfg.depth = 1;
      bcfg.heads = 2;
      bcfg.text_len = 4;
      bcfg.vocab_size = 16;
      AdapterConfig acfg;
      acfg.embed_dim = 16;
      acfg.reduction = 4;
      acfg.grid_side = 7;
      acfg.alpha_base = 0.2;  // large enough that parameter effects dominate FD noise

      Rng bb_rng = rng.fork(rng.next_u64());
      auto bb = std::make_shared<ToyBackbone>(init_backbone(bcfg, bb_rng));
      auto adapters = std::make_shared<ModelAdapters>(
          ModelAdapters::init(acfg, Variant::full, bcfg.depth, rng));

      Tensor images = Tensor::zeros({2, 1, 28, 28});
      for (Index i = 0; i < images.numel(); ++i) images.values()[i] = rng.next_uniform();
      std::vector<Index> token_ids;
      for (int i = 0; i < 3 * 4; ++i) token_ids.push_back(rng.next_below(16));
      std::vector<Index> targets = {rng.next_below(3), rng.next_below(3)};

      std::vector<Tensor> params;
      for (const auto& p : trainable_params(*adapters)) params.push_back(p.tensor);

      auto thunk = [bb, adapters, images, token_ids, targets, acfg]() {
        Tensor img_feats = encode_image(*bb, images, adapters.get(), acfg.alpha_base);
        Tensor txt_feats = encode_text(*bb, token_ids, 3, adapters.get(), acfg.alpha_base);
        Tensor logits = class_logits(img_feats, txt_feats, 10.0);
        return lsce_loss(logits, targets, 0.1);
      };
      return {params, thunk};
    };
    cases.push_back(c);
  }
  return cases;
}

}  // namespace heba
