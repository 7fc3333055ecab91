#include "heba/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>

#include "heba/errors.hpp"
#include "heba/ops.hpp"
#include "heba/rng.hpp"

namespace heba {

void LossConfig::validate() const {
  if (epsilon < 0.0 || epsilon >= 1.0) {
    throw InvariantError("loss config: epsilon must be in [0,1)");
  }
  if (negative_ratio < 0) {
    throw InvariantError("loss config: negative_ratio must be >= 0");
  }
}

void OptimConfig::validate() const {
  if (lr <= 0.0) throw InvariantError("optim config: lr must be positive");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw InvariantError("optim config: momentum must be in [0,1)");
  }
  if (weight_decay < 0.0) throw InvariantError("optim config: weight_decay must be >= 0");
  // epochs == 0 is allowed: it checkpoints the untrained (freshly initialized)
  // model, the zero-shot baseline reference.
  if (epochs < 0 || batch_size <= 0) {
    throw InvariantError("optim config: epochs must be >= 0 and batch_size positive");
  }
}

SgdState SgdState::init(const std::vector<ParamRef>& params) {
  SgdState state;
  state.velocity.reserve(params.size());
  for (const auto& p : params) {
    state.velocity.emplace_back(Eigen::ArrayXd::Zero(p.tensor.numel()));
  }
  return state;
}

double cosine_lr(double base_lr, Index step_index, Index total_steps) {
  if (total_steps <= 0) throw InvariantError("cosine_lr: total_steps must be positive");
  const double t = static_cast<double>(step_index) / static_cast<double>(total_steps);
  return base_lr * (1.0 + std::cos(std::numbers::pi * t)) / 2.0;
}

double sgd_step(std::vector<ParamRef>& params, SgdState& state, const OptimConfig& cfg,
                Index step_index, Index total_steps) {
  if (state.velocity.size() != params.size()) {
    throw InvariantError("sgd_step: optimizer state does not match parameter list");
  }
  const double lr_t = cosine_lr(cfg.lr, step_index, total_steps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.tensor.has_grad()) {
      throw InvariantError("sgd_step: missing gradient for parameter " + p.name);
    }
    Eigen::ArrayXd& v = state.velocity[i];
    v = cfg.momentum * v + p.tensor.grad();
    if (p.decay && cfg.weight_decay != 0.0) v += cfg.weight_decay * p.tensor.values();
    p.tensor.values() -= lr_t * v;
  }
  return lr_t;
}

Tensor lsce_loss(const Tensor& logits, const std::vector<Index>& targets, double epsilon) {
  if (logits.rank() != 2) {
    throw ShapeError("lsce_loss: logits must be [B,K], got " + shape_str(logits.shape()));
  }
  const Index b = logits.dim(0), k = logits.dim(1);
  if (static_cast<Index>(targets.size()) != b) {
    throw ShapeError("lsce_loss: " + std::to_string(targets.size()) + " targets for batch " +
                     std::to_string(b));
  }
  for (Index t : targets) {
    if (t < 0 || t >= k) {
      throw InvariantError("lsce_loss: target " + std::to_string(t) + " out of range [0," +
                           std::to_string(k) + ")");
    }
  }
  if (epsilon < 0.0 || epsilon >= 1.0) {
    throw InvariantError("lsce_loss: epsilon must be in [0,1)");
  }
  Tensor logp = log_softmax(logits);
  // CE term: batch mean of -log p_target. Smoothing term: mean over the
  // full B x K table of -log p, which equals the batch mean of
  // (1/K) sum_k -log p_k.
  Tensor ce = scale(mean(take_per_row(logp, targets, 1)), -1.0);
  Tensor smooth = scale(mean(logp), -1.0);
  return add(scale(ce, 1.0 - epsilon), scale(smooth, epsilon));
}

std::vector<Index> subsample_negatives(Index num_classes, Index target, Index ratio, Rng& rng) {
  if (target < 0 || target >= num_classes) {
    throw InvariantError("subsample_negatives: target out of range");
  }
  if (ratio < 0 || ratio > num_classes - 1) {
    throw InvariantError("subsample_negatives: ratio " + std::to_string(ratio) +
                         " exceeds available negatives " + std::to_string(num_classes - 1));
  }
  std::set<Index> chosen{target};
  while (static_cast<Index>(chosen.size()) < ratio + 1) {
    const Index candidate = rng.next_below(num_classes);
    chosen.insert(candidate);  // duplicates and the target are simply retried
  }
  return std::vector<Index>(chosen.begin(), chosen.end());
}

}  // namespace heba
