#pragma once

#include <string>
#include <vector>

#include "heba/tensor.hpp"

namespace heba {

class Rng;

struct LossConfig {
  double epsilon = 0.1;
  Index negative_ratio = 5;  // 0 disables subsampling

  void validate() const;
};

struct OptimConfig {
  double lr = 7.5e-3;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  Index epochs = 30;
  Index batch_size = 16;

  void validate() const;
};

// Trainable parameter entry. Weight decay applies only where decay is set
// (weight matrices and kernels, not biases).
struct ParamRef {
  std::string name;
  Tensor tensor;
  bool decay = true;
};

struct SgdState {
  std::vector<Eigen::ArrayXd> velocity;  // aligned with the parameter list

  static SgdState init(const std::vector<ParamRef>& params);
};

// Cosine annealing to zero: lr * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double base_lr, Index step_index, Index total_steps);

// v <- momentum*v + g (+ wd*theta on decayed params); theta <- theta - lr_t*v.
// Returns lr_t. Throws if any parameter is missing its gradient.
double sgd_step(std::vector<ParamRef>& params, SgdState& state, const OptimConfig& cfg,
                Index step_index, Index total_steps);

// Label-smoothing cross entropy, batch-meaned:
// (1-eps)*CE + eps * (1/K) * sum_k -log p_k.
Tensor lsce_loss(const Tensor& logits, const std::vector<Index>& targets, double epsilon);

// Target plus `ratio` distinct non-target classes, sorted ascending. The
// caller computes the loss over this reduced class set.
std::vector<Index> subsample_negatives(Index num_classes, Index target, Index ratio, Rng& rng);

}  // namespace heba
