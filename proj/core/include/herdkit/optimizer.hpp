#pragma once

#include <vector>

#include "herdkit/config.hpp"
#include "herdkit/model.hpp"

namespace herdkit {

// Plain SGD update: theta -= eta * grad, elementwise. Kept as a standalone
// primitive because the lr/loss-scaling equivalence argument holds for SGD.
template <typename T>
void sgd_step(std::vector<T>& params, const std::vector<T>& grads, double eta);

// Per-peer optimizer. Moment arrays are aligned index-for-index with
// learnable_tensors() of the peer the optimizer owns.
template <typename T>
struct OptimizerState {
  OptimizerKind kind = OptimizerKind::adam;
  double learning_rate = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;  // decoupled decay; nonzero only for adamw
  std::vector<std::vector<T>> m;  // first moments (adam/adamw)
  std::vector<std::vector<T>> v;  // second moments (adam/adamw)
  long step_count = 0;
};

// Builds a fresh optimizer for `model` (moments zeroed, step counter 0).
// adamw gets the default decoupled weight decay of 0.01.
template <typename T>
OptimizerState<T> init_optimizer(OptimizerKind kind, double learning_rate, Model<T>& model);

// Applies one update to the model's learnable parameters; increments the
// step counter by exactly 1. Throws on a shape mismatch with the gradients.
template <typename T>
void apply_step(OptimizerState<T>& opt, Model<T>& model, const ParamGrads<T>& grads);

}  // namespace herdkit
