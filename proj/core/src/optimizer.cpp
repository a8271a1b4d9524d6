#include "herdkit/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace herdkit {

template <typename T>
void sgd_step(std::vector<T>& params, const std::vector<T>& grads, double eta) {
  if (params.size() != grads.size()) throw std::invalid_argument("sgd_step: shape mismatch");
  for (size_t j = 0; j < params.size(); ++j) {
    params[j] = static_cast<T>(double(params[j]) - eta * double(grads[j]));
  }
}

template <typename T>
OptimizerState<T> init_optimizer(OptimizerKind kind, double learning_rate, Model<T>& model) {
  if (learning_rate < 0.0) throw std::invalid_argument("init_optimizer: negative learning rate");
  OptimizerState<T> opt;
  opt.kind = kind;
  opt.learning_rate = learning_rate;
  if (kind == OptimizerKind::adamw) opt.weight_decay = 0.01;
  if (kind != OptimizerKind::sgd) {
    for (const NamedTensor<T>& t : learnable_tensors(model)) {
      opt.m.emplace_back(t.data->size(), T(0));
      opt.v.emplace_back(t.data->size(), T(0));
    }
  }
  return opt;
}

template <typename T>
void apply_step(OptimizerState<T>& opt, Model<T>& model, const ParamGrads<T>& grads) {
  std::vector<NamedTensor<T>> tensors = learnable_tensors(model);
  if (tensors.size() != grads.tensors.size()) {
    throw std::invalid_argument("apply_step: gradient tensor count mismatch");
  }
  opt.step_count += 1;
  if (opt.kind == OptimizerKind::sgd) {
    for (size_t k = 0; k < tensors.size(); ++k) {
      sgd_step(*tensors[k].data, grads.tensors[k], opt.learning_rate);
    }
    return;
  }
  // Adam / AdamW with bias correction; AdamW adds decoupled weight decay.
  const double bc1 = 1.0 - std::pow(opt.beta1, double(opt.step_count));
  const double bc2 = 1.0 - std::pow(opt.beta2, double(opt.step_count));
  for (size_t k = 0; k < tensors.size(); ++k) {
    std::vector<T>& theta = *tensors[k].data;
    const std::vector<T>& g = grads.tensors[k];
    std::vector<T>& m = opt.m[k];
    std::vector<T>& v = opt.v[k];
    if (theta.size() != g.size()) throw std::invalid_argument("apply_step: shape mismatch");
    for (size_t j = 0; j < theta.size(); ++j) {
      const double gj = double(g[j]);
      const double mj = opt.beta1 * double(m[j]) + (1.0 - opt.beta1) * gj;
      const double vj = opt.beta2 * double(v[j]) + (1.0 - opt.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double m_hat = mj / bc1;
      const double v_hat = vj / bc2;
      double update = m_hat / (std::sqrt(v_hat) + opt.epsilon);
      if (opt.weight_decay != 0.0) update += opt.weight_decay * double(theta[j]);
      theta[j] = static_cast<T>(double(theta[j]) - opt.learning_rate * update);
    }
  }
}

template void sgd_step(std::vector<float>&, const std::vector<float>&, double);
template void sgd_step(std::vector<double>&, const std::vector<double>&, double);
template struct OptimizerState<float>;
template struct OptimizerState<double>;
template OptimizerState<float> init_optimizer(OptimizerKind, double, Model<float>&);
template OptimizerState<double> init_optimizer(OptimizerKind, double, Model<double>&);
template void apply_step(OptimizerState<float>&, Model<float>&, const ParamGrads<float>&);
template void apply_step(OptimizerState<double>&, Model<double>&, const ParamGrads<double>&);

}  // namespace herdkit
