#include "clinembed/optim.hpp"

#include <cmath>

#include "clinembed/error.hpp"

namespace clinembed {

void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config) {
  if (!(config.lr > 0.0)) throw ConfigError("Adam learning rate must be positive");
  if (grad.shape() != param.shape()) {
    throw ShapeError("gradient " + shape_string(grad.shape()) + " does not match parameter " +
                     shape_string(param.shape()));
  }
  if (state.step == 0 && state.m.size() == 0) {
    state.m = Tensor(param.shape());
    state.v = Tensor(param.shape());
  }
  if (state.m.shape() != param.shape() || state.v.shape() != param.shape()) {
    throw ShapeError("Adam state does not match parameter " + shape_string(param.shape()));
  }
  state.step += 1;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(config.beta1, t);
  const double c2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    state.m[i] = config.beta1 * state.m[i] + (1.0 - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (1.0 - config.beta2) * g * g;
    const double mhat = state.m[i] / c1;
    const double vhat = state.v[i] / c2;
    param[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

Var ParamBinder::bind(const std::string& name, Tensor& param, bool trainable) {
  Var v = tape_.leaf(param, trainable);
  bindings_.push_back({name, &param, v, trainable});
  return v;
}

Adam::Adam(AdamConfig config) : config_(config) {
  if (!(config_.lr > 0.0)) throw ConfigError("Adam learning rate must be positive");
}

void Adam::step(const ParamBinder& binder, const GradientMap& grads) {
  for (const auto& b : binder.bindings()) {
    if (!b.trainable) continue;
    adam_step(*b.param, grads.at(b.var), state_[b.name], config_);
  }
}

}  // namespace clinembed
