#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates for one parameter tensor.
struct AdamState {
  Tensor m;
  Tensor v;
  std::size_t step = 0;
};

/// One bias-corrected Adam update of `param` in place. Throws ConfigError
/// when lr <= 0 and ShapeError when state or grad do not match param.
void adam_step(Tensor& param, const Tensor& grad, AdamState& state, const AdamConfig& config);

/// Places parameters on a tape as leaves and remembers which leaf belongs
/// to which parameter so gradients can be routed back after backward().
class ParamBinder {
 public:
  explicit ParamBinder(Tape& tape) : tape_(tape) {}

  Var bind(const std::string& name, Tensor& param, bool trainable = true);

  struct Binding {
    std::string name;
    Tensor* param;
    Var var;
    bool trainable;
  };
  const std::vector<Binding>& bindings() const { return bindings_; }

 private:
  Tape& tape_;
  std::vector<Binding> bindings_;
};

/// Adam over a named parameter collection; state is created lazily per name.
class Adam {
 public:
  explicit Adam(AdamConfig config);

  /// Applies one update to every trainable binding using `grads`.
  void step(const ParamBinder& binder, const GradientMap& grads);

  const AdamConfig& config() const { return config_; }

 private:
  AdamConfig config_;
  std::map<std::string, AdamState> state_;
};

}  // namespace clinembed
