#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

struct EncoderConfig {
  std::size_t depth = 1;
  std::size_t heads = 1;
  std::size_t dim = 128;
  std::size_t ffn_mult = 4;
  double dropout = 0.0;
  /// Length of the learned position table; 0 disables positions.
  std::size_t max_seq = 0;

  void validate() const;
};

/// Pre-layer-norm transformer block weights. Linear maps are stored as
/// [in x out] so that y = x W + b.
struct EncoderLayer {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
  Tensor w1, b1, w2, b2;
  Tensor ln1_gain, ln1_shift, ln2_gain, ln2_shift;
};

struct EncoderParams {
  std::vector<EncoderLayer> layers;
  Tensor positions;  // [max_seq x m], empty when positions are disabled

  std::map<std::string, Tensor> to_named(const std::string& prefix) const;
  static EncoderParams from_named(const std::map<std::string, Tensor>& named,
                                  const std::string& prefix, const EncoderConfig& config);
};

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed);

struct EncoderLayerVars {
  Var wq, bq, wk, bk, wv, bv, wo, bo;
  Var w1, b1, w2, b2;
  Var ln1_gain, ln1_shift, ln2_gain, ln2_shift;
};

struct EncoderVars {
  std::vector<EncoderLayerVars> layers;
  Var positions;  // invalid when disabled
};

EncoderVars bind_encoder(ParamBinder& binder, EncoderParams& params, const std::string& prefix,
                         bool trainable = true);

/// y = x W + b applied over the last axis of a tensor of any rank.
Var linear(Var x, Var weight, Var bias);

/// Adds rows 0..L-1 of `positions` to every sequence of a [B x L x m] input.
/// Throws ConfigError when L exceeds the table length.
Var add_positions(Var seq, Var positions);

/// Runs the encoder stack over [B x L x m] sequences. With `causal`, token t
/// attends only to tokens <= t. `key_lengths` (one per sequence) hides
/// padded keys. Positions are NOT added here; see add_positions.
Var encode(Var seq, const EncoderVars& vars, const EncoderConfig& config, bool causal,
           const std::vector<std::size_t>& key_lengths = {});

/// Convenience evaluation of one [L x m] sequence outside any training loop.
Tensor encode_sequence(const Tensor& seq, EncoderParams& params, const EncoderConfig& config,
                       bool causal, bool with_positions);

}  // namespace clinembed
