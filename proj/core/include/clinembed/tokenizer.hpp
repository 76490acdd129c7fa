#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "clinembed/autodiff.hpp"
#include "clinembed/optim.hpp"
#include "clinembed/schema.hpp"
#include "clinembed/tensor.hpp"

namespace clinembed {

/// Per-feature embedding parameters. Numerical feature with slot s maps
/// value v to v * num_weight[s] + num_bias[s]; categorical slot k maps code
/// c to cat_weight[k][c] + cat_bias[k].
struct TokenizerParams {
  std::size_t dim = 0;
  Tensor num_weight;               // [n_num x m]
  Tensor num_bias;                 // [n_num x m]
  std::vector<Tensor> cat_weight;  // per categorical slot: [cardinality x m]
  Tensor cat_bias;                 // [n_cat x m]
  Tensor mask;                     // [m], the shared [MASK] embedding

  /// Parameters keyed by feature name, e.g. "tokenizer.num.HR.weight".
  std::map<std::string, Tensor> to_named(const FeatureSchema& schema) const;
  static TokenizerParams from_named(const std::map<std::string, Tensor>& named,
                                    const FeatureSchema& schema);
};

/// Entries i.i.d. uniform on (-1/sqrt(m), 1/sqrt(m)), deterministic per seed.
TokenizerParams init_tokenizer(const FeatureSchema& schema, std::size_t m, std::uint64_t seed);

/// Embeds one time step (schema order; numerical entries z-scored,
/// categorical entries integral codes) into a d x m tensor.
Tensor tokenize(std::span<const double> step, const FeatureSchema& schema,
                const TokenizerParams& params);

/// Tokenizer parameters placed on a tape.
struct TokenizerVars {
  Var weight_table;  // [(n_num + sum C) x m]
  Var bias_table;    // [(n_num + n_cat) x m]
  Var mask;          // [m]
};

TokenizerVars bind_tokenizer(ParamBinder& binder, TokenizerParams& params, bool trainable);

/// Embeds `batch` rows of d values (row-major) into a [batch x d x m] node.
Var tokenize_batch(const TokenizerVars& vars, const FeatureSchema& schema,
                   std::span<const double> rows, std::size_t batch);

/// Validates a categorical cell and returns its code.
std::size_t category_code(double value, const FeatureSpec& spec);

}  // namespace clinembed
