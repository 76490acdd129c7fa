#include "clinembed/tokenizer.hpp"

#include <cmath>
#include <random>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

Tensor uniform_tensor(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

}  // namespace

std::size_t category_code(double value, const FeatureSpec& spec) {
  if (!std::isfinite(value) || value < 0.0 || value != std::floor(value) ||
      value >= static_cast<double>(spec.cardinality)) {
    throw SchemaError("invalid code " + std::to_string(value) + " for categorical feature " +
                      spec.name);
  }
  return static_cast<std::size_t>(value);
}

TokenizerParams init_tokenizer(const FeatureSchema& schema, std::size_t m, std::uint64_t seed) {
  if (m < 2) throw ConfigError("embedding dim must be >= 2");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(m));
  const std::size_t n_num = schema.numerical().size();
  const std::size_t n_cat = schema.categorical().size();
  TokenizerParams p;
  p.dim = m;
  p.num_weight = uniform_tensor({n_num, m}, bound, rng);
  p.num_bias = uniform_tensor({n_num, m}, bound, rng);
  for (std::size_t k = 0; k < n_cat; ++k) {
    p.cat_weight.push_back(uniform_tensor({schema[schema.categorical()[k]].cardinality, m}, bound, rng));
  }
  p.cat_bias = uniform_tensor({n_cat, m}, bound, rng);
  p.mask = uniform_tensor({m}, bound, rng);
  return p;
}

Tensor tokenize(std::span<const double> step, const FeatureSchema& schema,
                const TokenizerParams& params) {
  if (step.size() != schema.size()) {
    throw SchemaError("step has " + std::to_string(step.size()) + " values, schema has " +
                      std::to_string(schema.size()));
  }
  const std::size_t m = params.dim;
  Tensor out({schema.size(), m});
  for (std::size_t i = 0; i < schema.size(); ++i) {
    auto dst = out.row(i);
    if (schema.is_numerical(i)) {
      const std::size_t s = schema.numerical_slot(i);
      auto w = params.num_weight.row(s);
      auto b = params.num_bias.row(s);
      for (std::size_t c = 0; c < m; ++c) dst[c] = step[i] * w[c] + b[c];
    } else {
      const std::size_t k = schema.categorical_slot(i);
      const std::size_t code = category_code(step[i], schema[i]);
      auto w = params.cat_weight[k].row(code);
      auto b = params.cat_bias.row(k);
      for (std::size_t c = 0; c < m; ++c) dst[c] = w[c] * 1.0 + b[c];
    }
  }
  return out;
}

TokenizerVars bind_tokenizer(ParamBinder& binder, TokenizerParams& params, bool trainable) {
  std::vector<Var> weights{binder.bind("tokenizer.num_weight", params.num_weight, trainable)};
  for (std::size_t k = 0; k < params.cat_weight.size(); ++k) {
    weights.push_back(binder.bind("tokenizer.cat_weight." + std::to_string(k), params.cat_weight[k],
                                  trainable));
  }
  const Var biases[] = {binder.bind("tokenizer.num_bias", params.num_bias, trainable),
                        binder.bind("tokenizer.cat_bias", params.cat_bias, trainable)};
  TokenizerVars vars;
  vars.weight_table = concat(weights, 0);
  vars.bias_table = concat(biases, 0);
  vars.mask = binder.bind("tokenizer.mask", params.mask, trainable);
  return vars;
}

Var tokenize_batch(const TokenizerVars& vars, const FeatureSchema& schema,
                   std::span<const double> rows, std::size_t batch) {
  const std::size_t d = schema.size();
  if (rows.size() != batch * d) throw ShapeError("tokenize_batch: row buffer does not match batch x d");
  const std::size_t m = vars.weight_table.shape()[1];
  const std::size_t n_num = schema.numerical().size();

  std::vector<std::size_t> weight_rows(batch * d);
  std::vector<std::size_t> bias_rows(batch * d);
  Tensor scale_values({batch * d, m});
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t r = b * d + i;
      const double v = rows[r];
      double s = 1.0;
      if (schema.is_numerical(i)) {
        weight_rows[r] = schema.numerical_slot(i);
        bias_rows[r] = schema.numerical_slot(i);
        s = v;
      } else {
        const std::size_t k = schema.categorical_slot(i);
        weight_rows[r] = n_num + schema.category_offset(k) + category_code(v, schema[i]);
        bias_rows[r] = n_num + k;
      }
      auto dst = scale_values.row(r);
      std::fill(dst.begin(), dst.end(), s);
    }
  }
  Tape& tape = vars.weight_table.tape();
  const Var scaled = mul(gather(vars.weight_table, std::move(weight_rows)),
                         tape.constant(std::move(scale_values)));
  const Var e = add(scaled, gather(vars.bias_table, std::move(bias_rows)));
  return reshape(e, {batch, d, m});
}

std::map<std::string, Tensor> TokenizerParams::to_named(const FeatureSchema& schema) const {
  std::map<std::string, Tensor> out;
  const std::size_t m = dim;
  for (std::size_t s = 0; s < schema.numerical().size(); ++s) {
    const std::string& name = schema[schema.numerical()[s]].name;
    auto w = num_weight.row(s);
    auto b = num_bias.row(s);
    out["tokenizer.num." + name + ".weight"] = Tensor({m}, {w.begin(), w.end()});
    out["tokenizer.num." + name + ".bias"] = Tensor({m}, {b.begin(), b.end()});
  }
  for (std::size_t k = 0; k < schema.categorical().size(); ++k) {
    const std::string& name = schema[schema.categorical()[k]].name;
    auto b = cat_bias.row(k);
    out["tokenizer.cat." + name + ".weight"] = cat_weight[k];
    out["tokenizer.cat." + name + ".bias"] = Tensor({m}, {b.begin(), b.end()});
  }
  out["tokenizer.mask"] = mask;
  return out;
}

TokenizerParams TokenizerParams::from_named(const std::map<std::string, Tensor>& named,
                                            const FeatureSchema& schema) {
  auto fetch = [&](const std::string& key) -> const Tensor& {
    auto it = named.find(key);
    if (it == named.end()) throw SchemaError("checkpoint lacks parameter " + key);
    return it->second;
  };
  TokenizerParams p;
  p.mask = fetch("tokenizer.mask");
  p.dim = p.mask.size();
  const std::size_t m = p.dim;
  const std::size_t n_num = schema.numerical().size();
  const std::size_t n_cat = schema.categorical().size();
  p.num_weight = Tensor({n_num, m});
  p.num_bias = Tensor({n_num, m});
  p.cat_bias = Tensor({n_cat, m});
  auto copy_row = [m](const Tensor& src, Tensor& dst, std::size_t r, const std::string& key) {
    if (src.shape() != Shape{m}) throw SchemaError("parameter " + key + " has wrong shape");
    std::copy(src.values().begin(), src.values().end(), dst.row(r).begin());
  };
  for (std::size_t s = 0; s < n_num; ++s) {
    const std::string base = "tokenizer.num." + schema[schema.numerical()[s]].name;
    copy_row(fetch(base + ".weight"), p.num_weight, s, base + ".weight");
    copy_row(fetch(base + ".bias"), p.num_bias, s, base + ".bias");
  }
  for (std::size_t k = 0; k < n_cat; ++k) {
    const FeatureSpec& f = schema[schema.categorical()[k]];
    const std::string base = "tokenizer.cat." + f.name;
    const Tensor& w = fetch(base + ".weight");
    if (w.shape() != Shape{f.cardinality, m}) throw SchemaError("parameter " + base + ".weight has wrong shape");
    p.cat_weight.push_back(w);
    copy_row(fetch(base + ".bias"), p.cat_bias, k, base + ".bias");
  }
  return p;
}

}  // namespace clinembed
