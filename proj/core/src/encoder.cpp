#include "clinembed/encoder.hpp"

#include <cmath>
#include <random>

#include "clinembed/error.hpp"

namespace clinembed {

void EncoderConfig::validate() const {
  if (depth < 1) throw ConfigError("encoder depth must be >= 1");
  if (heads < 1 || dim % heads != 0) throw ConfigError("encoder dim must be divisible by heads");
  if (dim < 1 || ffn_mult < 1) throw ConfigError("encoder dim and ffn_mult must be positive");
  if (dropout != 0.0) throw ConfigError("dropout is not supported; use 0.0");
}

namespace {

Tensor uniform(Shape shape, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape));
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Fixed field order shared by naming, binding and initialisation.
template <class Layer, class F>
void visit_layer(Layer& l, F&& f) {
  f("wq", l.wq); f("bq", l.bq); f("wk", l.wk); f("bk", l.bk);
  f("wv", l.wv); f("bv", l.bv); f("wo", l.wo); f("bo", l.bo);
  f("w1", l.w1); f("b1", l.b1); f("w2", l.w2); f("b2", l.b2);
  f("ln1_gain", l.ln1_gain); f("ln1_shift", l.ln1_shift);
  f("ln2_gain", l.ln2_gain); f("ln2_shift", l.ln2_shift);
}

std::string layer_prefix(const std::string& prefix, std::size_t i) {
  return prefix + ".layer" + std::to_string(i) + ".";
}

}  // namespace

EncoderParams init_encoder(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t m = config.dim;
  const std::size_t hidden = m * config.ffn_mult;
  const double in_bound = 1.0 / std::sqrt(static_cast<double>(m));
  const double hid_bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  EncoderParams p;
  for (std::size_t i = 0; i < config.depth; ++i) {
    EncoderLayer l;
    l.wq = uniform({m, m}, in_bound, rng);
    l.bq = uniform({m}, in_bound, rng);
    l.wk = uniform({m, m}, in_bound, rng);
    l.bk = uniform({m}, in_bound, rng);
    l.wv = uniform({m, m}, in_bound, rng);
    l.bv = uniform({m}, in_bound, rng);
    l.wo = uniform({m, m}, in_bound, rng);
    l.bo = uniform({m}, in_bound, rng);
    l.w1 = uniform({m, hidden}, in_bound, rng);
    l.b1 = uniform({hidden}, in_bound, rng);
    l.w2 = uniform({hidden, m}, hid_bound, rng);
    l.b2 = uniform({m}, hid_bound, rng);
    l.ln1_gain = Tensor::full({m}, 1.0);
    l.ln1_shift = Tensor({m});
    l.ln2_gain = Tensor::full({m}, 1.0);
    l.ln2_shift = Tensor({m});
    p.layers.push_back(std::move(l));
  }
  if (config.max_seq > 0) p.positions = uniform({config.max_seq, m}, in_bound, rng);
  return p;
}

std::map<std::string, Tensor> EncoderParams::to_named(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    visit_layer(layers[i], [&](const char* name, const Tensor& t) {
      out[layer_prefix(prefix, i) + name] = t;
    });
  }
  if (positions.size() != 0) out[prefix + ".positions"] = positions;
  return out;
}

EncoderParams EncoderParams::from_named(const std::map<std::string, Tensor>& named,
                                        const std::string& prefix, const EncoderConfig& config) {
  config.validate();
  // Shapes come from a fresh init so a mismatched checkpoint is rejected.
  EncoderParams p = init_encoder(config, 0);
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    visit_layer(p.layers[i], [&](const char* name, Tensor& t) {
      const std::string key = layer_prefix(prefix, i) + name;
      auto it = named.find(key);
      if (it == named.end()) throw SchemaError("checkpoint lacks parameter " + key);
      if (it->second.shape() != t.shape()) throw SchemaError("parameter " + key + " has wrong shape");
      t = it->second;
    });
  }
  if (config.max_seq > 0) {
    auto it = named.find(prefix + ".positions");
    if (it == named.end()) throw SchemaError("checkpoint lacks parameter " + prefix + ".positions");
    if (it->second.shape() != p.positions.shape()) {
      throw SchemaError("parameter " + prefix + ".positions has wrong shape");
    }
    p.positions = it->second;
  }
  return p;
}

EncoderVars bind_encoder(ParamBinder& binder, EncoderParams& params, const std::string& prefix,
                         bool trainable) {
  EncoderVars vars;
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    EncoderLayer& l = params.layers[i];
    EncoderLayerVars v;
    const std::string p = layer_prefix(prefix, i);
    v.wq = binder.bind(p + "wq", l.wq, trainable);
    v.bq = binder.bind(p + "bq", l.bq, trainable);
    v.wk = binder.bind(p + "wk", l.wk, trainable);
    v.bk = binder.bind(p + "bk", l.bk, trainable);
    v.wv = binder.bind(p + "wv", l.wv, trainable);
    v.bv = binder.bind(p + "bv", l.bv, trainable);
    v.wo = binder.bind(p + "wo", l.wo, trainable);
    v.bo = binder.bind(p + "bo", l.bo, trainable);
    v.w1 = binder.bind(p + "w1", l.w1, trainable);
    v.b1 = binder.bind(p + "b1", l.b1, trainable);
    v.w2 = binder.bind(p + "w2", l.w2, trainable);
    v.b2 = binder.bind(p + "b2", l.b2, trainable);
    v.ln1_gain = binder.bind(p + "ln1_gain", l.ln1_gain, trainable);
    v.ln1_shift = binder.bind(p + "ln1_shift", l.ln1_shift, trainable);
    v.ln2_gain = binder.bind(p + "ln2_gain", l.ln2_gain, trainable);
    v.ln2_shift = binder.bind(p + "ln2_shift", l.ln2_shift, trainable);
    vars.layers.push_back(v);
  }
  if (params.positions.size() != 0) {
    vars.positions = binder.bind(prefix + ".positions", params.positions, trainable);
  }
  return vars;
}

Var linear(Var x, Var weight, Var bias) {
  const Shape in_shape = x.shape();
  const std::size_t in = weight.shape()[0];
  if (in_shape.empty() || in_shape.back() != in) {
    throw ShapeError("linear: input " + shape_string(in_shape) + " vs weight " +
                     shape_string(weight.shape()));
  }
  if (in_shape.size() == 1) return reshape(add(matmul(reshape(x, {1, in}), weight), bias), {weight.shape()[1]});
  return add(matmul(x, weight), bias);
}

Var add_positions(Var seq, Var positions) {
  const Shape& s = seq.shape();
  if (s.size() != 3) throw ShapeError("add_positions expects [B x L x m]");
  const std::size_t batch = s[0];
  const std::size_t len = s[1];
  if (len > positions.shape()[0]) {
    throw ConfigError("sequence length " + std::to_string(len) + " exceeds max_seq " +
                      std::to_string(positions.shape()[0]));
  }
  std::vector<std::size_t> rows;
  rows.reserve(batch * len);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < len; ++t) rows.push_back(t);
  }
  return add(seq, reshape(gather(positions, std::move(rows)), s));
}

Var encode(Var seq, const EncoderVars& vars, const EncoderConfig& config, bool causal,
           const std::vector<std::size_t>& key_lengths) {
  config.validate();
  const Shape& s = seq.shape();
  if (s.size() != 3 || s[2] != config.dim) {
    throw ShapeError("encode expects [B x L x " + std::to_string(config.dim) + "], got " +
                     shape_string(s));
  }
  if (config.max_seq > 0 && s[1] > config.max_seq) {
    throw ConfigError("sequence length " + std::to_string(s[1]) + " exceeds max_seq " +
                      std::to_string(config.max_seq));
  }
  const std::size_t heads = config.heads;
  const std::size_t head_dim = config.dim / heads;
  const double score_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
  SoftmaxMask mask;
  mask.causal = causal;
  mask.key_lengths = key_lengths;

  Var x = seq;
  for (const EncoderLayerVars& l : vars.layers) {
    const Var h = layer_norm(x, l.ln1_gain, l.ln1_shift);
    const Var q = linear(h, l.wq, l.bq);
    const Var k = linear(h, l.wk, l.bk);
    const Var v = linear(h, l.wv, l.bv);
    std::vector<Var> head_out;
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Var qh = q, kh = k, vh = v;
      if (heads > 1) {
        qh = slice(q, 2, hd * head_dim, (hd + 1) * head_dim);
        kh = slice(k, 2, hd * head_dim, (hd + 1) * head_dim);
        vh = slice(v, 2, hd * head_dim, (hd + 1) * head_dim);
      }
      const Var scores = scale(matmul(qh, transpose(kh)), score_scale);
      head_out.push_back(matmul(softmax(scores, mask), vh));
    }
    const Var attn = heads > 1 ? concat(head_out, 2) : head_out.front();
    x = add(x, linear(attn, l.wo, l.bo));

    const Var h2 = layer_norm(x, l.ln2_gain, l.ln2_shift);
    x = add(x, linear(gelu(linear(h2, l.w1, l.b1)), l.w2, l.b2));
  }
  return x;
}

Tensor encode_sequence(const Tensor& seq, EncoderParams& params, const EncoderConfig& config,
                       bool causal, bool with_positions) {
  if (seq.rank() != 2) throw ShapeError("encode_sequence expects [L x m]");
  Tape tape;
  ParamBinder binder(tape);
  const EncoderVars vars = bind_encoder(binder, params, "encoder", false);
  Var x = reshape(tape.constant(seq), {1, seq.dim(0), seq.dim(1)});
  if (with_positions) {
    if (!vars.positions.valid()) throw ConfigError("encoder has no position table");
    x = add_positions(x, vars.positions);
  }
  const Var y = encode(x, vars, config, causal);
  return Tensor({seq.dim(0), seq.dim(1)}, y.value().data());
}

}  // namespace clinembed
