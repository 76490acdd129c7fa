#include "clinembed/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

#include "clinembed/error.hpp"

namespace clinembed {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  if (axis >= shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape));
  }
  AxisSplit s;
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  s.n = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

Shape drop_axis(const Shape& shape, std::size_t axis) {
  Shape out;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i != axis) out.push_back(shape[i]);
  }
  return out;
}

void require(bool ok, OpKind kind, const std::string& what) {
  if (!ok) throw ShapeError(std::string(op_name(kind)) + ": " + what);
}

void accumulate(Tensor& into, Tensor&& g) {
  if (into.size() == 0) {
    into = std::move(g);
    return;
  }
  auto dst = into.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

// Softmax rows are the trailing axis. For a row index r of a tensor whose
// last two dims are L x K, the query position is r % L and the batch is r / L.
struct RowMask {
  const SoftmaxMask& mask;
  std::size_t rows_per_batch;

  std::pair<std::size_t, std::size_t> window(std::size_t r, std::size_t k) const {
    std::size_t lo = 0;
    std::size_t hi = k;
    if (!mask.row_ranges.empty()) {
      lo = std::max(lo, mask.row_ranges[r].first);
      hi = std::min(hi, mask.row_ranges[r].second);
    }
    if (mask.causal) hi = std::min(hi, r % rows_per_batch + 1);
    if (!mask.key_lengths.empty()) hi = std::min(hi, mask.key_lengths[r / rows_per_batch]);
    return {lo, hi};
  }
};

void validate_mask(const SoftmaxMask& mask, const Shape& shape, OpKind kind) {
  require(!shape.empty(), kind, "input must have rank >= 1");
  const std::size_t rows = shape_size(shape) / shape.back();
  if (!mask.row_ranges.empty()) {
    require(mask.row_ranges.size() == rows, kind, "row_ranges must have one entry per row");
  }
  if (mask.causal || !mask.key_lengths.empty()) {
    require(shape.size() >= 2, kind, "causal/key masks need rank >= 2");
  }
  if (!mask.key_lengths.empty()) {
    require(shape.size() == 3 && mask.key_lengths.size() == shape[0], kind,
            "key_lengths needs a 3-D input with one length per batch entry");
  }
}

double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

struct MatMulDims {
  std::size_t batch, n, k, p;
  bool shared_rhs = false;  // [..., k] x [k, p]: leading dims folded into rows
};

MatMulDims matmul_dims(const Shape& a, const Shape& b) {
  if (a.size() == 2 && b.size() == 2) {
    require(a[1] == b[0], OpKind::MatMul, shape_string(a) + " x " + shape_string(b));
    return {1, a[0], a[1], b[1]};
  }
  if (a.size() == 3 && b.size() == 3) {
    require(a[0] == b[0] && a[2] == b[1], OpKind::MatMul, shape_string(a) + " x " + shape_string(b));
    return {a[0], a[1], a[2], b[2]};
  }
  if (a.size() >= 3 && b.size() == 2) {
    require(a.back() == b[0], OpKind::MatMul, shape_string(a) + " x " + shape_string(b));
    return {1, shape_size(a) / a.back(), b[0], b[1], true};
  }
  throw ShapeError("MatMul: expected 2-D x 2-D, 3-D x 3-D or N-D x 2-D, got " + shape_string(a) + " x " +
                   shape_string(b));
}

// ---- forward rules -------------------------------------------------------

void forward(Node& node, const std::vector<const Tensor*>& in) {
  const OpKind kind = node.kind;
  OpAttrs& at = node.attrs;
  auto arity = [&](std::size_t n) {
    require(in.size() == n, kind, "expected " + std::to_string(n) + " inputs");
  };

  switch (kind) {
    case OpKind::Leaf:
      throw ContractError("Leaf nodes are created with Tape::leaf");

    case OpKind::MatMul: {
      arity(2);
      const auto d = matmul_dims(in[0]->shape(), in[1]->shape());
      Shape out_shape;
      if (d.shared_rhs) {
        out_shape = in[0]->shape();
        out_shape.back() = d.p;
      } else {
        out_shape = in[0]->rank() == 2 ? Shape{d.n, d.p} : Shape{d.batch, d.n, d.p};
      }
      Tensor out(out_shape);
      for (std::size_t b = 0; b < d.batch; ++b) {
        ConstMap A(in[0]->values().data() + b * d.n * d.k, d.n, d.k);
        ConstMap B(in[1]->values().data() + b * d.k * d.p, d.k, d.p);
        MutMap C(out.values().data() + b * d.n * d.p, d.n, d.p);
        C.noalias() = A * B;
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Add: {
      arity(2);
      const Tensor& a = *in[0];
      const Tensor& b = *in[1];
      Tensor out = a;
      if (a.shape() == b.shape()) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
      } else {
        require(b.rank() == 1 && a.rank() >= 1 && a.shape().back() == b.size(), kind,
                "cannot add " + shape_string(b.shape()) + " to " + shape_string(a.shape()));
        const std::size_t m = b.size();
        for (std::size_t r = 0; r < out.size(); r += m) {
          for (std::size_t c = 0; c < m; ++c) out[r + c] += b[c];
        }
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::ScalarMul: {
      arity(1);
      Tensor out = *in[0];
      for (double& v : out.values()) v *= at.scalar;
      node.value = std::move(out);
      return;
    }

    case OpKind::Mul: {
      arity(2);
      require(in[0]->shape() == in[1]->shape(), kind,
              shape_string(in[0]->shape()) + " vs " + shape_string(in[1]->shape()));
      Tensor out = *in[0];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= (*in[1])[i];
      node.value = std::move(out);
      return;
    }

    case OpKind::Concat: {
      require(!in.empty(), kind, "needs at least one input");
      const Shape& first = in[0]->shape();
      require(at.axis < first.size(), kind, "axis out of range");
      Shape out_shape = first;
      out_shape[at.axis] = 0;
      for (const Tensor* t : in) {
        require(t->rank() == first.size(), kind, "rank mismatch");
        for (std::size_t i = 0; i < first.size(); ++i) {
          if (i != at.axis) require(t->shape()[i] == first[i], kind, "non-concat dims differ");
        }
        out_shape[at.axis] += t->shape()[at.axis];
      }
      Tensor out(out_shape);
      const AxisSplit os = split_axis(out_shape, at.axis);
      std::size_t offset = 0;
      for (const Tensor* t : in) {
        const AxisSplit s = split_axis(t->shape(), at.axis);
        for (std::size_t o = 0; o < s.outer; ++o) {
          const double* src = t->values().data() + o * s.n * s.inner;
          double* dst = out.values().data() + (o * os.n + offset) * os.inner;
          std::copy(src, src + s.n * s.inner, dst);
        }
        offset += s.n;
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Slice: {
      arity(1);
      const AxisSplit s = split_axis(in[0]->shape(), at.axis);
      require(at.begin < at.end && at.end <= s.n, kind, "bad slice range");
      Shape out_shape = in[0]->shape();
      const std::size_t len = at.end - at.begin;
      out_shape[at.axis] = len;
      Tensor out(out_shape);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = in[0]->values().data() + (o * s.n + at.begin) * s.inner;
        std::copy(src, src + len * s.inner, out.values().data() + o * len * s.inner);
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Gather: {
      arity(1);
      const Tensor& table = *in[0];
      require(table.rank() == 2, kind, "table must be 2-D");
      const std::size_t rows = table.dim(0);
      const std::size_t m = table.dim(1);
      Tensor out({at.indices.size(), m});
      for (std::size_t i = 0; i < at.indices.size(); ++i) {
        require(at.indices[i] < rows, kind, "row index out of range");
        auto src = table.row(at.indices[i]);
        std::copy(src.begin(), src.end(), out.row(i).begin());
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Sum:
    case OpKind::Mean:
    case OpKind::Max: {
      arity(1);
      const AxisSplit s = split_axis(in[0]->shape(), at.axis);
      require(s.n > 0, kind, "empty reduction axis");
      Tensor out(drop_axis(in[0]->shape(), at.axis));
      const double* x = in[0]->values().data();
      if (kind == OpKind::Max) node.saved_index.assign(s.outer * s.inner, 0);
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const double* base = x + o * s.n * s.inner + j;
          if (kind == OpKind::Max) {
            std::size_t best = 0;
            for (std::size_t i = 1; i < s.n; ++i) {
              if (base[i * s.inner] > base[best * s.inner]) best = i;
            }
            out[o * s.inner + j] = base[best * s.inner];
            node.saved_index[o * s.inner + j] = best;
          } else {
            double acc = 0.0;
            for (std::size_t i = 0; i < s.n; ++i) acc += base[i * s.inner];
            out[o * s.inner + j] = kind == OpKind::Mean ? acc / static_cast<double>(s.n) : acc;
          }
        }
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Softmax:
    case OpKind::LogSoftmax: {
      arity(1);
      const Shape& shape = in[0]->shape();
      validate_mask(at.mask, shape, kind);
      const std::size_t k = shape.back();
      const std::size_t rows = in[0]->size() / k;
      const RowMask rm{at.mask, shape.size() >= 2 ? shape[shape.size() - 2] : 1};
      Tensor out(shape);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto [lo, hi] = rm.window(r, k);
        if (lo >= hi) throw ContractError(std::string(op_name(kind)) + ": row with no unmasked entries");
        const double* x = in[0]->values().data() + r * k;
        double* y = out.values().data() + r * k;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = lo; c < hi; ++c) mx = std::max(mx, x[c]);
        double z = 0.0;
        for (std::size_t c = lo; c < hi; ++c) z += std::exp(x[c] - mx);
        if (kind == OpKind::Softmax) {
          for (std::size_t c = lo; c < hi; ++c) y[c] = std::exp(x[c] - mx) / z;
        } else {
          const double logz = mx + std::log(z);
          for (std::size_t c = lo; c < hi; ++c) y[c] = x[c] - logz;
        }
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::LayerNorm: {
      arity(3);
      const Tensor& x = *in[0];
      require(x.rank() >= 1, kind, "input must have rank >= 1");
      const std::size_t n = x.shape().back();
      require(in[1]->shape() == Shape{n} && in[2]->shape() == Shape{n}, kind,
              "gain/shift must be vectors of the last dim");
      const std::size_t rows = x.size() / n;
      Tensor out(x.shape());
      node.saved.assign(x.size() + rows, 0.0);  // xhat then rstd per row
      for (std::size_t r = 0; r < rows; ++r) {
        const double* xr = x.values().data() + r * n;
        double mu = 0.0;
        for (std::size_t i = 0; i < n; ++i) mu += xr[i];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<double>(n);
        const double rstd = 1.0 / std::sqrt(var + kLayerNormEpsilon);
        node.saved[x.size() + r] = rstd;
        for (std::size_t i = 0; i < n; ++i) {
          const double xhat = (xr[i] - mu) * rstd;
          node.saved[r * n + i] = xhat;
          out[r * n + i] = xhat * (*in[1])[i] + (*in[2])[i];
        }
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Relu:
    case OpKind::Gelu:
    case OpKind::Sigmoid: {
      arity(1);
      Tensor out = *in[0];
      if (kind == OpKind::Relu) {
        for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
      } else if (kind == OpKind::Gelu) {
        for (double& v : out.values()) v = gelu_value(v);
      } else {
        for (double& v : out.values()) v = sigmoid_value(v);
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Transpose: {
      arity(1);
      const Shape& s = in[0]->shape();
      require(s.size() == 2 || s.size() == 3, kind, "expected rank 2 or 3");
      const std::size_t batch = s.size() == 3 ? s[0] : 1;
      const std::size_t r = s[s.size() - 2];
      const std::size_t c = s[s.size() - 1];
      Shape out_shape = s;
      out_shape[s.size() - 2] = c;
      out_shape[s.size() - 1] = r;
      Tensor out(out_shape);
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMap A(in[0]->values().data() + b * r * c, r, c);
        MutMap B(out.values().data() + b * r * c, c, r);
        B = A.transpose();
      }
      node.value = std::move(out);
      return;
    }

    case OpKind::Reshape: {
      arity(1);
      require(shape_size(at.shape) == in[0]->size(), kind,
              shape_string(in[0]->shape()) + " -> " + shape_string(at.shape));
      node.value = Tensor(at.shape, in[0]->data());
      return;
    }
  }
  throw ContractError("unknown op kind");
}

// ---- backward rules ------------------------------------------------------

// Returns the gradient for input `which` given the output gradient `g`.
Tensor input_grad(const Node& node, const std::vector<const Tensor*>& in, const Tensor& g,
                  std::size_t which) {
  const OpKind kind = node.kind;
  const OpAttrs& at = node.attrs;
  switch (kind) {
    case OpKind::Leaf:
      break;

    case OpKind::MatMul: {
      const auto d = matmul_dims(in[0]->shape(), in[1]->shape());
      Tensor out(in[which]->shape());
      for (std::size_t b = 0; b < d.batch; ++b) {
        ConstMap G(g.values().data() + b * d.n * d.p, d.n, d.p);
        if (which == 0) {
          ConstMap B(in[1]->values().data() + b * d.k * d.p, d.k, d.p);
          MutMap dA(out.values().data() + b * d.n * d.k, d.n, d.k);
          dA.noalias() = G * B.transpose();
        } else {
          ConstMap A(in[0]->values().data() + b * d.n * d.k, d.n, d.k);
          MutMap dB(out.values().data() + b * d.k * d.p, d.k, d.p);
          dB.noalias() = A.transpose() * G;
        }
      }
      return out;
    }

    case OpKind::Add: {
      if (which == 0 || in[0]->shape() == in[1]->shape()) return g;
      const std::size_t m = in[1]->size();
      Tensor out({m});
      for (std::size_t r = 0; r < g.size(); r += m) {
        for (std::size_t c = 0; c < m; ++c) out[c] += g[r + c];
      }
      return out;
    }

    case OpKind::ScalarMul: {
      Tensor out = g;
      for (double& v : out.values()) v *= at.scalar;
      return out;
    }

    case OpKind::Mul: {
      Tensor out = g;
      const Tensor& other = *in[1 - which];
      for (std::size_t i = 0; i < out.size(); ++i) out[i] *= other[i];
      return out;
    }

    case OpKind::Concat: {
      const Shape& out_shape = node.value.shape();
      const AxisSplit os = split_axis(out_shape, at.axis);
      std::size_t offset = 0;
      for (std::size_t i = 0; i < which; ++i) offset += in[i]->shape()[at.axis];
      Tensor out(in[which]->shape());
      const AxisSplit s = split_axis(in[which]->shape(), at.axis);
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = g.values().data() + (o * os.n + offset) * os.inner;
        std::copy(src, src + s.n * s.inner, out.values().data() + o * s.n * s.inner);
      }
      return out;
    }

    case OpKind::Slice: {
      const AxisSplit s = split_axis(in[0]->shape(), at.axis);
      const std::size_t len = at.end - at.begin;
      Tensor out(in[0]->shape());
      for (std::size_t o = 0; o < s.outer; ++o) {
        const double* src = g.values().data() + o * len * s.inner;
        std::copy(src, src + len * s.inner, out.values().data() + (o * s.n + at.begin) * s.inner);
      }
      return out;
    }

    case OpKind::Gather: {
      Tensor out(in[0]->shape());
      const std::size_t m = in[0]->dim(1);
      for (std::size_t i = 0; i < at.indices.size(); ++i) {
        double* dst = out.values().data() + at.indices[i] * m;
        const double* src = g.values().data() + i * m;
        for (std::size_t c = 0; c < m; ++c) dst[c] += src[c];
      }
      return out;
    }

    case OpKind::Sum:
    case OpKind::Mean:
    case OpKind::Max: {
      const AxisSplit s = split_axis(in[0]->shape(), at.axis);
      Tensor out(in[0]->shape());
      const double factor = kind == OpKind::Mean ? 1.0 / static_cast<double>(s.n) : 1.0;
      for (std::size_t o = 0; o < s.outer; ++o) {
        for (std::size_t j = 0; j < s.inner; ++j) {
          const double gv = g[o * s.inner + j];
          double* base = out.values().data() + o * s.n * s.inner + j;
          if (kind == OpKind::Max) {
            base[node.saved_index[o * s.inner + j] * s.inner] = gv;
          } else {
            for (std::size_t i = 0; i < s.n; ++i) base[i * s.inner] = gv * factor;
          }
        }
      }
      return out;
    }

    case OpKind::Softmax:
    case OpKind::LogSoftmax: {
      const Shape& shape = in[0]->shape();
      const std::size_t k = shape.back();
      const std::size_t rows = in[0]->size() / k;
      const RowMask rm{at.mask, shape.size() >= 2 ? shape[shape.size() - 2] : 1};
      Tensor out(shape);
      for (std::size_t r = 0; r < rows; ++r) {
        const auto [lo, hi] = rm.window(r, k);
        const double* y = node.value.values().data() + r * k;
        const double* gr = g.values().data() + r * k;
        double* dx = out.values().data() + r * k;
        if (kind == OpKind::Softmax) {
          double dot = 0.0;
          for (std::size_t c = lo; c < hi; ++c) dot += y[c] * gr[c];
          for (std::size_t c = lo; c < hi; ++c) dx[c] = y[c] * (gr[c] - dot);
        } else {
          double gsum = 0.0;
          for (std::size_t c = lo; c < hi; ++c) gsum += gr[c];
          for (std::size_t c = lo; c < hi; ++c) dx[c] = gr[c] - std::exp(y[c]) * gsum;
        }
      }
      return out;
    }

    case OpKind::LayerNorm: {
      const Tensor& x = *in[0];
      const std::size_t n = x.shape().back();
      const std::size_t rows = x.size() / n;
      const double* xhat = node.saved.data();
      const double* rstd = node.saved.data() + x.size();
      if (which == 0) {
        Tensor out(x.shape());
        const Tensor& gain = *in[1];
        for (std::size_t r = 0; r < rows; ++r) {
          double mean_d = 0.0;
          double mean_dx = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            const double d = g[r * n + i] * gain[i];
            mean_d += d;
            mean_dx += d * xhat[r * n + i];
          }
          mean_d /= static_cast<double>(n);
          mean_dx /= static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double d = g[r * n + i] * gain[i];
            out[r * n + i] = rstd[r] * (d - mean_d - xhat[r * n + i] * mean_dx);
          }
        }
        return out;
      }
      Tensor out({n});
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          out[i] += which == 1 ? g[r * n + i] * xhat[r * n + i] : g[r * n + i];
        }
      }
      return out;
    }

    case OpKind::Relu:
    case OpKind::Gelu:
    case OpKind::Sigmoid: {
      Tensor out = g;
      const Tensor& x = *in[0];
      const std::size_t n = out.size();
      if (kind == OpKind::Relu) {
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > 0.0 ? g[i] : 0.0;
      } else if (kind == OpKind::Gelu) {
        for (std::size_t i = 0; i < n; ++i) out[i] = g[i] * gelu_derivative(x[i]);
      } else {
        for (std::size_t i = 0; i < n; ++i) out[i] = g[i] * node.value[i] * (1.0 - node.value[i]);
      }
      return out;
    }

    case OpKind::Transpose: {
      const Shape& s = in[0]->shape();
      const std::size_t batch = s.size() == 3 ? s[0] : 1;
      const std::size_t r = s[s.size() - 2];
      const std::size_t c = s[s.size() - 1];
      Tensor out(s);
      for (std::size_t b = 0; b < batch; ++b) {
        ConstMap G(g.values().data() + b * r * c, c, r);
        MutMap dA(out.values().data() + b * r * c, r, c);
        dA = G.transpose();
      }
      return out;
    }

    case OpKind::Reshape:
      return Tensor(in[0]->shape(), g.data());
  }
  throw ContractError("unknown op kind in backward");
}

}  // namespace

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Leaf: return "Leaf";
    case OpKind::MatMul: return "MatMul";
    case OpKind::Add: return "Add";
    case OpKind::ScalarMul: return "ScalarMul";
    case OpKind::Mul: return "Mul";
    case OpKind::Concat: return "Concat";
    case OpKind::Slice: return "Slice";
    case OpKind::Gather: return "Gather";
    case OpKind::Sum: return "Sum";
    case OpKind::Mean: return "Mean";
    case OpKind::Max: return "Max";
    case OpKind::Softmax: return "Softmax";
    case OpKind::LogSoftmax: return "LogSoftmax";
    case OpKind::LayerNorm: return "LayerNorm";
    case OpKind::Relu: return "Relu";
    case OpKind::Gelu: return "Gelu";
    case OpKind::Sigmoid: return "Sigmoid";
    case OpKind::Transpose: return "Transpose";
    case OpKind::Reshape: return "Reshape";
  }
  return "?";
}

const Tensor& Var::value() const { return tape_->node(id_).value; }

Var Tape::leaf(Tensor value, bool requires_grad) {
  if (!value.all_finite()) throw NumericError("non-finite leaf value");
  Node node;
  node.kind = OpKind::Leaf;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::apply(OpKind kind, std::span<const Var> inputs, OpAttrs attrs) {
  Node node;
  node.kind = kind;
  node.attrs = std::move(attrs);
  std::vector<const Tensor*> in;
  in.reserve(inputs.size());
  for (const Var& v : inputs) {
    if (&v.tape() != this) throw ContractError("input belongs to a different tape");
    node.inputs.push_back(v.id());
    node.requires_grad = node.requires_grad || nodes_[v.id()].requires_grad;
    in.push_back(&nodes_[v.id()].value);
  }
  forward(node, in);
  if (!node.value.all_finite()) {
    throw NumericError(std::string(op_name(kind)) + " produced a non-finite value");
  }
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& GradientMap::at(Var v) const { return at(v.id()); }

const Tensor& GradientMap::at(std::size_t id) const {
  auto it = grads_.find(id);
  if (it == grads_.end()) throw ContractError("no gradient recorded for node " + std::to_string(id));
  return it->second;
}

GradientMap backward(const Tape& tape, Var loss) {
  if (&loss.tape() != &tape) throw ContractError("loss belongs to a different tape");
  if (loss.value().size() != 1) {
    throw ContractError("backward needs a scalar loss, got " + shape_string(loss.shape()));
  }
  std::vector<Tensor> grads(loss.id() + 1);
  grads[loss.id()] = Tensor::full(loss.shape(), 1.0);

  std::vector<const Tensor*> in;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    const Node& node = tape.node(id);
    if (node.kind == OpKind::Leaf || !node.requires_grad || grads[id].size() == 0) continue;
    in.clear();
    for (std::size_t input : node.inputs) in.push_back(&tape.node(input).value);
    // Interior gradients are released once propagated.
    const Tensor g = std::move(grads[id]);
    for (std::size_t i = 0; i < node.inputs.size(); ++i) {
      const std::size_t input = node.inputs[i];
      if (!tape.node(input).requires_grad) continue;
      accumulate(grads[input], input_grad(node, in, g, i));
    }
  }

  GradientMap out;
  for (std::size_t id = 0; id < tape.size(); ++id) {
    const Node& node = tape.node(id);
    if (node.kind != OpKind::Leaf || !node.requires_grad) continue;
    if (id < grads.size() && grads[id].size() != 0) {
      out.set(id, std::move(grads[id]));
    } else {
      out.set(id, Tensor(node.value.shape()));
    }
  }
  return out;
}

// ---- typed helpers ---------------------------------------------------------

namespace {

Var unary(OpKind kind, Var a, OpAttrs attrs = {}) {
  const Var in[] = {a};
  return a.tape().apply(kind, in, std::move(attrs));
}

Var binary(OpKind kind, Var a, Var b) {
  const Var in[] = {a, b};
  return a.tape().apply(kind, in);
}

}  // namespace

Var matmul(Var a, Var b) { return binary(OpKind::MatMul, a, b); }
Var add(Var a, Var b) { return binary(OpKind::Add, a, b); }
Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }
Var mul(Var a, Var b) { return binary(OpKind::Mul, a, b); }

Var scale(Var a, double s) {
  OpAttrs at;
  at.scalar = s;
  return unary(OpKind::ScalarMul, a, std::move(at));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("Concat: needs at least one input");
  OpAttrs at;
  at.axis = axis;
  return parts.front().tape().apply(OpKind::Concat, parts, std::move(at));
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  OpAttrs at;
  at.axis = axis;
  at.begin = begin;
  at.end = end;
  return unary(OpKind::Slice, a, std::move(at));
}

Var gather(Var table, std::vector<std::size_t> rows) {
  OpAttrs at;
  at.indices = std::move(rows);
  return unary(OpKind::Gather, table, std::move(at));
}

Var sum(Var a, std::size_t axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(OpKind::Sum, a, std::move(at));
}

Var sum_all(Var a) { return sum(reshape(a, {a.value().size()}), 0); }

Var mean(Var a, std::size_t axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(OpKind::Mean, a, std::move(at));
}

Var mean_all(Var a) { return mean(reshape(a, {a.value().size()}), 0); }

Var max(Var a, std::size_t axis) {
  OpAttrs at;
  at.axis = axis;
  return unary(OpKind::Max, a, std::move(at));
}

Var softmax(Var a, SoftmaxMask mask) {
  OpAttrs at;
  at.mask = std::move(mask);
  return unary(OpKind::Softmax, a, std::move(at));
}

Var log_softmax(Var a, SoftmaxMask mask) {
  OpAttrs at;
  at.mask = std::move(mask);
  return unary(OpKind::LogSoftmax, a, std::move(at));
}

Var layer_norm(Var x, Var gain, Var shift) {
  const Var in[] = {x, gain, shift};
  return x.tape().apply(OpKind::LayerNorm, in);
}

Var relu(Var a) { return unary(OpKind::Relu, a); }
Var gelu(Var a) { return unary(OpKind::Gelu, a); }
Var sigmoid(Var a) { return unary(OpKind::Sigmoid, a); }
Var transpose(Var a) { return unary(OpKind::Transpose, a); }

Var reshape(Var a, Shape shape) {
  OpAttrs at;
  at.shape = std::move(shape);
  return unary(OpKind::Reshape, a, std::move(at));
}

// ---- gradient check ----------------------------------------------------------

double grad_check(const GraphBuilder& f, const std::vector<Tensor>& leaves, double h) {
  if (!(h > 0.0 && h <= 1e-3)) throw ContractError("grad_check step must lie in (0, 1e-3]");

  auto evaluate = [&](const std::vector<Tensor>& values) {
    Tape tape;
    std::vector<Var> vars;
    for (const Tensor& t : values) vars.push_back(tape.leaf(t, false));
    const Var loss = f(tape, vars);
    if (loss.value().size() != 1) throw ContractError("grad_check builder must return a scalar");
    return loss.value()[0];
  };

  Tape tape;
  std::vector<Var> vars;
  for (const Tensor& t : leaves) vars.push_back(tape.leaf(t, true));
  const Var loss = f(tape, vars);
  const GradientMap grads = backward(tape, loss);

  if (evaluate(leaves) != loss.value()[0]) {
    throw ContractError("grad_check builder is not deterministic");
  }

  double worst = 0.0;
  std::vector<Tensor> probe = leaves;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    const Tensor& analytic = grads.at(vars[l]);
    for (std::size_t i = 0; i < leaves[l].size(); ++i) {
      const double orig = leaves[l][i];
      probe[l][i] = orig + h;
      const double up = evaluate(probe);
      probe[l][i] = orig - h;
      const double down = evaluate(probe);
      probe[l][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = analytic[i];
      const double denom = std::max({1.0, std::abs(a), std::abs(numeric)});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace clinembed
