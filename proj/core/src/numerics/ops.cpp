#include "slab/numerics/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

#include "slab/numerics/kernels.hpp"
#include "slab/numerics/rng.hpp"

namespace slab {
namespace {

template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  require(a.shape() == b.shape(), ErrorCode::kShapeMismatch,
          std::string(op) + ": shapes " + shape_string(a.shape()) + " and " + shape_string(b.shape()) +
              " differ");
}

template <class T>
void accumulate(Tensor<T>& dst, std::span<const T> src) {
  auto d = dst.data();
  for (std::size_t i = 0; i < src.size(); ++i) d[i] += src[i];
}

template <class T>
void check_finite(const Tensor<T>& t, const char* op) {
  require(t.all_finite(), ErrorCode::kNonFinite, std::string(op) + ": non-finite input");
}

struct AxisSplit {
  std::size_t outer, n, inner;
};

AxisSplit split_axis(const Shape& shape, std::size_t axis) {
  require(axis < shape.size(), ErrorCode::kInvalidArgument,
          "softmax: axis " + std::to_string(axis) + " invalid for shape " + shape_string(shape));
  AxisSplit s{1, shape[axis], 1};
  for (std::size_t i = 0; i < axis; ++i) s.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

}  // namespace

// ---- plain forms -----------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& logits, std::size_t axis) {
  check_finite(logits, "softmax");
  const AxisSplit s = split_axis(logits.shape(), axis);
  Tensor<T> out(logits.shape());
  const T* x = logits.data().data();
  T* y = out.data().data();
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t i = 0; i < s.n; ++i) mx = std::max(mx, x[base + i * s.inner]);
      T total = 0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const T e = std::exp(x[base + i * s.inner] - mx);
        y[base + i * s.inner] = e;
        total += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) y[base + i * s.inner] /= total;
    }
  }
  return out;
}

template <class T>
Tensor<T> log_softmax_rows(const Tensor<T>& logits) {
  const std::size_t rows = logits.rows(), cols = logits.cols();
  Tensor<T> out(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    auto x = logits.row(r);
    auto y = out.row(r);
    T mx = -std::numeric_limits<T>::infinity();
    for (T v : x) mx = std::max(mx, v);
    T total = 0;
    for (std::size_t c = 0; c < cols; ++c) total += std::exp(x[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < cols; ++c) y[c] = x[c] - lse;
  }
  return out;
}

namespace {

template <class T>
struct LayerNormCache {
  Tensor<T> xhat;
  std::vector<T> rstd;
};

template <class T>
Tensor<T> layer_norm_impl(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double epsilon,
                          LayerNormCache<T>* cache) {
  require(!x.shape().empty() && x.cols() > 0, ErrorCode::kInvalidArgument,
          "layer_norm: zero-length normalization axis");
  require(epsilon > 0, ErrorCode::kInvalidArgument, "layer_norm: epsilon must be positive");
  const std::size_t rows = x.rows(), n = x.cols();
  require(gain.size() == n && bias.size() == n, ErrorCode::kShapeMismatch,
          "layer_norm: gain/bias length must match last axis " + std::to_string(n));
  Tensor<T> out(x.shape());
  if (cache) {
    cache->xhat = Tensor<T>(x.shape());
    cache->rstd.assign(rows, T{0});
  }
  for (std::size_t r = 0; r < rows; ++r) {
    auto xr = x.row(r);
    T mu = 0;
    for (T v : xr) mu += v;
    mu /= static_cast<T>(n);
    T var = 0;
    for (T v : xr) var += (v - mu) * (v - mu);
    var /= static_cast<T>(n);
    const T rstd = T{1} / std::sqrt(var + static_cast<T>(epsilon));
    auto yr = out.row(r);
    for (std::size_t c = 0; c < n; ++c) {
      const T xh = (xr[c] - mu) * rstd;
      yr[c] = gain[c] * xh + bias[c];
      if (cache) cache->xhat.at(r, c) = xh;
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return out;
}

}  // namespace

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, double epsilon) {
  return layer_norm_impl<T>(x, gain, bias, epsilon, nullptr);
}

template <class T>
T gelu_scalar(T x) {
  const T inner = static_cast<T>(kSqrt2OverPi) * (x + static_cast<T>(kGeluCoeff) * x * x * x);
  return T{0.5} * x * (T{1} + std::tanh(inner));
}

// ---- taped ops -------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  check_same_shape(a.value(), b.value(), "add");
  Tensor<T> out = a.value();
  accumulate(out, b.value().data());
  return tape.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    if (t.needs_grad(a)) accumulate(t.grad(a), std::span<const T>(g));
    if (t.needs_grad(b)) accumulate(t.grad(b), std::span<const T>(g));
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bv[i];
  return tape.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    if (t.needs_grad(a)) accumulate(t.grad(a), std::span<const T>(g));
    if (t.needs_grad(b)) {
      auto d = t.grad(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] -= g[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  check_same_shape(a.value(), b.value(), "mul");
  Tensor<T> out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  return tape.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto av = t.value(a).data();
    const auto bv = t.value(b).data();
    if (t.needs_grad(a)) {
      auto d = t.grad(a).data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * bv[i];
    }
    if (t.needs_grad(b)) {
      auto d = t.grad(b).data();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * av[i];
    }
  });
}

template <class T>
Var<T> scale(Var<T> a, double factor) {
  Tape<T>& tape = *a.tape;
  const T f = static_cast<T>(factor);
  Tensor<T> out = a.value();
  for (T& v : out.data()) v *= f;
  return tape.record(std::move(out), {a.id}, [a = a.id, f](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad(a).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * f;
  });
}

template <class T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  Tape<T>& tape = *x.tape;
  const std::size_t m = x.value().cols();
  require(bias.value().size() == m, ErrorCode::kShapeMismatch,
          "add_bias: bias length " + std::to_string(bias.value().size()) + " vs last axis " + std::to_string(m));
  Tensor<T> out = x.value();
  const auto bv = bias.value().data();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    for (std::size_t c = 0; c < m; ++c) row[c] += bv[c];
  }
  return tape.record(std::move(out), {x.id, bias.id}, [x = x.id, b = bias.id, m](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    if (t.needs_grad(x)) accumulate(t.grad(x), g.data());
    if (t.needs_grad(b)) {
      auto d = t.grad(b).data();
      for (std::size_t r = 0; r < g.rows(); ++r) {
        auto gr = g.row(r);
        for (std::size_t c = 0; c < m; ++c) d[c] += gr[c];
      }
    }
  });
}

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(bv.rank() == 2 && av.rank() >= 1 && av.cols() == bv.dim(0), ErrorCode::kShapeMismatch,
          "matmul: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()));
  const std::size_t n = av.rows(), k = av.cols(), m = bv.dim(1);
  Shape out_shape = av.shape();
  out_shape.back() = m;
  Tensor<T> out(out_shape);
  kernels::gemm_nn(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  return tape.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, n, k, m](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data().data();
    if (t.needs_grad(a)) {
      // dA = G B^T
      kernels::gemm_nt(g, t.value(b).data().data(), t.grad(a).data().data(), n, m, k);
    }
    if (t.needs_grad(b)) {
      // dB = A^T G
      kernels::gemm_tn(t.value(a).data().data(), g, t.grad(b).data().data(), n, k, m);
    }
  });
}

template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  Tape<T>& tape = *a.tape;
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  require(bv.rank() == 2 && av.rank() == 2 && av.cols() == bv.dim(1), ErrorCode::kShapeMismatch,
          "matmul_nt: " + shape_string(av.shape()) + " x " + shape_string(bv.shape()) + "^T");
  const std::size_t n = av.dim(0), k = av.dim(1), m = bv.dim(0);
  Tensor<T> out(Shape{n, m});
  kernels::gemm_nt(av.data().data(), bv.data().data(), out.data().data(), n, k, m);
  return tape.record(std::move(out), {a.id, b.id}, [a = a.id, b = b.id, n, k, m](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data().data();
    if (t.needs_grad(a)) {
      // dA[n,k] = G[n,m] B[m,k]
      kernels::gemm_nn(g, t.value(b).data().data(), t.grad(a).data().data(), n, m, k);
    }
    if (t.needs_grad(b)) {
      // dB[m,k] = G^T[m,n] A[n,k]
      kernels::gemm_tn(g, t.value(a).data().data(), t.grad(b).data().data(), n, m, k);
    }
  });
}

template <class T>
Var<T> gelu(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = gelu_scalar(v);
  return tape.record(std::move(out), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto xv = t.value(x).data();
    auto d = t.grad(x).data();
    const T c = static_cast<T>(kSqrt2OverPi);
    const T a = static_cast<T>(kGeluCoeff);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const T v = xv[i];
      const T th = std::tanh(c * (v + a * v * v * v));
      const T dinner = c * (T{1} + T{3} * a * v * v);
      d[i] += g[i] * (T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th * th) * dinner);
    }
  });
}

template <class T>
Var<T> tanh(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = std::tanh(v);
  return tape.record(std::move(out), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto y = t.value(self).data();
    auto d = t.grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (T{1} - y[i] * y[i]);
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v >= 0 ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  return tape.record(std::move(out), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    const auto y = t.value(self).data();
    auto d = t.grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * y[i] * (T{1} - y[i]);
  });
}

template <class T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  Tape<T>& tape = *x.tape;
  Tensor<T> out = softmax(x.value(), axis);
  const AxisSplit s = split_axis(out.shape(), axis);
  return tape.record(std::move(out), {x.id}, [x = x.id, s](Tape<T>& t, std::size_t self) {
    const T* g = t.grad(self).data().data();
    const T* y = t.value(self).data().data();
    T* d = t.grad(x).data().data();
    for (std::size_t o = 0; o < s.outer; ++o) {
      for (std::size_t in = 0; in < s.inner; ++in) {
        const std::size_t base = o * s.n * s.inner + in;
        T dot = 0;
        for (std::size_t i = 0; i < s.n; ++i) dot += g[base + i * s.inner] * y[base + i * s.inner];
        for (std::size_t i = 0; i < s.n; ++i) {
          const std::size_t j = base + i * s.inner;
          d[j] += y[j] * (g[j] - dot);
        }
      }
    }
  });
}

template <class T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, double epsilon) {
  Tape<T>& tape = *x.tape;
  auto cache = std::make_shared<LayerNormCache<T>>();
  Tensor<T> out = layer_norm_impl(x.value(), gain.value(), bias.value(), epsilon, cache.get());
  return tape.record(std::move(out), {x.id, gain.id, bias.id},
                     [x = x.id, gn = gain.id, bs = bias.id, cache](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    const Tensor<T>& xhat = cache->xhat;
    const auto gv = t.value(gn).data();
    const std::size_t rows = g.rows(), n = g.cols();
    if (t.needs_grad(gn)) {
      auto d = t.grad(gn).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) d[c] += g.at(r, c) * xhat.at(r, c);
    }
    if (t.needs_grad(bs)) {
      auto d = t.grad(bs).data();
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) d[c] += g.at(r, c);
    }
    if (t.needs_grad(x)) {
      Tensor<T>& dx = t.grad(x);
      const T inv_n = T{1} / static_cast<T>(n);
      for (std::size_t r = 0; r < rows; ++r) {
        T sum_dxh = 0, sum_dxh_xh = 0;
        for (std::size_t c = 0; c < n; ++c) {
          const T dxh = g.at(r, c) * gv[c];
          sum_dxh += dxh;
          sum_dxh_xh += dxh * xhat.at(r, c);
        }
        const T rstd = cache->rstd[r];
        for (std::size_t c = 0; c < n; ++c) {
          const T dxh = g.at(r, c) * gv[c];
          dx.at(r, c) += rstd * inv_n * (static_cast<T>(n) * dxh - sum_dxh - xhat.at(r, c) * sum_dxh_xh);
        }
      }
    }
  });
}

template <class T>
Var<T> dropout(Var<T> x, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 1.0, ErrorCode::kInvalidArgument, "dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  Tape<T>& tape = *x.tape;
  Rng rng(seed);
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  auto mask = std::make_shared<std::vector<T>>(x.value().size());
  for (T& m : *mask) m = rng.uniform() < rate ? T{0} : keep_scale;
  Tensor<T> out = x.value();
  auto o = out.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= (*mask)[i];
  return tape.record(std::move(out), {x.id}, [x = x.id, mask](Tape<T>& t, std::size_t self) {
    const auto g = t.grad(self).data();
    auto d = t.grad(x).data();
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * (*mask)[i];
  });
}

template <class T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tape<T>& tape = *x.tape;
  require(shape_size(shape) == x.value().size(), ErrorCode::kShapeMismatch,
          "reshape: " + shape_string(x.value().shape()) + " -> " + shape_string(shape));
  Tensor<T> out(std::move(shape), std::vector<T>(x.value().data().begin(), x.value().data().end()));
  return tape.record(std::move(out), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
    accumulate(t.grad(x), std::span<const T>(t.grad(self).data()));
  });
}

template <class T>
Var<T> sum(Var<T> x) {
  Tape<T>& tape = *x.tape;
  T total = 0;
  for (T v : x.value().data()) total += v;
  return tape.record(Tensor<T>::scalar(total), {x.id}, [x = x.id](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0];
    for (T& d : t.grad(x).data()) d += g;
  });
}

template <class T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  require(n > 0, ErrorCode::kEmptyInput, "mean of an empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

template <class T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  Tape<T>& tape = *table.tape;
  const Tensor<T>& tv = table.value();
  require(tv.rank() == 2, ErrorCode::kShapeMismatch, "embedding: table must be 2-D");
  const std::size_t vocab = tv.dim(0), h = tv.dim(1);
  Tensor<T> out(Shape{ids.size(), h});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < vocab, ErrorCode::kInvalidArgument,
            "embedding: id " + std::to_string(ids[i]) + " out of range for " + std::to_string(vocab) + " rows");
    std::copy_n(tv.row(static_cast<std::size_t>(ids[i])).begin(), h, out.row(i).begin());
  }
  std::vector<std::int32_t> saved(ids.begin(), ids.end());
  return tape.record(std::move(out), {table.id}, [tb = table.id, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(tb);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dr = d.row(static_cast<std::size_t>(saved[i]));
      auto gr = g.row(i);
      for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c];
    }
  });
}

template <class T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows) {
  Tape<T>& tape = *x.tape;
  const Tensor<T>& xv = x.value();
  const std::size_t h = xv.cols();
  Shape shape{rows.size(), h};
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    require(rows[i] < xv.rows(), ErrorCode::kInvalidArgument,
            "gather_rows: row " + std::to_string(rows[i]) + " out of range for " + std::to_string(xv.rows()));
    std::copy_n(xv.row(rows[i]).begin(), h, out.row(i).begin());
  }
  std::vector<std::size_t> saved(rows.begin(), rows.end());
  return tape.record(std::move(out), {x.id}, [x = x.id, saved = std::move(saved)](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad(self);
    Tensor<T>& d = t.grad(x);
    for (std::size_t i = 0; i < saved.size(); ++i) {
      auto dr = d.row(saved[i]);
      auto gr = g.row(i);
      for (std::size_t c = 0; c < gr.size(); ++c) dr[c] += gr[c];
    }
  });
}

template <class T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, std::span<const std::uint8_t> key_mask,
                 const AttentionSpec& spec, Tensor<T>* probs_out) {
  Tape<T>& tape = *q.tape;
  const std::size_t B = spec.batch, S = spec.seq, NH = spec.heads;
  const Tensor<T>& qv = q.value();
  const std::size_t H = qv.cols();
  require(qv.rows() == B * S && k.value().shape() == qv.shape() && v.value().shape() == qv.shape(),
          ErrorCode::kShapeMismatch, "attention: q/k/v must all be [batch*seq, hidden]");
  require(key_mask.size() == B * S, ErrorCode::kShapeMismatch, "attention: key mask must have batch*seq entries");
  require(NH > 0 && H % NH == 0, ErrorCode::kInvalidArgument, "attention: hidden not divisible by heads");
  require(spec.dropout >= 0.0 && spec.dropout < 1.0, ErrorCode::kInvalidArgument, "attention: bad dropout rate");
  const std::size_t d = H / NH;
  const T scale_f = static_cast<T>(1.0 / std::sqrt(static_cast<double>(d)));

  // probs[b][h][i][j]; dropped probs only when dropout is active.
  auto probs = std::make_shared<std::vector<T>>(B * NH * S * S, T{0});
  auto dmask = std::make_shared<std::vector<T>>();
  const bool use_dropout = spec.dropout > 0.0;
  if (use_dropout) {
    dmask->resize(probs->size());
    Rng rng(spec.seed);
    const T keep = static_cast<T>(1.0 / (1.0 - spec.dropout));
    for (T& m : *dmask) m = rng.uniform() < spec.dropout ? T{0} : keep;
  }

  Tensor<T> out(qv.shape());
  const T* Q = qv.data().data();
  const T* K = k.value().data().data();
  const T* V = v.value().data().data();
  T* O = out.data().data();
  std::vector<T> kt(d * S), scores(S);
  for (std::size_t b = 0; b < B; ++b) {
    const std::uint8_t* mask = key_mask.data() + b * S;
    for (std::size_t h = 0; h < NH; ++h) {
      for (std::size_t j = 0; j < S; ++j)
        for (std::size_t c = 0; c < d; ++c) kt[c * S + j] = K[(b * S + j) * H + h * d + c];
      for (std::size_t i = 0; i < S; ++i) {
        std::fill(scores.begin(), scores.end(), T{0});
        const T* qi = Q + (b * S + i) * H + h * d;
        for (std::size_t c = 0; c < d; ++c) {
          const T a = qi[c] * scale_f;
          const T* krow = kt.data() + c * S;
          for (std::size_t j = 0; j < S; ++j) scores[j] += a * krow[j];
        }
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j < S; ++j)
          if (mask[j]) mx = std::max(mx, scores[j]);
        T* p = probs->data() + ((b * NH + h) * S + i) * S;
        T total = 0;
        for (std::size_t j = 0; j < S; ++j) {
          p[j] = mask[j] ? std::exp(scores[j] - mx) : T{0};
          total += p[j];
        }
        if (total > 0)
          for (std::size_t j = 0; j < S; ++j) p[j] /= total;
        T* oi = O + (b * S + i) * H + h * d;
        const T* dm = use_dropout ? dmask->data() + ((b * NH + h) * S + i) * S : nullptr;
        for (std::size_t j = 0; j < S; ++j) {
          const T w = dm ? p[j] * dm[j] : p[j];
          if (w == T{0}) continue;
          const T* vj = V + (b * S + j) * H + h * d;
          for (std::size_t c = 0; c < d; ++c) oi[c] += w * vj[c];
        }
      }
    }
  }
  if (probs_out) *probs_out = Tensor<T>(Shape{B, NH, S, S}, *probs);

  return tape.record(
      std::move(out), {q.id, k.id, v.id},
      [q = q.id, k = k.id, v = v.id, probs, dmask, B, S, NH, H, d, scale_f, use_dropout](Tape<T>& t, std::size_t self) {
        const T* G = t.grad(self).data().data();
        const T* Q = t.value(q).data().data();
        const T* K = t.value(k).data().data();
        const T* V = t.value(v).data().data();
        T* dQ = t.needs_grad(q) ? t.grad(q).data().data() : nullptr;
        T* dK = t.needs_grad(k) ? t.grad(k).data().data() : nullptr;
        T* dV = t.needs_grad(v) ? t.grad(v).data().data() : nullptr;
        std::vector<T> dp(S), ds(S);
        for (std::size_t b = 0; b < B; ++b) {
          for (std::size_t h = 0; h < NH; ++h) {
            for (std::size_t i = 0; i < S; ++i) {
              const T* p = probs->data() + ((b * NH + h) * S + i) * S;
              const T* dm = use_dropout ? dmask->data() + ((b * NH + h) * S + i) * S : nullptr;
              const T* gi = G + (b * S + i) * H + h * d;
              for (std::size_t j = 0; j < S; ++j) {
                const T* vj = V + (b * S + j) * H + h * d;
                T acc = 0;
                for (std::size_t c = 0; c < d; ++c) acc += gi[c] * vj[c];
                dp[j] = dm ? acc * dm[j] : acc;
                if (dV) {
                  const T w = dm ? p[j] * dm[j] : p[j];
                  if (w != T{0}) {
                    T* dvj = dV + (b * S + j) * H + h * d;
                    for (std::size_t c = 0; c < d; ++c) dvj[c] += w * gi[c];
                  }
                }
              }
              T dot = 0;
              for (std::size_t j = 0; j < S; ++j) dot += p[j] * dp[j];
              for (std::size_t j = 0; j < S; ++j) ds[j] = p[j] * (dp[j] - dot) * scale_f;
              const T* qi = Q + (b * S + i) * H + h * d;
              for (std::size_t j = 0; j < S; ++j) {
                if (ds[j] == T{0}) continue;
                const T* kj = K + (b * S + j) * H + h * d;
                if (dQ) {
                  T* dqi = dQ + (b * S + i) * H + h * d;
                  for (std::size_t c = 0; c < d; ++c) dqi[c] += ds[j] * kj[c];
                }
                if (dK) {
                  T* dkj = dK + (b * S + j) * H + h * d;
                  for (std::size_t c = 0; c < d; ++c) dkj[c] += ds[j] * qi[c];
                }
              }
            }
          }
        }
      });
}

template <class T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::int32_t> targets) {
  Tape<T>& tape = *logits.tape;
  const Tensor<T>& lv = logits.value();
  require(lv.rank() == 2 && lv.dim(0) == targets.size(), ErrorCode::kShapeMismatch,
          "cross_entropy: need [n, classes] logits and n targets");
  require(!targets.empty(), ErrorCode::kEmptyInput, "cross_entropy: no targets");
  const std::size_t n = lv.dim(0), classes = lv.dim(1);
  auto logp = std::make_shared<Tensor<T>>(log_softmax_rows(lv));
  T total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    require(targets[r] >= 0 && static_cast<std::size_t>(targets[r]) < classes, ErrorCode::kInvalidArgument,
            "cross_entropy: target out of range");
    total -= logp->at(r, static_cast<std::size_t>(targets[r]));
  }
  std::vector<std::int32_t> saved(targets.begin(), targets.end());
  return tape.record(Tensor<T>::scalar(total / static_cast<T>(n)), {logits.id},
                     [l = logits.id, logp, saved = std::move(saved), n, classes](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] / static_cast<T>(n);
    Tensor<T>& d = t.grad(l);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < classes; ++c) d.at(r, c) += g * std::exp(logp->at(r, c));
      d.at(r, static_cast<std::size_t>(saved[r])) -= g;
    }
  });
}

template <class T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets) {
  Tape<T>& tape = *logits.tape;
  const Tensor<T>& z = logits.value();
  check_same_shape(z, targets, "bce_with_logits");
  require(z.rows() > 0, ErrorCode::kEmptyInput, "bce_with_logits: empty batch");
  const std::size_t n = z.rows();
  T total = 0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const T x = z[i], y = targets[i];
    total += std::max(x, T{0}) - x * y + std::log1p(std::exp(-std::abs(x)));
  }
  return tape.record(Tensor<T>::scalar(total / static_cast<T>(n)), {logits.id},
                     [l = logits.id, targets, n](Tape<T>& t, std::size_t self) {
    const T g = t.grad(self)[0] / static_cast<T>(n);
    const auto zv = t.value(l).data();
    auto d = t.grad(l).data();
    for (std::size_t i = 0; i < zv.size(); ++i) {
      const T x = zv[i];
      const T s = x >= 0 ? T{1} / (T{1} + std::exp(-x)) : std::exp(x) / (T{1} + std::exp(x));
      d[i] += g * (s - targets[i]);
    }
  });
}

#define SLAB_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> softmax<T>(const Tensor<T>&, std::size_t);                                          \
  template Tensor<T> layer_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);        \
  template Tensor<T> log_softmax_rows<T>(const Tensor<T>&);                                              \
  template T gelu_scalar<T>(T);                                                                          \
  template Var<T> add<T>(Var<T>, Var<T>);                                                                \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                                \
  template Var<T> mul<T>(Var<T>, Var<T>);                                                                \
  template Var<T> scale<T>(Var<T>, double);                                                              \
  template Var<T> add_bias<T>(Var<T>, Var<T>);                                                           \
  template Var<T> matmul<T>(Var<T>, Var<T>);                                                             \
  template Var<T> matmul_nt<T>(Var<T>, Var<T>);                                                          \
  template Var<T> gelu<T>(Var<T>);                                                                       \
  template Var<T> tanh<T>(Var<T>);                                                                       \
  template Var<T> sigmoid<T>(Var<T>);                                                                    \
  template Var<T> softmax<T>(Var<T>, std::size_t);                                                       \
  template Var<T> layer_norm<T>(Var<T>, Var<T>, Var<T>, double);                                         \
  template Var<T> dropout<T>(Var<T>, double, std::uint64_t);                                             \
  template Var<T> reshape<T>(Var<T>, Shape);                                                             \
  template Var<T> sum<T>(Var<T>);                                                                        \
  template Var<T> mean<T>(Var<T>);                                                                       \
  template Var<T> embedding<T>(Var<T>, std::span<const std::int32_t>);                                   \
  template Var<T> gather_rows<T>(Var<T>, std::span<const std::size_t>);                                  \
  template Var<T> attention<T>(Var<T>, Var<T>, Var<T>, std::span<const std::uint8_t>, const AttentionSpec&, \
                               Tensor<T>*);                                                              \
  template Var<T> cross_entropy<T>(Var<T>, std::span<const std::int32_t>);                               \
  template Var<T> bce_with_logits<T>(Var<T>, const Tensor<T>&);

SLAB_INSTANTIATE_OPS(float)
SLAB_INSTANTIATE_OPS(double)

}  // namespace slab
