#include <cmath>
#include <numbers>
#include <string>

#include "attriqe/graph.hpp"
#include "kernels.hpp"

namespace attriqe::ad {
namespace {

template <typename T>
void require_same_shape(const char* op, Var<T> a, Var<T> b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " differ");
  }
}

template <typename T>
void require_matrix(const char* op, Var<T> a) {
  if (a.shape().size() != 2) {
    throw DimensionError(std::string(op) + ": expected a matrix, got shape " + to_string(a.shape()));
  }
}

template <typename T>
void accumulate(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0, n = dst.size(); i < n; ++i) d[i] += s[i];
}

// Elementwise unary op: forward f(x), backward g * df(x, y).
template <typename T, typename F, typename D>
Var<T> unary(Var<T> x, F f, D df) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.size(); ++i) out[i] = f(xv[i]);
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid, df](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    const Tensor<T>& xv = g.value(xid);
    const Tensor<T>& yv = g.value(self);
    Tensor<T>& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * df(xv[i], yv[i]);
  });
}

}  // namespace

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a, b);
  Tensor<T> out = a.value();
  accumulate(out, b.value());
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(std::move(out), {a, b}, [aid, bid](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    if (g.requires_grad(aid)) accumulate(g.grad_buffer(aid), go);
    if (g.requires_grad(bid)) accumulate(g.grad_buffer(bid), go);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(std::move(out), {a, b}, [aid, bid](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    if (g.requires_grad(aid)) accumulate(g.grad_buffer(aid), go);
    if (g.requires_grad(bid)) {
      Tensor<T>& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] -= go[i];
    }
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a, b);
  Tensor<T> out = a.value();
  const Tensor<T>& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(std::move(out), {a, b}, [aid, bid](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    const Tensor<T>& av = g.value(aid);
    const Tensor<T>& bv = g.value(bid);
    if (g.requires_grad(aid)) {
      Tensor<T>& ga = g.grad_buffer(aid);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
    }
    if (g.requires_grad(bid)) {
      Tensor<T>& gb = g.grad_buffer(bid);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
    }
  });
}

template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& bv = bias.value();
  if (bv.rank() != 1 || xv.empty() || bv.size() != xv.cols()) {
    throw DimensionError("add_bias: bias of shape " + to_string(bv.shape()) +
                         " does not match trailing axis of " + to_string(xv.shape()));
  }
  const std::size_t d = bv.size(), rows = xv.size() / d;
  Tensor<T> out = xv;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < d; ++j) out[r * d + j] += bv[j];
  const std::size_t xid = x.id(), bid = bias.id();
  return x.graph().record(std::move(out), {x, bias},
                          [xid, bid, d, rows](Graph<T>& g, std::size_t self) {
                            const Tensor<T>& go = g.node_grad(self);
                            if (g.requires_grad(xid)) accumulate(g.grad_buffer(xid), go);
                            if (g.requires_grad(bid)) {
                              Tensor<T>& gb = g.grad_buffer(bid);
                              for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
                            }
                          });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v *= factor;
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid, factor](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    Tensor<T>& gx = g.grad_buffer(xid);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

template <typename T>
Var<T> add_scalar(Var<T> x, T offset) {
  Tensor<T> out = x.value();
  for (auto& v : out.values()) v += offset;
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid](Graph<T>& g, std::size_t self) {
    accumulate(g.grad_buffer(xid), g.node_grad(self));
  });
}

template <typename T>
Var<T> scale_rows(Var<T> x, Var<T> s) {
  require_matrix("scale_rows", x);
  const Tensor<T>& xv = x.value();
  const Tensor<T>& sv = s.value();
  const std::size_t n = xv.rows(), d = xv.cols();
  if (sv.size() != n) {
    throw DimensionError("scale_rows: scale of shape " + to_string(sv.shape()) +
                         " does not match rows of " + to_string(xv.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] *= sv[i];
  const std::size_t xid = x.id(), sid = s.id();
  return x.graph().record(std::move(out), {x, s}, [xid, sid, n, d](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    const Tensor<T>& xv = g.value(xid);
    const Tensor<T>& sv = g.value(sid);
    if (g.requires_grad(xid)) {
      Tensor<T>& gx = g.grad_buffer(xid);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) gx[i * d + j] += go[i * d + j] * sv[i];
    }
    if (g.requires_grad(sid)) {
      Tensor<T>& gs = g.grad_buffer(sid);
      for (std::size_t i = 0; i < n; ++i) {
        T acc = 0;
        for (std::size_t j = 0; j < d; ++j) acc += go[i * d + j] * xv[i * d + j];
        gs[i] += acc;
      }
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  require_matrix("matmul", a);
  require_matrix("matmul", b);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions of " + to_string(a.shape()) + " and " +
                         to_string(b.shape()) + " disagree");
  }
  Tensor<T> out({m, n});
  kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
  const std::size_t aid = a.id(), bid = b.id();
  return a.graph().record(std::move(out), {a, b}, [aid, bid, m, k, n](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    if (g.requires_grad(aid)) {
      // dA += dC * B^T
      std::vector<T> bt(k * n);
      kernels::transpose(k, n, g.value(bid).data(), bt.data());
      kernels::gemm_nn(m, k, n, go.data(), bt.data(), g.grad_buffer(aid).data());
    }
    if (g.requires_grad(bid)) {
      // dB += A^T * dC
      kernels::gemm_tn(k, n, m, g.value(aid).data(), go.data(), g.grad_buffer(bid).data());
    }
  });
}

template <typename T>
Var<T> transpose(Var<T> a) {
  require_matrix("transpose", a);
  const std::size_t r = a.shape()[0], c = a.shape()[1];
  Tensor<T> out({c, r});
  kernels::transpose(r, c, a.value().data(), out.data());
  const std::size_t aid = a.id();
  return a.graph().record(std::move(out), {a}, [aid, r, c](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    Tensor<T>& ga = g.grad_buffer(aid);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) ga[i * c + j] += go[j * r + i];
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid](Graph<T>& g, std::size_t self) {
    accumulate(g.grad_buffer(xid), g.node_grad(self));
  });
}

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis) {
  const Shape& shape = x.shape();
  if (axis >= shape.size()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         to_string(shape));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) inner *= shape[i];
  const std::size_t len = shape[axis];
  const Tensor<T>& xv = x.value();
  Tensor<T> out(shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = xv[base];
      for (std::size_t a = 1; a < len; ++a) mx = std::max(mx, xv[base + a * inner]);
      T total = 0;
      for (std::size_t a = 0; a < len; ++a) {
        const T e = std::exp(xv[base + a * inner] - mx);
        out[base + a * inner] = e;
        total += e;
      }
      for (std::size_t a = 0; a < len; ++a) out[base + a * inner] /= total;
    }
  }
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x},
                          [xid, outer, inner, len](Graph<T>& g, std::size_t self) {
                            const Tensor<T>& go = g.node_grad(self);
                            const Tensor<T>& y = g.value(self);
                            Tensor<T>& gx = g.grad_buffer(xid);
                            for (std::size_t o = 0; o < outer; ++o) {
                              for (std::size_t in = 0; in < inner; ++in) {
                                const std::size_t base = o * len * inner + in;
                                T dot = 0;
                                for (std::size_t a = 0; a < len; ++a)
                                  dot += go[base + a * inner] * y[base + a * inner];
                                for (std::size_t a = 0; a < len; ++a) {
                                  const std::size_t idx = base + a * inner;
                                  gx[idx] += y[idx] * (go[idx] - dot);
                                }
                              }
                            }
                          });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gain, Var<T> bias, T epsilon) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.cols();
  if (gain.value().size() != d || bias.value().size() != d) {
    throw DimensionError("layer_norm: gain/bias sizes do not match trailing axis of " +
                         to_string(xv.shape()));
  }
  const std::size_t rows = xv.size() / d;
  const Tensor<T>& gv = gain.value();
  const Tensor<T>& bv = bias.value();
  Tensor<T> out(xv.shape());
  std::vector<T> xhat(xv.size()), rstd(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xv.data() + r * d;
    T mu = 0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= T(d);
    T var = 0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= T(d);
    const T rs = T(1) / std::sqrt(var + epsilon);
    rstd[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const T h = (xr[j] - mu) * rs;
      xhat[r * d + j] = h;
      out[r * d + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t xid = x.id(), gid = gain.id(), bid = bias.id();
  return x.graph().record(
      std::move(out), {x, gain, bias},
      [xid, gid, bid, d, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph<T>& g,
                                                                               std::size_t self) {
        const Tensor<T>& go = g.node_grad(self);
        const Tensor<T>& gv = g.value(gid);
        if (g.requires_grad(gid)) {
          Tensor<T>& gg = g.grad_buffer(gid);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gg[j] += go[r * d + j] * xhat[r * d + j];
        }
        if (g.requires_grad(bid)) {
          Tensor<T>& gb = g.grad_buffer(bid);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < d; ++j) gb[j] += go[r * d + j];
        }
        if (g.requires_grad(xid)) {
          Tensor<T>& gx = g.grad_buffer(xid);
          std::vector<T> dh(d);
          for (std::size_t r = 0; r < rows; ++r) {
            T mean_dh = 0, mean_dh_h = 0;
            for (std::size_t j = 0; j < d; ++j) {
              dh[j] = go[r * d + j] * gv[j];
              mean_dh += dh[j];
              mean_dh_h += dh[j] * xhat[r * d + j];
            }
            mean_dh /= T(d);
            mean_dh_h /= T(d);
            for (std::size_t j = 0; j < d; ++j)
              gx[r * d + j] += rstd[r] * (dh[j] - mean_dh - xhat[r * d + j] * mean_dh_h);
          }
        }
      });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T inv_sqrt2 = T(1) / std::numbers::sqrt2_v<T>;
  constexpr T inv_sqrt_2pi = std::numbers::inv_sqrtpi_v<T> * inv_sqrt2;
  return unary(
      x, [](T v) { return T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2)); },
      [](T v, T) {
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        return cdf + v * pdf;
      });
}

template <typename T>
Var<T> relu(Var<T> x) {
  return unary(
      x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> tanh(Var<T> x) {
  return unary(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  return unary(
      x,
      [](T v) {
        if (v >= T(0)) return T(1) / (T(1) + std::exp(-v));
        const T e = std::exp(v);
        return e / (T(1) + e);
      },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> exp(Var<T> x) {
  return unary(
      x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <typename T>
Var<T> log(Var<T> x) {
  for (T v : x.value().values()) {
    if (!(v > T(0))) throw NumericError("log: non-positive argument " + std::to_string(v));
  }
  return unary(
      x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

template <typename T>
Var<T> square(Var<T> x) {
  return unary(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids) {
  require_matrix("embedding", table);
  const Tensor<T>& tv = table.value();
  const std::size_t vocab = tv.rows(), d = tv.cols();
  Tensor<T> out({ids.size(), d});
  std::vector<std::int32_t> idv(ids.begin(), ids.end());
  for (std::size_t i = 0; i < idv.size(); ++i) {
    if (idv[i] < 0 || static_cast<std::size_t>(idv[i]) >= vocab) {
      throw VocabularyError("embedding: id " + std::to_string(idv[i]) + " outside table of " +
                            std::to_string(vocab) + " rows");
    }
    std::copy_n(tv.data() + static_cast<std::size_t>(idv[i]) * d, d, out.data() + i * d);
  }
  const std::size_t tid = table.id();
  return table.graph().record(std::move(out), {table},
                              [tid, d, idv = std::move(idv)](Graph<T>& g, std::size_t self) {
                                const Tensor<T>& go = g.node_grad(self);
                                Tensor<T>& gt = g.grad_buffer(tid);
                                for (std::size_t i = 0; i < idv.size(); ++i) {
                                  T* dst = gt.data() + static_cast<std::size_t>(idv[i]) * d;
                                  const T* src = go.data() + i * d;
                                  for (std::size_t j = 0; j < d; ++j) dst[j] += src[j];
                                }
                              });
}

template <typename T>
Var<T> slice_rows(Var<T> x, std::size_t begin, std::size_t count) {
  require_matrix("slice_rows", x);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (begin + count > n) {
    throw DimensionError("slice_rows: rows [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  Tensor<T> out({count, d});
  std::copy_n(x.value().data() + begin * d, count * d, out.data());
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid, begin, d](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    Tensor<T>& gx = g.grad_buffer(xid);
    T* dst = gx.data() + begin * d;
    for (std::size_t i = 0; i < go.size(); ++i) dst[i] += go[i];
  });
}

template <typename T>
Var<T> slice_cols(Var<T> x, std::size_t begin, std::size_t count) {
  require_matrix("slice_cols", x);
  const std::size_t n = x.shape()[0], d = x.shape()[1];
  if (begin + count > d) {
    throw DimensionError("slice_cols: columns [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") outside " + to_string(x.shape()));
  }
  Tensor<T> out({n, count});
  const Tensor<T>& xv = x.value();
  for (std::size_t i = 0; i < n; ++i) std::copy_n(xv.data() + i * d + begin, count, out.data() + i * count);
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x},
                          [xid, begin, count, n, d](Graph<T>& g, std::size_t self) {
                            const Tensor<T>& go = g.node_grad(self);
                            Tensor<T>& gx = g.grad_buffer(xid);
                            for (std::size_t i = 0; i < n; ++i)
                              for (std::size_t j = 0; j < count; ++j)
                                gx[i * d + begin + j] += go[i * count + j];
                          });
}

template <typename T>
Var<T> concat_cols(std::span<const Var<T>> parts) {
  if (parts.empty()) throw ContractError("concat_cols: no operands");
  std::size_t n = 0, total = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    require_matrix("concat_cols", parts[p]);
    if (p == 0) n = parts[p].shape()[0];
    if (parts[p].shape()[0] != n) {
      throw DimensionError("concat_cols: row counts differ (" + to_string(parts[0].shape()) + " vs " +
                           to_string(parts[p].shape()) + ")");
    }
    total += parts[p].shape()[1];
  }
  Tensor<T> out({n, total});
  std::vector<std::size_t> ids, offsets, widths;
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.shape()[1];
    const Tensor<T>& pv = p.value();
    for (std::size_t i = 0; i < n; ++i) std::copy_n(pv.data() + i * w, w, out.data() + i * total + off);
    ids.push_back(p.id());
    offsets.push_back(off);
    widths.push_back(w);
    off += w;
  }
  return parts[0].graph().record(
      std::move(out), parts,
      [ids = std::move(ids), offsets = std::move(offsets), widths = std::move(widths), n, total](
          Graph<T>& g, std::size_t self) {
        const Tensor<T>& go = g.node_grad(self);
        for (std::size_t p = 0; p < ids.size(); ++p) {
          if (!g.requires_grad(ids[p])) continue;
          Tensor<T>& gp = g.grad_buffer(ids[p]);
          const std::size_t w = widths[p];
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < w; ++j) gp[i * w + j] += go[i * total + offsets[p] + j];
        }
      });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T total = 0;
  for (T v : x.value().values()) total += v;
  const std::size_t xid = x.id();
  return x.graph().record(Tensor<T>::scalar(total), {x}, [xid](Graph<T>& g, std::size_t self) {
    const T go = g.node_grad(self)[0];
    for (auto& v : g.grad_buffer(xid).values()) v += go;
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw ContractError("mean of an empty tensor");
  return scale(sum(x), T(1) / T(n));
}

template <typename T>
Var<T> row_sum(Var<T> x) {
  const Tensor<T>& xv = x.value();
  const std::size_t d = xv.cols(), rows = xv.size() / std::max<std::size_t>(d, 1);
  Tensor<T> out({rows});
  for (std::size_t r = 0; r < rows; ++r) {
    T acc = 0;
    for (std::size_t j = 0; j < d; ++j) acc += xv[r * d + j];
    out[r] = acc;
  }
  const std::size_t xid = x.id();
  return x.graph().record(std::move(out), {x}, [xid, rows, d](Graph<T>& g, std::size_t self) {
    const Tensor<T>& go = g.node_grad(self);
    Tensor<T>& gx = g.grad_buffer(xid);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += go[r];
  });
}

template <typename T>
Var<T> mse_loss(Var<T> prediction, const Tensor<T>& target) {
  if (prediction.value().size() != target.size()) {
    throw DimensionError("mse_loss: prediction " + to_string(prediction.shape()) + " vs target " +
                         to_string(target.shape()));
  }
  const Tensor<T>& pv = prediction.value();
  const std::size_t n = pv.size();
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) total += (pv[i] - target[i]) * (pv[i] - target[i]);
  const std::size_t pid = prediction.id();
  return prediction.graph().record(
      Tensor<T>::scalar(total / T(n)), {prediction}, [pid, target, n](Graph<T>& g, std::size_t self) {
        const T go = g.node_grad(self)[0];
        const Tensor<T>& pv = g.value(pid);
        Tensor<T>& gp = g.grad_buffer(pid);
        for (std::size_t i = 0; i < n; ++i) gp[i] += go * T(2) * (pv[i] - target[i]) / T(n);
      });
}

template <typename T>
Var<T> bce_with_logits(Var<T> logits, const Tensor<T>& targets, const Tensor<T>& mask) {
  const Tensor<T>& zv = logits.value();
  const std::size_t n = zv.size();
  if (targets.size() != n || (!mask.empty() && mask.size() != n)) {
    throw DimensionError("bce_with_logits: logits " + to_string(zv.shape()) + ", targets " +
                         to_string(targets.shape()) + ", mask " + to_string(mask.shape()));
  }
  Tensor<T> weights = mask.empty() ? Tensor<T>(zv.shape(), T(1)) : mask;
  T count = 0;
  for (T w : weights.values()) count += w;
  if (count <= T(0)) throw ContractError("bce_with_logits: mask selects no positions");
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (weights[i] == T(0)) continue;
    const T z = zv[i];
    // softplus(z) - y z, computed stably
    const T sp = std::max(z, T(0)) + std::log1p(std::exp(-std::abs(z)));
    total += weights[i] * (sp - targets[i] * z);
  }
  const std::size_t zid = logits.id();
  return logits.graph().record(
      Tensor<T>::scalar(total / count), {logits},
      [zid, targets, weights = std::move(weights), count, n](Graph<T>& g, std::size_t self) {
        const T go = g.node_grad(self)[0];
        const Tensor<T>& zv = g.value(zid);
        Tensor<T>& gz = g.grad_buffer(zid);
        for (std::size_t i = 0; i < n; ++i) {
          if (weights[i] == T(0)) continue;
          const T z = zv[i];
          const T p = z >= T(0) ? T(1) / (T(1) + std::exp(-z)) : std::exp(z) / (T(1) + std::exp(z));
          gz[i] += go * weights[i] * (p - targets[i]) / count;
        }
      });
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::size_t> targets) {
  require_matrix("cross_entropy", logits);
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (targets.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                         to_string(logits.shape()) + " logits");
  }
  const Tensor<T>& zv = logits.value();
  std::vector<T> probs(n * c);
  std::vector<std::size_t> tv(targets.begin(), targets.end());
  T total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (tv[i] >= c) throw ContractError("cross_entropy: class id out of range");
    T mx = zv[i * c];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, zv[i * c + j]);
    T z = 0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(zv[i * c + j] - mx);
    const T lse = mx + std::log(z);
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(zv[i * c + j] - lse);
    total += lse - zv[i * c + tv[i]];
  }
  const std::size_t zid = logits.id();
  return logits.graph().record(
      Tensor<T>::scalar(total / T(n)), {logits},
      [zid, n, c, probs = std::move(probs), tv = std::move(tv)](Graph<T>& g, std::size_t self) {
        const T go = g.node_grad(self)[0];
        Tensor<T>& gz = g.grad_buffer(zid);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < c; ++j) {
            const T y = j == tv[i] ? T(1) : T(0);
            gz[i * c + j] += go * (probs[i * c + j] - y) / T(n);
          }
      });
}

#define ATTRIQE_INSTANTIATE_OPS(T)                                                        \
  template Var<T> add(Var<T>, Var<T>);                                                    \
  template Var<T> sub(Var<T>, Var<T>);                                                    \
  template Var<T> mul(Var<T>, Var<T>);                                                    \
  template Var<T> add_bias(Var<T>, Var<T>);                                               \
  template Var<T> scale(Var<T>, T);                                                       \
  template Var<T> add_scalar(Var<T>, T);                                                  \
  template Var<T> scale_rows(Var<T>, Var<T>);                                             \
  template Var<T> matmul(Var<T>, Var<T>);                                                 \
  template Var<T> transpose(Var<T>);                                                      \
  template Var<T> reshape(Var<T>, Shape);                                                 \
  template Var<T> softmax(Var<T>, std::size_t);                                           \
  template Var<T> layer_norm(Var<T>, Var<T>, Var<T>, T);                                  \
  template Var<T> gelu(Var<T>);                                                           \
  template Var<T> relu(Var<T>);                                                           \
  template Var<T> tanh(Var<T>);                                                           \
  template Var<T> sigmoid(Var<T>);                                                        \
  template Var<T> exp(Var<T>);                                                            \
  template Var<T> log(Var<T>);                                                            \
  template Var<T> square(Var<T>);                                                         \
  template Var<T> embedding(Var<T>, std::span<const std::int32_t>);                       \
  template Var<T> slice_rows(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> slice_cols(Var<T>, std::size_t, std::size_t);                           \
  template Var<T> concat_cols(std::span<const Var<T>>);                                   \
  template Var<T> sum(Var<T>);                                                            \
  template Var<T> mean(Var<T>);                                                           \
  template Var<T> row_sum(Var<T>);                                                        \
  template Var<T> mse_loss(Var<T>, const Tensor<T>&);                                     \
  template Var<T> bce_with_logits(Var<T>, const Tensor<T>&, const Tensor<T>&);            \
  template Var<T> cross_entropy(Var<T>, std::span<const std::size_t>);

ATTRIQE_INSTANTIATE_OPS(float)
ATTRIQE_INSTANTIATE_OPS(double)

}  // namespace attriqe::ad
