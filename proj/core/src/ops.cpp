#include "svtr2/ops.hpp"

#include <cmath>

namespace svtr2 {

namespace {

template <class S>
void require_rank(const Tensor<S>& t, int rank, const char* op) {
  if (!t.defined()) throw StateError(str_cat(op, ": undefined tensor"));
  if (t.ndim() != rank)
    throw ShapeError(str_cat(op, ": expected rank ", rank, ", got ", shape_str(t.shape())));
}

template <class S>
void require_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
  if (!a.defined() || !b.defined()) throw StateError(str_cat(op, ": undefined tensor"));
  if (a.shape() != b.shape())
    throw ShapeError(
        str_cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

// Splits `shape` at `axis` into (outer, len, inner) extents for strided loops.
struct AxisSplit {
  long long outer = 1, inner = 1;
  int len = 1;
};
AxisSplit split_axis(const std::vector<int>& shape, int axis) {
  AxisSplit s;
  s.len = shape[std::size_t(axis)];
  for (int i = 0; i < axis; ++i) s.outer *= shape[std::size_t(i)];
  for (std::size_t i = std::size_t(axis) + 1; i < shape.size(); ++i) s.inner *= shape[i];
  return s;
}

template <class S>
struct BackwardCtx {
  // Convenience for closures: grad of the op output, or null if the output
  // never reached the loss (its gradient is identically zero).
  static const S* out_grad(const std::shared_ptr<TensorImpl<S>>& o) {
    return o->grad.empty() ? nullptr : o->grad.data();
  }
};

}  // namespace

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "add");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const long long n = a.numel();
  for (long long i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  check_finite(out, "add");
  if (recording<S>({&a, &b})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[std::size_t(i)] += g[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[std::size_t(i)] += g[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "sub");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const long long n = a.numel();
  for (long long i = 0; i < n; ++i) po[i] = pa[i] - pb[i];
  check_finite(out, "sub");
  if (recording<S>({&a, &b})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[std::size_t(i)] += g[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[std::size_t(i)] -= g[i];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require_same_shape(a, b, "mul");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  const S* pb = b.data();
  S* po = out.data();
  const long long n = a.numel();
  for (long long i = 0; i < n; ++i) po[i] = pa[i] * pb[i];
  check_finite(out, "mul");
  if (recording<S>({&a, &b})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      if (ai->requires_grad) {
        ai->ensure_grad();
        for (long long i = 0; i < n; ++i) ai->grad[std::size_t(i)] += g[i] * bi->value[std::size_t(i)];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (long long i = 0; i < n; ++i) bi->grad[std::size_t(i)] += g[i] * ai->value[std::size_t(i)];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> scale(const Tensor<S>& a, double s) {
  if (!a.defined()) throw StateError("scale: undefined tensor");
  Tensor<S> out = Tensor<S>::zeros(a.shape());
  const S* pa = a.data();
  S* po = out.data();
  const long long n = a.numel();
  const S sv = S(s);
  for (long long i = 0; i < n; ++i) po[i] = pa[i] * sv;
  check_finite(out, "scale");
  if (recording<S>({&a})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [ai = a.impl(), oi = out.impl(), n, sv] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      ai->ensure_grad();
      for (long long i = 0; i < n; ++i) ai->grad[std::size_t(i)] += g[i] * sv;
    });
  }
  return out;
}

template <class S>
Tensor<S> add_bias(const Tensor<S>& x, const Tensor<S>& b) {
  require_rank(x, 2, "add_bias");
  require_rank(b, 1, "add_bias");
  const int m = x.dim(0), n = x.dim(1);
  if (b.dim(0) != n)
    throw ShapeError(str_cat("add_bias: bias ", shape_str(b.shape()), " vs rows of ",
                             shape_str(x.shape())));
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.data();
  const S* pb = b.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[i * n + j] = px[i * n + j] + pb[j];
  check_finite(out, "add_bias");
  if (recording<S>({&x, &b})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), bi = b.impl(), oi = out.impl(), m, n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        for (long long i = 0; i < (long long)m * n; ++i) xi->grad[std::size_t(i)] += g[i];
      }
      if (bi->requires_grad) {
        bi->ensure_grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < n; ++j) bi->grad[std::size_t(j)] += g[i * n + j];
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k)
    throw ShapeError(str_cat("matmul: inner dims differ: ", shape_str(a.shape()), " x ",
                             shape_str(b.shape())));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  gemm_nn(a.data(), b.data(), out.data(), m, k, n, false);
  check_finite(out, "matmul");
  if (recording<S>({&a, &b})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(),
                              [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
                                const S* g = BackwardCtx<S>::out_grad(oi);
                                if (!g) return;
                                if (ai->requires_grad) {
                                  ai->ensure_grad();
                                  // dA[m,k] += G[m,n] * B[k,n]^T
                                  gemm_nt(g, bi->value.data(), ai->grad.data(), m, n, k, true);
                                }
                                if (bi->requires_grad) {
                                  bi->ensure_grad();
                                  // dB[k,n] += A[m,k]^T * G[m,n]
                                  gemm_tn(ai->value.data(), g, bi->grad.data(), m, k, n, true);
                                }
                              });
  }
  return out;
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
  require_rank(x, 2, "transpose");
  const int m = x.dim(0), n = x.dim(1);
  Tensor<S> out = Tensor<S>::zeros({n, m});
  const S* px = x.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[j * m + i] = px[i * n + j];
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), m, n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) xi->grad[std::size_t(i * n + j)] += g[j * m + i];
    });
  }
  return out;
}

template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis) {
  if (!x.defined()) throw StateError("softmax: undefined tensor");
  if (axis < 0) axis += x.ndim();
  if (axis < 0 || axis >= x.ndim())
    throw ShapeError(str_cat("softmax: axis ", axis, " out of range for ", shape_str(x.shape())));
  const AxisSplit ax = split_axis(x.shape(), axis);
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.data();
  S* po = out.data();
  // Max-shifted exponentials, normalized in double so row sums stay tight.
  for (long long o = 0; o < ax.outer; ++o) {
    for (long long in = 0; in < ax.inner; ++in) {
      const long long base = o * ax.len * ax.inner + in;
      double mx = -HUGE_VAL;
      for (int j = 0; j < ax.len; ++j) mx = std::max(mx, double(px[base + j * ax.inner]));
      double z = 0.0;
      for (int j = 0; j < ax.len; ++j) z += std::exp(double(px[base + j * ax.inner]) - mx);
      for (int j = 0; j < ax.len; ++j)
        po[base + j * ax.inner] = S(std::exp(double(px[base + j * ax.inner]) - mx) / z);
    }
  }
  check_finite(out, "softmax");
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), ax] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      const S* y = oi->value.data();
      for (long long o = 0; o < ax.outer; ++o) {
        for (long long in = 0; in < ax.inner; ++in) {
          const long long base = o * ax.len * ax.inner + in;
          double dot = 0.0;
          for (int j = 0; j < ax.len; ++j) {
            const long long p = base + j * ax.inner;
            dot += double(g[p]) * double(y[p]);
          }
          for (int j = 0; j < ax.len; ++j) {
            const long long p = base + j * ax.inner;
            xi->grad[std::size_t(p)] += S(double(y[p]) * (double(g[p]) - dot));
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     double eps) {
  if (!x.defined()) throw StateError("layer_norm: undefined tensor");
  require_rank(gain, 1, "layer_norm");
  require_rank(bias, 1, "layer_norm");
  const int c = x.dim(x.ndim() - 1);
  if (gain.dim(0) != c || bias.dim(0) != c)
    throw ShapeError(str_cat("layer_norm: gain/bias of ", gain.dim(0), "/", bias.dim(0),
                             " vs last dim ", c, " of ", shape_str(x.shape())));
  const long long rows = x.numel() / c;
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.data();
  const S* pg = gain.data();
  const S* pb = bias.data();
  S* po = out.data();
  for (long long r = 0; r < rows; ++r) {
    const S* xr = px + r * c;
    S* yr = po + r * c;
    double mu = 0.0;
    for (int j = 0; j < c; ++j) mu += double(xr[j]);
    mu /= c;
    double var = 0.0;
    for (int j = 0; j < c; ++j) {
      const double d = double(xr[j]) - mu;
      var += d * d;
    }
    var /= c;
    const double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j)
      yr[j] = S((double(xr[j]) - mu) * inv * double(pg[j]) + double(pb[j]));
  }
  check_finite(out, "layer_norm");
  if (recording<S>({&x, &gain, &bias})) {
    out.mark_output();
    Tape<S>::active()->record(
        out.impl(),
        [xi = x.impl(), gi = gain.impl(), bi = bias.impl(), oi = out.impl(), rows, c, eps] {
          const S* g = BackwardCtx<S>::out_grad(oi);
          if (!g) return;
          const S* px = xi->value.data();
          const S* pg = gi->value.data();
          if (xi->requires_grad) xi->ensure_grad();
          if (gi->requires_grad) gi->ensure_grad();
          if (bi->requires_grad) bi->ensure_grad();
          for (long long r = 0; r < rows; ++r) {
            const S* xr = px + r * c;
            const S* gr = g + r * c;
            double mu = 0.0;
            for (int j = 0; j < c; ++j) mu += double(xr[j]);
            mu /= c;
            double var = 0.0;
            for (int j = 0; j < c; ++j) {
              const double d = double(xr[j]) - mu;
              var += d * d;
            }
            var /= c;
            const double inv = 1.0 / std::sqrt(var + eps);
            if (gi->requires_grad || bi->requires_grad) {
              for (int j = 0; j < c; ++j) {
                const double xh = (double(xr[j]) - mu) * inv;
                if (gi->requires_grad) gi->grad[std::size_t(j)] += S(double(gr[j]) * xh);
                if (bi->requires_grad) bi->grad[std::size_t(j)] += gr[j];
              }
            }
            if (xi->requires_grad) {
              double m1 = 0.0, m2 = 0.0;  // mean(g*gain), mean(g*gain*xh)
              for (int j = 0; j < c; ++j) {
                const double gg = double(gr[j]) * double(pg[j]);
                const double xh = (double(xr[j]) - mu) * inv;
                m1 += gg;
                m2 += gg * xh;
              }
              m1 /= c;
              m2 /= c;
              for (int j = 0; j < c; ++j) {
                const double gg = double(gr[j]) * double(pg[j]);
                const double xh = (double(xr[j]) - mu) * inv;
                xi->grad[std::size_t(r * c + j)] += S(inv * (gg - m1 - xh * m2));
              }
            }
          }
        });
  }
  return out;
}

template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
  if (!x.defined()) throw StateError("gelu: undefined tensor");
  Tensor<S> out = Tensor<S>::zeros(x.shape());
  const S* px = x.data();
  S* po = out.data();
  const long long n = x.numel();
  for (long long i = 0; i < n; ++i) {
    const double v = double(px[i]);
    po[i] = S(0.5 * v * (1.0 + std::erf(v * 0.7071067811865476)));
  }
  check_finite(out, "gelu");
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (long long i = 0; i < n; ++i) {
        const double v = double(xi->value[std::size_t(i)]);
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865476));
        const double pdf = 0.3989422804014327 * std::exp(-0.5 * v * v);
        xi->grad[std::size_t(i)] += S(double(g[i]) * (cdf + v * pdf));
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
  if (!x.defined()) throw StateError("sum: undefined tensor");
  double acc = 0.0;
  for (S v : x.values()) acc += double(v);
  Tensor<S> out = Tensor<S>::scalar(S(acc));
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (S& gv : xi->grad) gv += g[0];
    });
  }
  return out;
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
  if (!x.defined()) throw StateError("mean: undefined tensor");
  const long long n = x.numel();
  double acc = 0.0;
  for (S v : x.values()) acc += double(v);
  Tensor<S> out = Tensor<S>::scalar(S(acc / double(n)));
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      const S s = S(double(g[0]) / double(n));
      for (S& gv : xi->grad) gv += s;
    });
  }
  return out;
}

template <class S>
Tensor<S> reshape(const Tensor<S>& x, std::vector<int> shape) {
  if (!x.defined()) throw StateError("reshape: undefined tensor");
  Tensor<S> out = Tensor<S>::from(std::move(shape), x.values());
  if (out.numel() != x.numel())
    throw ShapeError(str_cat("reshape: ", shape_str(x.shape()), " -> ", shape_str(out.shape()),
                             " changes element count"));
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl()] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < xi->grad.size(); ++i) xi->grad[i] += g[i];
    });
  }
  return out;
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int n) {
  require_rank(x, 2, "slice_cols");
  const int m = x.dim(0), w = x.dim(1);
  if (c0 < 0 || n <= 0 || c0 + n > w)
    throw ShapeError(str_cat("slice_cols: [", c0, ",", c0 + n, ") out of ", shape_str(x.shape())));
  Tensor<S> out = Tensor<S>::zeros({m, n});
  const S* px = x.data();
  S* po = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) po[i * n + j] = px[i * w + c0 + j];
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), m, w, c0, n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) xi->grad[std::size_t(i * w + c0 + j)] += g[i * n + j];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw StateError("concat_cols: empty part list");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor<S>& p : parts) {
    require_rank(p, 2, "concat_cols");
    if (p.dim(0) != m)
      throw ShapeError(str_cat("concat_cols: row mismatch ", shape_str(p.shape()), " vs ",
                               shape_str(parts[0].shape())));
    total += p.dim(1);
  }
  Tensor<S> out = Tensor<S>::zeros({m, total});
  S* po = out.data();
  int at = 0;
  for (const Tensor<S>& p : parts) {
    const int n = p.dim(1);
    const S* pp = p.data();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j) po[i * total + at + j] = pp[i * n + j];
    at += n;
  }
  bool rec = false;
  for (const Tensor<S>& p : parts)
    if (recording<S>({&p})) rec = true;
  if (rec) {
    out.mark_output();
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    impls.reserve(parts.size());
    for (const Tensor<S>& p : parts) impls.push_back(p.impl());
    Tape<S>::active()->record(out.impl(), [impls, oi = out.impl(), m, total] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      int at = 0;
      for (const auto& pi : impls) {
        const int n = pi->shape[1];
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) pi->grad[std::size_t(i * n + j)] += g[i * total + at + j];
        }
        at += n;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<int>& rows) {
  require_rank(x, 2, "gather_rows");
  const int m = x.dim(0), n = x.dim(1);
  if (rows.empty()) throw ShapeError("gather_rows: empty index list");
  for (int r : rows)
    if (r < 0 || r >= m)
      throw ShapeError(str_cat("gather_rows: index ", r, " out of ", shape_str(x.shape())));
  Tensor<S> out = Tensor<S>::zeros({int(rows.size()), n});
  const S* px = x.data();
  S* po = out.data();
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < n; ++j) po[i * std::size_t(n) + std::size_t(j)] = px[rows[i] * n + j];
  if (recording<S>({&x})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), oi = out.impl(), rows, n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      for (std::size_t i = 0; i < rows.size(); ++i)
        for (int j = 0; j < n; ++j)
          xi->grad[std::size_t(rows[i] * n + j)] += g[i * std::size_t(n) + std::size_t(j)];
    });
  }
  return out;
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
  if (parts.empty()) throw StateError("concat_rows: empty part list");
  const int n = parts[0].dim(1);
  int total = 0;
  for (const Tensor<S>& p : parts) {
    require_rank(p, 2, "concat_rows");
    if (p.dim(1) != n)
      throw ShapeError(str_cat("concat_rows: column mismatch ", shape_str(p.shape()), " vs ",
                               shape_str(parts[0].shape())));
    total += p.dim(0);
  }
  Tensor<S> out = Tensor<S>::zeros({total, n});
  S* po = out.data();
  int at = 0;
  for (const Tensor<S>& p : parts) {
    const int m = p.dim(0);
    std::copy(p.data(), p.data() + (long long)m * n, po + (long long)at * n);
    at += m;
  }
  bool rec = false;
  for (const Tensor<S>& p : parts)
    if (recording<S>({&p})) rec = true;
  if (rec) {
    out.mark_output();
    std::vector<std::shared_ptr<TensorImpl<S>>> impls;
    impls.reserve(parts.size());
    for (const Tensor<S>& p : parts) impls.push_back(p.impl());
    Tape<S>::active()->record(out.impl(), [impls, oi = out.impl(), n] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      long long at = 0;
      for (const auto& pi : impls) {
        const long long m = pi->shape[0];
        if (pi->requires_grad) {
          pi->ensure_grad();
          for (long long i = 0; i < m * n; ++i) pi->grad[std::size_t(i)] += g[at * n + i];
        }
        at += m;
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& bias, int groups,
                 int sh, int sw, int ph, int pw) {
  require_rank(x, 3, "conv2d");
  require_rank(w, 4, "conv2d");
  ConvGeom g;
  g.cin = x.dim(0);
  g.h = x.dim(1);
  g.w = x.dim(2);
  g.cout = w.dim(0);
  g.kh = w.dim(2);
  g.kw = w.dim(3);
  g.groups = groups;
  g.sh = sh;
  g.sw = sw;
  g.ph = ph;
  g.pw = pw;
  if (groups < 1 || g.cin % groups != 0 || g.cout % groups != 0)
    throw ConfigError(str_cat("conv2d: groups=", groups, " does not divide cin=", g.cin,
                              " / cout=", g.cout));
  if (w.dim(1) != g.cin / groups)
    throw ShapeError(str_cat("conv2d: weight ", shape_str(w.shape()), " expects cin/groups=",
                             g.cin / groups, ", input has cin=", g.cin));
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != g.cout))
    throw ShapeError(str_cat("conv2d: bias ", shape_str(bias.shape()), " vs cout ", g.cout));
  if (sh < 1 || sw < 1 || ph < 0 || pw < 0)
    throw ConfigError(str_cat("conv2d: bad stride/pad (", sh, ",", sw, ")/(", ph, ",", pw, ")"));
  if (g.out_h() < 1 || g.out_w() < 1)
    throw ShapeError(str_cat("conv2d: kernel ", g.kh, "x", g.kw, " does not fit padded input ",
                             shape_str(x.shape())));
  Tensor<S> out = Tensor<S>::zeros({g.cout, g.out_h(), g.out_w()});
  conv2d_forward(g, x.data(), w.data(), bias.defined() ? bias.data() : nullptr, out.data());
  check_finite(out, "conv2d");
  bool rec = bias.defined() ? recording<S>({&x, &w, &bias}) : recording<S>({&x, &w});
  if (rec) {
    out.mark_output();
    std::shared_ptr<TensorImpl<S>> bi = bias.defined() ? bias.impl() : nullptr;
    Tape<S>::active()->record(out.impl(), [xi = x.impl(), wi = w.impl(), bi, oi = out.impl(), g] {
      const S* dy = BackwardCtx<S>::out_grad(oi);
      if (!dy) return;
      if (xi->requires_grad) {
        xi->ensure_grad();
        conv2d_backward_input(g, wi->value.data(), dy, xi->grad.data());
      }
      const bool want_w = wi->requires_grad;
      const bool want_b = bi && bi->requires_grad;
      if (want_w || want_b) {
        if (want_w) wi->ensure_grad();
        if (want_b) bi->ensure_grad();
        if (want_w)
          conv2d_backward_params(g, xi->value.data(), dy, wi->grad.data(),
                                 want_b ? bi->grad.data() : nullptr);
        else {
          // bias-only: accumulate plane sums without touching weights
          const int oh = g.out_h(), ow = g.out_w();
          for (int oc = 0; oc < g.cout; ++oc) {
            const S* plane = dy + (long long)oc * oh * ow;
            S acc = 0;
            for (long long i = 0; i < (long long)oh * ow; ++i) acc += plane[i];
            bi->grad[std::size_t(oc)] += acc;
          }
        }
      }
    });
  }
  return out;
}

template <class S>
Tensor<S> cross_entropy(const Tensor<S>& logits, int target) {
  if (!logits.defined()) throw StateError("cross_entropy: undefined tensor");
  long long n = logits.numel();
  if (logits.ndim() > 2 || (logits.ndim() == 2 && logits.dim(0) != 1))
    throw ShapeError(str_cat("cross_entropy: expected one row of logits, got ",
                             shape_str(logits.shape())));
  if (target < 0 || target >= n)
    throw InputError(str_cat("cross_entropy: class ", target, " out of ", n));
  const S* px = logits.data();
  double mx = -HUGE_VAL;
  for (long long i = 0; i < n; ++i) mx = std::max(mx, double(px[i]));
  double z = 0.0;
  for (long long i = 0; i < n; ++i) z += std::exp(double(px[i]) - mx);
  const double loss = std::log(z) + mx - double(px[target]);
  Tensor<S> out = Tensor<S>::scalar(S(loss));
  check_finite(out, "cross_entropy");
  if (recording<S>({&logits})) {
    out.mark_output();
    Tape<S>::active()->record(out.impl(), [xi = logits.impl(), oi = out.impl(), n, target, mx, z] {
      const S* g = BackwardCtx<S>::out_grad(oi);
      if (!g) return;
      xi->ensure_grad();
      const double g0 = double(g[0]);
      for (long long i = 0; i < n; ++i) {
        double p = std::exp(double(xi->value[std::size_t(i)]) - mx) / z;
        if (i == target) p -= 1.0;
        xi->grad[std::size_t(i)] += S(g0 * p);
      }
    });
  }
  return out;
}

#define SVTR2_INSTANTIATE_OPS(S)                                                              \
  template Tensor<S> add<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> sub<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> mul<S>(const Tensor<S>&, const Tensor<S>&);                              \
  template Tensor<S> scale<S>(const Tensor<S>&, double);                                      \
  template Tensor<S> add_bias<S>(const Tensor<S>&, const Tensor<S>&);                         \
  template Tensor<S> matmul<S>(const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> transpose<S>(const Tensor<S>&);                                          \
  template Tensor<S> softmax<S>(const Tensor<S>&, int);                                       \
  template Tensor<S> layer_norm<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&,      \
                                   double);                                                   \
  template Tensor<S> gelu<S>(const Tensor<S>&);                                               \
  template Tensor<S> sum<S>(const Tensor<S>&);                                                \
  template Tensor<S> mean<S>(const Tensor<S>&);                                               \
  template Tensor<S> reshape<S>(const Tensor<S>&, std::vector<int>);                          \
  template Tensor<S> slice_cols<S>(const Tensor<S>&, int, int);                               \
  template Tensor<S> concat_cols<S>(const std::vector<Tensor<S>>&);                           \
  template Tensor<S> gather_rows<S>(const Tensor<S>&, const std::vector<int>&);               \
  template Tensor<S> concat_rows<S>(const std::vector<Tensor<S>>&);                           \
  template Tensor<S> conv2d<S>(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, int,     \
                               int, int, int, int);                                           \
  template Tensor<S> cross_entropy<S>(const Tensor<S>&, int);

SVTR2_INSTANTIATE_OPS(float)
SVTR2_INSTANTIATE_OPS(double)

#undef SVTR2_INSTANTIATE_OPS

}  // namespace svtr2
