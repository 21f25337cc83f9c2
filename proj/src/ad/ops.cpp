#include "detach/ad/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "detach/simd/kernels.hpp"

namespace detach::ad {
namespace {

const simd::KernelTable& K() { return simd::kernels(); }

Graph& graph_of(Var a, Var b, const char* op) {
  if (a.graph == nullptr || a.graph != b.graph) {
    throw std::invalid_argument(std::string(op) + ": operands belong to different graphs");
  }
  return *a.graph;
}

// True when b's shape equals a's, or is a trailing suffix of it.
void check_broadcast(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return;
  if (b.size() > a.size()) throw shape_error(op, a, b);
  if (!std::equal(b.rbegin(), b.rend(), a.rbegin())) throw shape_error(op, a, b);
}

struct Span3 {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

Span3 around_axis(const Shape& s, std::size_t axis) {
  Span3 r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

template <typename F, typename D>
Var unary(Var a, F f, D df_from_xy) {
  Graph& g = *a.graph;
  const Tensor& x = a.value();
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) y[i] = f(x[i]);
  return g.emit(std::move(y), {a}, [ai = a.id, df_from_xy](Graph& g, NodeId self) {
    if (!g.value(ai).numel()) return;
    const Tensor& x = g.value(ai);
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += gy[i] * df_from_xy(x[i], y[i]);
  });
}

void require_axis(const char* op, const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) +
                     " out of range for shape " + shape_to_string(s));
  }
}

}  // namespace

Var add(Var a, Var b) {
  Graph& g = graph_of(a, b, "add");
  check_broadcast("add", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out = x;
  const std::size_t inner = y.numel();
  if (inner == 0) return g.emit(std::move(out), {a, b}, [](Graph&, NodeId) {});
  const std::size_t outer = x.numel() / inner;
  for (std::size_t o = 0; o < outer; ++o) K().axpy(1.0, y.data().data(), out.data().data() + o * inner, inner);
  return g.emit(std::move(out), {a, b}, [ai = a.id, bi = b.id, outer, inner](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    if (g.requires_grad(Var{&g, ai})) K().axpy(1.0, gy.data().data(), g.grad_buffer(ai).data().data(), gy.numel());
    if (g.requires_grad(Var{&g, bi})) {
      Tensor& gb = g.grad_buffer(bi);
      for (std::size_t o = 0; o < outer; ++o) K().axpy(1.0, gy.data().data() + o * inner, gb.data().data(), inner);
    }
  });
}

Var sub(Var a, Var b) { return add(a, scale(b, -1.0)); }

Var mul(Var a, Var b) {
  Graph& g = graph_of(a, b, "mul");
  check_broadcast("mul", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  const std::size_t inner = y.numel();
  const std::size_t outer = inner ? x.numel() / inner : 0;
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] = x[o * inner + i] * y[i];
  }
  return g.emit(std::move(out), {a, b}, [ai = a.id, bi = b.id, outer, inner](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& x = g.value(ai);
    const Tensor& y = g.value(bi);
    if (g.requires_grad(Var{&g, ai})) {
      Tensor& gx = g.grad_buffer(ai);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gx[o * inner + i] += gy[o * inner + i] * y[i];
      }
    }
    if (g.requires_grad(Var{&g, bi})) {
      Tensor& gb = g.grad_buffer(bi);
      for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t i = 0; i < inner; ++i) gb[i] += gy[o * inner + i] * x[o * inner + i];
      }
    }
  });
}

Var scale(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& v : out.storage()) v *= c;
  return g.emit(std::move(out), {a}, [ai = a.id, c](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    K().axpy(c, gy.data().data(), g.grad_buffer(ai).data().data(), gy.numel());
  });
}

Var add_scalar(Var a, double c) {
  Graph& g = *a.graph;
  Tensor out = a.value();
  for (double& v : out.storage()) v += c;
  return g.emit(std::move(out), {a}, [ai = a.id](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    K().axpy(1.0, gy.data().data(), g.grad_buffer(ai).data().data(), gy.numel());
  });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2) throw shape_error("matmul", sa, sb);
  if (sb.size() == 2) {
    const std::size_t k = sa.back();
    if (sb[0] != k) throw shape_error("matmul", sa, sb);
    const std::size_t n = sb[1];
    Shape so = sa;
    so.back() = n;
    Tensor out(so);
    std::size_t rows = 1;
    for (std::size_t i = 0; i + 1 < sa.size(); ++i) rows *= sa[i];
    if (k > 0) K().gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), rows, k, n);
    return g.emit(std::move(out), {a, b}, [ai = a.id, bi = b.id, rows, k, n](Graph& g, NodeId self) {
      const Tensor& gy = g.grad_ref(self);
      if (k == 0) return;
      if (g.requires_grad(Var{&g, ai})) {
        K().gemm_nt(gy.data().data(), g.value(bi).data().data(), g.grad_buffer(ai).data().data(), rows, n, k);
      }
      if (g.requires_grad(Var{&g, bi})) {
        K().gemm_tn(g.value(ai).data().data(), gy.data().data(), g.grad_buffer(bi).data().data(), rows, k, n);
      }
    });
  }
  if (sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0] && sa[2] == sb[1]) {
    const std::size_t batch = sa[0], m = sa[1], k = sa[2], n = sb[2];
    Tensor out(Shape{batch, m, n});
    for (std::size_t bt = 0; bt < batch; ++bt) {
      K().gemm_nn(a.value().data().data() + bt * m * k, b.value().data().data() + bt * k * n,
                  out.data().data() + bt * m * n, m, k, n);
    }
    return g.emit(std::move(out), {a, b}, [ai = a.id, bi = b.id, batch, m, k, n](Graph& g, NodeId self) {
      const Tensor& gy = g.grad_ref(self);
      const bool need_a = g.requires_grad(Var{&g, ai});
      const bool need_b = g.requires_grad(Var{&g, bi});
      for (std::size_t bt = 0; bt < batch; ++bt) {
        const double* gyb = gy.data().data() + bt * m * n;
        if (need_a) {
          K().gemm_nt(gyb, g.value(bi).data().data() + bt * k * n,
                      g.grad_buffer(ai).data().data() + bt * m * k, m, n, k);
        }
        if (need_b) {
          K().gemm_tn(g.value(ai).data().data() + bt * m * k, gyb,
                      g.grad_buffer(bi).data().data() + bt * k * n, m, k, n);
        }
      }
    });
  }
  throw shape_error("matmul", sa, sb);
}

Var transpose(Var a) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  if (s.size() < 2) throw ShapeError("transpose: need rank >= 2, got " + shape_to_string(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t batch = (r != 0 && c != 0) ? a.value().numel() / (r * c) : 0;
  Shape so = s;
  std::swap(so[so.size() - 2], so.back());
  Tensor out(so);
  const Tensor& x = a.value();
  for (std::size_t bt = 0; bt < batch; ++bt) {
    for (std::size_t i = 0; i < r; ++i) {
      for (std::size_t j = 0; j < c; ++j) out[bt * r * c + j * r + i] = x[bt * r * c + i * c + j];
    }
  }
  return g.emit(std::move(out), {a}, [ai = a.id, batch, r, c](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t bt = 0; bt < batch; ++bt) {
      for (std::size_t i = 0; i < r; ++i) {
        for (std::size_t j = 0; j < c; ++j) gx[bt * r * c + i * c + j] += gy[bt * r * c + j * r + i];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  Graph& g = *a.graph;
  Tensor out = a.value().reshaped(std::move(shape));
  return g.emit(std::move(out), {a}, [ai = a.id](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    K().axpy(1.0, gy.data().data(), g.grad_buffer(ai).data().data(), gy.numel());
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no operands");
  Graph& g = *parts.front().graph;
  const Shape& s0 = parts.front().shape();
  require_axis("concat", s0, axis);
  std::size_t total = 0;
  for (const Var& p : parts) {
    const Shape& s = p.shape();
    if (p.graph != &g) throw std::invalid_argument("concat: operands belong to different graphs");
    if (s.size() != s0.size()) throw shape_error("concat", s0, s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != s0[i]) throw shape_error("concat", s0, s);
    }
    total += s[axis];
  }
  Shape so = s0;
  so[axis] = total;
  Tensor out(so);
  const Span3 sp = around_axis(so, axis);
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const Var& p : parts) {
    offsets.push_back(off);
    const std::size_t w = p.shape()[axis] * sp.inner;
    const Tensor& x = p.value();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(x.data().data() + o * w, w, out.data().data() + o * total * sp.inner + off * sp.inner);
    }
    off += p.shape()[axis];
  }
  std::vector<NodeId> ids;
  std::vector<std::size_t> widths;
  for (const Var& p : parts) {
    ids.push_back(p.id);
    widths.push_back(p.shape()[axis]);
  }
  return g.emit(std::move(out), parts,
                [ids, widths, offsets, outer = sp.outer, inner = sp.inner, total](Graph& g, NodeId self) {
                  const Tensor& gy = g.grad_ref(self);
                  for (std::size_t pi = 0; pi < ids.size(); ++pi) {
                    if (!g.requires_grad(Var{&g, ids[pi]})) continue;
                    Tensor& gx = g.grad_buffer(ids[pi]);
                    const std::size_t w = widths[pi] * inner;
                    for (std::size_t o = 0; o < outer; ++o) {
                      K().axpy(1.0, gy.data().data() + o * total * inner + offsets[pi] * inner,
                               gx.data().data() + o * w, w);
                    }
                  }
                });
}

Var slice(Var a, std::size_t axis, std::size_t start, std::size_t length) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  require_axis("slice", s, axis);
  if (start + length > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis " + std::to_string(axis) + " of shape " + shape_to_string(s));
  }
  Shape so = s;
  so[axis] = length;
  Tensor out(so);
  const Span3 sp = around_axis(s, axis);
  const std::size_t w = length * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(a.value().data().data() + o * sp.n * sp.inner + start * sp.inner, w, out.data().data() + o * w);
  }
  return g.emit(std::move(out), {a}, [ai = a.id, sp, start, w](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      K().axpy(1.0, gy.data().data() + o * w, gx.data().data() + o * sp.n * sp.inner + start * sp.inner, w);
    }
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Var tanh(Var a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var relu(Var a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double, double y) { return 0.5 / y; });
}

Var softmax(Var a, std::size_t axis) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  require_axis("softmax", s, axis);
  if (s[axis] == 0) throw ShapeError("softmax: empty axis in shape " + shape_to_string(s));
  const Span3 sp = around_axis(s, axis);
  const Tensor& x = a.value();
  Tensor y(s);
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t in = 0; in < sp.inner; ++in) {
      const std::size_t base = o * sp.n * sp.inner + in;
      double mx = x[base];
      for (std::size_t i = 1; i < sp.n; ++i) mx = std::max(mx, x[base + i * sp.inner]);
      double z = 0.0;
      for (std::size_t i = 0; i < sp.n; ++i) {
        const double e = std::exp(x[base + i * sp.inner] - mx);
        y[base + i * sp.inner] = e;
        z += e;
      }
      for (std::size_t i = 0; i < sp.n; ++i) y[base + i * sp.inner] /= z;
    }
  }
  return g.emit(std::move(y), {a}, [ai = a.id, sp](Graph& g, NodeId self) {
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t in = 0; in < sp.inner; ++in) {
        const std::size_t base = o * sp.n * sp.inner + in;
        double dotp = 0.0;
        for (std::size_t i = 0; i < sp.n; ++i) dotp += gy[base + i * sp.inner] * y[base + i * sp.inner];
        for (std::size_t i = 0; i < sp.n; ++i) {
          const std::size_t idx = base + i * sp.inner;
          gx[idx] += y[idx] * (gy[idx] - dotp);
        }
      }
    }
  });
}

Var layer_norm(Var a, double eps) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  if (s.empty() || s.back() == 0) throw ShapeError("layer_norm: empty axis in shape " + shape_to_string(s));
  const std::size_t n = s.back();
  const std::size_t rows = a.value().numel() / n;
  const Tensor& x = a.value();
  Tensor y(s);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data().data() + r * n;
    double mu = 0.0;
    for (std::size_t i = 0; i < n; ++i) mu += xr[i];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = (xr[i] - mu) * inv_std[r];
  }
  return g.emit(std::move(y), {a}, [ai = a.id, n, rows, inv_std = std::move(inv_std)](Graph& g, NodeId self) {
    const Tensor& y = g.value(self);
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t r = 0; r < rows; ++r) {
      double mg = 0.0, mgy = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        mg += gy[r * n + i];
        mgy += gy[r * n + i] * y[r * n + i];
      }
      mg *= inv_n;
      mgy *= inv_n;
      for (std::size_t i = 0; i < n; ++i) {
        gx[r * n + i] += inv_std[r] * (gy[r * n + i] - mg - y[r * n + i] * mgy);
      }
    }
  });
}

Var sum(Var a) {
  Graph& g = *a.graph;
  double acc = 0.0;
  for (double v : a.value().data()) acc += v;
  return g.emit(Tensor::scalar(acc), {a}, [ai = a.id](Graph& g, NodeId self) {
    const double gy = g.grad_ref(self)[0];
    for (double& v : g.grad_buffer(ai).storage()) v += gy;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var sum(Var a, std::size_t axis) {
  Graph& g = *a.graph;
  const Shape& s = a.shape();
  require_axis("sum", s, axis);
  const Span3 sp = around_axis(s, axis);
  Shape so;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i != axis) so.push_back(s[i]);
  }
  Tensor out(so);
  const Tensor& x = a.value();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.n; ++i) {
      K().axpy(1.0, x.data().data() + (o * sp.n + i) * sp.inner, out.data().data() + o * sp.inner, sp.inner);
    }
  }
  return g.emit(std::move(out), {a}, [ai = a.id, sp](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(ai);
    for (std::size_t o = 0; o < sp.outer; ++o) {
      for (std::size_t i = 0; i < sp.n; ++i) {
        K().axpy(1.0, gy.data().data() + o * sp.inner, gx.data().data() + (o * sp.n + i) * sp.inner, sp.inner);
      }
    }
  });
}

Var mean(Var a, std::size_t axis) {
  require_axis("mean", a.shape(), axis);
  const std::size_t n = a.shape()[axis];
  if (n == 0) throw ShapeError("mean: empty axis in shape " + shape_to_string(a.shape()));
  return scale(sum(a, axis), 1.0 / static_cast<double>(n));
}

Var conv1d(Var x, Var w) {
  Graph& g = graph_of(x, w, "conv1d");
  const Shape& sx = x.shape();
  const Shape& sw = w.shape();
  if (sx.size() < 2 || sw.size() != 3 || sw[1] != sx.back() || sw[0] == 0) throw shape_error("conv1d", sx, sw);
  const std::size_t k = sw[0], cin = sw[1], cout = sw[2];
  const std::size_t T = sx[sx.size() - 2];
  const std::size_t batch = (T != 0 && cin != 0) ? x.value().numel() / (T * cin) : 0;
  const std::size_t pad = (k - 1) / 2;
  Shape so = sx;
  so.back() = cout;
  Tensor out(so);
  const double* xd = x.value().data().data();
  const double* wd = w.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t j = 0; j < k; ++j) {
      // out[t] += x[t + j - pad] * W_j for t with the source row in range.
      const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pad);
      const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
      const std::size_t t1 = shift > 0 ? (T > static_cast<std::size_t>(shift) ? T - shift : 0) : T;
      if (t1 <= t0) continue;
      K().gemm_nn(xd + (b * T + t0 + shift) * cin, wd + j * cin * cout, out.data().data() + (b * T + t0) * cout,
                  t1 - t0, cin, cout);
    }
  }
  return g.emit(std::move(out), {x, w}, [xi = x.id, wi = w.id, batch, T, k, cin, cout, pad](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    const bool need_x = g.requires_grad(Var{&g, xi});
    const bool need_w = g.requires_grad(Var{&g, wi});
    const double* xd = g.value(xi).data().data();
    const double* wd = g.value(wi).data().data();
    double* gx = need_x ? g.grad_buffer(xi).data().data() : nullptr;
    double* gw = need_w ? g.grad_buffer(wi).data().data() : nullptr;
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t j = 0; j < k; ++j) {
        const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(j) - static_cast<std::ptrdiff_t>(pad);
        const std::size_t t0 = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
        const std::size_t t1 = shift > 0 ? (T > static_cast<std::size_t>(shift) ? T - shift : 0) : T;
        if (t1 <= t0) continue;
        const double* gyb = gy.data().data() + (b * T + t0) * cout;
        if (need_x) K().gemm_nt(gyb, wd + j * cin * cout, gx + (b * T + t0 + shift) * cin, t1 - t0, cout, cin);
        if (need_w) K().gemm_tn(xd + (b * T + t0 + shift) * cin, gyb, gw + j * cin * cout, t1 - t0, cin, cout);
      }
    }
  });
}

Var split_heads(Var x, std::size_t heads) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if ((s.size() != 2 && s.size() != 3) || heads == 0 || s.back() % heads != 0) {
    throw ShapeError("split_heads: width of " + shape_to_string(s) + " not divisible into " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t B = s.size() == 3 ? s[0] : 1;
  const std::size_t T = s[s.size() - 2];
  const std::size_t d = s.back() / heads;
  Tensor out(Shape{B * heads, T, d});
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(xv.data().data() + (b * T + t) * heads * d + h * d, d,
                    out.data().data() + ((b * heads + h) * T + t) * d);
  return g.emit(std::move(out), {x}, [xi = x.id, B, T, d, heads](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < T; ++t)
          K().axpy(1.0, gy.data().data() + ((b * heads + h) * T + t) * d,
                   gx.data().data() + (b * T + t) * heads * d + h * d, d);
  });
}

Var merge_heads(Var x, std::size_t heads) {
  Graph& g = *x.graph;
  const Shape& s = x.shape();
  if (s.size() != 3 || heads == 0 || s[0] % heads != 0) {
    throw ShapeError("merge_heads: leading axis of " + shape_to_string(s) + " not divisible by " +
                     std::to_string(heads));
  }
  const std::size_t B = s[0] / heads, T = s[1], d = s[2];
  Tensor out(Shape{B, T, heads * d});
  const Tensor& xv = x.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t t = 0; t < T; ++t)
        std::copy_n(xv.data().data() + ((b * heads + h) * T + t) * d, d,
                    out.data().data() + (b * T + t) * heads * d + h * d);
  return g.emit(std::move(out), {x}, [xi = x.id, B, T, d, heads](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    Tensor& gx = g.grad_buffer(xi);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t t = 0; t < T; ++t)
          K().axpy(1.0, gy.data().data() + (b * T + t) * heads * d + h * d,
                   gx.data().data() + ((b * heads + h) * T + t) * d, d);
  });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x > lo && x < hi) ? 1.0 : 0.0; });
}

Var minimum(Var a, Var b) {
  Graph& g = graph_of(a, b, "minimum");
  if (a.shape() != b.shape()) throw shape_error("minimum", a.shape(), b.shape());
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = std::min(x[i], y[i]);
  return g.emit(std::move(out), {a, b}, [ai = a.id, bi = b.id](Graph& g, NodeId self) {
    const Tensor& gy = g.grad_ref(self);
    const Tensor& x = g.value(ai);
    const Tensor& y = g.value(bi);
    const bool need_a = g.requires_grad(Var{&g, ai});
    const bool need_b = g.requires_grad(Var{&g, bi});
    for (std::size_t i = 0; i < x.numel(); ++i) {
      // Ties route the gradient to the left operand.
      if (x[i] <= y[i]) {
        if (need_a) g.grad_buffer(ai)[i] += gy[i];
      } else if (need_b) {
        g.grad_buffer(bi)[i] += gy[i];
      }
    }
  });
}

}  // namespace detach::ad
