#include "asymloc/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "asymloc/kernels.hpp"

namespace asymloc {

std::string dims_to_string(const std::vector<int>& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

namespace ops {

namespace {

template <typename T>
void require_rank(const Tensor<T>& t, int rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     dims_to_string(t.dims()));
}

template <typename T>
void require_same(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
  if (!a.same_shape(b))
    throw ShapeError(std::string(what) + ": shape mismatch " + dims_to_string(a.dims()) + " vs " +
                     dims_to_string(b.dims()));
}

// col[(ci*k + ky)*k + kx][oy*wo + ox]
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* col) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * p;
        const T* plane = x + static_cast<std::ptrdiff_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::ptrdiff_t>(iy) * w;
          if (stride == 1) {
            const int ox_lo = std::max(0, pad - kx);
            const int ox_hi = std::min(wo, w + pad - kx);
            for (int ox = 0; ox < ox_lo; ++ox) dst[ox] = T(0);
            if (ox_hi > ox_lo) std::copy(src + ox_lo - pad + kx, src + ox_hi - pad + kx, dst + ox_lo);
            for (int ox = std::max(ox_hi, ox_lo); ox < wo; ++ox) dst[ox] = T(0);
          } else {
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride - pad + kx;
              dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
            }
          }
        }
      }
}

template <typename T>
void col2im_add(const T* col, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const int p = ho * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + static_cast<std::ptrdiff_t>((ci * k + ky) * k + kx) * p;
        T* plane = x + static_cast<std::ptrdiff_t>(ci) * h * w;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = plane + static_cast<std::ptrdiff_t>(iy) * w;
          const T* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename T>
std::vector<T> transposed(const T* a, int rows, int cols) {
  std::vector<T> t(static_cast<std::size_t>(rows) * cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) t[static_cast<std::size_t>(c) * rows + r] = a[static_cast<std::size_t>(r) * cols + c];
  return t;
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var input, Var kernel, Var bias, int stride, int padding) {
  const Tensor<T>& x = g.value(input);
  const Tensor<T>& w = g.value(kernel);
  const Tensor<T>& b = g.value(bias);
  require_rank(x, 3, "conv2d input");
  require_rank(w, 4, "conv2d kernel");
  const int cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const int cout = w.dim(0), k = w.dim(2);
  if (w.dim(1) != cin)
    throw ShapeError("conv2d: kernel expects " + std::to_string(w.dim(1)) + " input channels, got " +
                     std::to_string(cin));
  if (w.dim(3) != k || k % 2 == 0) throw ShapeError("conv2d: kernel must be square with odd size");
  if (b.size() != static_cast<std::size_t>(cout)) throw ShapeError("conv2d: bias length mismatch");
  if (stride < 1 || padding < 0) throw ShapeError("conv2d: stride >= 1 and padding >= 0 required");
  const int ho = (h + 2 * padding - k) / stride + 1;
  const int wo = (wd + 2 * padding - k) / stride + 1;
  if (h + 2 * padding < k || wd + 2 * padding < k || ho < 1 || wo < 1)
    throw ShapeError("conv2d: output would be empty");
  const int kk = cin * k * k;
  const int p = ho * wo;
  const bool direct = (k == 1 && stride == 1 && padding == 0);

  std::vector<T> col;
  const T* colp = x.data().data();
  if (!direct) {
    col.resize(static_cast<std::size_t>(kk) * p);
    im2col(x.data().data(), cin, h, wd, k, stride, padding, ho, wo, col.data());
    colp = col.data();
  }
  Tensor<T> out({cout, ho, wo});
  kernels::gemm_nn(cout, p, kk, w.data().data(), kk, colp, p, out.data().data(), p, false);
  for (int co = 0; co < cout; ++co) {
    T* o = out.data().data() + static_cast<std::ptrdiff_t>(co) * p;
    const T bv = b[static_cast<std::size_t>(co)];
    for (int i = 0; i < p; ++i) o[i] += bv;
  }

  auto bw = [=, col = std::move(col)](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    const T* gop = go.data().data();
    const T* cols = direct ? gr.value(input).data().data() : col.data();
    if (gr.needs_grad(kernel)) {
      Tensor<T>& gw = gr.grad_slot(kernel.id);
      kernels::gemm_nt(cout, kk, p, gop, p, cols, p, gw.data().data(), kk, true);
    }
    if (gr.needs_grad(bias)) {
      Tensor<T>& gb = gr.grad_slot(bias.id);
      for (int co = 0; co < cout; ++co) {
        T s = 0;
        const T* row = gop + static_cast<std::ptrdiff_t>(co) * p;
        for (int i = 0; i < p; ++i) s += row[i];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
    if (gr.needs_grad(input)) {
      const std::vector<T> wt = transposed(gr.value(kernel).data().data(), cout, kk);
      Tensor<T>& gx = gr.grad_slot(input.id);
      if (direct) {
        kernels::gemm_nn(kk, p, cout, wt.data(), cout, gop, p, gx.data().data(), p, true);
      } else {
        std::vector<T> dcol(static_cast<std::size_t>(kk) * p);
        kernels::gemm_nn(kk, p, cout, wt.data(), cout, gop, p, dcol.data(), p, false);
        col2im_add(dcol.data(), cin, h, wd, k, stride, padding, ho, wo, gx.data().data());
      }
    }
  };
  return g.record(std::move(out), {input.id, kernel.id, bias.id}, std::move(bw));
}

template <typename T>
Var activation(Graph<T>& g, Activation kind, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> y(xv.dims());
  if (kind == Activation::relu) {
    for (std::size_t i = 0; i < xv.size(); ++i) y[i] = xv[i] > T(0) ? xv[i] : T(0);
    return g.record(std::move(y), {x.id}, [x](Graph<T>& gr, int self) {
      const Tensor<T>& go = gr.grad_slot(self);
      const Tensor<T>& xin = gr.value(x);
      Tensor<T>& gx = gr.grad_slot(x.id);
      for (std::size_t i = 0; i < go.size(); ++i)
        if (xin[i] > T(0)) gx[i] += go[i];
    });
  }
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = T(1) / (T(1) + std::exp(-xv[i]));
  return g.record(std::move(y), {x.id}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    const Tensor<T>& yv = gr.value(Var{self});
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * yv[i] * (T(1) - yv[i]);
  });
}

template <typename T>
Var l2_normalize_rows(Graph<T>& g, Var x, T eps) {
  const Tensor<T>& xv = g.value(x);
  require_rank(xv, 2, "l2_normalize_rows");
  const int n = xv.dim(0), d = xv.dim(1);
  Tensor<T> y(xv.dims());
  std::vector<T> norms(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    T s = 0;
    for (int j = 0; j < d; ++j) s += xv.at(i, j) * xv.at(i, j);
    const T nrm = std::sqrt(s);
    norms[static_cast<std::size_t>(i)] = nrm;
    const T den = std::max(nrm, eps);
    for (int j = 0; j < d; ++j) y.at(i, j) = xv.at(i, j) / den;
  }
  return g.record(std::move(y), {x.id}, [x, n, d, eps, norms](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    const Tensor<T>& yv = gr.value(Var{self});
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (int i = 0; i < n; ++i) {
      const T nrm = norms[static_cast<std::size_t>(i)];
      if (nrm >= eps) {
        T dot = 0;
        for (int j = 0; j < d; ++j) dot += yv.at(i, j) * go.at(i, j);
        for (int j = 0; j < d; ++j) gx.at(i, j) += (go.at(i, j) - yv.at(i, j) * dot) / nrm;
      } else {
        for (int j = 0; j < d; ++j) gx.at(i, j) += go.at(i, j) / eps;
      }
    }
  });
}

template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_rank(av, 2, "matmul lhs");
  require_rank(bv, 2, "matmul rhs");
  const int n = av.dim(0), k = av.dim(1), m = bv.dim(1);
  if (bv.dim(0) != k)
    throw ShapeError("matmul: inner dims " + dims_to_string(av.dims()) + " x " + dims_to_string(bv.dims()));
  Tensor<T> c({n, m});
  kernels::gemm_nn(n, m, k, av.data().data(), k, bv.data().data(), m, c.data().data(), m, false);
  return g.record(std::move(c), {a.id, b.id}, [a, b, n, k, m](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    if (gr.needs_grad(a)) {
      Tensor<T>& ga = gr.grad_slot(a.id);
      kernels::gemm_nt(n, k, m, go.data().data(), m, gr.value(b).data().data(), m, ga.data().data(), k, true);
    }
    if (gr.needs_grad(b)) {
      const std::vector<T> at = transposed(gr.value(a).data().data(), n, k);
      Tensor<T>& gb = gr.grad_slot(b.id);
      kernels::gemm_nn(k, m, n, at.data(), n, go.data().data(), m, gb.data().data(), m, true);
    }
  });
}

template <typename T>
Var transpose(Graph<T>& g, Var a) {
  const Tensor<T>& av = g.value(a);
  require_rank(av, 2, "transpose");
  const int r = av.dim(0), c = av.dim(1);
  Tensor<T> t({c, r}, transposed(av.data().data(), r, c));
  return g.record(std::move(t), {a.id}, [a, r, c](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& ga = gr.grad_slot(a.id);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) ga.at(i, j) += go.at(j, i);
  });
}

namespace {

// Softmax along rows (by_rows) or columns of a 2-D tensor.
template <typename T>
Var softmax_axis(Graph<T>& g, Var x, bool by_rows) {
  const Tensor<T>& xv = g.value(x);
  require_rank(xv, 2, "softmax");
  const int n = xv.dim(0), m = xv.dim(1);
  Tensor<T> y(xv.dims());
  const int outer = by_rows ? n : m;
  const int inner = by_rows ? m : n;
  auto idx = [=](int o, int i) -> std::size_t {
    return by_rows ? static_cast<std::size_t>(o) * m + i : static_cast<std::size_t>(i) * m + o;
  };
  for (int o = 0; o < outer; ++o) {
    T mx = xv[idx(o, 0)];
    for (int i = 1; i < inner; ++i) mx = std::max(mx, xv[idx(o, i)]);
    T s = 0;
    for (int i = 0; i < inner; ++i) {
      const T e = std::exp(xv[idx(o, i)] - mx);
      y[idx(o, i)] = e;
      s += e;
    }
    for (int i = 0; i < inner; ++i) y[idx(o, i)] /= s;
  }
  return g.record(std::move(y), {x.id}, [x, outer, inner, idx](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    const Tensor<T>& yv = gr.value(Var{self});
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (int o = 0; o < outer; ++o) {
      T dot = 0;
      for (int i = 0; i < inner; ++i) dot += go[idx(o, i)] * yv[idx(o, i)];
      for (int i = 0; i < inner; ++i) gx[idx(o, i)] += yv[idx(o, i)] * (go[idx(o, i)] - dot);
    }
  });
}

}  // namespace

template <typename T>
Var softmax_rows(Graph<T>& g, Var x) {
  return softmax_axis(g, x, true);
}
template <typename T>
Var softmax_cols(Graph<T>& g, Var x) {
  return softmax_axis(g, x, false);
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> y = g.value(x);
  for (auto& v : y.data()) v *= factor;
  return g.record(std::move(y), {x.id}, [x, factor](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] * factor;
  });
}

template <typename T>
Var divide(Graph<T>& g, Var x, T divisor) {
  Tensor<T> y = g.value(x);
  for (auto& v : y.data()) v /= divisor;
  return g.record(std::move(y), {x.id}, [x, divisor](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i] / divisor;
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  require_same(g.value(a), g.value(b), "add");
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += bv[i];
  return g.record(std::move(y), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    for (Var v : {a, b}) {
      if (!gr.needs_grad(v)) continue;
      Tensor<T>& gv = gr.grad_slot(v.id);
      for (std::size_t i = 0; i < go.size(); ++i) gv[i] += go[i];
    }
  });
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
  require_same(g.value(a), g.value(b), "mul");
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= bv[i];
  return g.record(std::move(y), {a.id, b.id}, [a, b](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    if (gr.needs_grad(a)) {
      const Tensor<T>& bv2 = gr.value(b);
      Tensor<T>& ga = gr.grad_slot(a.id);
      for (std::size_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv2[i];
    }
    if (gr.needs_grad(b)) {
      const Tensor<T>& av2 = gr.value(a);
      Tensor<T>& gb = gr.grad_slot(b.id);
      for (std::size_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av2[i];
    }
  });
}

namespace {

template <typename T>
Var scale_axis(Graph<T>& g, Var x, Var v, bool rows) {
  const Tensor<T>& xv = g.value(x);
  require_rank(xv, 2, rows ? "scale_rows" : "scale_cols");
  const int n = xv.dim(0), m = xv.dim(1);
  const Tensor<T>& vv = g.value(v);
  if (vv.size() != static_cast<std::size_t>(rows ? n : m))
    throw ShapeError(std::string(rows ? "scale_rows" : "scale_cols") + ": weight length " +
                     std::to_string(vv.size()) + " does not match " + dims_to_string(xv.dims()));
  Tensor<T> y(xv.dims());
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) y.at(i, j) = xv.at(i, j) * vv[static_cast<std::size_t>(rows ? i : j)];
  return g.record(std::move(y), {x.id, v.id}, [x, v, n, m, rows](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    if (gr.needs_grad(x)) {
      const Tensor<T>& w = gr.value(v);
      Tensor<T>& gx = gr.grad_slot(x.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gx.at(i, j) += go.at(i, j) * w[static_cast<std::size_t>(rows ? i : j)];
    }
    if (gr.needs_grad(v)) {
      const Tensor<T>& xin = gr.value(x);
      Tensor<T>& gv = gr.grad_slot(v.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < m; ++j) gv[static_cast<std::size_t>(rows ? i : j)] += go.at(i, j) * xin.at(i, j);
    }
  });
}

}  // namespace

template <typename T>
Var scale_rows(Graph<T>& g, Var x, Var v) {
  return scale_axis(g, x, v, true);
}
template <typename T>
Var scale_cols(Graph<T>& g, Var x, Var v) {
  return scale_axis(g, x, v, false);
}

template <typename T>
Var sum(Graph<T>& g, Var x) {
  T s = 0;
  for (T v : g.value(x).data()) s += v;
  return g.record(Tensor<T>::scalar(s), {x.id}, [x](Graph<T>& gr, int self) {
    const T go = gr.grad_slot(self)[0];
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (auto& v : gx.data()) v += go;
  });
}

template <typename T>
Var mean(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  T s = 0;
  for (T v : xv.data()) s += v;
  const T n = static_cast<T>(xv.size());
  return g.record(Tensor<T>::scalar(s / n), {x.id}, [x, n](Graph<T>& gr, int self) {
    const T go = gr.grad_slot(self)[0] / n;
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (auto& v : gx.data()) v += go;
  });
}

template <typename T>
Var reshape(Graph<T>& g, Var x, std::vector<int> dims) {
  Tensor<T> y = g.value(x).reshaped(std::move(dims));
  return g.record(std::move(y), {x.id}, [x](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (std::size_t i = 0; i < go.size(); ++i) gx[i] += go[i];
  });
}

template <typename T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.value(x));
}

template <typename T>
Var gather_cells(Graph<T>& g, Var map, const std::vector<Cell>& cells) {
  const Tensor<T>& mv = g.value(map);
  require_rank(mv, 3, "gather_cells");
  const int c = mv.dim(0), h = mv.dim(1), w = mv.dim(2);
  if (cells.empty()) throw ShapeError("gather_cells: no cells");
  for (const Cell& cell : cells)
    if (cell.y < 0 || cell.y >= h || cell.x < 0 || cell.x >= w)
      throw ShapeError("gather_cells: cell outside map");
  const int n = static_cast<int>(cells.size());
  Tensor<T> out({n, c});
  for (int i = 0; i < n; ++i)
    for (int ch = 0; ch < c; ++ch) out.at(i, ch) = mv.at(ch, cells[static_cast<std::size_t>(i)].y, cells[static_cast<std::size_t>(i)].x);
  return g.record(std::move(out), {map.id}, [map, cells, n, c](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& gm = gr.grad_slot(map.id);
    for (int i = 0; i < n; ++i)
      for (int ch = 0; ch < c; ++ch)
        gm.at(ch, cells[static_cast<std::size_t>(i)].y, cells[static_cast<std::size_t>(i)].x) += go.at(i, ch);
  });
}

template <typename T>
Var chw_to_rows(Graph<T>& g, Var map) {
  const Tensor<T>& mv = g.value(map);
  require_rank(mv, 3, "chw_to_rows");
  const int c = mv.dim(0), p = mv.dim(1) * mv.dim(2);
  Tensor<T> out({p, c}, transposed(mv.data().data(), c, p));
  return g.record(std::move(out), {map.id}, [map, c, p](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    Tensor<T>& gm = gr.grad_slot(map.id);
    for (int ch = 0; ch < c; ++ch)
      for (int i = 0; i < p; ++i) gm[static_cast<std::size_t>(ch) * p + i] += go[static_cast<std::size_t>(i) * c + ch];
  });
}

template <typename T>
Var rowwise_dot(Graph<T>& g, Var a, Var b) {
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  require_rank(av, 2, "rowwise_dot");
  require_same(av, bv, "rowwise_dot");
  const int n = av.dim(0), d = av.dim(1);
  Tensor<T> out({n, 1});
  for (int i = 0; i < n; ++i) {
    T s = 0;
    for (int j = 0; j < d; ++j) s += av.at(i, j) * bv.at(i, j);
    out[static_cast<std::size_t>(i)] = s;
  }
  return g.record(std::move(out), {a.id, b.id}, [a, b, n, d](Graph<T>& gr, int self) {
    const Tensor<T>& go = gr.grad_slot(self);
    if (gr.needs_grad(a)) {
      const Tensor<T>& bv2 = gr.value(b);
      Tensor<T>& ga = gr.grad_slot(a.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) ga.at(i, j) += go[static_cast<std::size_t>(i)] * bv2.at(i, j);
    }
    if (gr.needs_grad(b)) {
      const Tensor<T>& av2 = gr.value(a);
      Tensor<T>& gb = gr.grad_slot(b.id);
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) gb.at(i, j) += go[static_cast<std::size_t>(i)] * av2.at(i, j);
    }
  });
}

template <typename T>
Var neg_log_sum_at(Graph<T>& g, Var x, const std::vector<std::pair<int, int>>& entries, T eps) {
  const Tensor<T>& xv = g.value(x);
  require_rank(xv, 2, "neg_log_sum_at");
  T s = 0;
  for (auto [i, j] : entries) {
    if (i < 0 || i >= xv.dim(0) || j < 0 || j >= xv.dim(1)) throw ShapeError("neg_log_sum_at: index out of range");
    s -= std::log(xv.at(i, j) + eps);
  }
  return g.record(Tensor<T>::scalar(s), {x.id}, [x, entries, eps](Graph<T>& gr, int self) {
    const T go = gr.grad_slot(self)[0];
    const Tensor<T>& xin = gr.value(x);
    Tensor<T>& gx = gr.grad_slot(x.id);
    for (auto [i, j] : entries) gx.at(i, j) -= go / (xin.at(i, j) + eps);
  });
}

template <typename T>
Var kl_divergence(Graph<T>& g, Var p, Var q, T floor) {
  const Tensor<T>& pv = g.value(p);
  const Tensor<T>& qv = g.value(q);
  require_same(pv, qv, "kl_divergence");
  const T log_floor = std::log(floor);
  T s = 0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (pv[i] <= T(0)) continue;
    const T lp = pv[i] > floor ? std::log(pv[i]) : log_floor;
    const T lq = qv[i] > floor ? std::log(qv[i]) : log_floor;
    s += pv[i] * (lp - lq);
  }
  return g.record(Tensor<T>::scalar(s), {p.id, q.id}, [p, q, floor](Graph<T>& gr, int self) {
    if (!gr.needs_grad(q)) return;
    const T go = gr.grad_slot(self)[0];
    const Tensor<T>& pin = gr.value(p);
    const Tensor<T>& qin = gr.value(q);
    Tensor<T>& gq = gr.grad_slot(q.id);
    for (std::size_t i = 0; i < pin.size(); ++i)
      if (pin[i] > T(0) && qin[i] > floor) gq[i] -= go * pin[i] / qin[i];
  });
}

template <typename T>
Var soft_bce_mean(Graph<T>& g, Var p, const Tensor<T>& target, T floor) {
  const Tensor<T>& pv = g.value(p);
  if (pv.size() != target.size()) throw ShapeError("soft_bce_mean: prediction/target size mismatch");
  const T log_floor = std::log(floor);
  auto flog = [&](T v) { return v > floor ? std::log(v) : log_floor; };
  T s = 0;
  for (std::size_t i = 0; i < pv.size(); ++i)
    s += -target[i] * flog(pv[i]) - (T(1) - target[i]) * flog(T(1) - pv[i]);
  const T n = static_cast<T>(pv.size());
  return g.record(Tensor<T>::scalar(s / n), {p.id}, [p, target, floor, n](Graph<T>& gr, int self) {
    const T go = gr.grad_slot(self)[0] / n;
    const Tensor<T>& pin = gr.value(p);
    Tensor<T>& gp = gr.grad_slot(p.id);
    for (std::size_t i = 0; i < pin.size(); ++i) {
      T d = 0;
      if (pin[i] > floor) d -= target[i] / pin[i];
      if (T(1) - pin[i] > floor) d += (T(1) - target[i]) / (T(1) - pin[i]);
      gp[i] += go * d;
    }
  });
}

#define ASYMLOC_INSTANTIATE_OPS(T)                                                              \
  template Var conv2d<T>(Graph<T>&, Var, Var, Var, int, int);                                   \
  template Var activation<T>(Graph<T>&, Activation, Var);                                       \
  template Var l2_normalize_rows<T>(Graph<T>&, Var, T);                                         \
  template Var matmul<T>(Graph<T>&, Var, Var);                                                  \
  template Var transpose<T>(Graph<T>&, Var);                                                    \
  template Var softmax_rows<T>(Graph<T>&, Var);                                                 \
  template Var softmax_cols<T>(Graph<T>&, Var);                                                 \
  template Var scale<T>(Graph<T>&, Var, T);                                                     \
  template Var divide<T>(Graph<T>&, Var, T);                                                    \
  template Var add<T>(Graph<T>&, Var, Var);                                                     \
  template Var mul<T>(Graph<T>&, Var, Var);                                                     \
  template Var scale_rows<T>(Graph<T>&, Var, Var);                                              \
  template Var scale_cols<T>(Graph<T>&, Var, Var);                                              \
  template Var sum<T>(Graph<T>&, Var);                                                          \
  template Var mean<T>(Graph<T>&, Var);                                                         \
  template Var reshape<T>(Graph<T>&, Var, std::vector<int>);                                    \
  template Var detach<T>(Graph<T>&, Var);                                                       \
  template Var gather_cells<T>(Graph<T>&, Var, const std::vector<Cell>&);                       \
  template Var chw_to_rows<T>(Graph<T>&, Var);                                                  \
  template Var rowwise_dot<T>(Graph<T>&, Var, Var);                                             \
  template Var neg_log_sum_at<T>(Graph<T>&, Var, const std::vector<std::pair<int, int>>&, T);   \
  template Var kl_divergence<T>(Graph<T>&, Var, Var, T);                                        \
  template Var soft_bce_mean<T>(Graph<T>&, Var, const Tensor<T>&, T);

ASYMLOC_INSTANTIATE_OPS(float)
ASYMLOC_INSTANTIATE_OPS(double)

}  // namespace ops
}  // namespace asymloc
