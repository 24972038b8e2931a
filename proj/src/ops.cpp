#include "mtta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "mtta/kernels.hpp"

namespace mtta::ad {

namespace {

Graph& graph_of(Var a) {
  if (a.graph == nullptr) throw ShapeError("op on detached Var");
  return *a.graph;
}

Graph& graph_of(Var a, Var b) {
  if (a.graph == nullptr || a.graph != b.graph) throw ShapeError("operands live on different graphs");
  return *a.graph;
}

[[noreturn]] void shape_fail(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

Shape broadcast_shape(const char* op, const Shape& a, const Shape& b) {
  if (a == b) return a;
  if (is_suffix(b, a)) return a;
  if (is_suffix(a, b)) return b;
  shape_fail(op, a, b);
}

// Elementwise binary op with leading-dimension expansion. `f` gives the value,
// `da`/`db` the partial derivatives at (x, y).
template <class F, class DA, class DB>
Var binary(const char* kind, Var a, Var b, F f, DA da, DB db) {
  Graph& g = graph_of(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  Shape out_shape = broadcast_shape(kind, av.shape(), bv.shape());
  const std::size_t n = shape_size(out_shape);
  const std::size_t na = av.size();
  const std::size_t nb = bv.size();
  std::vector<double> out(n);
  // One operand always has the full output shape; the other repeats in blocks.
  const double* pa = av.data().data();
  const double* pb = bv.data().data();
  for (std::size_t o = 0; o < n; o += std::min(na, nb)) {
    const std::size_t len = std::min(na, nb);
    const double* xa = na == n ? pa + o : pa;
    const double* xb = nb == n ? pb + o : pb;
    for (std::size_t j = 0; j < len; ++j) out[o + j] = f(xa[j], xb[j]);
  }
  const std::size_t ia = a.id, ib = b.id;
  return g.record(kind, {ia, ib}, Array(std::move(out_shape), std::move(out)),
                  [ia, ib, na, nb, da, db](Graph& gr, std::span<const double> gy) {
                    const Array& x = gr.value(ia);
                    const Array& y = gr.value(ib);
                    auto ga = gr.grad_acc(ia);
                    auto gb = gr.grad_acc(ib);
                    const std::size_t n = gy.size(), len = std::min(na, nb);
                    for (std::size_t o = 0; o < n; o += len) {
                      const std::size_t oa = na == n ? o : 0, ob = nb == n ? o : 0;
                      if (!ga.empty()) {
                        for (std::size_t j = 0; j < len; ++j) ga[oa + j] += gy[o + j] * da(x[oa + j], y[ob + j]);
                      }
                      if (!gb.empty()) {
                        for (std::size_t j = 0; j < len; ++j) gb[ob + j] += gy[o + j] * db(x[oa + j], y[ob + j]);
                      }
                    }
                  });
}

template <class F, class D>
Var unary(const char* kind, Var x, F f, D d) {
  Graph& g = graph_of(x);
  const Array& xv = x.value();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  const std::size_t ix = x.id;
  return g.record(kind, {ix}, Array(xv.shape(), std::move(out)), [ix, d](Graph& gr, std::span<const double> gy) {
    const Array& v = gr.value(ix);
    auto gx = gr.grad_acc(ix);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * d(v[i]);
  });
}

// outer/inner decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, dim = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.dim = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
                [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
                [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
                [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary("div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
                [](double x, double y) { return -x / (y * y); });
}

Var minimum(Var a, Var b) {
  return binary(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Var scale(Var x, double c) {
  return unary("scale", x, [c](double v) { return c * v; }, [c](double) { return c; });
}

Var add_scalar(Var x, double c) {
  return unary("add_scalar", x, [c](double v) { return v + c; }, [](double) { return 1.0; });
}

Var relu(Var x) {
  return unary("relu", x, [](double v) { return v > 0.0 ? v : 0.0; }, [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

Var abs(Var x) {
  return unary("abs", x, [](double v) { return std::fabs(v); },
               [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

Var square(Var x) {
  return unary("square", x, [](double v) { return v * v; }, [](double v) { return 2.0 * v; });
}

Var sqrt(Var x) {
  for (double v : x.value().data()) {
    if (!(v > 0.0)) throw ShapeError("sqrt: non-positive input");
  }
  return unary("sqrt", x, [](double v) { return std::sqrt(v); }, [](double v) { return 0.5 / std::sqrt(v); });
}

Var sigmoid(Var x) {
  auto s = [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); };
  return unary("sigmoid", x, s, [s](double v) {
    const double y = s(v);
    return y * (1.0 - y);
  });
}

Var softplus(Var x) {
  return unary(
      "softplus", x, [](double v) { return v > 30.0 ? v : std::log1p(std::exp(v)); },
      [](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

Var smooth_l1(Var x) {
  return unary(
      "smooth_l1", x, [](double v) { return std::fabs(v) < 1.0 ? 0.5 * v * v : std::fabs(v) - 0.5; },
      [](double v) { return std::fabs(v) < 1.0 ? v : (v > 0.0 ? 1.0 : -1.0); });
}

Var matmul(Var a, Var b) {
  Graph& g = graph_of(a, b);
  const Array& av = a.value();
  const Array& bv = b.value();
  if (av.ndim() != 2 || bv.ndim() != 2 || av.dim(1) != bv.dim(0)) shape_fail("matmul", av.shape(), bv.shape());
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  std::vector<double> out(m * n);
  kernels::matmul(av.data(), bv.data(), out, m, k, n);
  const std::size_t ia = a.id, ib = b.id;
  return g.record("matmul", {ia, ib}, Array(Shape{m, n}, std::move(out)),
                  [ia, ib, m, k, n](Graph& gr, std::span<const double> gy) {
                    auto ga = gr.grad_acc(ia);
                    auto gb = gr.grad_acc(ib);
                    if (!ga.empty()) kernels::matmul_a_bt_acc(gy, gr.value(ib).data(), ga, m, k, n);
                    if (!gb.empty()) kernels::matmul_at_b_acc(gr.value(ia).data(), gy, gb, m, k, n);
                  });
}

namespace {

Var conv1d_impl(Var x, Var w, const Var* bias, std::size_t stride, std::size_t pad) {
  Graph& g = graph_of(x, w);
  const Array& xv = x.value();
  const Array& wv = w.value();
  if (xv.ndim() != 2 && xv.ndim() != 3) throw ShapeError("conv1d: input must be [C,T] or [B,C,T], got " + shape_str(xv.shape()));
  if (wv.ndim() != 3) throw ShapeError("conv1d: kernel must be [O,C,K], got " + shape_str(wv.shape()));
  if (stride == 0) throw ShapeError("conv1d: stride must be positive");
  kernels::Conv1dDims d;
  const bool batched = xv.ndim() == 3;
  d.batch = batched ? xv.dim(0) : 1;
  d.in_channels = xv.dim(batched ? 1 : 0);
  d.length = xv.dim(batched ? 2 : 1);
  d.out_channels = wv.dim(0);
  d.kernel = wv.dim(2);
  d.stride = stride;
  d.pad = pad;
  if (wv.dim(1) != d.in_channels || d.length + 2 * pad < d.kernel) shape_fail("conv1d", xv.shape(), wv.shape());
  std::vector<std::size_t> inputs{x.id, w.id};
  std::span<const double> bias_data;
  if (bias != nullptr) {
    if (bias->graph != &g) throw ShapeError("conv1d: bias lives on a different graph");
    const Array& bv = bias->value();
    if (bv.ndim() != 1 || bv.dim(0) != d.out_channels) shape_fail("conv1d(bias)", wv.shape(), bv.shape());
    bias_data = bv.data();
    inputs.push_back(bias->id);
  }
  const std::size_t L = d.out_length();
  std::vector<double> out(d.batch * d.out_channels * L);
  kernels::conv1d_forward(xv.data(), wv.data(), bias_data, out, d);
  Shape out_shape = batched ? Shape{d.batch, d.out_channels, L} : Shape{d.out_channels, L};
  const std::size_t ix = x.id, iw = w.id;
  const std::size_t ib = bias != nullptr ? bias->id : static_cast<std::size_t>(-1);
  return g.record("conv1d", std::move(inputs), Array(std::move(out_shape), std::move(out)),
                  [ix, iw, ib, d](Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_acc(ix);
                    auto gw = gr.grad_acc(iw);
                    std::span<double> gb;
                    if (ib != static_cast<std::size_t>(-1)) gb = gr.grad_acc(ib);
                    kernels::conv1d_backward(gr.value(ix).data(), gr.value(iw).data(), gy, gx, gw, gb, d);
                  });
}

}  // namespace

Var conv1d(Var x, Var w, Var bias, std::size_t stride, std::size_t pad) {
  return conv1d_impl(x, w, &bias, stride, pad);
}

Var conv1d(Var x, Var w, std::size_t stride, std::size_t pad) { return conv1d_impl(x, w, nullptr, stride, pad); }

Var sum(Var x) {
  Graph& g = graph_of(x);
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id;
  return g.record("sum", {ix}, Array::scalar(s), [ix](Graph& gr, std::span<const double> gy) {
    auto gx = gr.grad_acc(ix);
    for (auto& v : gx) v += gy[0];
  });
}

Var mean(Var x) {
  Graph& g = graph_of(x);
  const std::size_t n = x.size();
  if (n == 0) throw ShapeError("mean: empty input");
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t ix = x.id;
  return g.record("mean", {ix}, Array::scalar(s / static_cast<double>(n)), [ix, n](Graph& gr, std::span<const double> gy) {
    auto gx = gr.grad_acc(ix);
    const double w = gy[0] / static_cast<double>(n);
    for (auto& v : gx) v += w;
  });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph& g = graph_of(parts.front());
  Shape out_shape = parts.front().shape();
  if (axis >= out_shape.size()) throw ShapeError("concat: axis out of range for " + shape_str(out_shape));
  out_shape[axis] = 0;
  std::vector<std::size_t> ids;
  std::vector<std::size_t> dims;
  for (const Var& p : parts) {
    graph_of(parts.front(), p);
    Shape s = p.shape();
    if (s.size() != out_shape.size()) shape_fail("concat", parts.front().shape(), s);
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != out_shape[i]) shape_fail("concat", parts.front().shape(), s);
    }
    out_shape[axis] += s[axis];
    ids.push_back(p.id);
    dims.push_back(s[axis]);
  }
  const AxisSplit sp = split_at(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Array& v = parts[k].value();
    const std::size_t chunk = dims[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(v.data().data() + o * chunk, chunk, out.data() + o * sp.dim * sp.inner + offset);
    }
    offset += chunk;
  }
  return g.record("concat", ids, Array(std::move(out_shape), std::move(out)),
                  [ids, dims, sp](Graph& gr, std::span<const double> gy) {
                    std::size_t off = 0;
                    for (std::size_t k = 0; k < ids.size(); ++k) {
                      const std::size_t chunk = dims[k] * sp.inner;
                      auto gk = gr.grad_acc(ids[k]);
                      if (!gk.empty()) {
                        for (std::size_t o = 0; o < sp.outer; ++o) {
                          const double* src = gy.data() + o * sp.dim * sp.inner + off;
                          double* dst = gk.data() + o * chunk;
                          for (std::size_t i = 0; i < chunk; ++i) dst[i] += src[i];
                        }
                      }
                      off += chunk;
                    }
                  });
}

Var slice(Var x, std::size_t axis, std::size_t begin, std::size_t end) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (axis >= s.size() || begin >= end || end > s[axis]) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) + ") on axis " +
                     std::to_string(axis) + " invalid for " + shape_str(s));
  }
  const AxisSplit sp = split_at(s, axis);
  Shape out_shape = s;
  out_shape[axis] = end - begin;
  const std::size_t chunk = (end - begin) * sp.inner;
  std::vector<double> out(sp.outer * chunk);
  const double* src = x.value().data().data();
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + o * sp.dim * sp.inner + begin * sp.inner, chunk, out.data() + o * chunk);
  }
  const std::size_t ix = x.id;
  return g.record("slice", {ix}, Array(std::move(out_shape), std::move(out)),
                  [ix, sp, begin, chunk](Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_acc(ix);
                    for (std::size_t o = 0; o < sp.outer; ++o) {
                      double* dst = gx.data() + o * sp.dim * sp.inner + begin * sp.inner;
                      const double* gs = gy.data() + o * chunk;
                      for (std::size_t i = 0; i < chunk; ++i) dst[i] += gs[i];
                    }
                  });
}

Var reshape(Var x, Shape shape) {
  Graph& g = graph_of(x);
  Array out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id;
  return g.record("reshape", {ix}, std::move(out), [ix](Graph& gr, std::span<const double> gy) {
    auto gx = gr.grad_acc(ix);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i];
  });
}

Var broadcast(Var x, std::size_t n) {
  Graph& g = graph_of(x);
  const Array& v = x.value();
  Shape out_shape = v.shape();
  out_shape.insert(out_shape.begin(), n);
  std::vector<double> out(n * v.size());
  for (std::size_t r = 0; r < n; ++r) std::copy(v.data().begin(), v.data().end(), out.begin() + r * v.size());
  const std::size_t ix = x.id;
  const std::size_t m = v.size();
  return g.record("broadcast", {ix}, Array(std::move(out_shape), std::move(out)),
                  [ix, m](Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_acc(ix);
                    for (std::size_t i = 0; i < gy.size(); ++i) gx[i % m] += gy[i];
                  });
}

Var transpose(Var x) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose: need at least 2 dims, got " + shape_str(s));
  const std::size_t rows = s[s.size() - 2], cols = s[s.size() - 1];
  const std::size_t batch = shape_size(s) / (rows * cols);
  Shape out_shape = s;
  std::swap(out_shape[s.size() - 2], out_shape[s.size() - 1]);
  std::vector<double> out(shape_size(s));
  const double* src = x.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) out[b * rows * cols + c * rows + r] = src[b * rows * cols + r * cols + c];
    }
  }
  const std::size_t ix = x.id;
  return g.record("transpose", {ix}, Array(std::move(out_shape), std::move(out)),
                  [ix, batch, rows, cols](Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_acc(ix);
                    for (std::size_t b = 0; b < batch; ++b) {
                      for (std::size_t r = 0; r < rows; ++r) {
                        for (std::size_t c = 0; c < cols; ++c) {
                          gx[b * rows * cols + r * cols + c] += gy[b * rows * cols + c * rows + r];
                        }
                      }
                    }
                  });
}

Var upsample_nearest(Var x, std::size_t factor) {
  Graph& g = graph_of(x);
  const Shape& s = x.shape();
  if (s.empty() || factor == 0) throw ShapeError("upsample_nearest: invalid input " + shape_str(s));
  const std::size_t len = s.back();
  const std::size_t rows = shape_size(s) / len;
  Shape out_shape = s;
  out_shape.back() = len * factor;
  std::vector<double> out(rows * len * factor);
  const double* src = x.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t t = 0; t < len * factor; ++t) out[r * len * factor + t] = src[r * len + t / factor];
  }
  const std::size_t ix = x.id;
  return g.record("upsample_nearest", {ix}, Array(std::move(out_shape), std::move(out)),
                  [ix, rows, len, factor](Graph& gr, std::span<const double> gy) {
                    auto gx = gr.grad_acc(ix);
                    for (std::size_t r = 0; r < rows; ++r) {
                      for (std::size_t t = 0; t < len * factor; ++t) gx[r * len + t / factor] += gy[r * len * factor + t];
                    }
                  });
}

Var stop_gradient(Var x) { return graph_of(x).detach(x); }

}  // namespace mtta::ad
