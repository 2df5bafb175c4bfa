#pragma once

#include <algorithm>
#include <cmath>

#include "fld/nn/gemm.hpp"
#include "fld/nn/graph.hpp"

namespace fld::nn {

namespace detail {

template <typename T>
Var<T> binary_elementwise(const char* name, Var<T> a, Var<T> b,
                          void (*fwd)(const T*, const T*, T*, std::int64_t),
                          void (*bwd)(const T*, const T*, const T*, T*, T*, std::int64_t)) {
  Graph<T>& g = *a.g;
  const Tensor<T>& av = g.value(a);
  const Tensor<T>& bv = g.value(b);
  check_same_shape(av, bv, name);
  Tensor<T> out(av.shape());
  fwd(av.data(), bv.data(), out.data(), out.size());
  int id = g.add(name, {a.id, b.id}, std::move(out));
  int aid = a.id, bid = b.id;
  g.set_backward(id, [id, aid, bid, bwd](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const T* ad = g.node(aid).value.data();
    const T* bd = g.node(bid).value.data();
    Tensor<T>* ga = g.grad_if_needed(aid);
    Tensor<T>* gb = g.grad_if_needed(bid);
    bwd(go.data(), ad, bd, ga ? ga->data() : nullptr, gb ? gb->data() : nullptr, go.size());
  });
  return {&g, id};
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  return detail::binary_elementwise<T>(
      "add", a, b,
      [](const T* x, const T* y, T* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] + y[i];
      },
      [](const T* go, const T*, const T*, T* ga, T* gb, std::int64_t n) {
        if (ga)
          for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
        if (gb)
          for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i];
      });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  return detail::binary_elementwise<T>(
      "sub", a, b,
      [](const T* x, const T* y, T* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] - y[i];
      },
      [](const T* go, const T*, const T*, T* ga, T* gb, std::int64_t n) {
        if (ga)
          for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i];
        if (gb)
          for (std::int64_t i = 0; i < n; ++i) gb[i] -= go[i];
      });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  return detail::binary_elementwise<T>(
      "mul", a, b,
      [](const T* x, const T* y, T* o, std::int64_t n) {
        for (std::int64_t i = 0; i < n; ++i) o[i] = x[i] * y[i];
      },
      [](const T* go, const T* x, const T* y, T* ga, T* gb, std::int64_t n) {
        if (ga)
          for (std::int64_t i = 0; i < n; ++i) ga[i] += go[i] * y[i];
        if (gb)
          for (std::int64_t i = 0; i < n; ++i) gb[i] += go[i] * x[i];
      });
}

// a*x + b, elementwise with scalar constants
template <typename T>
Var<T> affine(Var<T> x, T a, T b) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = a * xv[i] + b;
  int id = g.add("affine", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, a](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i) (*gx)[i] += a * go[i];
  });
  return {&g, id};
}

// elementwise product with a constant tensor of identical shape
template <typename T>
Var<T> mul_const(Var<T> x, Tensor<T> c) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  check_same_shape(xv, c, "mul_const");
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = xv[i] * c[i];
  int id = g.add("mul_const", {x.id}, std::move(out));
  int xid = x.id;
  auto cptr = std::make_shared<Tensor<T>>(std::move(c));
  g.set_backward(id, [id, xid, cptr](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * (*cptr)[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = xv[i] > T(0) ? xv[i] : T(0);
  int id = g.add("relu", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i)
        if (xv[i] > T(0)) (*gx)[i] += go[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-xv[i]));
  int id = g.add("sigmoid", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& y = g.node(id).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i] * y[i] * (T(1) - y[i]);
  });
  return {&g, id};
}

// log(max(x, eps)); zero gradient where the clamp is active
template <typename T>
Var<T> log_clamped(Var<T> x, T eps) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  for (std::int64_t i = 0; i < out.size(); ++i) out[i] = std::log(std::max(xv[i], eps));
  int id = g.add("log_clamped", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, eps](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i)
        if (xv[i] > eps) (*gx)[i] += go[i] / xv[i];
  });
  return {&g, id};
}

// Value copy with no gradient link back to the producer.
template <typename T>
Var<T> detach(Var<T> x) {
  return x.g->constant(x.g->value(x));
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (shape_numel(shape) != xv.size())
    throw ShapeError("reshape: element count mismatch " + shape_str(xv.shape()) + " -> " +
                     shape_str(shape));
  Tensor<T> out = xv;
  out = Tensor<T>(shape, std::vector<T>(xv.data(), xv.data() + xv.size()));
  int id = g.add("reshape", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < go.size(); ++i) (*gx)[i] += go[i];
  });
  return {&g, id};
}

template <typename T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  T acc = T(0);
  for (std::int64_t i = 0; i < xv.size(); ++i) acc += xv[i];
  int id = g.add("sum_all", {x.id}, Tensor<T>({1}, acc));
  int xid = x.id;
  g.set_backward(id, [id, xid](Graph<T>& g) {
    const T go = g.node(id).grad[0];
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (std::int64_t i = 0; i < gx->size(); ++i) (*gx)[i] += go;
  });
  return {&g, id};
}

template <typename T>
Var<T> mean_all(Var<T> x) {
  const std::int64_t n = x.g->value(x).size();
  return affine(sum_all(x), T(1) / static_cast<T>(n), T(0));
}

// (N,C,H,W) -> (N,C), mean over spatial positions
template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 4) throw ShapeError("global_avg_pool: expected 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  Tensor<T> out({N, C});
  const T inv = T(1) / static_cast<T>(HW);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data() + (static_cast<std::int64_t>(n) * C + c) * HW;
      T acc = T(0);
      for (int i = 0; i < HW; ++i) acc += p[i];
      out.at(n, c) = acc * inv;
    }
  int id = g.add("global_avg_pool", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, N, C, HW, inv](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T gv = go.at(n, c) * inv;
          T* p = gx->data() + (static_cast<std::int64_t>(n) * C + c) * HW;
          for (int i = 0; i < HW; ++i) p[i] += gv;
        }
    }
  });
  return {&g, id};
}

// (N,C,H,W) x weight(H,W) -> (N,C): sum over spatial of x * weight
template <typename T>
Var<T> spatial_weighted_sum(Var<T> x, Tensor<T> weight) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 4) throw ShapeError("spatial_weighted_sum: expected 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  if (weight.size() != HW) throw ShapeError("spatial_weighted_sum: weight size mismatch");
  Tensor<T> out({N, C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data() + (static_cast<std::int64_t>(n) * C + c) * HW;
      T acc = T(0);
      for (int i = 0; i < HW; ++i) acc += p[i] * weight[i];
      out.at(n, c) = acc;
    }
  int id = g.add("spatial_weighted_sum", {x.id}, std::move(out));
  int xid = x.id;
  auto wptr = std::make_shared<Tensor<T>>(std::move(weight));
  g.set_backward(id, [id, xid, N, C, HW, wptr](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T gv = go.at(n, c);
          T* p = gx->data() + (static_cast<std::int64_t>(n) * C + c) * HW;
          for (int i = 0; i < HW; ++i) p[i] += gv * (*wptr)[i];
        }
    }
  });
  return {&g, id};
}

// x(N,F) * w(O,F)^T + b(O) -> (N,O)
template <typename T>
Var<T> fully_connected(Var<T> x, Var<T> w, Var<T> b) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  if (xv.ndim() != 2 || wv.ndim() != 2 || bv.ndim() != 1)
    throw ShapeError("fully_connected: expected x(N,F), w(O,F), b(O)");
  const int N = xv.dim(0), F = xv.dim(1), O = wv.dim(0);
  if (wv.dim(1) != F || bv.dim(0) != O)
    throw ShapeError("fully_connected: dimension mismatch x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()));
  Tensor<T> out({N, O});
  gemm_bt<T>(false, N, O, F, xv.data(), wv.data(), out.data());
  for (int n = 0; n < N; ++n)
    for (int o = 0; o < O; ++o) out.at(n, o) += bv[o];
  int id = g.add("fully_connected", {x.id, w.id, b.id}, std::move(out));
  int xid = x.id, wid = w.id, bid = b.id;
  g.set_backward(id, [id, xid, wid, bid, N, F, O](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    const Tensor<T>& wv = g.node(wid).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      gemm<T>(true, N, F, O, go.data(), wv.data(), gx->data());
    if (Tensor<T>* gw = g.grad_if_needed(wid))
      gemm_at<T>(true, O, F, N, go.data(), xv.data(), gw->data());
    if (Tensor<T>* gb = g.grad_if_needed(bid))
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) (*gb)[o] += go.at(n, o);
  });
  return {&g, id};
}

namespace detail {

// softmax over contiguous or strided groups; used by both softmax ops
template <typename T>
void softmax_group(const T* x, T* y, int n, std::int64_t stride) {
  T mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[static_cast<std::int64_t>(i) * stride]);
  T sum = T(0);
  for (int i = 0; i < n; ++i) {
    T e = std::exp(x[static_cast<std::int64_t>(i) * stride] - mx);
    y[static_cast<std::int64_t>(i) * stride] = e;
    sum += e;
  }
  const T inv = T(1) / sum;
  for (int i = 0; i < n; ++i) y[static_cast<std::int64_t>(i) * stride] *= inv;
}

template <typename T>
void softmax_group_backward(const T* y, const T* gy, T* gx, int n, std::int64_t stride) {
  T dot = T(0);
  for (int i = 0; i < n; ++i) {
    const std::int64_t k = static_cast<std::int64_t>(i) * stride;
    dot += gy[k] * y[k];
  }
  for (int i = 0; i < n; ++i) {
    const std::int64_t k = static_cast<std::int64_t>(i) * stride;
    gx[k] += y[k] * (gy[k] - dot);
  }
}

}  // namespace detail

// softmax over all spatial positions of each (n, c) plane; channels sum to 1
template <typename T>
Var<T> spatial_softmax(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 4) throw ShapeError("spatial_softmax: expected 4-d input");
  const int NC = xv.dim(0) * xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int p = 0; p < NC; ++p)
    detail::softmax_group(xv.data() + static_cast<std::int64_t>(p) * HW,
                          out.data() + static_cast<std::int64_t>(p) * HW, HW, 1);
  int id = g.add("spatial_softmax", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, NC, HW](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& y = g.node(id).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (int p = 0; p < NC; ++p)
        detail::softmax_group_backward(y.data() + static_cast<std::int64_t>(p) * HW,
                                       go.data() + static_cast<std::int64_t>(p) * HW,
                                       gx->data() + static_cast<std::int64_t>(p) * HW, HW, 1);
  });
  return {&g, id};
}

// softmax across channels at every pixel; per-pixel vectors sum to 1
template <typename T>
Var<T> channel_softmax(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 4) throw ShapeError("channel_softmax: expected 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), HW = xv.dim(2) * xv.dim(3);
  Tensor<T> out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int i = 0; i < HW; ++i) {
      const std::int64_t base = static_cast<std::int64_t>(n) * C * HW + i;
      detail::softmax_group(xv.data() + base, out.data() + base, C, HW);
    }
  int id = g.add("channel_softmax", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, N, C, HW](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& y = g.node(id).value;
    if (Tensor<T>* gx = g.grad_if_needed(xid))
      for (int n = 0; n < N; ++n)
        for (int i = 0; i < HW; ++i) {
          const std::int64_t base = static_cast<std::int64_t>(n) * C * HW + i;
          detail::softmax_group_backward(y.data() + base, go.data() + base, gx->data() + base, C,
                                         HW);
        }
  });
  return {&g, id};
}

// xs(N,C), ys(N,C) -> (N,2C) interleaved [x0,y0,x1,y1,...]
template <typename T>
Var<T> interleave_xy(Var<T> xs, Var<T> ys) {
  Graph<T>& g = *xs.g;
  const Tensor<T>& xv = g.value(xs);
  const Tensor<T>& yv = g.value(ys);
  check_same_shape(xv, yv, "interleave_xy");
  if (xv.ndim() != 2) throw ShapeError("interleave_xy: expected 2-d inputs");
  const int N = xv.dim(0), C = xv.dim(1);
  Tensor<T> out({N, 2 * C});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      out.at(n, 2 * c) = xv.at(n, c);
      out.at(n, 2 * c + 1) = yv.at(n, c);
    }
  int id = g.add("interleave_xy", {xs.id, ys.id}, std::move(out));
  int xsid = xs.id, ysid = ys.id;
  g.set_backward(id, [id, xsid, ysid, N, C](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    Tensor<T>* gx = g.grad_if_needed(xsid);
    Tensor<T>* gy = g.grad_if_needed(ysid);
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        if (gx) gx->at(n, c) += go.at(n, 2 * c);
        if (gy) gy->at(n, c) += go.at(n, 2 * c + 1);
      }
  });
  return {&g, id};
}

// mean over batch and landmarks of the Euclidean distance between predicted
// and target (x,y) pairs; pred (N,2L), target constant (N,2L)
template <typename T>
Var<T> mean_point_distance(Var<T> pred, Tensor<T> target) {
  Graph<T>& g = *pred.g;
  const Tensor<T>& pv = g.value(pred);
  check_same_shape(pv, target, "mean_point_distance");
  if (pv.ndim() != 2 || pv.dim(1) % 2 != 0)
    throw ShapeError("mean_point_distance: expected (N, 2L)");
  const int N = pv.dim(0), L = pv.dim(1) / 2;
  T acc = T(0);
  for (int n = 0; n < N; ++n)
    for (int l = 0; l < L; ++l) {
      const T dx = pv.at(n, 2 * l) - target.at(n, 2 * l);
      const T dy = pv.at(n, 2 * l + 1) - target.at(n, 2 * l + 1);
      acc += std::sqrt(dx * dx + dy * dy);
    }
  const T inv = T(1) / static_cast<T>(N * L);
  int id = g.add("mean_point_distance", {pred.id}, Tensor<T>({1}, acc * inv));
  int pid = pred.id;
  auto tptr = std::make_shared<Tensor<T>>(std::move(target));
  g.set_backward(id, [id, pid, tptr, N, L, inv](Graph<T>& g) {
    const T go = g.node(id).grad[0];
    const Tensor<T>& pv = g.node(pid).value;
    if (Tensor<T>* gp = g.grad_if_needed(pid)) {
      for (int n = 0; n < N; ++n)
        for (int l = 0; l < L; ++l) {
          const T dx = pv.at(n, 2 * l) - tptr->at(n, 2 * l);
          const T dy = pv.at(n, 2 * l + 1) - tptr->at(n, 2 * l + 1);
          const T d = std::sqrt(dx * dx + dy * dy);
          if (d < T(1e-12)) continue;
          const T s = go * inv / d;
          gp->at(n, 2 * l) += s * dx;
          gp->at(n, 2 * l + 1) += s * dy;
        }
    }
  });
  return {&g, id};
}

// Batch normalization over the channel axis of (N,C) or (N,C,H,W).
// Train mode normalizes by batch statistics and refreshes the running
// buffers in place: running <- momentum*running + (1-momentum)*batch.
template <typename T>
Var<T> batchnorm(Var<T> x, Var<T> gamma, Var<T> beta, Tensor<T>& running_mean,
                 Tensor<T>& running_var, bool train, T momentum = T(0.9), T eps = T(1e-5)) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 2 && xv.ndim() != 4) throw ShapeError("batchnorm: expected 2-d or 4-d input");
  const int N = xv.dim(0);
  const int C = xv.dim(1);
  const int S = xv.ndim() == 4 ? xv.dim(2) * xv.dim(3) : 1;
  const std::int64_t m = static_cast<std::int64_t>(N) * S;
  if (g.value(gamma).size() != C || g.value(beta).size() != C ||
      running_mean.size() != C || running_var.size() != C)
    throw ShapeError("batchnorm: parameter size mismatch");
  if (train && N < 2) throw ShapeError("batchnorm: train mode requires batch >= 2");

  auto mean = std::make_shared<Tensor<T>>(Shape{C});
  auto inv_std = std::make_shared<Tensor<T>>(Shape{C});
  if (train) {
    for (int c = 0; c < C; ++c) {
      T acc = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = xv.data() + (static_cast<std::int64_t>(n) * C + c) * S;
        for (int i = 0; i < S; ++i) acc += p[i];
      }
      const T mu = acc / static_cast<T>(m);
      T var = T(0);
      for (int n = 0; n < N; ++n) {
        const T* p = xv.data() + (static_cast<std::int64_t>(n) * C + c) * S;
        for (int i = 0; i < S; ++i) {
          const T d = p[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      (*mean)[c] = mu;
      (*inv_std)[c] = T(1) / std::sqrt(var + eps);
      running_mean[c] = momentum * running_mean[c] + (T(1) - momentum) * mu;
      running_var[c] = momentum * running_var[c] + (T(1) - momentum) * var;
    }
  } else {
    for (int c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*inv_std)[c] = T(1) / std::sqrt(running_var[c] + eps);
    }
  }

  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  Tensor<T> out(xv.shape());
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* p = xv.data() + (static_cast<std::int64_t>(n) * C + c) * S;
      T* q = out.data() + (static_cast<std::int64_t>(n) * C + c) * S;
      const T mu = (*mean)[c], is = (*inv_std)[c], ga = gv[c], be = bv[c];
      for (int i = 0; i < S; ++i) q[i] = (p[i] - mu) * is * ga + be;
    }

  int id = g.add("batchnorm", {x.id, gamma.id, beta.id}, std::move(out));
  int xid = x.id, gid = gamma.id, bid = beta.id;
  g.set_backward(id, [id, xid, gid, bid, N, C, S, m, mean, inv_std, train](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    const Tensor<T>& gv = g.node(gid).value;
    Tensor<T>* gx = g.grad_if_needed(xid);
    Tensor<T>* gg = g.grad_if_needed(gid);
    Tensor<T>* gb = g.grad_if_needed(bid);
    for (int c = 0; c < C; ++c) {
      const T mu = (*mean)[c], is = (*inv_std)[c];
      T sum_dy = T(0), sum_dy_xhat = T(0);
      for (int n = 0; n < N; ++n) {
        const T* dy = go.data() + (static_cast<std::int64_t>(n) * C + c) * S;
        const T* px = xv.data() + (static_cast<std::int64_t>(n) * C + c) * S;
        for (int i = 0; i < S; ++i) {
          sum_dy += dy[i];
          sum_dy_xhat += dy[i] * (px[i] - mu) * is;
        }
      }
      if (gg) (*gg)[c] += sum_dy_xhat;
      if (gb) (*gb)[c] += sum_dy;
      if (gx) {
        const T ga = gv[c];
        if (train) {
          const T k = ga * is / static_cast<T>(m);
          for (int n = 0; n < N; ++n) {
            const T* dy = go.data() + (static_cast<std::int64_t>(n) * C + c) * S;
            const T* px = xv.data() + (static_cast<std::int64_t>(n) * C + c) * S;
            T* dx = gx->data() + (static_cast<std::int64_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) {
              const T xhat = (px[i] - mu) * is;
              dx[i] += k * (static_cast<T>(m) * dy[i] - sum_dy - xhat * sum_dy_xhat);
            }
          }
        } else {
          const T k = ga * is;
          for (int n = 0; n < N; ++n) {
            const T* dy = go.data() + (static_cast<std::int64_t>(n) * C + c) * S;
            T* dx = gx->data() + (static_cast<std::int64_t>(n) * C + c) * S;
            for (int i = 0; i < S; ++i) dx[i] += k * dy[i];
          }
        }
      }
    }
  });
  return {&g, id};
}

// Differentiable coordinate decoding: spatial softmax at the given
// temperature, then the probability-weighted mean position per channel.
// Returns (N, 2C) map-frame coordinates interleaved [x0,y0,...].
template <typename T>
Var<T> soft_argmax(Var<T> maps, T temperature) {
  Graph<T>& g = *maps.g;
  const Tensor<T>& mv = g.value(maps);
  if (mv.ndim() != 4) throw ShapeError("soft_argmax: expected 4-d input");
  if (!(temperature > T(0))) throw ShapeError("soft_argmax: temperature must be > 0");
  const int H = mv.dim(2), W = mv.dim(3);
  Tensor<T> xcoord({H, W}), ycoord({H, W});
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      xcoord[static_cast<std::int64_t>(y) * W + x] = static_cast<T>(x);
      ycoord[static_cast<std::int64_t>(y) * W + x] = static_cast<T>(y);
    }
  Var<T> p = spatial_softmax(affine(maps, T(1) / temperature, T(0)));
  Var<T> xs = spatial_weighted_sum(p, std::move(xcoord));
  Var<T> ys = spatial_weighted_sum(p, std::move(ycoord));
  return interleave_xy(xs, ys);
}

}  // namespace fld::nn
