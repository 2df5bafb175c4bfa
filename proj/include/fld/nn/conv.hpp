#pragma once

#include <algorithm>
#include <limits>
#include <vector>

#include "fld/nn/gemm.hpp"
#include "fld/nn/graph.hpp"
#include "fld/nn/parallel.hpp"

namespace fld::nn {

inline int conv_out_size(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

inline int deconv_out_size(int in, int k, int stride, int pad) {
  return (in - 1) * stride - 2 * pad + k;
}

namespace detail {

// Patch matrix for one sample: x(C,H,W) -> col[(C*k*k) x (OH*OW)].
template <typename T>
void im2col(const T* x, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* col) {
  const std::int64_t ocols = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    const T* plane = x + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * ocols;
        for (int oy = 0; oy < OH; ++oy) {
          const int sy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::int64_t>(oy) * OW;
          if (sy < 0 || sy >= H) {
            for (int ox = 0; ox < OW; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = plane + static_cast<std::int64_t>(sy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            const int sx = ox * stride - pad + kx;
            dst[ox] = (sx >= 0 && sx < W) ? src[sx] : T(0);
          }
        }
      }
  }
}

// Adjoint of im2col: accumulates col back into x(C,H,W).
template <typename T>
void col2im(const T* col, int C, int H, int W, int k, int stride, int pad, int OH, int OW, T* x) {
  const std::int64_t ocols = static_cast<std::int64_t>(OH) * OW;
  for (int c = 0; c < C; ++c) {
    T* plane = x + static_cast<std::int64_t>(c) * H * W;
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col + ((static_cast<std::int64_t>(c) * k + ky) * k + kx) * ocols;
        for (int oy = 0; oy < OH; ++oy) {
          const int sy = oy * stride - pad + ky;
          if (sy < 0 || sy >= H) continue;
          T* dst = plane + static_cast<std::int64_t>(sy) * W;
          const T* src = row + static_cast<std::int64_t>(oy) * OW;
          for (int ox = 0; ox < OW; ++ox) {
            const int sx = ox * stride - pad + kx;
            if (sx >= 0 && sx < W) dst[sx] += src[ox];
          }
        }
      }
  }
}

template <typename T>
std::vector<T>& col_scratch() {
  thread_local std::vector<T> buf;
  return buf;
}

}  // namespace detail

// Cross-correlation: x(N,C,H,W) * w(O,C,k,k) + b(O) -> (N,O,OH,OW)
// with OH = (H + 2*pad - k)/stride + 1.
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  if (xv.ndim() != 4 || wv.ndim() != 4) throw ShapeError("conv2d: expected 4-d x and w");
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("conv2d: kernel must be square");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int O = wv.dim(0), k = wv.dim(2);
  if (wv.dim(1) != C)
    throw ShapeError("conv2d: channel mismatch x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()));
  if (bv.size() != O) throw ShapeError("conv2d: bias size mismatch");
  const int OH = conv_out_size(H, k, stride, pad), OW = conv_out_size(W, k, stride, pad);
  if (OH <= 0 || OW <= 0) throw ShapeError("conv2d: output would be empty");
  const int CKK = C * k * k;
  const std::int64_t ocols = static_cast<std::int64_t>(OH) * OW;

  Tensor<T> out({N, O, OH, OW});
  parallel_for(N, [&](int n) {
    std::vector<T>& col = detail::col_scratch<T>();
    col.resize(static_cast<std::size_t>(CKK) * ocols);
    detail::im2col(xv.data() + static_cast<std::int64_t>(n) * C * H * W, C, H, W, k, stride, pad,
                   OH, OW, col.data());
    T* dst = out.data() + static_cast<std::int64_t>(n) * O * ocols;
    gemm<T>(false, O, static_cast<int>(ocols), CKK, wv.data(), col.data(), dst);
    for (int o = 0; o < O; ++o) {
      const T bias = bv[o];
      T* p = dst + static_cast<std::int64_t>(o) * ocols;
      for (std::int64_t i = 0; i < ocols; ++i) p[i] += bias;
    }
  });

  int id = g.add("conv2d", {x.id, w.id, b.id}, std::move(out));
  int xid = x.id, wid = w.id, bid = b.id;
  g.set_backward(id, [id, xid, wid, bid, N, C, H, W, O, k, stride, pad, OH, OW, CKK,
                      ocols](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    const Tensor<T>& wv = g.node(wid).value;
    Tensor<T>* gx = g.grad_if_needed(xid);
    Tensor<T>* gw = g.grad_if_needed(wid);
    Tensor<T>* gb = g.grad_if_needed(bid);
    if (gb) {
      for (int n = 0; n < N; ++n)
        for (int o = 0; o < O; ++o) {
          const T* p = go.data() + (static_cast<std::int64_t>(n) * O + o) * ocols;
          T acc = T(0);
          for (std::int64_t i = 0; i < ocols; ++i) acc += p[i];
          (*gb)[o] += acc;
        }
    }
    // Per-sample weight-gradient partials, reduced in sample order so the
    // result is independent of the parallel schedule.
    std::vector<T> wpart;
    if (gw) wpart.assign(static_cast<std::size_t>(N) * O * CKK, T(0));
    parallel_for(N, [&](int n) {
      std::vector<T>& col = detail::col_scratch<T>();
      col.resize(static_cast<std::size_t>(CKK) * ocols);
      const T* dy = go.data() + static_cast<std::int64_t>(n) * O * ocols;
      if (gw) {
        detail::im2col(xv.data() + static_cast<std::int64_t>(n) * C * H * W, C, H, W, k, stride,
                       pad, OH, OW, col.data());
        gemm_bt<T>(false, O, CKK, static_cast<int>(ocols), dy, col.data(),
                   wpart.data() + static_cast<std::int64_t>(n) * O * CKK);
      }
      if (gx) {
        gemm_at<T>(false, CKK, static_cast<int>(ocols), O, wv.data(), dy, col.data());
        detail::col2im(col.data(), C, H, W, k, stride, pad, OH, OW,
                       gx->data() + static_cast<std::int64_t>(n) * C * H * W);
      }
    });
    if (gw) {
      for (int n = 0; n < N; ++n) {
        const T* src = wpart.data() + static_cast<std::int64_t>(n) * O * CKK;
        T* dst = gw->data();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(O) * CKK; ++i) dst[i] += src[i];
      }
    }
  });
  return {&g, id};
}

// Transposed convolution, the adjoint of conv2d with the same kernel layout:
// x(N,O,H,W) * w(O,C,k,k) + b(C) -> (N,C,OH,OW)
// with OH = (H - 1)*stride - 2*pad + k.
template <typename T>
Var<T> deconv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  const Tensor<T>& wv = g.value(w);
  const Tensor<T>& bv = g.value(b);
  if (xv.ndim() != 4 || wv.ndim() != 4) throw ShapeError("deconv2d: expected 4-d x and w");
  if (wv.dim(2) != wv.dim(3)) throw ShapeError("deconv2d: kernel must be square");
  if (stride < 1) throw ShapeError("deconv2d: stride must be >= 1");
  const int N = xv.dim(0), O = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int C = wv.dim(1), k = wv.dim(2);
  if (wv.dim(0) != O)
    throw ShapeError("deconv2d: channel mismatch x" + shape_str(xv.shape()) + " w" +
                     shape_str(wv.shape()));
  if (bv.size() != C) throw ShapeError("deconv2d: bias size mismatch");
  const int OH = deconv_out_size(H, k, stride, pad), OW = deconv_out_size(W, k, stride, pad);
  if (OH <= 0 || OW <= 0) throw ShapeError("deconv2d: output would be empty");
  const int CKK = C * k * k;
  const std::int64_t icols = static_cast<std::int64_t>(H) * W;

  Tensor<T> out({N, C, OH, OW});
  parallel_for(N, [&](int n) {
    std::vector<T>& col = detail::col_scratch<T>();
    col.resize(static_cast<std::size_t>(CKK) * icols);
    const T* src = xv.data() + static_cast<std::int64_t>(n) * O * icols;
    gemm_at<T>(false, CKK, static_cast<int>(icols), O, wv.data(), src, col.data());
    T* dst = out.data() + static_cast<std::int64_t>(n) * C * OH * OW;
    detail::col2im(col.data(), C, OH, OW, k, stride, pad, H, W, dst);
    for (int c = 0; c < C; ++c) {
      const T bias = bv[c];
      T* p = dst + static_cast<std::int64_t>(c) * OH * OW;
      for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) p[i] += bias;
    }
  });

  int id = g.add("deconv2d", {x.id, w.id, b.id}, std::move(out));
  int xid = x.id, wid = w.id, bid = b.id;
  g.set_backward(id, [id, xid, wid, bid, N, C, O, H, W, k, stride, pad, OH, OW, CKK,
                      icols](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    const Tensor<T>& xv = g.node(xid).value;
    const Tensor<T>& wv = g.node(wid).value;
    Tensor<T>* gx = g.grad_if_needed(xid);
    Tensor<T>* gw = g.grad_if_needed(wid);
    Tensor<T>* gb = g.grad_if_needed(bid);
    if (gb) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* p = go.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
          T acc = T(0);
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i) acc += p[i];
          (*gb)[c] += acc;
        }
    }
    std::vector<T> wpart;
    if (gw) wpart.assign(static_cast<std::size_t>(N) * O * CKK, T(0));
    parallel_for(N, [&](int n) {
      std::vector<T>& col = detail::col_scratch<T>();
      col.resize(static_cast<std::size_t>(CKK) * icols);
      // dOut patches play the role conv2d's input patches play
      detail::im2col(go.data() + static_cast<std::int64_t>(n) * C * OH * OW, C, OH, OW, k, stride,
                     pad, H, W, col.data());
      if (gx) {
        gemm<T>(true, O, static_cast<int>(icols), CKK, wv.data(), col.data(),
                gx->data() + static_cast<std::int64_t>(n) * O * icols);
      }
      if (gw) {
        gemm_bt<T>(false, O, CKK, static_cast<int>(icols),
                   xv.data() + static_cast<std::int64_t>(n) * O * icols, col.data(),
                   wpart.data() + static_cast<std::int64_t>(n) * O * CKK);
      }
    });
    if (gw) {
      for (int n = 0; n < N; ++n) {
        const T* src = wpart.data() + static_cast<std::int64_t>(n) * O * CKK;
        T* dst = gw->data();
        for (std::int64_t i = 0; i < static_cast<std::int64_t>(O) * CKK; ++i) dst[i] += src[i];
      }
    }
  });
  return {&g, id};
}

// 2x2/stride-2 max pooling; odd borders are padded by edge replication.
// Gradient routes to the first maximal element in row-major window order.
template <typename T>
Var<T> maxpool2(Var<T> x) {
  Graph<T>& g = *x.g;
  const Tensor<T>& xv = g.value(x);
  if (xv.ndim() != 4) throw ShapeError("maxpool2: expected 4-d input");
  const int N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
  const int OH = (H + 1) / 2, OW = (W + 1) / 2;
  Tensor<T> out({N, C, OH, OW});
  auto argmax = std::make_shared<std::vector<std::int32_t>>(
      static_cast<std::size_t>(N) * C * OH * OW);
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const T* plane = xv.data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
      T* oplane = out.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
      std::int32_t* aplane =
          argmax->data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t besti = 0;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) {
              const int sy = std::min(2 * oy + dy, H - 1);
              const int sx = std::min(2 * ox + dx, W - 1);
              const T v = plane[static_cast<std::int64_t>(sy) * W + sx];
              if (v > best) {
                best = v;
                besti = static_cast<std::int32_t>(sy * W + sx);
              }
            }
          oplane[static_cast<std::int64_t>(oy) * OW + ox] = best;
          aplane[static_cast<std::int64_t>(oy) * OW + ox] = besti;
        }
    }
  int id = g.add("maxpool2", {x.id}, std::move(out));
  int xid = x.id;
  g.set_backward(id, [id, xid, N, C, H, W, OH, OW, argmax](Graph<T>& g) {
    const Tensor<T>& go = g.node(id).grad;
    if (Tensor<T>* gx = g.grad_if_needed(xid)) {
      for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c) {
          const T* gplane = go.data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
          const std::int32_t* aplane =
              argmax->data() + (static_cast<std::int64_t>(n) * C + c) * OH * OW;
          T* xplane = gx->data() + (static_cast<std::int64_t>(n) * C + c) * H * W;
          for (std::int64_t i = 0; i < static_cast<std::int64_t>(OH) * OW; ++i)
            xplane[aplane[i]] += gplane[i];
        }
    }
  });
  return {&g, id};
}

}  // namespace fld::nn
