#pragma once

#include "david/tensor.hpp"

namespace david {

// ---- gemm kernels (row-major) ----
// The three access patterns keep the inner loop contiguous for forward and
// both backward products without materialized transposes.

template <class T>
void gemm_nn(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
  for (size_t i = 0; i < M; ++i) {
    T* c = C + i * N;
    for (size_t k = 0; k < K; ++k) {
      T a = A[i * K + k];
      const T* b = B + k * N;
      for (size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// C[M,N] += A[M,K] * B[N,K]^T
template <class T>
void gemm_nt(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
  for (size_t i = 0; i < M; ++i)
    for (size_t j = 0; j < N; ++j) {
      const T* a = A + i * K;
      const T* b = B + j * K;
      T s = T(0);
      for (size_t k = 0; k < K; ++k) s += a[k] * b[k];
      C[i * N + j] += s;
    }
}

// C[K,N] += A[M,K]^T * B[M,N]
template <class T>
void gemm_tn(size_t M, size_t K, size_t N, const T* A, const T* B, T* C) {
  for (size_t m = 0; m < M; ++m) {
    const T* b = B + m * N;
    for (size_t k = 0; k < K; ++k) {
      T a = A[m * K + k];
      T* c = C + k * N;
      for (size_t j = 0; j < N; ++j) c[j] += a * b[j];
    }
  }
}

// ---- matmul ----

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw TensorError("matmul: expects 2-d operands, got " + shape_str(a.shape()) +
                      " and " + shape_str(b.shape()));
  size_t M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2)
    throw TensorError("matmul: inner extents differ, " + shape_str(a.shape()) +
                      " vs " + shape_str(b.shape()));
  auto n = detail::make_node<T>({M, N}, {a.node(), b.node()});
  std::fill(n->value.begin(), n->value.end(), T(0));
  gemm_nn(M, K, N, a.data().data(), b.data().data(), n->value.data());
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backward_fn = [pa, pb, M, K, N](TensorNode<T>& self) {
      if (pa->requires_grad) {
        pa->ensure_grad();
        gemm_nt(M, N, K, self.grad.data(), pb->value.data(), pa->grad.data());
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        gemm_tn(M, K, N, pa->value.data(), self.grad.data(), pb->grad.data());
      }
    };
  }
  return Tensor<T>(n);
}

// Batched matmul over the leading dim: [B,M,K] x [B,K,N] -> [B,M,N].
// transpose_b treats b as [B,N,K].
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool transpose_b = false) {
  if (a.ndim() != 3 || b.ndim() != 3) throw TensorError("bmm: expects 3-d operands");
  size_t B = a.dim(0), M = a.dim(1), K = a.dim(2);
  size_t Bb = b.dim(0), N = transpose_b ? b.dim(1) : b.dim(2);
  size_t Kb = transpose_b ? b.dim(2) : b.dim(1);
  if (B != Bb || K != Kb)
    throw TensorError("bmm: shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
  auto n = detail::make_node<T>({B, M, N}, {a.node(), b.node()});
  std::fill(n->value.begin(), n->value.end(), T(0));
  for (size_t i = 0; i < B; ++i) {
    const T* A = a.data().data() + i * M * K;
    const T* Bp = b.data().data() + i * K * N;
    T* C = n->value.data() + i * M * N;
    if (transpose_b)
      gemm_nt(M, K, N, A, Bp, C);
    else
      gemm_nn(M, K, N, A, Bp, C);
  }
  if (n->requires_grad) {
    auto pa = a.node(), pb = b.node();
    n->backward_fn = [pa, pb, B, M, K, N, transpose_b](TensorNode<T>& self) {
      for (size_t i = 0; i < B; ++i) {
        const T* G = self.grad.data() + i * M * N;
        const T* A = pa->value.data() + i * M * K;
        const T* Bp = pb->value.data() + i * K * N;
        if (pa->requires_grad) {
          pa->ensure_grad();
          T* dA = pa->grad.data() + i * M * K;
          if (transpose_b) gemm_nn(M, N, K, G, Bp, dA);
          else gemm_nt(M, N, K, G, Bp, dA);
        }
        if (pb->requires_grad) {
          pb->ensure_grad();
          T* dB = pb->grad.data() + i * K * N;
          if (transpose_b) gemm_tn(M, N, K, G, A, dB);
          else gemm_tn(M, K, N, A, G, dB);
        }
      }
    };
  }
  return Tensor<T>(n);
}

// y = x @ W^T + b with W stored [out,in] so rows stay contiguous.
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.ndim() != 2 || w.ndim() != 2)
    throw TensorError("linear: expects 2-d input and weight");
  size_t M = x.dim(0), K = x.dim(1), O = w.dim(0);
  if (w.dim(1) != K)
    throw TensorError("linear: weight " + shape_str(w.shape()) +
                      " does not match input " + shape_str(x.shape()));
  if (b.defined() && b.numel() != O) throw TensorError("linear: bias size mismatch");

  std::vector<std::shared_ptr<TensorNode<T>>> parents{x.node(), w.node()};
  if (b.defined()) parents.push_back(b.node());
  auto n = detail::make_node<T>({M, O}, parents);
  std::fill(n->value.begin(), n->value.end(), T(0));
  gemm_nt(M, K, O, x.data().data(), w.data().data(), n->value.data());
  if (b.defined()) {
    const auto& bv = b.data();
    for (size_t i = 0; i < M; ++i) {
      T* row = n->value.data() + i * O;
      for (size_t j = 0; j < O; ++j) row[j] += bv[j];
    }
  }
  if (n->requires_grad) {
    auto px = x.node(), pw = w.node();
    auto pb = b.defined() ? b.node() : nullptr;
    n->backward_fn = [px, pw, pb, M, K, O](TensorNode<T>& self) {
      if (px->requires_grad) {
        px->ensure_grad();
        gemm_nn(M, O, K, self.grad.data(), pw->value.data(), px->grad.data());
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        gemm_tn(M, O, K, self.grad.data(), px->value.data(), pw->grad.data());
      }
      if (pb && pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < M; ++i) {
          const T* g = self.grad.data() + i * O;
          for (size_t j = 0; j < O; ++j) pb->grad[j] += g[j];
        }
      }
    };
  }
  return Tensor<T>(n);
}

// ---- conv2d ----

namespace detail {

template <class T>
void im2col(const T* x, size_t C, size_t H, size_t W, size_t kh, size_t kw,
            size_t stride, size_t pad, size_t OH, size_t OW, T* cols) {
  // cols: [C*kh*kw, OH*OW]
  const size_t P = OH * OW;
  for (size_t c = 0; c < C; ++c)
    for (size_t ki = 0; ki < kh; ++ki)
      for (size_t kj = 0; kj < kw; ++kj) {
        T* row = cols + ((c * kh + ki) * kw + kj) * P;
        for (size_t oy = 0; oy < OH; ++oy) {
          ptrdiff_t iy = ptrdiff_t(oy * stride + ki) - ptrdiff_t(pad);
          if (iy < 0 || iy >= ptrdiff_t(H)) {
            std::fill(row + oy * OW, row + (oy + 1) * OW, T(0));
            continue;
          }
          const T* src = x + (c * H + size_t(iy)) * W;
          for (size_t ox = 0; ox < OW; ++ox) {
            ptrdiff_t ix = ptrdiff_t(ox * stride + kj) - ptrdiff_t(pad);
            row[oy * OW + ox] = (ix < 0 || ix >= ptrdiff_t(W)) ? T(0) : src[ix];
          }
        }
      }
}

template <class T>
void col2im_add(const T* cols, size_t C, size_t H, size_t W, size_t kh, size_t kw,
                size_t stride, size_t pad, size_t OH, size_t OW, T* dx) {
  const size_t P = OH * OW;
  for (size_t c = 0; c < C; ++c)
    for (size_t ki = 0; ki < kh; ++ki)
      for (size_t kj = 0; kj < kw; ++kj) {
        const T* row = cols + ((c * kh + ki) * kw + kj) * P;
        for (size_t oy = 0; oy < OH; ++oy) {
          ptrdiff_t iy = ptrdiff_t(oy * stride + ki) - ptrdiff_t(pad);
          if (iy < 0 || iy >= ptrdiff_t(H)) continue;
          T* dst = dx + (c * H + size_t(iy)) * W;
          for (size_t ox = 0; ox < OW; ++ox) {
            ptrdiff_t ix = ptrdiff_t(ox * stride + kj) - ptrdiff_t(pad);
            if (ix >= 0 && ix < ptrdiff_t(W)) dst[ix] += row[oy * OW + ox];
          }
        }
      }
}

}  // namespace detail

// x: [N,C,H,W], w: [O,C,kh,kw], bias: [O] or undefined. Zero padding.
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 size_t stride = 1, size_t pad = 0) {
  if (x.ndim() != 4 || w.ndim() != 4)
    throw TensorError("conv2d: expects x[N,C,H,W], w[O,C,kh,kw]");
  size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  size_t O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw TensorError("conv2d: channel mismatch, x " + shape_str(x.shape()) +
                      " vs w " + shape_str(w.shape()));
  if (kh > H + 2 * pad || kw > W + 2 * pad)
    throw TensorError("conv2d: kernel larger than padded input");
  ptrdiff_t oh = (ptrdiff_t(H) + 2 * ptrdiff_t(pad) - ptrdiff_t(kh)) / ptrdiff_t(stride) + 1;
  ptrdiff_t ow = (ptrdiff_t(W) + 2 * ptrdiff_t(pad) - ptrdiff_t(kw)) / ptrdiff_t(stride) + 1;
  if (oh <= 0 || ow <= 0) throw TensorError("conv2d: non-positive output extent");
  size_t OH = size_t(oh), OW = size_t(ow);
  const size_t CK = C * kh * kw, P = OH * OW;

  std::vector<std::shared_ptr<TensorNode<T>>> parents{x.node(), w.node()};
  if (bias.defined()) parents.push_back(bias.node());
  auto n = detail::make_node<T>({N, O, OH, OW}, parents);
  std::fill(n->value.begin(), n->value.end(), T(0));

  // Saved for backward; one im2col buffer per sample.
  auto cols = std::make_shared<std::vector<T>>(N * CK * P);
  for (size_t s = 0; s < N; ++s) {
    T* col = cols->data() + s * CK * P;
    detail::im2col(x.data().data() + s * C * H * W, C, H, W, kh, kw, stride, pad, OH, OW, col);
    gemm_nn(O, CK, P, w.data().data(), col, n->value.data() + s * O * P);
  }
  if (bias.defined()) {
    const auto& bv = bias.data();
    for (size_t s = 0; s < N; ++s)
      for (size_t o = 0; o < O; ++o) {
        T* dst = n->value.data() + (s * O + o) * P;
        for (size_t i = 0; i < P; ++i) dst[i] += bv[o];
      }
  }

  if (n->requires_grad) {
    auto px = x.node(), pw = w.node();
    auto pb = bias.defined() ? bias.node() : nullptr;
    n->backward_fn = [px, pw, pb, cols, N, C, H, W, O, kh, kw, stride, pad, OH,
                      OW](TensorNode<T>& self) {
      const size_t CK = C * kh * kw, P = OH * OW;
      std::vector<T> dcol(CK * P);
      for (size_t s = 0; s < N; ++s) {
        const T* G = self.grad.data() + s * O * P;
        const T* col = cols->data() + s * CK * P;
        if (pw->requires_grad) {
          pw->ensure_grad();
          gemm_nt(O, P, CK, G, col, pw->grad.data());
        }
        if (px->requires_grad) {
          px->ensure_grad();
          std::fill(dcol.begin(), dcol.end(), T(0));
          gemm_tn(O, CK, P, pw->value.data(), G, dcol.data());
          detail::col2im_add(dcol.data(), C, H, W, kh, kw, stride, pad, OH, OW,
                             px->grad.data() + s * C * H * W);
        }
        if (pb && pb->requires_grad) {
          pb->ensure_grad();
          for (size_t o = 0; o < O; ++o) {
            const T* g = G + o * P;
            T acc = T(0);
            for (size_t i = 0; i < P; ++i) acc += g[i];
            pb->grad[o] += acc;
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

// ---- bilinear interpolation (half-pixel centers, align_corners=false) ----

template <class T>
Tensor<T> interpolate_bilinear(const Tensor<T>& x, size_t out_h, size_t out_w) {
  if (x.ndim() != 4) throw TensorError("interpolate_bilinear: expects [N,C,H,W]");
  if (out_h < 1 || out_w < 1) throw TensorError("interpolate_bilinear: empty output");
  size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  auto n = detail::make_node<T>({N, C, out_h, out_w}, {x.node()});

  // Precompute per-axis taps once.
  struct Tap {
    size_t i0, i1;
    T w1;  // weight of i1; i0 gets 1-w1
  };
  auto make_taps = [](size_t in, size_t out) {
    std::vector<Tap> taps(out);
    double scale = double(in) / double(out);
    for (size_t o = 0; o < out; ++o) {
      double src = (double(o) + 0.5) * scale - 0.5;
      double fl = std::floor(src);
      double fr = src - fl;
      ptrdiff_t i0 = ptrdiff_t(fl), i1 = i0 + 1;
      if (i0 < 0) { i0 = 0; i1 = 0; fr = 0.0; }
      if (i1 >= ptrdiff_t(in)) { i1 = ptrdiff_t(in) - 1; if (i0 > i1) i0 = i1; }
      taps[o] = {size_t(i0), size_t(i1), T(fr)};
    }
    return taps;
  };
  auto ty = make_taps(H, out_h);
  auto tx = make_taps(W, out_w);

  const auto& xv = x.data();
  auto& out = n->value;
  for (size_t nc = 0; nc < N * C; ++nc) {
    const T* src = xv.data() + nc * H * W;
    T* dst = out.data() + nc * out_h * out_w;
    for (size_t oy = 0; oy < out_h; ++oy) {
      const Tap& a = ty[oy];
      for (size_t ox = 0; ox < out_w; ++ox) {
        const Tap& b = tx[ox];
        T v00 = src[a.i0 * W + b.i0], v01 = src[a.i0 * W + b.i1];
        T v10 = src[a.i1 * W + b.i0], v11 = src[a.i1 * W + b.i1];
        T top = v00 + (v01 - v00) * b.w1;
        T bot = v10 + (v11 - v10) * b.w1;
        dst[oy * out_w + ox] = top + (bot - top) * a.w1;
      }
    }
  }

  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, ty, tx, N, C, H, W, out_h, out_w](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t nc = 0; nc < N * C; ++nc) {
        T* dx = px->grad.data() + nc * H * W;
        const T* g = self.grad.data() + nc * out_h * out_w;
        for (size_t oy = 0; oy < out_h; ++oy) {
          const auto& a = ty[oy];
          for (size_t ox = 0; ox < out_w; ++ox) {
            const auto& b = tx[ox];
            T gv = g[oy * out_w + ox];
            T wy1 = a.w1, wy0 = T(1) - a.w1;
            T wx1 = b.w1, wx0 = T(1) - b.w1;
            dx[a.i0 * W + b.i0] += gv * wy0 * wx0;
            dx[a.i0 * W + b.i1] += gv * wy0 * wx1;
            dx[a.i1 * W + b.i0] += gv * wy1 * wx0;
            dx[a.i1 * W + b.i1] += gv * wy1 * wx1;
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

// ---- normalization / activations over the last dim ----

template <class T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                    T eps = T(1e-5)) {
  if (x.ndim() < 1) throw TensorError("layernorm: rank 0");
  size_t D = x.shape().back();
  if (gamma.numel() != D || beta.numel() != D)
    throw TensorError("layernorm: affine parameters must have length " + std::to_string(D));
  size_t R = x.numel() / D;
  auto n = detail::make_node<T>(x.shape(), {x.node(), gamma.node(), beta.node()});

  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<T>>(R);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  for (size_t r = 0; r < R; ++r) {
    const T* row = xv.data() + r * D;
    T mean = T(0);
    for (size_t i = 0; i < D; ++i) mean += row[i];
    mean /= T(D);
    T var = T(0);
    for (size_t i = 0; i < D; ++i) {
      T d = row[i] - mean;
      var += d * d;
    }
    var /= T(D);
    T is = T(1) / std::sqrt(var + eps);
    (*inv_sigma)[r] = is;
    T* xh = xhat->data() + r * D;
    T* out = n->value.data() + r * D;
    for (size_t i = 0; i < D; ++i) {
      xh[i] = (row[i] - mean) * is;
      out[i] = xh[i] * gv[i] + bv[i];
    }
  }

  if (n->requires_grad) {
    auto px = x.node(), pg = gamma.node(), pb = beta.node();
    n->backward_fn = [px, pg, pb, xhat, inv_sigma, R, D](TensorNode<T>& self) {
      if (pg->requires_grad) pg->ensure_grad();
      if (pb->requires_grad) pb->ensure_grad();
      if (px->requires_grad) px->ensure_grad();
      for (size_t r = 0; r < R; ++r) {
        const T* g = self.grad.data() + r * D;
        const T* xh = xhat->data() + r * D;
        if (pg->requires_grad)
          for (size_t i = 0; i < D; ++i) pg->grad[i] += g[i] * xh[i];
        if (pb->requires_grad)
          for (size_t i = 0; i < D; ++i) pb->grad[i] += g[i];
        if (px->requires_grad) {
          // dxhat = g * gamma; dx = (dxhat - mean(dxhat) - xhat*mean(dxhat*xhat)) * inv_sigma
          T m1 = T(0), m2 = T(0);
          for (size_t i = 0; i < D; ++i) {
            T dxh = g[i] * pg->value[i];
            m1 += dxh;
            m2 += dxh * xh[i];
          }
          m1 /= T(D);
          m2 /= T(D);
          T is = (*inv_sigma)[r];
          T* dx = px->grad.data() + r * D;
          for (size_t i = 0; i < D; ++i) {
            T dxh = g[i] * pg->value[i];
            dx[i] += (dxh - m1 - xh[i] * m2) * is;
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.ndim() < 1) throw TensorError("softmax: rank 0");
  size_t D = x.shape().back();
  size_t R = x.numel() / D;
  auto n = detail::make_node<T>(x.shape(), {x.node()});
  const auto& xv = x.data();
  for (size_t r = 0; r < R; ++r) {
    const T* row = xv.data() + r * D;
    T* out = n->value.data() + r * D;
    T mx = row[0];
    for (size_t i = 1; i < D; ++i) mx = std::max(mx, row[i]);
    T sum = T(0);
    for (size_t i = 0; i < D; ++i) {
      out[i] = std::exp(row[i] - mx);
      sum += out[i];
    }
    T inv = T(1) / sum;
    for (size_t i = 0; i < D; ++i) out[i] *= inv;
  }
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, R, D](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t r = 0; r < R; ++r) {
        const T* y = self.value.data() + r * D;
        const T* g = self.grad.data() + r * D;
        T dot = T(0);
        for (size_t i = 0; i < D; ++i) dot += g[i] * y[i];
        T* dx = px->grad.data() + r * D;
        for (size_t i = 0; i < D; ++i) dx[i] += y[i] * (g[i] - dot);
      }
    };
  }
  return Tensor<T>(n);
}

// Full bidirectional self-attention over a token sequence x: [Tk, D].
// wqkv: [3D, D], wproj: [D, D].
template <class T>
Tensor<T> multihead_attention(const Tensor<T>& x, const Tensor<T>& wqkv,
                              const Tensor<T>& bqkv, const Tensor<T>& wproj,
                              const Tensor<T>& bproj, size_t heads) {
  size_t Tk = x.dim(0), D = x.dim(1);
  if (D % heads != 0)
    throw TensorError("multihead_attention: embed dim " + std::to_string(D) +
                      " not divisible by " + std::to_string(heads) + " heads");
  size_t Dh = D / heads;

  Tensor<T> qkv = linear(x, wqkv, bqkv);  // [Tk, 3D]
  Tensor<T> q = slice(qkv, 1, 0, D);
  Tensor<T> k = slice(qkv, 1, D, D);
  Tensor<T> v = slice(qkv, 1, 2 * D, D);

  auto split = [&](const Tensor<T>& t) {
    return permute(reshape(t, {Tk, heads, Dh}), {1, 0, 2});  // [H, Tk, Dh]
  };
  Tensor<T> qh = split(q), kh = split(k), vh = split(v);

  Tensor<T> scores = mul(bmm(qh, kh, /*transpose_b=*/true), T(1) / std::sqrt(T(Dh)));
  Tensor<T> attn = softmax(scores);            // [H, Tk, Tk]
  Tensor<T> ctx = bmm(attn, vh);               // [H, Tk, Dh]
  Tensor<T> merged = reshape(permute(ctx, {1, 0, 2}), {Tk, D});
  return linear(merged, wproj, bproj);
}

// ---- spatial helpers on the last two dims ----

template <class T>
Tensor<T> crop2d(const Tensor<T>& x, size_t top, size_t left, size_t h, size_t w) {
  size_t nd = x.ndim();
  if (nd < 2) throw TensorError("crop2d: rank < 2");
  return slice(slice(x, nd - 2, top, h), nd - 1, left, w);
}

// Keep every step-th pixel starting at 0 (nearest decimation).
template <class T>
Tensor<T> decimate2d(const Tensor<T>& x, size_t step) {
  size_t nd = x.ndim();
  if (nd < 2 || step == 0) throw TensorError("decimate2d: bad arguments");
  size_t H = x.dim(nd - 2), W = x.dim(nd - 1);
  size_t OH = (H + step - 1) / step, OW = (W + step - 1) / step;
  size_t outer = x.numel() / (H * W);
  Shape rs = x.shape();
  rs[nd - 2] = OH;
  rs[nd - 1] = OW;
  auto n = detail::make_node<T>(rs, {x.node()});
  const auto& xv = x.data();
  for (size_t o = 0; o < outer; ++o) {
    const T* src = xv.data() + o * H * W;
    T* dst = n->value.data() + o * OH * OW;
    for (size_t y = 0; y < OH; ++y)
      for (size_t xarg = 0; xarg < OW; ++xarg)
        dst[y * OW + xarg] = src[(y * step) * W + xarg * step];
  }
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, outer, H, W, OH, OW, step](TensorNode<T>& self) {
      px->ensure_grad();
      for (size_t o = 0; o < outer; ++o) {
        T* dx = px->grad.data() + o * H * W;
        const T* g = self.grad.data() + o * OH * OW;
        for (size_t y = 0; y < OH; ++y)
          for (size_t xarg = 0; xarg < OW; ++xarg)
            dx[(y * step) * W + xarg * step] += g[y * OW + xarg];
      }
    };
  }
  return Tensor<T>(n);
}

template <class T>
Tensor<T> replicate_pad2d(const Tensor<T>& x, size_t top, size_t bottom, size_t left,
                          size_t right) {
  size_t nd = x.ndim();
  if (nd < 2) throw TensorError("replicate_pad2d: rank < 2");
  size_t H = x.dim(nd - 2), W = x.dim(nd - 1);
  size_t OH = H + top + bottom, OW = W + left + right;
  size_t outer = x.numel() / (H * W);
  Shape rs = x.shape();
  rs[nd - 2] = OH;
  rs[nd - 1] = OW;
  auto n = detail::make_node<T>(rs, {x.node()});
  const auto& xv = x.data();
  auto clampi = [](ptrdiff_t v, ptrdiff_t hi) {
    return size_t(std::min(std::max(v, ptrdiff_t(0)), hi));
  };
  for (size_t o = 0; o < outer; ++o) {
    const T* src = xv.data() + o * H * W;
    T* dst = n->value.data() + o * OH * OW;
    for (size_t y = 0; y < OH; ++y) {
      size_t sy = clampi(ptrdiff_t(y) - ptrdiff_t(top), ptrdiff_t(H) - 1);
      for (size_t xc = 0; xc < OW; ++xc) {
        size_t sx = clampi(ptrdiff_t(xc) - ptrdiff_t(left), ptrdiff_t(W) - 1);
        dst[y * OW + xc] = src[sy * W + sx];
      }
    }
  }
  if (n->requires_grad) {
    auto px = x.node();
    n->backward_fn = [px, outer, H, W, OH, OW, top, left](TensorNode<T>& self) {
      px->ensure_grad();
      auto clampi = [](ptrdiff_t v, ptrdiff_t hi) {
        return size_t(std::min(std::max(v, ptrdiff_t(0)), hi));
      };
      for (size_t o = 0; o < outer; ++o) {
        T* dx = px->grad.data() + o * H * W;
        const T* g = self.grad.data() + o * OH * OW;
        for (size_t y = 0; y < OH; ++y) {
          size_t sy = clampi(ptrdiff_t(y) - ptrdiff_t(top), ptrdiff_t(H) - 1);
          for (size_t xc = 0; xc < OW; ++xc) {
            size_t sx = clampi(ptrdiff_t(xc) - ptrdiff_t(left), ptrdiff_t(W) - 1);
            dx[sy * W + sx] += g[y * OW + xc];
          }
        }
      }
    };
  }
  return Tensor<T>(n);
}

}  // namespace david
