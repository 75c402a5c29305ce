#pragma once

#include <cstring>
#include <memory>
#include <vector>

#include "aarmvs/core/gemm.hpp"
#include "aarmvs/nn/ops_basic.hpp"

namespace aarmvs {

namespace detail {

template <typename T>
std::vector<T>& scratch_a() {
  thread_local std::vector<T> buf;
  return buf;
}
template <typename T>
std::vector<T>& scratch_b() {
  thread_local std::vector<T> buf;
  return buf;
}

// Patch matrix (oh*ow, kh*kw*ci) with (ky, kx, c) channel-fastest columns;
// zero padding outside bounds.
template <typename T>
void im2col(const T* x, int64_t h, int64_t w, int64_t ci, int64_t kh, int64_t kw, int64_t stride,
            int64_t pad, int64_t oh, int64_t ow, T* cols) {
  const int64_t kk = kh * kw * ci;
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      const int64_t iy = oy * stride + ky - pad;
      const bool row_ok = iy >= 0 && iy < h;
      for (int64_t kx = 0; kx < kw; ++kx) {
        const int64_t coff = (ky * kw + kx) * ci;
        for (int64_t ox = 0; ox < ow; ++ox) {
          T* dst = cols + (oy * ow + ox) * kk + coff;
          const int64_t ix = ox * stride + kx - pad;
          if (row_ok && ix >= 0 && ix < w)
            std::memcpy(dst, x + (iy * w + ix) * ci, sizeof(T) * static_cast<size_t>(ci));
          else
            std::memset(dst, 0, sizeof(T) * static_cast<size_t>(ci));
        }
      }
    }
  }
}

// Scatter-add transpose of im2col.
template <typename T>
void col2im(const T* cols, int64_t h, int64_t w, int64_t ci, int64_t kh, int64_t kw,
            int64_t stride, int64_t pad, int64_t oh, int64_t ow, T* x) {
  const int64_t kk = kh * kw * ci;
  for (int64_t oy = 0; oy < oh; ++oy) {
    for (int64_t ky = 0; ky < kh; ++ky) {
      const int64_t iy = oy * stride + ky - pad;
      if (iy < 0 || iy >= h) continue;
      for (int64_t kx = 0; kx < kw; ++kx) {
        const int64_t coff = (ky * kw + kx) * ci;
        for (int64_t ox = 0; ox < ow; ++ox) {
          const int64_t ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= w) continue;
          const T* src = cols + (oy * ow + ox) * kk + coff;
          T* dst = x + (iy * w + ix) * ci;
          for (int64_t c = 0; c < ci; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace detail

// 2D convolution on (H,W,C) with weights (KH,KW,Cin,Cout), zero padding.
// bias may be null.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, int64_t stride,
              int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.rank() != 3 || ws.rank() != 4)
    throw std::invalid_argument("conv2d: want x (H,W,C), weight (KH,KW,Cin,Cout)");
  if (xs[2] != ws[2])
    throw std::invalid_argument("conv2d: channel mismatch: input has " + std::to_string(xs[2]) +
                                ", kernel expects " + std::to_string(ws[2]));
  const int64_t h = xs[0], w = xs[1], ci = xs[2];
  const int64_t kh = ws[0], kw = ws[1], co = ws[3];
  const int64_t oh = (h + 2 * pad - kh) / stride + 1;
  const int64_t ow = (w + 2 * pad - kw) / stride + 1;
  const int64_t m = oh * ow, kk = kh * kw * ci;

  auto out = std::make_shared<Tensor<T>>(Shape{oh, ow, co});
  {
    auto& cols = detail::scratch_a<T>();
    cols.resize(static_cast<size_t>(m * kk));
    detail::im2col(x.val().ptr(), h, w, ci, kh, kw, stride, pad, oh, ow, cols.data());
    gemm<T>(m, kk, co, cols.data(), false, weight.val().ptr(), false, out->ptr());
  }
  if (bias) {
    const T* pb = bias->val().ptr();
    T* po = out->ptr();
    for (int64_t p = 0; p < m; ++p)
      for (int64_t c = 0; c < co; ++c) po[p * co + c] += pb[c];
  }

  Tape<T>* tp = detail::result_tape<T>({&x, &weight, bias ? bias : &x});
  if (!tp) return Var<T>(out, nullptr, -1);
  const int ib = bias ? bias->id : -1;
  return detail::attach<T>(
      tp, out,
      [ix = x.id, iw = weight.id, ib, xv = x.v, wv = weight.v, h, w, ci, kh, kw, co, stride, pad,
       oh, ow, m, kk](Tape<T>& t, const Tensor<T>& g) {
        if (iw >= 0) {
          auto& cols = detail::scratch_a<T>();
          cols.resize(static_cast<size_t>(m * kk));
          detail::im2col(xv->ptr(), h, w, ci, kh, kw, stride, pad, oh, ow, cols.data());
          gemm<T>(kk, m, co, cols.data(), true, g.ptr(), false, t.grad(iw).ptr(), T(1), T(1));
        }
        if (ib >= 0) {
          T* gb = t.grad(ib).ptr();
          const T* pg = g.ptr();
          for (int64_t p = 0; p < m; ++p)
            for (int64_t c = 0; c < co; ++c) gb[c] += pg[p * co + c];
        }
        if (ix >= 0) {
          auto& dcols = detail::scratch_b<T>();
          dcols.resize(static_cast<size_t>(m * kk));
          gemm<T>(m, co, kk, g.ptr(), false, wv->ptr(), true, dcols.data());
          detail::col2im(dcols.data(), h, w, ci, kh, kw, stride, pad, oh, ow, t.grad(ix).ptr());
        }
      });
}

// Transposed 2D convolution (stride-2 upsampling decoder layers). Weights
// (KH,KW,Cin,Cout); output (stride*H, stride*W, Cout) via output_padding =
// stride - 1 so the result exactly doubles the input for stride 2, kernel 3,
// pad 1.
template <typename T>
Var<T> conv2d_transpose(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, int64_t stride,
                        int64_t pad) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.rank() != 3 || ws.rank() != 4)
    throw std::invalid_argument("conv2d_transpose: want x (H,W,C), weight (KH,KW,Cin,Cout)");
  if (xs[2] != ws[2]) throw std::invalid_argument("conv2d_transpose: channel mismatch");
  const int64_t h = xs[0], w = xs[1], ci = xs[2];
  const int64_t kh = ws[0], kw = ws[1], co = ws[3];
  const int64_t outpad = stride - 1;
  const int64_t oh = (h - 1) * stride - 2 * pad + kh + outpad;
  const int64_t ow = (w - 1) * stride - 2 * pad + kw + outpad;
  const int64_t m = h * w, kk = kh * kw * co;

  // W permuted to (Cin, KH*KW*Cout) so cols = X * Wperm.
  auto permute_w = [&](const T* src, T* dst) {
    for (int64_t ky = 0; ky < kh; ++ky)
      for (int64_t kx = 0; kx < kw; ++kx)
        for (int64_t c = 0; c < ci; ++c)
          for (int64_t o = 0; o < co; ++o)
            dst[c * kk + (ky * kw + kx) * co + o] = src[((ky * kw + kx) * ci + c) * co + o];
  };

  auto out = std::make_shared<Tensor<T>>(Shape{oh, ow, co});
  {
    std::vector<T> wperm(static_cast<size_t>(ci * kk));
    permute_w(weight.val().ptr(), wperm.data());
    auto& cols = detail::scratch_a<T>();
    cols.resize(static_cast<size_t>(m * kk));
    gemm<T>(m, ci, kk, x.val().ptr(), false, wperm.data(), false, cols.data());
    T* po = out->ptr();
    for (int64_t iy = 0; iy < h; ++iy)
      for (int64_t ix = 0; ix < w; ++ix) {
        const T* crow = cols.data() + (iy * w + ix) * kk;
        for (int64_t ky = 0; ky < kh; ++ky) {
          const int64_t oy = iy * stride + ky - pad;
          if (oy < 0 || oy >= oh) continue;
          for (int64_t kx = 0; kx < kw; ++kx) {
            const int64_t ox = ix * stride + kx - pad;
            if (ox < 0 || ox >= ow) continue;
            const T* src = crow + (ky * kw + kx) * co;
            T* dst = po + (oy * ow + ox) * co;
            for (int64_t o = 0; o < co; ++o) dst[o] += src[o];
          }
        }
      }
  }
  if (bias) {
    const T* pb = bias->val().ptr();
    T* po = out->ptr();
    for (int64_t p = 0; p < oh * ow; ++p)
      for (int64_t c = 0; c < co; ++c) po[p * co + c] += pb[c];
  }

  Tape<T>* tp = detail::result_tape<T>({&x, &weight, bias ? bias : &x});
  if (!tp) return Var<T>(out, nullptr, -1);
  const int ib = bias ? bias->id : -1;
  return detail::attach<T>(
      tp, out,
      [ix = x.id, iw = weight.id, ib, xv = x.v, wv = weight.v, permute_w, h, w, ci, kh, kw, co,
       stride, pad, oh, ow, m, kk](Tape<T>& t, const Tensor<T>& g) {
        // dcols[m,(ky,kx,o)] = g at the scattered location (gather).
        auto& dcols = detail::scratch_a<T>();
        dcols.resize(static_cast<size_t>(m * kk));
        const T* pg = g.ptr();
        for (int64_t iy = 0; iy < h; ++iy)
          for (int64_t ix2 = 0; ix2 < w; ++ix2) {
            T* crow = dcols.data() + (iy * w + ix2) * kk;
            for (int64_t ky = 0; ky < kh; ++ky) {
              const int64_t oy = iy * stride + ky - pad;
              for (int64_t kx = 0; kx < kw; ++kx) {
                const int64_t ox = ix2 * stride + kx - pad;
                T* dst = crow + (ky * kw + kx) * co;
                if (oy < 0 || oy >= oh || ox < 0 || ox >= ow)
                  std::memset(dst, 0, sizeof(T) * static_cast<size_t>(co));
                else
                  std::memcpy(dst, pg + (oy * ow + ox) * co, sizeof(T) * static_cast<size_t>(co));
              }
            }
          }
        if (ix >= 0) {
          std::vector<T> wperm(static_cast<size_t>(ci * kk));
          permute_w(wv->ptr(), wperm.data());
          gemm<T>(m, kk, ci, dcols.data(), false, wperm.data(), true, t.grad(ix).ptr(), T(1), T(1));
        }
        if (iw >= 0) {
          std::vector<T> dwperm(static_cast<size_t>(ci * kk), T(0));
          gemm<T>(ci, m, kk, xv->ptr(), true, dcols.data(), false, dwperm.data());
          T* gw = t.grad(iw).ptr();
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx)
              for (int64_t c = 0; c < ci; ++c)
                for (int64_t o = 0; o < co; ++o)
                  gw[((ky * kw + kx) * ci + c) * co + o] +=
                      dwperm[c * kk + (ky * kw + kx) * co + o];
        }
        if (ib >= 0) {
          T* gb = t.grad(ib).ptr();
          for (int64_t p = 0; p < oh * ow; ++p)
            for (int64_t c = 0; c < co; ++c) gb[c] += pg[p * co + c];
        }
      });
}

// Group normalization over (H,W,channels-in-group), affine per channel.
// Zero input stays exactly zero (epsilon in the denominator, beta = 0).
template <typename T>
Var<T> group_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, int64_t groups,
                  T eps = T(1e-5)) {
  const Shape& xs = x.shape();
  if (xs.rank() != 3) throw std::invalid_argument("group_norm: want (H,W,C)");
  const int64_t hw = xs[0] * xs[1], c = xs[2];
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  const int64_t cg = c / groups;
  const int64_t n = hw * cg;

  auto out = std::make_shared<Tensor<T>>(xs);
  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
  auto istd = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
  const T* px = x.val().ptr();
  const T* pgm = gamma.val().ptr();
  const T* pbt = beta.val().ptr();
  T* po = out->ptr();
  for (int64_t gi = 0; gi < groups; ++gi) {
    double s = 0, s2 = 0;
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t k = 0; k < cg; ++k) {
        const double v = static_cast<double>(px[p * c + gi * cg + k]);
        s += v;
        s2 += v * v;
      }
    const double m = s / static_cast<double>(n);
    const double var = s2 / static_cast<double>(n) - m * m;
    const T is = static_cast<T>(1.0 / std::sqrt(std::max(var, 0.0) + static_cast<double>(eps)));
    (*mu)[static_cast<size_t>(gi)] = static_cast<T>(m);
    (*istd)[static_cast<size_t>(gi)] = is;
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t k = 0; k < cg; ++k) {
        const int64_t idx = p * c + gi * cg + k;
        const T xhat = (px[idx] - static_cast<T>(m)) * is;
        po[idx] = pgm[gi * cg + k] * xhat + pbt[gi * cg + k];
      }
  }

  Tape<T>* tp = detail::result_tape<T>({&x, &gamma, &beta});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(
      tp, out,
      [ix = x.id, ig = gamma.id, ibt = beta.id, xv = x.v, gmv = gamma.v, mu, istd, hw, c, cg,
       groups, n](Tape<T>& t, const Tensor<T>& g) {
        const T* px = xv->ptr();
        const T* pgm = gmv->ptr();
        for (int64_t gi = 0; gi < groups; ++gi) {
          const T m = (*mu)[static_cast<size_t>(gi)];
          const T is = (*istd)[static_cast<size_t>(gi)];
          double sum_dxhat = 0, sum_dxhat_xhat = 0;
          for (int64_t p = 0; p < hw; ++p)
            for (int64_t k = 0; k < cg; ++k) {
              const int64_t idx = p * c + gi * cg + k;
              const double xhat = static_cast<double>((px[idx] - m) * is);
              const double dxhat = static_cast<double>(g[idx] * pgm[gi * cg + k]);
              sum_dxhat += dxhat;
              sum_dxhat_xhat += dxhat * xhat;
            }
          if (ix >= 0) {
            T* gx = t.grad(ix).ptr();
            const double inv_n = 1.0 / static_cast<double>(n);
            for (int64_t p = 0; p < hw; ++p)
              for (int64_t k = 0; k < cg; ++k) {
                const int64_t idx = p * c + gi * cg + k;
                const double xhat = static_cast<double>((px[idx] - m) * is);
                const double dxhat = static_cast<double>(g[idx] * pgm[gi * cg + k]);
                gx[idx] += static_cast<T>(static_cast<double>(is) *
                                          (dxhat - sum_dxhat * inv_n - xhat * sum_dxhat_xhat * inv_n));
              }
          }
          if (ig >= 0 || ibt >= 0) {
            for (int64_t k = 0; k < cg; ++k) {
              double dgm = 0, dbt = 0;
              for (int64_t p = 0; p < hw; ++p) {
                const int64_t idx = p * c + gi * cg + k;
                const double xhat = static_cast<double>((px[idx] - m) * is);
                dgm += static_cast<double>(g[idx]) * xhat;
                dbt += static_cast<double>(g[idx]);
              }
              if (ig >= 0) t.grad(ig)[gi * cg + k] += static_cast<T>(dgm);
              if (ibt >= 0) t.grad(ibt)[gi * cg + k] += static_cast<T>(dbt);
            }
          }
        }
      });
}

// 2x2 max pooling, stride 2. Ties resolve to the first element in scan
// order, which keeps backward deterministic.
template <typename T>
Var<T> maxpool2x2(const Var<T>& x) {
  const Shape& xs = x.shape();
  if (xs.rank() != 3 || xs[0] % 2 != 0 || xs[1] % 2 != 0)
    throw std::invalid_argument("maxpool2x2: want (H,W,C) with even H, W; got " + xs.str());
  const int64_t h = xs[0], w = xs[1], c = xs[2];
  const int64_t oh = h / 2, ow = w / 2;
  auto out = std::make_shared<Tensor<T>>(Shape{oh, ow, c});
  auto arg = std::make_shared<std::vector<uint8_t>>(static_cast<size_t>(oh * ow * c));
  const T* px = x.val().ptr();
  T* po = out->ptr();
  for (int64_t oy = 0; oy < oh; ++oy)
    for (int64_t ox = 0; ox < ow; ++ox)
      for (int64_t k = 0; k < c; ++k) {
        T best = px[((2 * oy) * w + 2 * ox) * c + k];
        uint8_t bi = 0;
        for (uint8_t q = 1; q < 4; ++q) {
          const int64_t iy = 2 * oy + (q >> 1), ix = 2 * ox + (q & 1);
          const T v = px[(iy * w + ix) * c + k];
          if (v > best) {
            best = v;
            bi = q;
          }
        }
        po[(oy * ow + ox) * c + k] = best;
        (*arg)[static_cast<size_t>((oy * ow + ox) * c + k)] = bi;
      }
  Tape<T>* tp = detail::result_tape<T>({&x});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ix = x.id, arg, oh, ow, w, c](Tape<T>& t, const Tensor<T>& g) {
    if (ix < 0) return;
    T* gx = t.grad(ix).ptr();
    for (int64_t oy = 0; oy < oh; ++oy)
      for (int64_t ox = 0; ox < ow; ++ox)
        for (int64_t k = 0; k < c; ++k) {
          const uint8_t q = (*arg)[static_cast<size_t>((oy * ow + ox) * c + k)];
          const int64_t iy = 2 * oy + (q >> 1), ixx = 2 * ox + (q & 1);
          gx[(iy * w + ixx) * c + k] += g[(oy * ow + ox) * c + k];
        }
  });
}

// Fully-connected map over pixels: out(H,W,Cout) = x(H,W,K) * W + b, where
// the weight tensor may be any shape with numel == K*Cout (e.g. a 3x3 kernel
// applied to gathered patches).
template <typename T>
Var<T> linear_hw(const Var<T>& x, const Var<T>& weight, const Var<T>* bias, int64_t co) {
  const Shape& xs = x.shape();
  if (xs.rank() != 3) throw std::invalid_argument("linear_hw: want (H,W,K)");
  const int64_t m = xs[0] * xs[1], kk = xs[2];
  if (weight.val().numel() != kk * co) throw std::invalid_argument("linear_hw: weight size mismatch");
  auto out = std::make_shared<Tensor<T>>(Shape{xs[0], xs[1], co});
  gemm<T>(m, kk, co, x.val().ptr(), false, weight.val().ptr(), false, out->ptr());
  if (bias) {
    const T* pb = bias->val().ptr();
    T* po = out->ptr();
    for (int64_t p = 0; p < m; ++p)
      for (int64_t c = 0; c < co; ++c) po[p * co + c] += pb[c];
  }
  Tape<T>* tp = detail::result_tape<T>({&x, &weight, bias ? bias : &x});
  if (!tp) return Var<T>(out, nullptr, -1);
  const int ib = bias ? bias->id : -1;
  return detail::attach<T>(
      tp, out, [ix = x.id, iw = weight.id, ib, xv = x.v, wv = weight.v, m, kk, co](
                   Tape<T>& t, const Tensor<T>& g) {
        if (iw >= 0) gemm<T>(kk, m, co, xv->ptr(), true, g.ptr(), false, t.grad(iw).ptr(), T(1), T(1));
        if (ix >= 0) gemm<T>(m, co, kk, g.ptr(), false, wv->ptr(), true, t.grad(ix).ptr(), T(1), T(1));
        if (ib >= 0) {
          T* gb = t.grad(ib).ptr();
          const T* pg = g.ptr();
          for (int64_t p = 0; p < m; ++p)
            for (int64_t c = 0; c < co; ++c) gb[c] += pg[p * co + c];
        }
      });
}

}  // namespace aarmvs
