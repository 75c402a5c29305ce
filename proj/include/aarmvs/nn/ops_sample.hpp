#pragma once

#include <cmath>
#include <memory>

#include "aarmvs/nn/ops_basic.hpp"

namespace aarmvs {

// Bilinear resize of (h,w,C) to (oh,ow,C), align_corners = false, edge
// clamped. Exactly the identity when oh == h and ow == w.
template <typename T>
Var<T> upsample_bilinear(const Var<T>& x, int64_t oh, int64_t ow) {
  const Shape& xs = x.shape();
  if (xs.rank() != 3) throw std::invalid_argument("upsample_bilinear: want (H,W,C)");
  const int64_t h = xs[0], w = xs[1], c = xs[2];
  auto out = std::make_shared<Tensor<T>>(Shape{oh, ow, c});

  struct TapW {
    int64_t i0, i1;
    T w1;
  };
  auto taps = [](int64_t in, int64_t on) {
    std::vector<TapW> v(static_cast<size_t>(on));
    const double r = static_cast<double>(in) / static_cast<double>(on);
    for (int64_t o = 0; o < on; ++o) {
      double s = (static_cast<double>(o) + 0.5) * r - 0.5;
      if (s < 0) s = 0;
      const double f = std::floor(s);
      int64_t i0 = static_cast<int64_t>(f);
      if (i0 > in - 1) i0 = in - 1;
      int64_t i1 = std::min(i0 + 1, in - 1);
      v[static_cast<size_t>(o)] = {i0, i1, static_cast<T>(s - f)};
    }
    return v;
  };
  auto ty = std::make_shared<std::vector<TapW>>(taps(h, oh));
  auto tx = std::make_shared<std::vector<TapW>>(taps(w, ow));

  const T* px = x.val().ptr();
  T* po = out->ptr();
  for (int64_t oy = 0; oy < oh; ++oy) {
    const auto& ry = (*ty)[static_cast<size_t>(oy)];
    for (int64_t ox = 0; ox < ow; ++ox) {
      const auto& rx = (*tx)[static_cast<size_t>(ox)];
      const T w00 = (T(1) - ry.w1) * (T(1) - rx.w1), w01 = (T(1) - ry.w1) * rx.w1;
      const T w10 = ry.w1 * (T(1) - rx.w1), w11 = ry.w1 * rx.w1;
      const T* p00 = px + (ry.i0 * w + rx.i0) * c;
      const T* p01 = px + (ry.i0 * w + rx.i1) * c;
      const T* p10 = px + (ry.i1 * w + rx.i0) * c;
      const T* p11 = px + (ry.i1 * w + rx.i1) * c;
      T* dst = po + (oy * ow + ox) * c;
      for (int64_t k = 0; k < c; ++k)
        dst[k] = w00 * p00[k] + w01 * p01[k] + w10 * p10[k] + w11 * p11[k];
    }
  }

  Tape<T>* tp = detail::result_tape<T>({&x});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out,
                           [ix = x.id, ty, tx, oh, ow, w, c](Tape<T>& t, const Tensor<T>& g) {
                             if (ix < 0) return;
                             T* gx = t.grad(ix).ptr();
                             for (int64_t oy = 0; oy < oh; ++oy) {
                               const auto& ry = (*ty)[static_cast<size_t>(oy)];
                               for (int64_t ox = 0; ox < ow; ++ox) {
                                 const auto& rx = (*tx)[static_cast<size_t>(ox)];
                                 const T w00 = (T(1) - ry.w1) * (T(1) - rx.w1);
                                 const T w01 = (T(1) - ry.w1) * rx.w1;
                                 const T w10 = ry.w1 * (T(1) - rx.w1);
                                 const T w11 = ry.w1 * rx.w1;
                                 const T* gp = g.ptr() + (oy * ow + ox) * c;
                                 for (int64_t k = 0; k < c; ++k) {
                                   gx[(ry.i0 * w + rx.i0) * c + k] += w00 * gp[k];
                                   gx[(ry.i0 * w + rx.i1) * c + k] += w01 * gp[k];
                                   gx[(ry.i1 * w + rx.i0) * c + k] += w10 * gp[k];
                                   gx[(ry.i1 * w + rx.i1) * c + k] += w11 * gp[k];
                                 }
                               }
                             }
                           });
}

namespace detail {

// Zero-padded bilinear read at (y, x); corners outside the image contribute
// nothing. Returns the four corner indices/weights for reuse in backward.
struct BilinearTaps {
  int64_t idx[4];  // -1 when out of bounds
  double wgt[4];
  double y0w, x0w;  // fractional parts for position gradients
  int64_t y0, x0;
};

inline BilinearTaps bilinear_taps(double y, double x, int64_t h, int64_t w) {
  BilinearTaps t{};
  const double fy = std::floor(y), fx = std::floor(x);
  const int64_t y0 = static_cast<int64_t>(fy), x0 = static_cast<int64_t>(fx);
  const double ay = y - fy, ax = x - fx;
  t.y0 = y0;
  t.x0 = x0;
  t.y0w = ay;
  t.x0w = ax;
  const int64_t ys[2] = {y0, y0 + 1};
  const int64_t xs[2] = {x0, x0 + 1};
  const double wy[2] = {1.0 - ay, ay};
  const double wx[2] = {1.0 - ax, ax};
  int q = 0;
  for (int iy = 0; iy < 2; ++iy)
    for (int ix = 0; ix < 2; ++ix, ++q) {
      if (ys[iy] >= 0 && ys[iy] < h && xs[ix] >= 0 && xs[ix] < w) {
        t.idx[q] = ys[iy] * w + xs[ix];
        t.wgt[q] = wy[iy] * wx[ix];
      } else {
        t.idx[q] = -1;
        t.wgt[q] = 0.0;
      }
    }
  return t;
}

}  // namespace detail

// Warp a source feature map onto the reference grid: out[p] = f(coords[p])
// where valid, 0 elsewhere. coords is (H,W,2) as (y,x) continuous pixels and
// valid is (H,W) in {0,1}; both are plain data (camera geometry), so only f
// receives gradients.
template <typename T>
Var<T> warp_bilinear(const Var<T>& f, const Tensor<T>& coords, const Tensor<uint8_t>& valid) {
  const Shape& fs = f.shape();
  if (fs.rank() != 3) throw std::invalid_argument("warp_bilinear: want f (h,w,C)");
  if (coords.shape.rank() != 3 || coords.shape[2] != 2)
    throw std::invalid_argument("warp_bilinear: coords must be (H,W,2)");
  const int64_t oh = coords.shape[0], ow = coords.shape[1];
  if (valid.shape != Shape{oh, ow}) throw std::invalid_argument("warp_bilinear: valid mask shape");
  const int64_t h = fs[0], w = fs[1], c = fs[2];

  auto out = std::make_shared<Tensor<T>>(Shape{oh, ow, c});
  const T* pf = f.val().ptr();
  T* po = out->ptr();
  for (int64_t p = 0; p < oh * ow; ++p) {
    if (!valid[p]) continue;  // already zero
    const auto taps = detail::bilinear_taps(static_cast<double>(coords[2 * p]),
                                            static_cast<double>(coords[2 * p + 1]), h, w);
    T* dst = po + p * c;
    for (int q = 0; q < 4; ++q) {
      if (taps.idx[q] < 0) continue;
      const T wq = static_cast<T>(taps.wgt[q]);
      const T* src = pf + taps.idx[q] * c;
      for (int64_t k = 0; k < c; ++k) dst[k] += wq * src[k];
    }
  }

  Tape<T>* tp = detail::result_tape<T>({&f});
  if (!tp) return Var<T>(out, nullptr, -1);
  auto coords_copy = std::make_shared<Tensor<T>>(coords);
  auto valid_copy = std::make_shared<Tensor<uint8_t>>(valid);
  return detail::attach<T>(
      tp, out, [ifd = f.id, coords_copy, valid_copy, oh, ow, h, w, c](Tape<T>& t, const Tensor<T>& g) {
        if (ifd < 0) return;
        T* gf = t.grad(ifd).ptr();
        const Tensor<T>& cc = *coords_copy;
        for (int64_t p = 0; p < oh * ow; ++p) {
          if (!(*valid_copy)[p]) continue;
          const auto taps = detail::bilinear_taps(static_cast<double>(cc[2 * p]),
                                                  static_cast<double>(cc[2 * p + 1]), h, w);
          const T* gp = g.ptr() + p * c;
          for (int q = 0; q < 4; ++q) {
            if (taps.idx[q] < 0) continue;
            const T wq = static_cast<T>(taps.wgt[q]);
            T* dst = gf + taps.idx[q] * c;
            for (int64_t k = 0; k < c; ++k) dst[k] += wq * gp[k];
          }
        }
      });
}

// Gather modulated deformable 3x3 patches: for pixel p and tap k at grid
// offset (ky-1, kx-1), sample f at p + grid + offset[p,k] bilinearly
// (zero-padded) and scale by modulation[p,k]. Output (H,W,9*C) feeds a
// linear map to complete the deformable convolution. Gradients flow to the
// feature map, the offsets, and the modulation.
template <typename T>
Var<T> deform_gather(const Var<T>& f, const Var<T>& offsets, const Var<T>& modulation) {
  const Shape& fs = f.shape();
  if (fs.rank() != 3) throw std::invalid_argument("deform_gather: want f (H,W,C)");
  const int64_t h = fs[0], w = fs[1], c = fs[2];
  if (offsets.shape() != Shape{h, w, 18})
    throw std::invalid_argument("deform_gather: offsets must be (H,W,18)");
  if (modulation.shape() != Shape{h, w, 9})
    throw std::invalid_argument("deform_gather: modulation must be (H,W,9)");

  auto out = std::make_shared<Tensor<T>>(Shape{h, w, 9 * c});
  const T* pf = f.val().ptr();
  const T* pofs = offsets.val().ptr();
  const T* pmod = modulation.val().ptr();
  T* po = out->ptr();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      const int64_t p = y * w + x;
      for (int k = 0; k < 9; ++k) {
        const double sy = static_cast<double>(y) + (k / 3 - 1) + static_cast<double>(pofs[p * 18 + 2 * k]);
        const double sx = static_cast<double>(x) + (k % 3 - 1) + static_cast<double>(pofs[p * 18 + 2 * k + 1]);
        const auto taps = detail::bilinear_taps(sy, sx, h, w);
        const T m = pmod[p * 9 + k];
        T* dst = po + p * 9 * c + k * c;
        for (int q = 0; q < 4; ++q) {
          if (taps.idx[q] < 0) continue;
          const T wq = static_cast<T>(taps.wgt[q]);
          const T* src = pf + taps.idx[q] * c;
          for (int64_t kk = 0; kk < c; ++kk) dst[kk] += wq * src[kk];
        }
        for (int64_t kk = 0; kk < c; ++kk) dst[kk] *= m;
      }
    }

  Tape<T>* tp = detail::result_tape<T>({&f, &offsets, &modulation});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(
      tp, out,
      [idf = f.id, ido = offsets.id, idm = modulation.id, fv = f.v, ov = offsets.v,
       mv = modulation.v, h, w, c](Tape<T>& t, const Tensor<T>& g) {
        const T* pf = fv->ptr();
        const T* pofs = ov->ptr();
        const T* pmod = mv->ptr();
        T* gf = idf >= 0 ? t.grad(idf).ptr() : nullptr;
        T* go = ido >= 0 ? t.grad(ido).ptr() : nullptr;
        T* gm = idm >= 0 ? t.grad(idm).ptr() : nullptr;
        for (int64_t y = 0; y < h; ++y)
          for (int64_t x = 0; x < w; ++x) {
            const int64_t p = y * w + x;
            for (int k = 0; k < 9; ++k) {
              const double sy =
                  static_cast<double>(y) + (k / 3 - 1) + static_cast<double>(pofs[p * 18 + 2 * k]);
              const double sx =
                  static_cast<double>(x) + (k % 3 - 1) + static_cast<double>(pofs[p * 18 + 2 * k + 1]);
              const auto taps = detail::bilinear_taps(sy, sx, h, w);
              const T m = pmod[p * 9 + k];
              const T* gp = g.ptr() + p * 9 * c + k * c;

              // corner values for the sampled vector (pre-modulation)
              double sample_dot_g = 0.0;   // sum_c sample[c] * g[c]
              double dy_dot_g = 0.0;       // sum_c d(sample)/dy [c] * g[c]
              double dx_dot_g = 0.0;
              const double ay = taps.y0w, ax = taps.x0w;
              const double cw[4] = {(1 - ay) * (1 - ax), (1 - ay) * ax, ay * (1 - ax), ay * ax};
              // d w / dy for corners (y0x0, y0x1, y1x0, y1x1)
              const double dwy[4] = {-(1 - ax), -ax, (1 - ax), ax};
              const double dwx[4] = {-(1 - ay), (1 - ay), -ay, ay};
              for (int q = 0; q < 4; ++q) {
                if (taps.idx[q] < 0) continue;
                const T* src = pf + taps.idx[q] * c;
                double dot = 0.0;
                for (int64_t kk = 0; kk < c; ++kk) dot += static_cast<double>(src[kk]) * gp[kk];
                sample_dot_g += cw[q] * dot;
                dy_dot_g += dwy[q] * dot;
                dx_dot_g += dwx[q] * dot;
                if (gf) {
                  const T wq = static_cast<T>(cw[q]) * m;
                  T* dst = gf + taps.idx[q] * c;
                  for (int64_t kk = 0; kk < c; ++kk) dst[kk] += wq * gp[kk];
                }
              }
              if (gm) gm[p * 9 + k] += static_cast<T>(sample_dot_g);
              if (go) {
                go[p * 18 + 2 * k] += static_cast<T>(dy_dot_g * static_cast<double>(m));
                go[p * 18 + 2 * k + 1] += static_cast<T>(dx_dot_g * static_cast<double>(m));
              }
            }
          }
      });
}

}  // namespace aarmvs
