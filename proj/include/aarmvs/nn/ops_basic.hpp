#pragma once

#include <cmath>
#include <memory>

#include "aarmvs/nn/tape.hpp"

namespace aarmvs {

namespace detail {

template <typename T>
std::shared_ptr<Tensor<T>> alloc_like(const Shape& s) {
  return std::make_shared<Tensor<T>>(s);
}

template <typename T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* what) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.shape().str() +
                                " vs " + b.shape().str());
}

}  // namespace detail

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "add");
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  T* po = out->ptr();
  for (int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i];
  Tape<T>* tp = detail::result_tape<T>({&a, &b});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, ib = b.id, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia >= 0) {
      T* ga = t.grad(ia).ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (ib >= 0) {
      T* gb = t.grad(ib).ptr();
      for (int64_t i = 0; i < n; ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "sub");
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = a.val()[i] - b.val()[i];
  Tape<T>* tp = detail::result_tape<T>({&a, &b});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, ib = b.id, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia >= 0) {
      T* ga = t.grad(ia).ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (ib >= 0) {
      T* gb = t.grad(ib).ptr();
      for (int64_t i = 0; i < n; ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  detail::require_same_shape(a, b, "mul");
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = a.val()[i] * b.val()[i];
  Tape<T>* tp = detail::result_tape<T>({&a, &b});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out,
                           [ia = a.id, ib = b.id, av = a.v, bv = b.v, n](Tape<T>& t, const Tensor<T>& g) {
                             if (ia >= 0) {
                               T* ga = t.grad(ia).ptr();
                               const T* pb = bv->ptr();
                               for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * pb[i];
                             }
                             if (ib >= 0) {
                               T* gb = t.grad(ib).ptr();
                               const T* pa = av->ptr();
                               for (int64_t i = 0; i < n; ++i) gb[i] += g[i] * pa[i];
                             }
                           });
}

template <typename T>
Var<T> scale(const Var<T>& a, T s) {
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = a.val()[i] * s;
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, s, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Var<T> add_scalar(const Var<T>& a, T s) {
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = a.val()[i] + s;
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i];
  });
}

template <typename T>
Var<T> square(const Var<T>& a) {
  return mul(a, a);
}

template <typename T>
Var<T> relu(const Var<T>& a) {
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = a.val()[i] > T(0) ? a.val()[i] : T(0);
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, ov = out, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    const T* po = ov->ptr();
    for (int64_t i = 0; i < n; ++i)
      if (po[i] > T(0)) ga[i] += g[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& a) {
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) {
    T x = a.val()[i];
    (*out)[i] = x >= T(0) ? T(1) / (T(1) + std::exp(-x))
                          : std::exp(x) / (T(1) + std::exp(x));
  }
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, ov = out, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    const T* po = ov->ptr();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * po[i] * (T(1) - po[i]);
  });
}

template <typename T>
Var<T> tanh_v(const Var<T>& a) {
  auto out = detail::alloc_like<T>(a.shape());
  const int64_t n = a.val().numel();
  for (int64_t i = 0; i < n; ++i) (*out)[i] = std::tanh(a.val()[i]);
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, ov = out, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    const T* po = ov->ptr();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[i] * (T(1) - po[i] * po[i]);
  });
}

// (H,W,C) * (H,W,1), the per-pixel weight broadcast over channels.
template <typename T>
Var<T> mul_broadcast_c(const Var<T>& x, const Var<T>& w) {
  const Shape& xs = x.shape();
  if (xs.rank() != 3 || w.shape().rank() != 3 || w.shape()[2] != 1 || w.shape()[0] != xs[0] ||
      w.shape()[1] != xs[1])
    throw std::invalid_argument("mul_broadcast_c: want (H,W,C) and (H,W,1)");
  const int64_t hw = xs[0] * xs[1], c = xs[2];
  auto out = detail::alloc_like<T>(xs);
  const T* px = x.val().ptr();
  const T* pw = w.val().ptr();
  T* po = out->ptr();
  for (int64_t p = 0; p < hw; ++p) {
    const T wv = pw[p];
    for (int64_t k = 0; k < c; ++k) po[p * c + k] = px[p * c + k] * wv;
  }
  Tape<T>* tp = detail::result_tape<T>({&x, &w});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(
      tp, out, [ix = x.id, iw = w.id, xv = x.v, wv = w.v, hw, c](Tape<T>& t, const Tensor<T>& g) {
        if (ix >= 0) {
          T* gx = t.grad(ix).ptr();
          const T* pw = wv->ptr();
          for (int64_t p = 0; p < hw; ++p)
            for (int64_t k = 0; k < c; ++k) gx[p * c + k] += g[p * c + k] * pw[p];
        }
        if (iw >= 0) {
          T* gw = t.grad(iw).ptr();
          const T* px = xv->ptr();
          for (int64_t p = 0; p < hw; ++p) {
            T acc = T(0);
            for (int64_t k = 0; k < c; ++k) acc += g[p * c + k] * px[p * c + k];
            gw[p] += acc;
          }
        }
      });
}

template <typename T>
Var<T> sum(const Var<T>& a) {
  auto out = std::make_shared<Tensor<T>>(Shape{1});
  const int64_t n = a.val().numel();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) acc += a.val()[i];
  (*out)[0] = acc;
  Tape<T>* tp = detail::result_tape<T>({&a});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ia = a.id, n](Tape<T>& t, const Tensor<T>& g) {
    if (ia < 0) return;
    T* ga = t.grad(ia).ptr();
    for (int64_t i = 0; i < n; ++i) ga[i] += g[0];
  });
}

template <typename T>
Var<T> mean(const Var<T>& a) {
  return scale(sum(a), T(1) / static_cast<T>(a.val().numel()));
}

// Concatenate rank-3 tensors along the channel axis.
template <typename T>
Var<T> concat_c(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_c: empty input list");
  const int64_t h = xs[0].shape()[0], w = xs[0].shape()[1];
  int64_t ctot = 0;
  for (const auto& x : xs) {
    if (x.shape().rank() != 3 || x.shape()[0] != h || x.shape()[1] != w)
      throw std::invalid_argument("concat_c: spatial shape mismatch");
    ctot += x.shape()[2];
  }
  auto out = std::make_shared<Tensor<T>>(Shape{h, w, ctot});
  const int64_t hw = h * w;
  int64_t off = 0;
  for (const auto& x : xs) {
    const int64_t c = x.shape()[2];
    const T* px = x.val().ptr();
    T* po = out->ptr();
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t k = 0; k < c; ++k) po[p * ctot + off + k] = px[p * c + k];
    off += c;
  }
  Tape<T>* tp = nullptr;
  for (const auto& x : xs)
    if (x.tracked()) {
      tp = x.tape;
      break;
    }
  if (!tp) return Var<T>(out, nullptr, -1);
  std::vector<int> ids;
  std::vector<int64_t> chans;
  for (const auto& x : xs) {
    ids.push_back(x.id);
    chans.push_back(x.shape()[2]);
  }
  return detail::attach<T>(tp, out,
                           [ids, chans, hw, ctot](Tape<T>& t, const Tensor<T>& g) {
                             int64_t off = 0;
                             for (size_t j = 0; j < ids.size(); ++j) {
                               const int64_t c = chans[j];
                               if (ids[j] >= 0) {
                                 T* gx = t.grad(ids[j]).ptr();
                                 for (int64_t p = 0; p < hw; ++p)
                                   for (int64_t k = 0; k < c; ++k)
                                     gx[p * c + k] += g[p * ctot + off + k];
                               }
                               off += c;
                             }
                           });
}

// Channel slice [c0, c0+c) of a rank-3 tensor.
template <typename T>
Var<T> slice_c(const Var<T>& x, int64_t c0, int64_t c) {
  const Shape& s = x.shape();
  if (s.rank() != 3 || c0 < 0 || c0 + c > s[2]) throw std::invalid_argument("slice_c: bad range");
  const int64_t hw = s[0] * s[1], call = s[2];
  auto out = std::make_shared<Tensor<T>>(Shape{s[0], s[1], c});
  const T* px = x.val().ptr();
  T* po = out->ptr();
  for (int64_t p = 0; p < hw; ++p)
    for (int64_t k = 0; k < c; ++k) po[p * c + k] = px[p * call + c0 + k];
  Tape<T>* tp = detail::result_tape<T>({&x});
  if (!tp) return Var<T>(out, nullptr, -1);
  return detail::attach<T>(tp, out, [ix = x.id, c0, c, hw, call](Tape<T>& t, const Tensor<T>& g) {
    if (ix < 0) return;
    T* gx = t.grad(ix).ptr();
    for (int64_t p = 0; p < hw; ++p)
      for (int64_t k = 0; k < c; ++k) gx[p * call + c0 + k] += g[p * c + k];
  });
}

}  // namespace aarmvs
