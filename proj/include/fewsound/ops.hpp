#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fewsound/tensor.hpp"

namespace fewsound {

namespace detail {

template <typename T>
void require_same_shape(const char* op, const Value<T>& a, const Value<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  }
}

inline std::size_t prod(const std::vector<std::size_t>& s, std::size_t lo,
                        std::size_t hi) {
  std::size_t n = 1;
  for (std::size_t i = lo; i < hi; ++i) n *= s[i];
  return n;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise
// ---------------------------------------------------------------------------

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
  detail::require_same_shape("add", a, b);
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av[i] + bv[i];
  const int ai = a.id, bi = b.id;
  return a.tape->emit("add", std::move(out), {a, b}, [ai, bi](Tape<T>& t, int out_id) {
    const auto& g = t.grad_at(out_id).data;
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buf(ai).data;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buf(bi).data;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
    }
  });
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
  detail::require_same_shape("sub", a, b);
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av[i] - bv[i];
  const int ai = a.id, bi = b.id;
  return a.tape->emit("sub", std::move(out), {a, b}, [ai, bi](Tape<T>& t, int out_id) {
    const auto& g = t.grad_at(out_id).data;
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buf(ai).data;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buf(bi).data;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
    }
  });
}

template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
  detail::require_same_shape("mul", a, b);
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av[i] * bv[i];
  const int ai = a.id, bi = b.id;
  return a.tape->emit("mul", std::move(out), {a, b}, [ai, bi](Tape<T>& t, int out_id) {
    const auto& g = t.grad_at(out_id).data;
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buf(ai).data;
      const auto& bv2 = t.value_of(bi).data;
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv2[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buf(bi).data;
      const auto& av2 = t.value_of(ai).data;
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av2[i];
    }
  });
}

template <typename T>
Value<T> scale(Value<T> a, T s) {
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av[i] * s;
  const int ai = a.id;
  return a.tape->emit("scale", std::move(out), {a}, [ai, s](Tape<T>& t, int out_id) {
    if (!t.needs_grad(ai)) return;
    const auto& g = t.grad_at(out_id).data;
    auto& ga = t.grad_buf(ai).data;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s;
  });
}

template <typename T>
Value<T> relu(Value<T> a) {
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = av[i] > T(0) ? av[i] : T(0);
  const int ai = a.id;
  return a.tape->emit("relu", std::move(out), {a}, [ai](Tape<T>& t, int out_id) {
    if (!t.needs_grad(ai)) return;
    const auto& g = t.grad_at(out_id).data;
    const auto& av2 = t.value_of(ai).data;
    auto& ga = t.grad_buf(ai).data;
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (av2[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Value<T> sigmoid(Value<T> a) {
  Tensor<T> out(a.shape());
  const auto& av = a.val().data;
  for (std::size_t i = 0; i < out.data.size(); ++i)
    out.data[i] = T(1) / (T(1) + std::exp(-av[i]));
  Tensor<T> cached = out;
  const int ai = a.id;
  return a.tape->emit("sigmoid", std::move(out), {a},
                      [ai, cached](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const auto& g = t.grad_at(out_id).data;
                        auto& ga = t.grad_buf(ai).data;
                        for (std::size_t i = 0; i < g.size(); ++i) {
                          const T s = cached.data[i];
                          ga[i] += g[i] * s * (T(1) - s);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// out[P x R] += a[P x Q] * b[Q x R]; counts multiplies.
template <typename T>
void gemm_acc(const T* a, const T* b, T* out, std::size_t P, std::size_t Q,
              std::size_t R) {
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t k = 0; k < Q; ++k) {
      const T aik = a[i * Q + k];
      const T* brow = b + k * R;
      T* orow = out + i * R;
      for (std::size_t j = 0; j < R; ++j) orow[j] += aik * brow[j];
    }
  }
  mul_op_counter() += static_cast<std::uint64_t>(P) * Q * R;
}

// out[P x R] += a[Q x P]^T * b[Q x R]
template <typename T>
void gemm_at_b_acc(const T* a, const T* b, T* out, std::size_t Q, std::size_t P,
                   std::size_t R) {
  for (std::size_t k = 0; k < Q; ++k) {
    const T* arow = a + k * P;
    const T* brow = b + k * R;
    for (std::size_t i = 0; i < P; ++i) {
      const T aik = arow[i];
      T* orow = out + i * R;
      for (std::size_t j = 0; j < R; ++j) orow[j] += aik * brow[j];
    }
  }
  mul_op_counter() += static_cast<std::uint64_t>(P) * Q * R;
}

// out[P x Q] += a[P x R] * b[Q x R]^T
template <typename T>
void gemm_a_bt_acc(const T* a, const T* b, T* out, std::size_t P, std::size_t R,
                   std::size_t Q) {
  for (std::size_t i = 0; i < P; ++i) {
    for (std::size_t j = 0; j < Q; ++j) {
      const T* arow = a + i * R;
      const T* brow = b + j * R;
      T acc = T(0);
      for (std::size_t k = 0; k < R; ++k) acc += arow[k] * brow[k];
      out[i * Q + j] += acc;
    }
  }
  mul_op_counter() += static_cast<std::uint64_t>(P) * Q * R;
}

}  // namespace detail

template <typename T>
Value<T> matmul(Value<T> a, Value<T> b) {
  const auto& as = a.shape();
  const auto& bs = b.shape();
  if (as.size() != 2 || bs.size() != 2 || as[1] != bs[0]) {
    throw ShapeError("matmul: incompatible operands " + shape_str(as) + " vs " +
                     shape_str(bs));
  }
  const std::size_t P = as[0], Q = as[1], R = bs[1];
  Tensor<T> out({P, R});
  detail::gemm_acc(a.val().data.data(), b.val().data.data(), out.data.data(), P, Q, R);
  const int ai = a.id, bi = b.id;
  return a.tape->emit("matmul", std::move(out), {a, b},
                      [ai, bi, P, Q, R](Tape<T>& t, int out_id) {
                        const T* g = t.grad_at(out_id).data.data();
                        if (t.needs_grad(ai)) {
                          // dA = dOut * B^T
                          detail::gemm_a_bt_acc(g, t.value_of(bi).data.data(),
                                                t.grad_buf(ai).data.data(), P, R, Q);
                        }
                        if (t.needs_grad(bi)) {
                          // dB = A^T * dOut
                          detail::gemm_at_b_acc(t.value_of(ai).data.data(), g,
                                                t.grad_buf(bi).data.data(), P, Q, R);
                        }
                      });
}

template <typename T>
Value<T> transpose(Value<T> a) {
  const auto& as = a.shape();
  if (as.size() != 2) throw ShapeError("transpose: expected rank-2, got " + shape_str(as));
  const std::size_t P = as[0], Q = as[1];
  Tensor<T> out({Q, P});
  const auto& av = a.val();
  for (std::size_t i = 0; i < P; ++i)
    for (std::size_t j = 0; j < Q; ++j) out.at(j, i) = av.at(i, j);
  const int ai = a.id;
  return a.tape->emit("transpose", std::move(out), {a},
                      [ai, P, Q](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const Tensor<T>& g = t.grad_at(out_id);
                        Tensor<T>& ga = t.grad_buf(ai);
                        for (std::size_t i = 0; i < P; ++i)
                          for (std::size_t j = 0; j < Q; ++j) ga.at(i, j) += g.at(j, i);
                      });
}

template <typename T>
Value<T> matvec(Value<T> m, Value<T> v) {
  const auto& ms = m.shape();
  const auto& vs = v.shape();
  if (ms.size() != 2 || vs.size() != 1 || ms[1] != vs[0]) {
    throw ShapeError("matvec: incompatible operands " + shape_str(ms) + " vs " +
                     shape_str(vs));
  }
  const std::size_t M = ms[0], N = ms[1];
  Tensor<T> out({M});
  const auto& mv = m.val().data;
  const auto& vv = v.val().data;
  for (std::size_t i = 0; i < M; ++i) {
    T acc = T(0);
    const T* row = mv.data() + i * N;
    for (std::size_t j = 0; j < N; ++j) acc += row[j] * vv[j];
    out.data[i] = acc;
  }
  mul_op_counter() += static_cast<std::uint64_t>(M) * N;
  const int mi = m.id, vi = v.id;
  return m.tape->emit("matvec", std::move(out), {m, v},
                      [mi, vi, M, N](Tape<T>& t, int out_id) {
                        const auto& g = t.grad_at(out_id).data;
                        if (t.needs_grad(mi)) {
                          auto& gm = t.grad_buf(mi).data;
                          const auto& vv2 = t.value_of(vi).data;
                          for (std::size_t i = 0; i < M; ++i)
                            for (std::size_t j = 0; j < N; ++j)
                              gm[i * N + j] += g[i] * vv2[j];
                        }
                        if (t.needs_grad(vi)) {
                          auto& gv = t.grad_buf(vi).data;
                          const auto& mv2 = t.value_of(mi).data;
                          for (std::size_t i = 0; i < M; ++i)
                            for (std::size_t j = 0; j < N; ++j)
                              gv[j] += g[i] * mv2[i * N + j];
                        }
                      });
}

template <typename T>
Value<T> dot(Value<T> a, Value<T> b) {
  detail::require_same_shape("dot", a, b);
  if (a.shape().size() != 1) {
    throw ShapeError("dot: expected rank-1 operands, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.numel();
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) acc += av[i] * bv[i];
  mul_op_counter() += n;
  Tensor<T> out({1});
  out.data[0] = acc;
  const int ai = a.id, bi = b.id;
  return a.tape->emit("dot", std::move(out), {a, b}, [ai, bi, n](Tape<T>& t, int out_id) {
    const T g = t.grad_at(out_id).data[0];
    if (t.needs_grad(ai)) {
      auto& ga = t.grad_buf(ai).data;
      const auto& bv2 = t.value_of(bi).data;
      for (std::size_t i = 0; i < n; ++i) ga[i] += g * bv2[i];
    }
    if (t.needs_grad(bi)) {
      auto& gb = t.grad_buf(bi).data;
      const auto& av2 = t.value_of(ai).data;
      for (std::size_t i = 0; i < n; ++i) gb[i] += g * av2[i];
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution / pooling / batch normalization
// ---------------------------------------------------------------------------

namespace detail {

struct ConvDims {
  std::size_t N, Ci, H, W, Co, Kh, Kw, Ho, Wo;
  bool batched;
};

template <typename T>
ConvDims conv_dims(const Value<T>& in, const Value<T>& kernel, int pad) {
  const auto& is = in.shape();
  const auto& ks = kernel.shape();
  if ((is.size() != 3 && is.size() != 4) || ks.size() != 4) {
    throw ShapeError("conv2d: expected input [N,C,H,W] or [C,H,W] and kernel "
                     "[Co,Ci,Kh,Kw], got " + shape_str(is) + " and " + shape_str(ks));
  }
  ConvDims d{};
  d.batched = is.size() == 4;
  d.N = d.batched ? is[0] : 1;
  d.Ci = is[d.batched ? 1 : 0];
  d.H = is[d.batched ? 2 : 1];
  d.W = is[d.batched ? 3 : 2];
  d.Co = ks[0];
  d.Kh = ks[2];
  d.Kw = ks[3];
  if (ks[1] != d.Ci) {
    throw ShapeError("conv2d: channel mismatch between input " + shape_str(is) +
                     " and kernel " + shape_str(ks));
  }
  const long ho = static_cast<long>(d.H) + 2 * pad - static_cast<long>(d.Kh) + 1;
  const long wo = static_cast<long>(d.W) + 2 * pad - static_cast<long>(d.Kw) + 1;
  if (ho < 1 || wo < 1) {
    throw ShapeError("conv2d: kernel " + shape_str(ks) + " larger than padded input " +
                     shape_str(is));
  }
  d.Ho = static_cast<std::size_t>(ho);
  d.Wo = static_cast<std::size_t>(wo);
  return d;
}

}  // namespace detail

// Cross-correlation with zero padding. Input [N,Ci,H,W] (or [Ci,H,W]),
// kernel [Co,Ci,Kh,Kw], optional bias [Co].
template <typename T>
Value<T> conv2d(Value<T> in, Value<T> kernel, std::optional<Value<T>> bias, int pad) {
  const detail::ConvDims d = detail::conv_dims(in, kernel, pad);
  if (bias && (bias->shape().size() != 1 || bias->shape()[0] != d.Co)) {
    throw ShapeError("conv2d: bias shape " + shape_str(bias->shape()) +
                     " does not match " + std::to_string(d.Co) + " output channels");
  }

  std::vector<std::size_t> out_shape =
      d.batched ? std::vector<std::size_t>{d.N, d.Co, d.Ho, d.Wo}
                : std::vector<std::size_t>{d.Co, d.Ho, d.Wo};
  Tensor<T> out(out_shape);

  const T* x = in.val().data.data();
  const T* k = kernel.val().data.data();
  const T* b = bias ? bias->val().data.data() : nullptr;
  T* o = out.data.data();

  const std::size_t in_cstride = d.H * d.W;
  const std::size_t in_nstride = d.Ci * in_cstride;
  const std::size_t out_cstride = d.Ho * d.Wo;
  const std::size_t out_nstride = d.Co * out_cstride;

  std::uint64_t macs = 0;
  for (std::size_t n = 0; n < d.N; ++n) {
    for (std::size_t co = 0; co < d.Co; ++co) {
      T* oplane = o + n * out_nstride + co * out_cstride;
      if (b) {
        for (std::size_t i = 0; i < out_cstride; ++i) oplane[i] = b[co];
      }
      for (std::size_t ci = 0; ci < d.Ci; ++ci) {
        const T* xplane = x + n * in_nstride + ci * in_cstride;
        for (std::size_t ky = 0; ky < d.Kh; ++ky) {
          const long oy0 = std::max<long>(0, pad - static_cast<long>(ky));
          const long oy1 = std::min<long>(static_cast<long>(d.Ho),
                                          static_cast<long>(d.H) + pad - static_cast<long>(ky));
          for (std::size_t kx = 0; kx < d.Kw; ++kx) {
            const T w = k[((co * d.Ci + ci) * d.Kh + ky) * d.Kw + kx];
            const long ox0 = std::max<long>(0, pad - static_cast<long>(kx));
            const long ox1 = std::min<long>(static_cast<long>(d.Wo),
                                            static_cast<long>(d.W) + pad - static_cast<long>(kx));
            for (long oy = oy0; oy < oy1; ++oy) {
              const long iy = oy + static_cast<long>(ky) - pad;
              const T* xrow = xplane + iy * d.W + (ox0 + static_cast<long>(kx) - pad);
              T* orow = oplane + oy * d.Wo + ox0;
              const long len = ox1 - ox0;
              for (long i = 0; i < len; ++i) orow[i] += w * xrow[i];
              macs += static_cast<std::uint64_t>(len);
            }
          }
        }
      }
    }
  }
  mul_op_counter() += macs;

  std::vector<Value<T>> inputs{in, kernel};
  if (bias) inputs.push_back(*bias);
  const int ii = in.id, ki = kernel.id;
  const int bi = bias ? bias->id : -1;
  return in.tape->emit("conv2d", std::move(out), inputs,
                       [ii, ki, bi, d, pad](Tape<T>& t, int out_id) {
    const T* g = t.grad_at(out_id).data.data();
    const std::size_t in_cstride = d.H * d.W;
    const std::size_t in_nstride = d.Ci * in_cstride;
    const std::size_t out_cstride = d.Ho * d.Wo;
    const std::size_t out_nstride = d.Co * out_cstride;
    const bool need_in = t.needs_grad(ii);
    const bool need_k = t.needs_grad(ki);
    const T* x = t.value_of(ii).data.data();
    const T* k = t.value_of(ki).data.data();
    T* gx = need_in ? t.grad_buf(ii).data.data() : nullptr;
    T* gk = need_k ? t.grad_buf(ki).data.data() : nullptr;

    if (need_in || need_k) {
      for (std::size_t n = 0; n < d.N; ++n) {
        for (std::size_t co = 0; co < d.Co; ++co) {
          const T* gplane = g + n * out_nstride + co * out_cstride;
          for (std::size_t ci = 0; ci < d.Ci; ++ci) {
            const T* xplane = x + n * in_nstride + ci * in_cstride;
            T* gxplane = need_in ? gx + n * in_nstride + ci * in_cstride : nullptr;
            for (std::size_t ky = 0; ky < d.Kh; ++ky) {
              const long oy0 = std::max<long>(0, pad - static_cast<long>(ky));
              const long oy1 = std::min<long>(static_cast<long>(d.Ho),
                                              static_cast<long>(d.H) + pad - static_cast<long>(ky));
              for (std::size_t kx = 0; kx < d.Kw; ++kx) {
                const std::size_t kidx = ((co * d.Ci + ci) * d.Kh + ky) * d.Kw + kx;
                const T w = k[kidx];
                const long ox0 = std::max<long>(0, pad - static_cast<long>(kx));
                const long ox1 = std::min<long>(static_cast<long>(d.Wo),
                                                static_cast<long>(d.W) + pad - static_cast<long>(kx));
                T wacc = T(0);
                for (long oy = oy0; oy < oy1; ++oy) {
                  const long iy = oy + static_cast<long>(ky) - pad;
                  const long xoff = iy * static_cast<long>(d.W) + (ox0 + static_cast<long>(kx) - pad);
                  const T* grow = gplane + oy * d.Wo + ox0;
                  const long len = ox1 - ox0;
                  if (need_in) {
                    T* gxrow = gxplane + xoff;
                    for (long i = 0; i < len; ++i) gxrow[i] += w * grow[i];
                  }
                  if (need_k) {
                    const T* xrow = xplane + xoff;
                    for (long i = 0; i < len; ++i) wacc += xrow[i] * grow[i];
                  }
                }
                if (need_k) gk[kidx] += wacc;
              }
            }
          }
        }
      }
    }
    if (bi >= 0 && t.needs_grad(bi)) {
      auto& gb = t.grad_buf(bi).data;
      for (std::size_t n = 0; n < d.N; ++n)
        for (std::size_t co = 0; co < d.Co; ++co) {
          const T* gplane = g + n * out_nstride + co * out_cstride;
          T acc = T(0);
          for (std::size_t i = 0; i < out_cstride; ++i) acc += gplane[i];
          gb[co] += acc;
        }
    }
  });
}

template <typename T>
Value<T> conv2d(Value<T> in, Value<T> kernel, int pad) {
  return conv2d(in, kernel, std::optional<Value<T>>{}, pad);
}

// Non-overlapping max pooling over the trailing two axes. Output dims are
// ceil(H/wh) x ceil(W/ww): trailing partial windows pool over the remaining
// cells. Gradient flows to the first (row-major) argmax per window.
template <typename T>
Value<T> maxpool2d(Value<T> in, std::size_t wh, std::size_t ww) {
  const auto& is = in.shape();
  if (is.size() < 2 || wh == 0 || ww == 0) {
    throw ShapeError("maxpool2d: expected input with trailing H,W axes, got " +
                     shape_str(is));
  }
  const std::size_t H = is[is.size() - 2], W = is[is.size() - 1];
  const std::size_t planes = detail::prod(is, 0, is.size() - 2);
  const std::size_t Ho = (H + wh - 1) / wh;
  const std::size_t Wo = (W + ww - 1) / ww;

  std::vector<std::size_t> out_shape(is.begin(), is.end() - 2);
  out_shape.push_back(Ho);
  out_shape.push_back(Wo);
  Tensor<T> out(out_shape);

  const T* x = in.val().data.data();
  T* o = out.data.data();
  std::vector<std::uint32_t> argmax(out.numel());

  for (std::size_t p = 0; p < planes; ++p) {
    const T* plane = x + p * H * W;
    for (std::size_t oy = 0; oy < Ho; ++oy) {
      const std::size_t y1 = std::min(H, (oy + 1) * wh);
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        const std::size_t x1 = std::min(W, (ox + 1) * ww);
        T best = plane[oy * wh * W + ox * ww];
        std::size_t best_idx = oy * wh * W + ox * ww;
        for (std::size_t y = oy * wh; y < y1; ++y) {
          for (std::size_t xx = ox * ww; xx < x1; ++xx) {
            const T v = plane[y * W + xx];
            if (v > best) {
              best = v;
              best_idx = y * W + xx;
            }
          }
        }
        const std::size_t oidx = (p * Ho + oy) * Wo + ox;
        o[oidx] = best;
        argmax[oidx] = static_cast<std::uint32_t>(best_idx);
      }
    }
  }

  const int ii = in.id;
  const std::size_t plane_in = H * W, plane_out = Ho * Wo;
  return in.tape->emit("maxpool2d", std::move(out), {in},
                       [ii, argmax = std::move(argmax), planes, plane_in,
                        plane_out](Tape<T>& t, int out_id) {
                         if (!t.needs_grad(ii)) return;
                         const auto& g = t.grad_at(out_id).data;
                         auto& gx = t.grad_buf(ii).data;
                         for (std::size_t p = 0; p < planes; ++p)
                           for (std::size_t i = 0; i < plane_out; ++i)
                             gx[p * plane_in + argmax[p * plane_out + i]] +=
                                 g[p * plane_out + i];
                       });
}

// Per-channel running statistics for batch normalization. A state starts
// uninitialized: evaluation before any statistics exist is an error.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  bool initialized = false;
  T momentum = T(0.9);
  T eps = T(1e-5);

  explicit BatchNormState(std::size_t channels = 0)
      : running_mean({channels}), running_var({channels}) {}

  // Identity statistics (mean 0, var 1), marked initialized. Used at model
  // construction so an untrained model can run in eval mode.
  static BatchNormState identity(std::size_t channels) {
    BatchNormState s(channels);
    for (auto& v : s.running_var.data) v = T(1);
    s.initialized = true;
    return s;
  }
};

// Batch normalization over [N,C,H,W] (or [C,H,W], treated as N=1): statistics
// per channel across batch and spatial axes. Train mode normalizes with batch
// statistics and updates the running ones; eval mode uses the running
// statistics unchanged.
template <typename T>
Value<T> batchnorm(Value<T> in, Value<T> gamma, Value<T> beta, BatchNormState<T>& state,
                   Mode mode) {
  const auto& is = in.shape();
  if (is.size() != 3 && is.size() != 4) {
    throw ShapeError("batchnorm: expected [N,C,H,W] or [C,H,W], got " + shape_str(is));
  }
  const bool batched = is.size() == 4;
  const std::size_t N = batched ? is[0] : 1;
  const std::size_t C = is[batched ? 1 : 0];
  const std::size_t HW = is[batched ? 2 : 1] * is[batched ? 3 : 2];
  if (gamma.shape() != std::vector<std::size_t>{C} ||
      beta.shape() != std::vector<std::size_t>{C}) {
    throw ShapeError("batchnorm: gamma/beta must be [" + std::to_string(C) + "], got " +
                     shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  if (state.running_mean.numel() != C) {
    throw ShapeError("batchnorm: state holds " + std::to_string(state.running_mean.numel()) +
                     " channels, input has " + std::to_string(C));
  }
  const std::size_t m = N * HW;

  const T* x = in.val().data.data();
  const T* gm = gamma.val().data.data();
  const T* bt = beta.val().data.data();

  std::vector<T> mean(C), invstd(C);
  if (mode == Mode::train) {
    std::vector<T> var(C);
    for (std::size_t c = 0; c < C; ++c) {
      double acc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) acc += static_cast<double>(p[i]);
      }
      const double mu = acc / static_cast<double>(m);
      double vacc = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const T* p = x + (n * C + c) * HW;
        for (std::size_t i = 0; i < HW; ++i) {
          const double dd = static_cast<double>(p[i]) - mu;
          vacc += dd * dd;
        }
      }
      mean[c] = static_cast<T>(mu);
      var[c] = static_cast<T>(vacc / static_cast<double>(m));
      if (!std::isfinite(mean[c]) || !std::isfinite(var[c])) {
        throw NumericError("batchnorm: non-finite batch statistics");
      }
      invstd[c] = T(1) / std::sqrt(var[c] + state.eps);
    }
    if (!state.initialized) {
      for (std::size_t c = 0; c < C; ++c) {
        state.running_mean.data[c] = mean[c];
        state.running_var.data[c] = var[c];
      }
      state.initialized = true;
    } else {
      for (std::size_t c = 0; c < C; ++c) {
        state.running_mean.data[c] =
            state.momentum * state.running_mean.data[c] + (T(1) - state.momentum) * mean[c];
        state.running_var.data[c] =
            state.momentum * state.running_var.data[c] + (T(1) - state.momentum) * var[c];
      }
    }
  } else {
    if (!state.initialized) {
      throw NumericError("batchnorm: eval mode before any training statistics");
    }
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = state.running_mean.data[c];
      invstd[c] = T(1) / std::sqrt(state.running_var.data[c] + state.eps);
    }
  }

  Tensor<T> out(is);
  Tensor<T> xhat(is);  // cached for backward
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      const T* p = x + (n * C + c) * HW;
      T* op = out.data.data() + (n * C + c) * HW;
      T* xp = xhat.data.data() + (n * C + c) * HW;
      const T mu = mean[c], is_ = invstd[c], gc = gm[c], bc = bt[c];
      for (std::size_t i = 0; i < HW; ++i) {
        const T xh = (p[i] - mu) * is_;
        xp[i] = xh;
        op[i] = gc * xh + bc;
      }
    }
  }

  const int xi = in.id, gi = gamma.id, bi2 = beta.id;
  const bool train = mode == Mode::train;
  return in.tape->emit("batchnorm", std::move(out), {in, gamma, beta},
                       [xi, gi, bi2, xhat = std::move(xhat), invstd = std::move(invstd),
                        N, C, HW, m, train](Tape<T>& t, int out_id) {
    const T* g = t.grad_at(out_id).data.data();
    const T* xh = xhat.data.data();
    const T* gmv = t.value_of(gi).data.data();

    std::vector<T> sum_g(C, T(0)), sum_gx(C, T(0));
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t c = 0; c < C; ++c) {
        const T* gp = g + (n * C + c) * HW;
        const T* xp = xh + (n * C + c) * HW;
        T sg = T(0), sgx = T(0);
        for (std::size_t i = 0; i < HW; ++i) {
          sg += gp[i];
          sgx += gp[i] * xp[i];
        }
        sum_g[c] += sg;
        sum_gx[c] += sgx;
      }

    if (t.needs_grad(gi)) {
      auto& gg = t.grad_buf(gi).data;
      for (std::size_t c = 0; c < C; ++c) gg[c] += sum_gx[c];
    }
    if (t.needs_grad(bi2)) {
      auto& gb = t.grad_buf(bi2).data;
      for (std::size_t c = 0; c < C; ++c) gb[c] += sum_g[c];
    }
    if (t.needs_grad(xi)) {
      auto& gx = t.grad_buf(xi).data;
      const T inv_m = T(1) / static_cast<T>(m);
      for (std::size_t n = 0; n < N; ++n)
        for (std::size_t c = 0; c < C; ++c) {
          const T* gp = g + (n * C + c) * HW;
          const T* xp = xh + (n * C + c) * HW;
          T* gxp = gx.data() + (n * C + c) * HW;
          const T k = gmv[c] * invstd[c];
          if (train) {
            const T mg = sum_g[c] * inv_m;
            const T mgx = sum_gx[c] * inv_m;
            for (std::size_t i = 0; i < HW; ++i)
              gxp[i] += k * (gp[i] - mg - xp[i] * mgx);
          } else {
            for (std::size_t i = 0; i < HW; ++i) gxp[i] += k * gp[i];
          }
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Shape manipulation
// ---------------------------------------------------------------------------

template <typename T>
Value<T> reshape(Value<T> a, std::vector<std::size_t> new_shape) {
  if (Tensor<T>::numel_of(new_shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " +
                     shape_str(new_shape));
  }
  Tensor<T> out(new_shape, a.val().data);
  const int ai = a.id;
  return a.tape->emit("reshape", std::move(out), {a}, [ai](Tape<T>& t, int out_id) {
    if (!t.needs_grad(ai)) return;
    const auto& g = t.grad_at(out_id).data;
    auto& ga = t.grad_buf(ai).data;
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

// Drops the leading axis at position `idx`: [N, rest...] -> [rest...].
template <typename T>
Value<T> slice0(Value<T> a, std::size_t idx) {
  const auto& as = a.shape();
  if (as.size() < 2 || idx >= as[0]) {
    throw ShapeError("slice0: index " + std::to_string(idx) + " out of range for " +
                     shape_str(as));
  }
  std::vector<std::size_t> out_shape(as.begin() + 1, as.end());
  const std::size_t block = detail::prod(as, 1, as.size());
  Tensor<T> out(out_shape);
  const auto& av = a.val().data;
  std::copy(av.begin() + idx * block, av.begin() + (idx + 1) * block, out.data.begin());
  const int ai = a.id;
  return a.tape->emit("slice0", std::move(out), {a},
                      [ai, idx, block](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const auto& g = t.grad_at(out_id).data;
                        auto& ga = t.grad_buf(ai).data;
                        for (std::size_t i = 0; i < block; ++i)
                          ga[idx * block + i] += g[i];
                      });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Value<T> mean_axis(Value<T> a, std::size_t axis) {
  const auto& as = a.shape();
  if (axis >= as.size()) {
    throw ShapeError("mean_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(as));
  }
  const std::size_t outer = detail::prod(as, 0, axis);
  const std::size_t n = as[axis];
  const std::size_t inner = detail::prod(as, axis + 1, as.size());
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis) out_shape.push_back(as[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<T> out(out_shape);
  const auto& av = a.val().data;
  const T inv = T(1) / static_cast<T>(n);
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k) {
      const T* src = av.data() + (o * n + k) * inner;
      T* dst = out.data.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  for (auto& v : out.data) v *= inv;

  const int ai = a.id;
  return a.tape->emit("mean_axis", std::move(out), {a},
                      [ai, outer, n, inner, inv](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const auto& g = t.grad_at(out_id).data;
                        auto& ga = t.grad_buf(ai).data;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t k = 0; k < n; ++k) {
                            T* dst = ga.data() + (o * n + k) * inner;
                            const T* src = g.data() + o * inner;
                            for (std::size_t i = 0; i < inner; ++i)
                              dst[i] += src[i] * inv;
                          }
                      });
}

// Max along an axis; gradient goes to the first maximal element.
template <typename T>
Value<T> max_axis(Value<T> a, std::size_t axis) {
  const auto& as = a.shape();
  if (axis >= as.size()) {
    throw ShapeError("max_axis: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(as));
  }
  const std::size_t outer = detail::prod(as, 0, axis);
  const std::size_t n = as[axis];
  const std::size_t inner = detail::prod(as, axis + 1, as.size());
  std::vector<std::size_t> out_shape;
  for (std::size_t i = 0; i < as.size(); ++i)
    if (i != axis) out_shape.push_back(as[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor<T> out(out_shape);
  std::vector<std::uint32_t> arg(out.numel());
  const auto& av = a.val().data;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) {
      T best = av[(o * n) * inner + i];
      std::uint32_t bk = 0;
      for (std::size_t k = 1; k < n; ++k) {
        const T v = av[(o * n + k) * inner + i];
        if (v > best) {
          best = v;
          bk = static_cast<std::uint32_t>(k);
        }
      }
      out.data[o * inner + i] = best;
      arg[o * inner + i] = bk;
    }

  const int ai = a.id;
  return a.tape->emit("max_axis", std::move(out), {a},
                      [ai, arg = std::move(arg), outer, n, inner](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const auto& g = t.grad_at(out_id).data;
                        auto& ga = t.grad_buf(ai).data;
                        for (std::size_t o = 0; o < outer; ++o)
                          for (std::size_t i = 0; i < inner; ++i) {
                            const std::size_t k = arg[o * inner + i];
                            ga[(o * n + k) * inner + i] += g[o * inner + i];
                          }
                      });
}

template <typename T>
Value<T> sum_all(Value<T> a) {
  const auto& av = a.val().data;
  T acc = T(0);
  for (const T v : av) acc += v;
  Tensor<T> out({1});
  out.data[0] = acc;
  const int ai = a.id;
  return a.tape->emit("sum_all", std::move(out), {a}, [ai](Tape<T>& t, int out_id) {
    if (!t.needs_grad(ai)) return;
    const T g = t.grad_at(out_id).data[0];
    auto& ga = t.grad_buf(ai).data;
    for (auto& v : ga) v += g;
  });
}

template <typename T>
Value<T> mean_all(Value<T> a) {
  const std::size_t n = a.numel();
  const auto& av = a.val().data;
  T acc = T(0);
  for (const T v : av) acc += v;
  Tensor<T> out({1});
  out.data[0] = acc / static_cast<T>(n);
  const int ai = a.id;
  return a.tape->emit("mean_all", std::move(out), {a}, [ai, n](Tape<T>& t, int out_id) {
    if (!t.needs_grad(ai)) return;
    const T g = t.grad_at(out_id).data[0] / static_cast<T>(n);
    auto& ga = t.grad_buf(ai).data;
    for (auto& v : ga) v += g;
  });
}

// Softmax over the last axis (rank 1 or 2), with max subtraction.
template <typename T>
Value<T> softmax(Value<T> a) {
  const auto& as = a.shape();
  if (as.empty() || as.size() > 2) {
    throw ShapeError("softmax: expected rank-1 or rank-2, got " + shape_str(as));
  }
  const std::size_t rows = as.size() == 2 ? as[0] : 1;
  const std::size_t n = as.back();
  Tensor<T> out(as);
  const auto& av = a.val().data;
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = av.data() + r * n;
    T* dst = out.data.data() + r * n;
    T mx = src[0];
    for (std::size_t i = 1; i < n; ++i) mx = std::max(mx, src[i]);
    T denom = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = std::exp(src[i] - mx);
      denom += dst[i];
    }
    for (std::size_t i = 0; i < n; ++i) dst[i] /= denom;
  }
  Tensor<T> cached = out;
  const int ai = a.id;
  return a.tape->emit("softmax", std::move(out), {a},
                      [ai, cached = std::move(cached), rows, n](Tape<T>& t, int out_id) {
                        if (!t.needs_grad(ai)) return;
                        const auto& g = t.grad_at(out_id).data;
                        auto& ga = t.grad_buf(ai).data;
                        for (std::size_t r = 0; r < rows; ++r) {
                          const T* s = cached.data.data() + r * n;
                          const T* gr = g.data() + r * n;
                          T dotgs = T(0);
                          for (std::size_t i = 0; i < n; ++i) dotgs += gr[i] * s[i];
                          for (std::size_t i = 0; i < n; ++i)
                            ga[r * n + i] += s[i] * (gr[i] - dotgs);
                        }
                      });
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

template <typename T>
Value<T> stack_scalars(const std::vector<Value<T>>& xs) {
  if (xs.empty()) throw ShapeError("stack_scalars: empty input");
  Tensor<T> out({xs.size()});
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i].numel() != 1) {
      throw ShapeError("stack_scalars: input " + std::to_string(i) + " has shape " +
                       shape_str(xs[i].shape()));
    }
    out.data[i] = xs[i].val().data[0];
  }
  std::vector<int> ids(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ids[i] = xs[i].id;
  return xs[0].tape->emit("stack_scalars", std::move(out), xs,
                          [ids](Tape<T>& t, int out_id) {
                            const auto& g = t.grad_at(out_id).data;
                            for (std::size_t i = 0; i < ids.size(); ++i)
                              if (t.needs_grad(ids[i]))
                                t.grad_buf(ids[i]).data[0] += g[i];
                          });
}

// Elementwise mean of same-shape tensors (class prototypes).
template <typename T>
Value<T> mean_stack(const std::vector<Value<T>>& xs) {
  if (xs.empty()) throw ShapeError("mean_stack: empty input");
  for (const auto& x : xs) detail::require_same_shape("mean_stack", xs[0], x);
  Tensor<T> out(xs[0].shape());
  for (const auto& x : xs) {
    const auto& xv = x.val().data;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += xv[i];
  }
  const T inv = T(1) / static_cast<T>(xs.size());
  for (auto& v : out.data) v *= inv;
  std::vector<int> ids(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) ids[i] = xs[i].id;
  return xs[0].tape->emit("mean_stack", std::move(out), xs,
                          [ids, inv](Tape<T>& t, int out_id) {
                            const auto& g = t.grad_at(out_id).data;
                            for (const int id : ids) {
                              if (!t.needs_grad(id)) continue;
                              auto& ga = t.grad_buf(id).data;
                              for (std::size_t i = 0; i < g.size(); ++i)
                                ga[i] += g[i] * inv;
                            }
                          });
}

// ---------------------------------------------------------------------------
// Episodic cross-entropy
// ---------------------------------------------------------------------------

// loss = -log softmax(scores)[label], with max subtraction.
// d loss / d scores = softmax(scores) - onehot(label).
template <typename T>
Value<T> cross_entropy_logits(Value<T> scores, std::size_t label) {
  const auto& ss = scores.shape();
  if (ss.size() != 1 || label >= ss[0]) {
    throw ShapeError("cross_entropy_logits: scores " + shape_str(ss) + ", label " +
                     std::to_string(label));
  }
  const std::size_t c = ss[0];
  const auto& sv = scores.val().data;
  T mx = sv[0];
  for (std::size_t i = 1; i < c; ++i) mx = std::max(mx, sv[i]);
  T denom = T(0);
  std::vector<T> soft(c);
  for (std::size_t i = 0; i < c; ++i) {
    soft[i] = std::exp(sv[i] - mx);
    denom += soft[i];
  }
  for (auto& v : soft) v /= denom;
  Tensor<T> out({1});
  out.data[0] = std::log(denom) - (sv[label] - mx);
  const int si = scores.id;
  return scores.tape->emit("cross_entropy_logits", std::move(out), {scores},
                           [si, soft = std::move(soft), label](Tape<T>& t, int out_id) {
                             if (!t.needs_grad(si)) return;
                             const T g = t.grad_at(out_id).data[0];
                             auto& gs = t.grad_buf(si).data;
                             for (std::size_t i = 0; i < soft.size(); ++i) {
                               gs[i] += g * (soft[i] - (i == label ? T(1) : T(0)));
                             }
                           });
}

// ---------------------------------------------------------------------------
// Fused vector distances (larger = more similar)
// ---------------------------------------------------------------------------

template <typename T>
Value<T> cosine_similarity(Value<T> a, Value<T> b) {
  detail::require_same_shape("cosine", a, b);
  if (a.shape().size() != 1) {
    throw ShapeError("cosine: expected rank-1 operands, got " + shape_str(a.shape()));
  }
  const std::size_t n = a.numel();
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  T d = T(0), na2 = T(0), nb2 = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    d += av[i] * bv[i];
    na2 += av[i] * av[i];
    nb2 += bv[i] * bv[i];
  }
  mul_op_counter() += 3 * n;
  if (na2 == T(0) || nb2 == T(0)) {
    throw NumericError("cosine: zero vector has no direction");
  }
  const T na = std::sqrt(na2), nb = std::sqrt(nb2);
  const T s = d / (na * nb);
  Tensor<T> out({1});
  out.data[0] = s;
  const int ai = a.id, bi = b.id;
  return a.tape->emit("cosine", std::move(out), {a, b},
                      [ai, bi, n, s, na, nb, na2, nb2](Tape<T>& t, int out_id) {
                        const T g = t.grad_at(out_id).data[0];
                        const auto& av2 = t.value_of(ai).data;
                        const auto& bv2 = t.value_of(bi).data;
                        const T inv_nanb = T(1) / (na * nb);
                        if (t.needs_grad(ai)) {
                          auto& ga = t.grad_buf(ai).data;
                          for (std::size_t i = 0; i < n; ++i)
                            ga[i] += g * (bv2[i] * inv_nanb - s * av2[i] / na2);
                        }
                        if (t.needs_grad(bi)) {
                          auto& gb = t.grad_buf(bi).data;
                          for (std::size_t i = 0; i < n; ++i)
                            gb[i] += g * (av2[i] * inv_nanb - s * bv2[i] / nb2);
                        }
                      });
}

// Negative squared Euclidean distance: zero for identical vectors, negative
// otherwise, so larger still means more similar.
template <typename T>
Value<T> neg_sq_euclidean(Value<T> a, Value<T> b) {
  detail::require_same_shape("neg_sq_euclidean", a, b);
  if (a.shape().size() != 1) {
    throw ShapeError("neg_sq_euclidean: expected rank-1 operands, got " +
                     shape_str(a.shape()));
  }
  const std::size_t n = a.numel();
  const auto& av = a.val().data;
  const auto& bv = b.val().data;
  T acc = T(0);
  for (std::size_t i = 0; i < n; ++i) {
    const T dd = av[i] - bv[i];
    acc += dd * dd;
  }
  mul_op_counter() += n;
  Tensor<T> out({1});
  out.data[0] = -acc;
  const int ai = a.id, bi = b.id;
  return a.tape->emit("neg_sq_euclidean", std::move(out), {a, b},
                      [ai, bi, n](Tape<T>& t, int out_id) {
                        const T g = t.grad_at(out_id).data[0];
                        const auto& av2 = t.value_of(ai).data;
                        const auto& bv2 = t.value_of(bi).data;
                        if (t.needs_grad(ai)) {
                          auto& ga = t.grad_buf(ai).data;
                          for (std::size_t i = 0; i < n; ++i)
                            ga[i] += g * T(-2) * (av2[i] - bv2[i]);
                        }
                        if (t.needs_grad(bi)) {
                          auto& gb = t.grad_buf(bi).data;
                          for (std::size_t i = 0; i < n; ++i)
                            gb[i] += g * T(2) * (av2[i] - bv2[i]);
                        }
                      });
}

// Index of the largest entry; ties resolve to the first.
template <typename T>
std::size_t argmax_index(const Tensor<T>& t) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < t.numel(); ++i)
    if (t.data[i] > t.data[best]) best = i;
  return best;
}

}  // namespace fewsound
