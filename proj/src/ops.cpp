#include "prid/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>

namespace prid {

namespace {

std::string shape_msg(const char* op, const char* what, const Shape& a, const Shape& b) {
  return std::string(op) + ": " + what + " " + a.str() + " vs " + b.str();
}

void require_same_shape(const char* op, const Shape& a, const Shape& b) {
  if (a != b) throw ShapeError(shape_msg(op, "shape mismatch", a, b));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.raw();
  const T* s = src.raw();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += s[i];
}

// Four independent partial sums keep the reduction order fixed while letting the
// compiler overlap the multiply-adds.
template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
  T s0 = 0, s1 = 0, s2 = 0, s3 = 0;
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    s0 += a[i] * b[i];
    s1 += a[i + 1] * b[i + 1];
    s2 += a[i + 2] * b[i + 2];
    s3 += a[i + 3] * b[i + 3];
  }
  for (; i < n; ++i) s0 += a[i] * b[i];
  return (s0 + s1) + (s2 + s3);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

struct ConvGeometry {
  std::size_t cin, h, w, cout, k, stride, pad, oh, ow;

  std::size_t patch() const { return cin * k * k; }
  std::size_t pixels() const { return oh * ow; }
  bool pointwise() const { return k == 1 && stride == 1 && pad == 0; }
};

// Valid output columns [lo, hi) for kernel offset `kx` along an axis of length `len`.
void valid_span(std::size_t out_len, std::size_t len, std::size_t stride, std::size_t pad, std::size_t kx,
                std::size_t& lo, std::size_t& hi) {
  // ix = ox*stride + kx - pad must lie in [0, len)
  const long offset = static_cast<long>(kx) - static_cast<long>(pad);
  long first = 0;
  if (offset < 0) first = (-offset + static_cast<long>(stride) - 1) / static_cast<long>(stride);
  long last = (static_cast<long>(len) - 1 - offset);
  last = last < 0 ? -1 : last / static_cast<long>(stride);
  lo = static_cast<std::size_t>(std::min<long>(first, static_cast<long>(out_len)));
  hi = static_cast<std::size_t>(std::clamp<long>(last + 1, static_cast<long>(lo), static_cast<long>(out_len)));
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* cols) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        T* row = cols + ((ci * g.k + ky) * g.k + kx) * P;
        std::size_t x_lo, x_hi;
        valid_span(g.ow, g.w, g.stride, g.pad, kx, x_lo, x_hi);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          T* dst = row + oy * g.ow;
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, T(0));
            continue;
          }
          const T* src = in + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          std::fill(dst, dst + x_lo, T(0));
          for (std::size_t ox = x_lo; ox < x_hi; ++ox) dst[ox] = src[ox * g.stride + kx - g.pad];
          std::fill(dst + x_hi, dst + g.ow, T(0));
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, const ConvGeometry& g, T* out) {
  const std::size_t P = g.pixels();
  for (std::size_t ci = 0; ci < g.cin; ++ci) {
    for (std::size_t ky = 0; ky < g.k; ++ky) {
      for (std::size_t kx = 0; kx < g.k; ++kx) {
        const T* row = cols + ((ci * g.k + ky) * g.k + kx) * P;
        std::size_t x_lo, x_hi;
        valid_span(g.ow, g.w, g.stride, g.pad, kx, x_lo, x_hi);
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ky) - static_cast<long>(g.pad);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          T* dst = out + (ci * g.h + static_cast<std::size_t>(iy)) * g.w;
          const T* src = row + oy * g.ow;
          for (std::size_t ox = x_lo; ox < x_hi; ++ox) dst[ox * g.stride + kx - g.pad] += src[ox];
        }
      }
    }
  }
}

struct AxisTaps {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

AxisTaps bilinear_taps(std::size_t in_len, std::size_t out_len) {
  AxisTaps t;
  t.lo.resize(out_len);
  t.hi.resize(out_len);
  t.frac.resize(out_len);
  const double scale = static_cast<double>(in_len) / static_cast<double>(out_len);
  for (std::size_t d = 0; d < out_len; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in_len - 1));
    const auto lo = static_cast<std::size_t>(std::floor(src));
    t.lo[d] = lo;
    t.hi[d] = std::min(lo + 1, in_len - 1);
    t.frac[d] = src - static_cast<double>(lo);
  }
  return t;
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

}  // namespace

std::size_t reflect_index(std::size_t i, std::size_t n) {
  if (n == 1) return 0;
  const std::size_t period = 2 * (n - 1);
  i %= period;
  return i < n ? i : period - i;
}

template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, Conv2dOptions opts) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.h != ws.w || ws.h % 2 == 0) throw ShapeError("conv2d: kernel must be square and odd, got " + ws.str());
  if (ws.c != xs.c) throw ShapeError(shape_msg("conv2d", "input channels do not match weight", xs, ws));
  if (opts.stride == 0) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (bias.valid() && bias.shape() != Shape{ws.n, 1, 1, 1}) {
    throw ShapeError(shape_msg("conv2d", "bias does not match output channels", bias.shape(), ws));
  }
  ConvGeometry g{xs.c, xs.h, xs.w, ws.n, ws.h, opts.stride, opts.padding == Padding::same ? (ws.h - 1) / 2 : 0,
                 0, 0};
  if (xs.h + 2 * g.pad < g.k || xs.w + 2 * g.pad < g.k) {
    throw ShapeError(shape_msg("conv2d", "input smaller than kernel", xs, ws));
  }
  g.oh = (xs.h + 2 * g.pad - g.k) / g.stride + 1;
  g.ow = (xs.w + 2 * g.pad - g.k) / g.stride + 1;

  const std::size_t K = g.patch();
  const std::size_t P = g.pixels();
  Tensor<T> out(Shape{xs.n, g.cout, g.oh, g.ow});
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  std::vector<T> cols(g.pointwise() ? 0 : K * P);
  for (std::size_t n = 0; n < xs.n; ++n) {
    const T* src = x.plane(n, 0);
    if (!g.pointwise()) {
      im2col(src, g, cols.data());
      src = cols.data();
    }
    for (std::size_t co = 0; co < g.cout; ++co) {
      T* o = out.plane(n, co);
      std::fill(o, o + P, bias.valid() ? bias.value()[co] : T(0));
      const T* wrow = w.raw() + co * K;
      for (std::size_t r = 0; r < K; ++r) axpy(wrow[r], src + r * P, o, P);
    }
  }

  Tape<T>& tape = input.tape();
  return tape.record("conv2d", std::move(out), {input, weight, bias}, [input, weight, bias, g](Tape<T>& tp, const Tensor<T>& gy) {
    const std::size_t K = g.patch();
    const std::size_t P = g.pixels();
    const Tensor<T>& x = tp.value(input);
    const Tensor<T>& w = tp.value(weight);
    Tensor<T>* gx = tp.grad_sink(input);
    Tensor<T>* gw = tp.grad_sink(weight);
    Tensor<T>* gb = tp.grad_sink(bias);
    const std::size_t batch = x.shape().n;
    std::vector<T> cols(g.pointwise() ? 0 : K * P);
    std::vector<T> dcols(K * P);
    for (std::size_t n = 0; n < batch; ++n) {
      const T* dy = gy.plane(n, 0);
      if (gb != nullptr) {
        for (std::size_t co = 0; co < g.cout; ++co) {
          const T* row = dy + co * P;
          T s = 0;
          for (std::size_t p = 0; p < P; ++p) s += row[p];
          (*gb)[co] += s;
        }
      }
      if (gw != nullptr) {
        const T* src = x.plane(n, 0);
        if (!g.pointwise()) {
          im2col(src, g, cols.data());
          src = cols.data();
        }
        for (std::size_t co = 0; co < g.cout; ++co) {
          T* gwrow = gw->raw() + co * K;
          for (std::size_t r = 0; r < K; ++r) gwrow[r] += dot(dy + co * P, src + r * P, P);
        }
      }
      if (gx != nullptr) {
        T* dst = g.pointwise() ? gx->plane(n, 0) : dcols.data();
        if (!g.pointwise()) std::fill(dcols.begin(), dcols.end(), T(0));
        for (std::size_t r = 0; r < K; ++r) {
          T* drow = dst + r * P;
          for (std::size_t co = 0; co < g.cout; ++co) axpy(w[co * K + r], dy + co * P, drow, P);
        }
        if (!g.pointwise()) col2im_add(dcols.data(), g, gx->plane(n, 0));
      }
    }
  });
}

template <typename T>
Var<T> fully_connected(Var<T> input, Var<T> weight, Var<T> bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.h != 1 || xs.w != 1) throw ShapeError("fully_connected: input must be [N,C,1,1], got " + xs.str());
  if (ws.c != xs.c || ws.h != 1 || ws.w != 1) {
    throw ShapeError(shape_msg("fully_connected", "weight does not match input", ws, xs));
  }
  if (bias.valid() && bias.shape() != Shape{ws.n, 1, 1, 1}) {
    throw ShapeError(shape_msg("fully_connected", "bias does not match output width", bias.shape(), ws));
  }
  const std::size_t cin = xs.c;
  const std::size_t cout = ws.n;
  Tensor<T> out(Shape{xs.n, cout, 1, 1});
  const Tensor<T>& x = input.value();
  const Tensor<T>& w = weight.value();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t o = 0; o < cout; ++o) {
      T s = bias.valid() ? bias.value()[o] : T(0);
      for (std::size_t i = 0; i < cin; ++i) s += w[o * cin + i] * x[n * cin + i];
      out[n * cout + o] = s;
    }
  }
  return input.tape().record("fully_connected", std::move(out), {input, weight, bias},
                             [input, weight, bias, cin, cout](Tape<T>& tp, const Tensor<T>& gy) {
                               const Tensor<T>& x = tp.value(input);
                               const Tensor<T>& w = tp.value(weight);
                               Tensor<T>* gx = tp.grad_sink(input);
                               Tensor<T>* gw = tp.grad_sink(weight);
                               Tensor<T>* gb = tp.grad_sink(bias);
                               for (std::size_t n = 0; n < x.shape().n; ++n) {
                                 for (std::size_t o = 0; o < cout; ++o) {
                                   const T g = gy[n * cout + o];
                                   if (gb) (*gb)[o] += g;
                                   for (std::size_t i = 0; i < cin; ++i) {
                                     if (gw) (*gw)[o * cin + i] += g * x[n * cin + i];
                                     if (gx) (*gx)[n * cin + i] += g * w[o * cin + i];
                                   }
                                 }
                               }
                             });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return x.tape().record("relu", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& in = tp.value(x);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      if (in[i] > T(0)) (*gx)[i] += gy[i];
    }
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (T& v : out.data()) v = stable_sigmoid(v);
  return x.tape().record("sigmoid", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& in = tp.value(x);
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t i = 0; i < in.size(); ++i) {
      const T y = stable_sigmoid(in[i]);
      (*gx)[i] += gy[i] * y * (T(1) - y);
    }
  });
}

template <typename T>
std::vector<Var<T>> softmax_over_branches(const std::vector<Var<T>>& logits) {
  if (logits.size() < 2) throw std::invalid_argument("softmax_over_branches: need at least two branches");
  const Shape s = logits.front().shape();
  for (const Var<T>& l : logits) require_same_shape("softmax_over_branches", s, l.shape());
  const std::size_t branches = logits.size();
  auto probs = std::make_shared<std::vector<Tensor<T>>>(branches, Tensor<T>(s));
  for (std::size_t i = 0; i < s.size(); ++i) {
    T peak = logits[0].value()[i];
    for (std::size_t b = 1; b < branches; ++b) peak = std::max(peak, logits[b].value()[i]);
    T total = 0;
    for (std::size_t b = 0; b < branches; ++b) {
      const T e = std::exp(logits[b].value()[i] - peak);
      (*probs)[b][i] = e;
      total += e;
    }
    for (std::size_t b = 0; b < branches; ++b) (*probs)[b][i] /= total;
  }
  std::vector<Var<T>> out;
  Tape<T>& tape = logits.front().tape();
  for (std::size_t b = 0; b < branches; ++b) {
    // d y_b / d x_j = y_b (delta_bj - y_j)
    out.push_back(tape.record("softmax_over_branches", (*probs)[b], logits,
                              [logits, probs, b](Tape<T>& tp, const Tensor<T>& gy) {
                                const Tensor<T>& yb = (*probs)[b];
                                for (std::size_t j = 0; j < logits.size(); ++j) {
                                  Tensor<T>* gx = tp.grad_sink(logits[j]);
                                  if (gx == nullptr) continue;
                                  const Tensor<T>& yj = (*probs)[j];
                                  for (std::size_t i = 0; i < yb.size(); ++i) {
                                    const T delta = j == b ? T(1) : T(0);
                                    (*gx)[i] += gy[i] * yb[i] * (delta - yj[i]);
                                  }
                                }
                              }));
  }
  return out;
}

template <typename T>
Var<T> global_avg_pool(Var<T> x) {
  const Shape s = x.shape();
  if (s.plane() == 0) throw ShapeError("global_avg_pool: empty plane " + s.str());
  Tensor<T> out(Shape{s.n, s.c, 1, 1});
  const T inv = T(1) / static_cast<T>(s.plane());
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* p = x.value().plane(n, c);
      T acc = 0;
      for (std::size_t i = 0; i < s.plane(); ++i) acc += p[i];
      out[n * s.c + c] = acc * inv;
    }
  }
  return x.tape().record("global_avg_pool", std::move(out), {x}, [x, s, inv](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        T* p = gx->plane(n, c);
        const T g = gy[n * s.c + c] * inv;
        for (std::size_t i = 0; i < s.plane(); ++i) p[i] += g;
      }
    }
  });
}

template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t k) {
  const Shape s = x.shape();
  if (k == 0) throw std::invalid_argument("avg_pool: kernel must be >= 1");
  if (s.h % k != 0 || s.w % k != 0) {
    throw ShapeError("avg_pool: spatial dims of " + s.str() + " not divisible by " + std::to_string(k));
  }
  if (k == 1) {
    return x.tape().record("avg_pool", x.value(), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
      add_into(*tp.grad_sink(x), gy);
    });
  }
  const Shape os{s.n, s.c, s.h / k, s.w / k};
  Tensor<T> out(os);
  const T inv = T(1) / static_cast<T>(k * k);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < s.h; ++y) {
        T* orow = o + (y / k) * os.w;
        const T* irow = in + y * s.w;
        for (std::size_t xx = 0; xx < s.w; ++xx) orow[xx / k] += irow[xx];
      }
      for (std::size_t i = 0; i < os.plane(); ++i) o[i] *= inv;
    }
  }
  return x.tape().record("avg_pool", std::move(out), {x}, [x, s, os, k, inv](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* go = gy.plane(n, c);
        T* gi = gx->plane(n, c);
        for (std::size_t y = 0; y < s.h; ++y) {
          const T* grow = go + (y / k) * os.w;
          for (std::size_t xx = 0; xx < s.w; ++xx) gi[y * s.w + xx] += grow[xx / k] * inv;
        }
      }
    }
  });
}

template <typename T>
Var<T> bilinear_upsample(Var<T> x, std::size_t out_h, std::size_t out_w) {
  const Shape s = x.shape();
  if (out_h < s.h || out_w < s.w) {
    throw ShapeError("bilinear_upsample: target " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                     " smaller than source " + s.str());
  }
  auto ty = std::make_shared<AxisTaps>(bilinear_taps(s.h, out_h));
  auto tx = std::make_shared<AxisTaps>(bilinear_taps(s.w, out_w));
  const Shape os{s.n, s.c, out_h, out_w};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < out_h; ++y) {
        const T fy = static_cast<T>(ty->frac[y]);
        const T* r0 = in + ty->lo[y] * s.w;
        const T* r1 = in + ty->hi[y] * s.w;
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const T fx = static_cast<T>(tx->frac[xx]);
          const T top = (T(1) - fx) * r0[tx->lo[xx]] + fx * r0[tx->hi[xx]];
          const T bot = (T(1) - fx) * r1[tx->lo[xx]] + fx * r1[tx->hi[xx]];
          o[y * out_w + xx] = (T(1) - fy) * top + fy * bot;
        }
      }
    }
  }
  return x.tape().record("bilinear_upsample", std::move(out), {x}, [x, s, os, ty, tx](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* go = gy.plane(n, c);
        T* gi = gx->plane(n, c);
        for (std::size_t y = 0; y < os.h; ++y) {
          const T fy = static_cast<T>(ty->frac[y]);
          T* r0 = gi + ty->lo[y] * s.w;
          T* r1 = gi + ty->hi[y] * s.w;
          for (std::size_t xx = 0; xx < os.w; ++xx) {
            const T fx = static_cast<T>(tx->frac[xx]);
            const T g = go[y * os.w + xx];
            r0[tx->lo[xx]] += (T(1) - fy) * (T(1) - fx) * g;
            r0[tx->hi[xx]] += (T(1) - fy) * fx * g;
            r1[tx->lo[xx]] += fy * (T(1) - fx) * g;
            r1[tx->hi[xx]] += fy * fx * g;
          }
        }
      }
    }
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
  const Shape first = xs.front().shape();
  std::size_t channels = 0;
  for (const Var<T>& v : xs) {
    const Shape& s = v.shape();
    if (s.n != first.n || s.h != first.h || s.w != first.w) {
      throw ShapeError(shape_msg("concat_channels", "batch/spatial mismatch", first, s));
    }
    channels += s.c;
  }
  const Shape os{first.n, channels, first.h, first.w};
  Tensor<T> out(os);
  const std::size_t P = first.plane();
  for (std::size_t n = 0; n < os.n; ++n) {
    std::size_t offset = 0;
    for (const Var<T>& v : xs) {
      const std::size_t c = v.shape().c;
      std::copy_n(v.value().plane(n, 0), c * P, out.plane(n, offset));
      offset += c;
    }
  }
  return xs.front().tape().record("concat_channels", std::move(out), xs, [xs, os, P](Tape<T>& tp, const Tensor<T>& gy) {
    for (std::size_t n = 0; n < os.n; ++n) {
      std::size_t offset = 0;
      for (const Var<T>& v : xs) {
        const std::size_t c = v.shape().c;
        if (Tensor<T>* gx = tp.grad_sink(v)) {
          T* dst = gx->plane(n, 0);
          const T* src = gy.plane(n, offset);
          for (std::size_t i = 0; i < c * P; ++i) dst[i] += src[i];
        }
        offset += c;
      }
    }
  });
}

template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count) {
  const Shape s = x.shape();
  if (begin + count > s.c) {
    throw ShapeError("slice_channels: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + s.str());
  }
  const Shape os{s.n, count, s.h, s.w};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < s.n; ++n) std::copy_n(x.value().plane(n, begin), count * s.plane(), out.plane(n, 0));
  return x.tape().record("slice_channels", std::move(out), {x}, [x, s, begin, count](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      T* dst = gx->plane(n, begin);
      const T* src = gy.plane(n, 0);
      for (std::size_t i = 0; i < count * s.plane(); ++i) dst[i] += src[i];
    }
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  add_into(out, b.value());
  return a.tape().record("add", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& gy) {
    if (Tensor<T>* ga = tp.grad_sink(a)) add_into(*ga, gy);
    if (Tensor<T>* gb = tp.grad_sink(b)) add_into(*gb, gy);
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a.shape(), b.shape());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return a.tape().record("sub", std::move(out), {a, b}, [a, b](Tape<T>& tp, const Tensor<T>& gy) {
    if (Tensor<T>* ga = tp.grad_sink(a)) add_into(*ga, gy);
    if (Tensor<T>* gb = tp.grad_sink(b)) {
      for (std::size_t i = 0; i < gy.size(); ++i) (*gb)[i] -= gy[i];
    }
  });
}

template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> s) {
  const Shape xs = x.shape();
  if (s.shape() != Shape{xs.n, xs.c, 1, 1}) {
    throw ShapeError(shape_msg("scale_channels", "scale must be [N,C,1,1] of input", s.shape(), xs));
  }
  Tensor<T> out = x.value();
  for (std::size_t n = 0; n < xs.n; ++n) {
    for (std::size_t c = 0; c < xs.c; ++c) {
      T* p = out.plane(n, c);
      const T f = s.value()[n * xs.c + c];
      for (std::size_t i = 0; i < xs.plane(); ++i) p[i] *= f;
    }
  }
  return x.tape().record("scale_channels", std::move(out), {x, s}, [x, s, xs](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    Tensor<T>* gs = tp.grad_sink(s);
    for (std::size_t n = 0; n < xs.n; ++n) {
      for (std::size_t c = 0; c < xs.c; ++c) {
        const std::size_t nc = n * xs.c + c;
        const T* g = gy.plane(n, c);
        if (gx) axpy(tp.value(s)[nc], g, gx->plane(n, c), xs.plane());
        if (gs) (*gs)[nc] += dot(g, tp.value(x).plane(n, c), xs.plane());
      }
    }
  });
}

template <typename T>
Var<T> reflect_pad(Var<T> x, std::size_t pad_bottom, std::size_t pad_right) {
  const Shape s = x.shape();
  if (pad_bottom == 0 && pad_right == 0) {
    return x.tape().record("reflect_pad", x.value(), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
      add_into(*tp.grad_sink(x), gy);
    });
  }
  const Shape os{s.n, s.c, s.h + pad_bottom, s.w + pad_right};
  auto rows = std::make_shared<std::vector<std::size_t>>(os.h);
  auto cols = std::make_shared<std::vector<std::size_t>>(os.w);
  for (std::size_t y = 0; y < os.h; ++y) (*rows)[y] = reflect_index(y, s.h);
  for (std::size_t xx = 0; xx < os.w; ++xx) (*cols)[xx] = reflect_index(xx, s.w);
  Tensor<T> out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* in = x.value().plane(n, c);
      T* o = out.plane(n, c);
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t xx = 0; xx < os.w; ++xx) o[y * os.w + xx] = in[(*rows)[y] * s.w + (*cols)[xx]];
      }
    }
  }
  return x.tape().record("reflect_pad", std::move(out), {x}, [x, s, os, rows, cols](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        const T* g = gy.plane(n, c);
        T* gi = gx->plane(n, c);
        for (std::size_t y = 0; y < os.h; ++y) {
          for (std::size_t xx = 0; xx < os.w; ++xx) gi[(*rows)[y] * s.w + (*cols)[xx]] += g[y * os.w + xx];
        }
      }
    }
  });
}

template <typename T>
Var<T> crop(Var<T> x, std::size_t h, std::size_t w) {
  const Shape s = x.shape();
  if (h > s.h || w > s.w) {
    throw ShapeError("crop: window " + std::to_string(h) + "x" + std::to_string(w) + " exceeds " + s.str());
  }
  const Shape os{s.n, s.c, h, w};
  Tensor<T> out(os);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      for (std::size_t y = 0; y < h; ++y) std::copy_n(x.value().plane(n, c) + y * s.w, w, out.plane(n, c) + y * w);
    }
  }
  return x.tape().record("crop", std::move(out), {x}, [x, s, h, w](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (std::size_t n = 0; n < s.n; ++n) {
      for (std::size_t c = 0; c < s.c; ++c) {
        for (std::size_t y = 0; y < h; ++y) {
          T* dst = gx->plane(n, c) + y * s.w;
          const T* src = gy.plane(n, c) + y * w;
          for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += src[xx];
        }
      }
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc = 0;
  for (T v : x.value().data()) acc += v;
  Tensor<T> out(Shape{1, 1, 1, 1}, acc);
  return x.tape().record("sum", std::move(out), {x}, [x](Tape<T>& tp, const Tensor<T>& gy) {
    Tensor<T>* gx = tp.grad_sink(x);
    for (T& v : gx->data()) v += gy[0];
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& w) {
  require_same_shape("weighted_sum", x.shape(), w.shape());
  Tensor<T> out(Shape{1, 1, 1, 1}, dot(x.value().raw(), w.raw(), w.size()));
  return x.tape().record("weighted_sum", std::move(out), {x}, [x, w](Tape<T>& tp, const Tensor<T>& gy) {
    axpy(gy[0], w.raw(), tp.grad_sink(x)->raw(), w.size());
  });
}

template <typename T>
Var<T> l1_loss(Var<T> pred, Var<T> target) {
  require_same_shape("l1_loss", pred.shape(), target.shape());
  const std::size_t count = pred.value().size();
  if (count == 0) throw ShapeError("l1_loss: empty tensors");
  T acc = 0;
  for (std::size_t i = 0; i < count; ++i) acc += std::abs(pred.value()[i] - target.value()[i]);
  Tensor<T> out(Shape{1, 1, 1, 1}, acc / static_cast<T>(count));
  return pred.tape().record("l1_loss", std::move(out), {pred, target}, [pred, target, count](Tape<T>& tp, const Tensor<T>& gy) {
    const Tensor<T>& p = tp.value(pred);
    const Tensor<T>& t = tp.value(target);
    Tensor<T>* gp = tp.grad_sink(pred);
    Tensor<T>* gt = tp.grad_sink(target);
    const T scale = gy[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) {
      const T d = p[i] - t[i];
      const T sgn = d > T(0) ? T(1) : (d < T(0) ? T(-1) : T(0));
      if (gp) (*gp)[i] += sgn * scale;
      if (gt) (*gt)[i] -= sgn * scale;
    }
  });
}

#define PRID_INSTANTIATE(T)                                                                 \
  template Var<T> conv2d<T>(Var<T>, Var<T>, Var<T>, Conv2dOptions);                         \
  template Var<T> fully_connected<T>(Var<T>, Var<T>, Var<T>);                               \
  template Var<T> relu<T>(Var<T>);                                                          \
  template Var<T> sigmoid<T>(Var<T>);                                                       \
  template std::vector<Var<T>> softmax_over_branches<T>(const std::vector<Var<T>>&);        \
  template Var<T> global_avg_pool<T>(Var<T>);                                               \
  template Var<T> avg_pool<T>(Var<T>, std::size_t);                                         \
  template Var<T> bilinear_upsample<T>(Var<T>, std::size_t, std::size_t);                   \
  template Var<T> concat_channels<T>(const std::vector<Var<T>>&);                           \
  template Var<T> slice_channels<T>(Var<T>, std::size_t, std::size_t);                      \
  template Var<T> add<T>(Var<T>, Var<T>);                                                   \
  template Var<T> sub<T>(Var<T>, Var<T>);                                                   \
  template Var<T> scale_channels<T>(Var<T>, Var<T>);                                        \
  template Var<T> reflect_pad<T>(Var<T>, std::size_t, std::size_t);                         \
  template Var<T> crop<T>(Var<T>, std::size_t, std::size_t);                                \
  template Var<T> sum<T>(Var<T>);                                                           \
  template Var<T> weighted_sum<T>(Var<T>, const Tensor<T>&);                                \
  template Var<T> l1_loss<T>(Var<T>, Var<T>);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
