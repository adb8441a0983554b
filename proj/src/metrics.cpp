#include "prid/metrics.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace prid {

namespace {

constexpr double kSsimSigma = 1.5;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::array<double, kSsimWindow> gaussian_taps() {
  std::array<double, kSsimWindow> taps{};
  double total = 0.0;
  const double centre = static_cast<double>(kSsimWindow / 2);
  for (std::size_t i = 0; i < kSsimWindow; ++i) {
    const double d = static_cast<double>(i) - centre;
    taps[i] = std::exp(-d * d / (2.0 * kSsimSigma * kSsimSigma));
    total += taps[i];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable "valid" Gaussian filter of an h x w plane.
std::vector<double> filter_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                 const std::array<double, kSsimWindow>& taps) {
  const std::size_t ow = w - kSsimWindow + 1;
  const std::size_t oh = h - kSsimWindow + 1;
  std::vector<double> rows(h * ow, 0.0);
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += taps[k] * in[y * w + x + k];
      rows[y * ow + x] = acc;
    }
  }
  std::vector<double> out(oh * ow, 0.0);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (std::size_t k = 0; k < kSsimWindow; ++k) acc += taps[k] * rows[(y + k) * ow + x];
      out[y * ow + x] = acc;
    }
  }
  return out;
}

template <typename T>
void require_same(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) throw ShapeError(std::string(op) + ": " + a.shape().str() + " vs " + b.shape().str());
  if (a.empty()) throw ShapeError(std::string(op) + ": empty images");
}

}  // namespace

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("mse", a, b);
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    acc += d * d;
  }
  return acc / static_cast<double>(a.size());
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak) {
  const double err = mse(a, b);
  if (err == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / err);
}

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
  require_same("ssim", a, b);
  const Shape s = a.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw ShapeError("ssim: images " + s.str() + " smaller than the 11x11 window");
  }
  static const auto taps = gaussian_taps();
  const std::size_t P = s.plane();
  double total = 0.0;
  std::size_t planes = 0;
  std::vector<double> pa(P), pb(P), paa(P), pbb(P), pab(P);
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const T* ra = a.plane(n, c);
      const T* rb = b.plane(n, c);
      for (std::size_t i = 0; i < P; ++i) {
        pa[i] = static_cast<double>(ra[i]);
        pb[i] = static_cast<double>(rb[i]);
        paa[i] = pa[i] * pa[i];
        pbb[i] = pb[i] * pb[i];
        pab[i] = pa[i] * pb[i];
      }
      const auto mu_a = filter_valid(pa, s.h, s.w, taps);
      const auto mu_b = filter_valid(pb, s.h, s.w, taps);
      const auto e_aa = filter_valid(paa, s.h, s.w, taps);
      const auto e_bb = filter_valid(pbb, s.h, s.w, taps);
      const auto e_ab = filter_valid(pab, s.h, s.w, taps);
      double acc = 0.0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double va = e_aa[i] - ma * ma;
        const double vb = e_bb[i] - mb * mb;
        const double cov = e_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + kSsimC1) * (2.0 * cov + kSsimC2)) /
               ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
      }
      total += acc / static_cast<double>(mu_a.size());
      ++planes;
    }
  }
  return total / static_cast<double>(planes);
}

#define PRID_INSTANTIATE(T)                                           \
  template double mse<T>(const Tensor<T>&, const Tensor<T>&);         \
  template double psnr<T>(const Tensor<T>&, const Tensor<T>&, double); \
  template double ssim<T>(const Tensor<T>&, const Tensor<T>&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
