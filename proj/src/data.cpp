#include "prid/data.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace prid {

void NoiseSpec::validate() const {
  if (!(sigma >= 0.0)) throw std::invalid_argument("noise sigma must be >= 0");
  if (!(poisson_scale > 0.0)) throw std::invalid_argument("noise poisson_scale must be > 0");
}

NLOHMANN_JSON_SERIALIZE_ENUM(NoiseKind, {{NoiseKind::gaussian, "gaussian"},
                                         {NoiseKind::poisson_gaussian, "poisson_gaussian"}})

void to_json(nlohmann::json& j, const NoiseSpec& s) {
  j = nlohmann::json{{"kind", s.kind}, {"sigma", s.sigma}, {"poisson_scale", s.poisson_scale}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, NoiseSpec& s) {
  if (!j.is_object()) throw std::invalid_argument("noise spec must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "kind") {
      const std::string kind = value.get<std::string>();
      if (kind == "gaussian") {
        s.kind = NoiseKind::gaussian;
      } else if (kind == "poisson_gaussian") {
        s.kind = NoiseKind::poisson_gaussian;
      } else {
        throw std::invalid_argument("unknown noise kind '" + kind + "'");
      }
    } else if (key == "sigma") {
      value.get_to(s.sigma);
    } else if (key == "poisson_scale") {
      value.get_to(s.poisson_scale);
    } else if (key == "seed") {
      value.get_to(s.seed);
    } else {
      throw std::invalid_argument("unknown noise config key '" + key + "'");
    }
  }
}

template <typename T>
Tensor<T> sample_noisy(const Tensor<T>& clean, const NoiseSpec& spec) {
  spec.validate();
  Tensor<T> out = clean;
  if (spec.sigma == 0.0 && spec.kind == NoiseKind::gaussian) return out;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (T& v : out.data()) {
    double base = static_cast<double>(v);
    if (spec.kind == NoiseKind::poisson_gaussian) {
      std::poisson_distribution<long> shot(std::max(base, 0.0) * spec.poisson_scale);
      base = static_cast<double>(shot(rng)) / spec.poisson_scale;
    }
    v = static_cast<T>(base + spec.sigma * gauss(rng));
  }
  return out;
}

template <typename T>
PatchPair<T> synthesize_pair(const Tensor<T>& clean, const NoiseSpec& spec) {
  Tensor<T> noisy = sample_noisy(clean, spec);
  for (T& v : noisy.data()) v = std::clamp(v, T(0), T(1));
  return {std::move(noisy), clean};
}

template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, std::size_t p, std::size_t stride) {
  const Shape s = image.shape();
  if (p == 0 || stride == 0) throw std::invalid_argument("extract_patches: patch size and stride must be >= 1");
  if (p > s.h || p > s.w) {
    throw ShapeError("extract_patches: patch " + std::to_string(p) + " larger than image " + s.str());
  }
  std::vector<Tensor<T>> out;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t y = 0; y + p <= s.h; y += stride) {
      for (std::size_t x = 0; x + p <= s.w; x += stride) {
        Tensor<T> patch(Shape{1, s.c, p, p});
        for (std::size_t c = 0; c < s.c; ++c) {
          for (std::size_t r = 0; r < p; ++r) {
            std::copy_n(image.plane(n, c) + (y + r) * s.w + x, p, patch.plane(0, c) + r * p);
          }
        }
        out.push_back(std::move(patch));
      }
    }
  }
  return out;
}

template <typename T>
std::vector<PatchPair<T>> extract_patch_pairs(const PatchPair<T>& pair, std::size_t p, std::size_t stride) {
  if (pair.noisy.shape() != pair.clean.shape()) {
    throw ShapeError("extract_patch_pairs: noisy " + pair.noisy.shape().str() + " vs clean " +
                     pair.clean.shape().str());
  }
  std::vector<Tensor<T>> noisy = extract_patches(pair.noisy, p, stride);
  std::vector<Tensor<T>> clean = extract_patches(pair.clean, p, stride);
  std::vector<PatchPair<T>> out;
  out.reserve(noisy.size());
  for (std::size_t i = 0; i < noisy.size(); ++i) out.push_back({std::move(noisy[i]), std::move(clean[i])});
  return out;
}

namespace {

double smoothstep_edge(double signed_distance, double softness) {
  const double t = std::clamp(0.5 - signed_distance / (2.0 * softness), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

}  // namespace

template <typename T>
Tensor<T> make_fixture_image(std::size_t index, std::size_t h, std::size_t w, std::size_t channels) {
  std::mt19937_64 rng(0x5eedf1c7ULL + index * 7919ULL);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double angle = unit(rng) * 6.283185307179586;
  const double gx = std::cos(angle), gy = std::sin(angle);
  std::vector<double> base(channels), slope(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    base[c] = 0.3 + 0.3 * unit(rng);
    slope[c] = 0.2 * (unit(rng) - 0.5);
  }
  struct Disc {
    double cy, cx, r;
    std::vector<double> level;
  };
  std::vector<Disc> discs(3 + index % 3);
  for (Disc& d : discs) {
    d.cy = unit(rng) * static_cast<double>(h);
    d.cx = unit(rng) * static_cast<double>(w);
    d.r = (0.1 + 0.25 * unit(rng)) * static_cast<double>(std::min(h, w));
    for (std::size_t c = 0; c < channels; ++c) d.level.push_back(0.1 + 0.8 * unit(rng));
  }
  const double bar_pos = unit(rng) * static_cast<double>(w);
  const double bar_width = 0.08 * static_cast<double>(w) + 2.0;
  const double bar_level = 0.15 + 0.7 * unit(rng);

  Tensor<T> img(Shape{1, channels, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double fy = static_cast<double>(y) / static_cast<double>(std::max<std::size_t>(h, 1));
      const double fx = static_cast<double>(x) / static_cast<double>(std::max<std::size_t>(w, 1));
      for (std::size_t c = 0; c < channels; ++c) {
        double v = base[c] + slope[c] * (gx * fx + gy * fy);
        for (const Disc& d : discs) {
          const double dist = std::hypot(static_cast<double>(y) - d.cy, static_cast<double>(x) - d.cx) - d.r;
          const double a = smoothstep_edge(dist, 1.5);
          v = (1.0 - a) * v + a * d.level[c];
        }
        const double bar = smoothstep_edge(std::abs(static_cast<double>(x) - bar_pos) - bar_width / 2.0, 1.0);
        v = (1.0 - 0.6 * bar) * v + 0.6 * bar * bar_level;
        img.at(0, c, y, x) = static_cast<T>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return img;
}

template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  const Shape s = items.front()->shape();
  if (s.n != 1) throw ShapeError("stack_batch: items must have batch 1, got " + s.str());
  Tensor<T> out(Shape{items.size(), s.c, s.h, s.w});
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (items[i]->shape() != s) throw ShapeError("stack_batch: " + items[i]->shape().str() + " vs " + s.str());
    std::copy_n(items[i]->raw(), s.size(), out.raw() + i * s.size());
  }
  return out;
}

#define PRID_INSTANTIATE(T)                                                                           \
  template Tensor<T> sample_noisy<T>(const Tensor<T>&, const NoiseSpec&);                             \
  template PatchPair<T> synthesize_pair<T>(const Tensor<T>&, const NoiseSpec&);                       \
  template std::vector<Tensor<T>> extract_patches<T>(const Tensor<T>&, std::size_t, std::size_t);     \
  template std::vector<PatchPair<T>> extract_patch_pairs<T>(const PatchPair<T>&, std::size_t, std::size_t); \
  template Tensor<T> make_fixture_image<T>(std::size_t, std::size_t, std::size_t, std::size_t);       \
  template Tensor<T> stack_batch<T>(const std::vector<const Tensor<T>*>&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
