#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "prid/tensor.hpp"

namespace prid {

/// Aligned noisy/clean pair, both [1, C, p, p] with values in [0, 1].
template <typename T>
struct PatchPair {
  Tensor<T> noisy;
  Tensor<T> clean;
};

enum class NoiseKind { gaussian, poisson_gaussian };

struct NoiseSpec {
  NoiseKind kind = NoiseKind::gaussian;
  double sigma = 0.1;
  double poisson_scale = 255.0;  // photons per unit intensity
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const NoiseSpec&) const = default;
};

void to_json(nlohmann::json& j, const NoiseSpec& s);
void from_json(const nlohmann::json& j, NoiseSpec& s);

/// Noisy observation before clamping to [0, 1].
template <typename T>
Tensor<T> sample_noisy(const Tensor<T>& clean, const NoiseSpec& spec);

/// gaussian: clamp(clean + sigma * N(0,1));
/// poisson_gaussian: clamp(Pois(clean * s) / s + sigma * N(0,1)). Deterministic per seed.
template <typename T>
PatchPair<T> synthesize_pair(const Tensor<T>& clean, const NoiseSpec& spec);

/// Row-major grid of p x p crops at `stride`; partial crops at the right/bottom edge are dropped.
template <typename T>
std::vector<Tensor<T>> extract_patches(const Tensor<T>& image, std::size_t p, std::size_t stride);

/// extract_patches applied to both halves of a pair with the same grid.
template <typename T>
std::vector<PatchPair<T>> extract_patch_pairs(const PatchPair<T>& pair, std::size_t p, std::size_t stride);

/// Deterministic piecewise-smooth synthetic image [1, channels, h, w] in [0, 1]:
/// shaded background plus discs, bars and soft edges. `index` selects the layout.
template <typename T>
Tensor<T> make_fixture_image(std::size_t index, std::size_t h, std::size_t w, std::size_t channels);

/// Stacks [1, C, H, W] tensors along the batch axis.
template <typename T>
Tensor<T> stack_batch(const std::vector<const Tensor<T>*>& items);

}  // namespace prid
