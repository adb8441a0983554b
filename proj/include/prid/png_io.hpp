#pragma once

#include <string>

#include "prid/tensor.hpp"

namespace prid {

/// Reads an 8- or 16-bit grayscale/RGB PNG (alpha is dropped, palettes expanded)
/// into [1, C, H, W] with values scaled to [0, 1]. `bit_depth`, when given,
/// receives the sample depth of the file (8 or 16).
Tensor<double> read_png(const std::string& path, int* bit_depth = nullptr);

/// Writes a [1, 1|3, H, W] tensor, clamping to [0, 1] and rounding to the bit depth (8 or 16).
void write_png(const std::string& path, const Tensor<double>& image, int bit_depth = 8);

}  // namespace prid
