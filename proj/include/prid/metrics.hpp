#pragma once

#include "prid/tensor.hpp"

namespace prid {

template <typename T>
double mse(const Tensor<T>& a, const Tensor<T>& b);

/// 10 log10(peak^2 / MSE) in dB; +infinity when the inputs are identical.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0);

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows, K1 = 0.01, K2 = 0.03,
/// dynamic range 1. Multi-channel and batched inputs are averaged per plane.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

inline constexpr std::size_t kSsimWindow = 11;

}  // namespace prid
