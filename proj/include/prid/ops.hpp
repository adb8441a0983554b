#pragma once

#include <cstddef>
#include <vector>

#include "prid/tape.hpp"

namespace prid {

enum class Padding {
  valid,  // no padding
  same,   // zero padding of (k-1)/2 on each side
};

struct Conv2dOptions {
  std::size_t stride = 1;
  Padding padding = Padding::same;
};

/// Cross-correlation. weight is [Cout, Cin, k, k] with k odd; bias is [Cout, 1, 1, 1]
/// or an invalid Var for no bias.
template <typename T>
Var<T> conv2d(Var<T> input, Var<T> weight, Var<T> bias, Conv2dOptions opts = {});

/// input [N, C, 1, 1], weight [Cout, C, 1, 1], bias [Cout, 1, 1, 1] -> [N, Cout, 1, 1].
template <typename T>
Var<T> fully_connected(Var<T> input, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> sigmoid(Var<T> x);

/// Softmax across the branch list for every (n, c); each logit tensor is [N, C, 1, 1].
template <typename T>
std::vector<Var<T>> softmax_over_branches(const std::vector<Var<T>>& logits);

template <typename T>
Var<T> global_avg_pool(Var<T> x);

/// Non-overlapping k x k window means. H and W must be divisible by k.
template <typename T>
Var<T> avg_pool(Var<T> x, std::size_t k);

/// Bilinear interpolation with half-pixel centres, upsampling only.
template <typename T>
Var<T> bilinear_upsample(Var<T> x, std::size_t out_h, std::size_t out_w);

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& xs);

/// Channels [begin, begin + count).
template <typename T>
Var<T> slice_channels(Var<T> x, std::size_t begin, std::size_t count);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> sub(Var<T> a, Var<T> b);

/// x [N, C, H, W] times s [N, C, 1, 1], channel-wise.
template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> s);

/// Pads bottom/right by mirror reflection (edge sample not repeated).
template <typename T>
Var<T> reflect_pad(Var<T> x, std::size_t pad_bottom, std::size_t pad_right);

/// Top-left h x w window.
template <typename T>
Var<T> crop(Var<T> x, std::size_t h, std::size_t w);

/// Sum of all elements as a [1,1,1,1] scalar.
template <typename T>
Var<T> sum(Var<T> x);

/// Sum of x * w for a constant tensor w of the same shape.
template <typename T>
Var<T> weighted_sum(Var<T> x, const Tensor<T>& w);

/// Mean absolute difference.
template <typename T>
Var<T> l1_loss(Var<T> pred, Var<T> target);

/// Mirror index into [0, n) for any non-negative i (period 2(n-1)).
std::size_t reflect_index(std::size_t i, std::size_t n);

}  // namespace prid
