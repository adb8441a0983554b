#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <algorithm>
#include <string>

#include "prid/ops.hpp"

namespace prid {

/// Squeeze-excitation style gate: mu = sigmoid(fc2(relu(fc1(GAP(U))))), output U * mu.
template <typename T>
struct ChannelAttentionParams {
  Var<T> fc1_w;  // [mid, C, 1, 1]
  Var<T> fc1_b;  // [mid, 1, 1, 1]
  Var<T> fc2_w;  // [C, mid, 1, 1]
  Var<T> fc2_b;  // [C, 1, 1, 1]
};

/// Three parallel convolutions (3, 5, 7) fused by per-channel softmax gates.
template <typename T>
struct KernelSelectParams {
  std::array<Var<T>, 3> conv_w;  // [C, C, k, k] for k = 3, 5, 7
  std::array<Var<T>, 3> conv_b;  // [C, 1, 1, 1]
  Var<T> fc1_w;                  // [mid, C, 1, 1], shared by the three branches
  Var<T> fc1_b;
  std::array<Var<T>, 3> fc2_w;  // [C, mid, 1, 1] producing the alpha', beta', gamma' logits
  std::array<Var<T>, 3> fc2_b;
};

inline constexpr std::array<std::size_t, 3> kKernelSelectSizes = {3, 5, 7};

/// Replaces the softmax gate in kernel_select; receives the pooled descriptor [N, C, 1, 1].
template <typename T>
using GateOverride = std::function<std::array<Var<T>, 3>(Var<T> pooled)>;

template <typename T>
Var<T> channel_attention(Var<T> u, const ChannelAttentionParams<T>& p);

/// Returns (alpha, beta, gamma), each [N, C, 1, 1], from the pooled descriptor of the branch sum.
template <typename T>
std::array<Var<T>, 3> gate_weights(Var<T> pooled, const KernelSelectParams<T>& p);

template <typename T>
Var<T> kernel_select(Var<T> u, const KernelSelectParams<T>& p, const GateOverride<T>& gate = {});

/// Default reduction width of the kernel-select gate for `channels` inputs.
inline std::size_t default_sk_mid(std::size_t channels) { return std::max<std::size_t>(channels / 8, 4); }

// Parameter naming: "<prefix>.fc1.w", "<prefix>.fc1.b", "<prefix>.fc2.w", "<prefix>.fc2.b".
template <typename T>
void add_channel_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                                  std::size_t mid);

// Parameter naming: "<prefix>.conv{3,5,7}.{w,b}", "<prefix>.fc1.{w,b}", "<prefix>.fc2_{a,b,c}.{w,b}".
template <typename T>
void add_kernel_select_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                              std::size_t mid);

template <typename T>
ChannelAttentionParams<T> bind_channel_attention(Tape<T>& tape, const ParamStore<T>& store,
                                                 const std::string& prefix);

template <typename T>
KernelSelectParams<T> bind_kernel_select(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix);

}  // namespace prid
