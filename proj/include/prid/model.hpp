#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "prid/attention.hpp"

namespace prid {

/// Architecture hyperparameters. Defaults are the full-size configuration for
/// 3-channel input; micro() is the desk-scale configuration used by tests.
struct ModelConfig {
  std::size_t in_channels = 3;
  std::size_t est_width = 32;
  std::size_t est_depth = 5;
  std::size_t ca_mid = 2;
  std::vector<std::size_t> pyramid_kernels = {1, 2, 4, 8, 16};
  std::size_t unet_depth = 3;
  std::size_t unet_base_width = 32;
  std::size_t sk_mid = 0;  // 0 selects default_sk_mid(fusion_channels())
  bool predict_residual = false;

  // Ablation switches. Without the pyramid only the kernel-1 level is kept.
  bool use_channel_attention = true;
  bool use_pyramid = true;
  bool use_kernel_select = true;

  static ModelConfig standard(std::size_t in_channels);
  /// widths 4, est_depth 3, pyramid {1, 2}, unet_depth 2.
  static ModelConfig micro(std::size_t in_channels = 1);

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  std::vector<std::size_t> active_kernels() const;
  std::size_t stage2_channels() const { return 2 * in_channels; }
  /// Channels entering the fusion stage: the pyramid concat plus the stage-2 input.
  std::size_t fusion_channels() const { return (active_kernels().size() + 1) * stage2_channels(); }
  std::size_t resolved_sk_mid() const { return sk_mid != 0 ? sk_mid : default_sk_mid(fusion_channels()); }
  /// Spatial multiple the padded input must satisfy: largest pyramid kernel times 2^(unet_depth-1).
  std::size_t pad_multiple() const;

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Closed-form trainable scalar count.
std::size_t parameter_count(const ModelConfig& cfg);

/// Test and instrumentation seams for the forward pass. All members optional.
template <typename T>
struct ForwardHooks {
  /// Called with a point name ("stage2_in", "fusion_in", ...) and the tensor shape there.
  std::function<void(std::string_view, const Shape&)> observe;
  /// Replaces the U-Net of pyramid level `level` (index into active_kernels()).
  std::function<Var<T>(Var<T> pooled, std::size_t level)> unet_override;
  GateOverride<T> gate_override;
};

/// Allocates every parameter of `cfg` (zero-filled) under its canonical name.
template <typename T>
ParamStore<T> make_parameters(const ModelConfig& cfg);

/// He-uniform weights (bound sqrt(6 / fan_in)) and zero biases. Every tensor draws
/// from its own generator seeded from (seed, name), so results do not depend on
/// iteration order.
template <typename T>
void initialize_parameters(ParamStore<T>& store, std::uint64_t seed);

template <typename T>
Var<T> noise_estimation_stage(Var<T> x, const ModelConfig& cfg, const ParamStore<T>& params);

/// U-Net of one pyramid level; `prefix` selects its parameter set (e.g. "pyr.L0").
template <typename T>
Var<T> unet_forward(Var<T> x, const ModelConfig& cfg, const ParamStore<T>& params, const std::string& prefix);

/// Pool, per-level U-Net, upsample back, and concatenate in kernel order.
template <typename T>
Var<T> pyramid_stage(Var<T> f, const ModelConfig& cfg, const ParamStore<T>& params,
                     const ForwardHooks<T>& hooks = {});

template <typename T>
class PridNet {
 public:
  /// Builds and initialises parameters for `cfg`.
  explicit PridNet(ModelConfig cfg, std::uint64_t seed = 0);
  /// Adopts an existing parameter set; names and shapes must match `cfg` exactly.
  PridNet(ModelConfig cfg, ParamStore<T> params);

  const ModelConfig& config() const { return cfg_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  /// Full three-stage network on any spatial size (reflect-pad, run, crop).
  Var<T> forward(Var<T> noisy, const ForwardHooks<T>& hooks = {}) const;

  /// Inference without gradient recording.
  Tensor<T> denoise(const Tensor<T>& noisy) const;

  template <typename U>
  PridNet<U> cast() const {
    return PridNet<U>(cfg_, params_.template cast<U>());
  }

 private:
  ModelConfig cfg_;
  ParamStore<T> params_;
};

template <typename T>
Var<T> full_forward(Var<T> noisy, const PridNet<T>& model, const ForwardHooks<T>& hooks = {}) {
  return model.forward(noisy, hooks);
}

// PRC1 checkpoint: "PRC1", u32-length-prefixed canonical JSON of the config,
// u32 entry count, then (u32-length-prefixed name, PT1 tensor) per parameter in name order.
template <typename T>
void write_checkpoint(std::ostream& os, const PridNet<T>& model);
template <typename T>
PridNet<T> read_checkpoint(std::istream& is);
template <typename T>
void save_checkpoint(const std::string& path, const PridNet<T>& model);
template <typename T>
PridNet<T> load_checkpoint(const std::string& path);

/// Config stored in a checkpoint, without reading the parameters.
ModelConfig peek_checkpoint_config(const std::string& path);

}  // namespace prid
