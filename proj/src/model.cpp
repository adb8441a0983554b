#include "prid/model.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "binary_io.hpp"

namespace prid {

namespace {

std::string level_prefix(std::size_t level) { return "pyr.L" + std::to_string(level); }

template <typename T>
void add_conv(ParamStore<T>& store, const std::string& name, std::size_t cin, std::size_t cout, std::size_t k) {
  store.add(name + ".w", Tensor<T>(Shape{cout, cin, k, k}));
  store.add(name + ".b", Tensor<T>(Shape{cout, 1, 1, 1}));
}

std::size_t conv_count(std::size_t cin, std::size_t cout, std::size_t k) { return cout * cin * k * k + cout; }

template <typename T>
Var<T> conv_relu(Var<T> x, const ParamStore<T>& params, const std::string& name) {
  Tape<T>& tape = x.tape();
  return relu(conv2d(x, tape.parameter(params, name + ".w"), tape.parameter(params, name + ".b")));
}

template <typename T>
Var<T> conv_plain(Var<T> x, const ParamStore<T>& params, const std::string& name) {
  Tape<T>& tape = x.tape();
  return conv2d(x, tape.parameter(params, name + ".w"), tape.parameter(params, name + ".b"));
}

template <typename T>
void add_unet_params(ParamStore<T>& store, const ModelConfig& cfg, const std::string& prefix) {
  const std::size_t c = cfg.stage2_channels();
  std::size_t in = c;
  for (std::size_t l = 0; l < cfg.unet_depth; ++l) {
    const std::size_t w = cfg.unet_base_width << l;
    const std::string enc = prefix + ".enc" + std::to_string(l);
    add_conv(store, enc + ".conv0", in, w, 3);
    add_conv(store, enc + ".conv1", w, w, 3);
    in = w;
  }
  for (std::size_t l = 0; l + 1 < cfg.unet_depth; ++l) {
    const std::size_t w = cfg.unet_base_width << l;
    const std::string dec = prefix + ".dec" + std::to_string(l);
    add_conv(store, dec + ".up", w * 2, w, 3);
    add_conv(store, dec + ".conv0", w * 2, w, 3);
    add_conv(store, dec + ".conv1", w, w, 3);
  }
  add_conv(store, prefix + ".out", cfg.unet_base_width, c, 1);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : s) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

constexpr std::array<char, 4> kCheckpointMagic = {'P', 'R', 'C', '1'};

ModelConfig read_checkpoint_header(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), magic.size()) || magic != kCheckpointMagic) {
    throw FormatError("bad checkpoint magic (expected PRC1)");
  }
  const std::string text = detail::read_bytes(is, "checkpoint config");
  try {
    return nlohmann::json::parse(text).get<ModelConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
}

}  // namespace

ModelConfig ModelConfig::standard(std::size_t in_channels) {
  ModelConfig c;
  c.in_channels = in_channels;
  return c;
}

ModelConfig ModelConfig::micro(std::size_t in_channels) {
  ModelConfig c;
  c.in_channels = in_channels;
  c.est_width = 4;
  c.est_depth = 3;
  c.pyramid_kernels = {1, 2};
  c.unet_depth = 2;
  c.unet_base_width = 4;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("model config: " + msg); };
  if (in_channels != 1 && in_channels != 3) fail("in_channels must be 1 or 3");
  if (est_width == 0 || unet_base_width == 0 || ca_mid == 0) fail("widths must be >= 1");
  if (est_depth < 2) fail("est_depth must be >= 2");
  if (unet_depth == 0 || unet_depth > 8) fail("unet_depth must be in [1, 8]");
  if (pyramid_kernels.empty() || pyramid_kernels.front() != 1) fail("pyramid_kernels must start with 1");
  for (std::size_t i = 1; i < pyramid_kernels.size(); ++i) {
    if (pyramid_kernels[i] <= pyramid_kernels[i - 1]) fail("pyramid_kernels must be strictly increasing");
  }
}

std::vector<std::size_t> ModelConfig::active_kernels() const {
  if (!use_pyramid) return {1};
  return pyramid_kernels;
}

std::size_t ModelConfig::pad_multiple() const {
  return active_kernels().back() << (unet_depth - 1);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"in_channels", c.in_channels},
                     {"est_width", c.est_width},
                     {"est_depth", c.est_depth},
                     {"ca_mid", c.ca_mid},
                     {"pyramid_kernels", c.pyramid_kernels},
                     {"unet_depth", c.unet_depth},
                     {"unet_base_width", c.unet_base_width},
                     {"sk_mid", c.sk_mid},
                     {"predict_residual", c.predict_residual},
                     {"use_channel_attention", c.use_channel_attention},
                     {"use_pyramid", c.use_pyramid},
                     {"use_kernel_select", c.use_kernel_select}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw std::invalid_argument("model config must be a JSON object");
  static const std::set<std::string> known = {"in_channels",   "est_width",        "est_depth",
                                              "ca_mid",        "pyramid_kernels",  "unet_depth",
                                              "unet_base_width", "sk_mid",         "predict_residual",
                                              "use_channel_attention", "use_pyramid", "use_kernel_select"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw std::invalid_argument("unknown model config key '" + key + "'");
  }
  auto get = [&j](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("in_channels", c.in_channels);
  get("est_width", c.est_width);
  get("est_depth", c.est_depth);
  get("ca_mid", c.ca_mid);
  get("pyramid_kernels", c.pyramid_kernels);
  get("unet_depth", c.unet_depth);
  get("unet_base_width", c.unet_base_width);
  get("sk_mid", c.sk_mid);
  get("predict_residual", c.predict_residual);
  get("use_channel_attention", c.use_channel_attention);
  get("use_pyramid", c.use_pyramid);
  get("use_kernel_select", c.use_kernel_select);
}

std::size_t parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t cin = cfg.in_channels;
  const std::size_t w = cfg.est_width;
  std::size_t total = conv_count(cin, w, 3) + (cfg.est_depth - 2) * conv_count(w, w, 3) + conv_count(w, cin, 3);
  if (cfg.use_channel_attention) total += (cfg.ca_mid * w + cfg.ca_mid) + (w * cfg.ca_mid + w);

  const std::size_t c = cfg.stage2_channels();
  std::size_t unet = 0;
  for (std::size_t l = 0; l < cfg.unet_depth; ++l) {
    const std::size_t wl = cfg.unet_base_width << l;
    const std::size_t in = l == 0 ? c : wl / 2;
    unet += conv_count(in, wl, 3) + conv_count(wl, wl, 3);
    if (l + 1 < cfg.unet_depth) unet += conv_count(2 * wl, wl, 3) * 2 + conv_count(wl, wl, 3);
  }
  unet += conv_count(cfg.unet_base_width, c, 1);
  total += unet * cfg.active_kernels().size();

  const std::size_t f = cfg.fusion_channels();
  if (cfg.use_kernel_select) {
    const std::size_t mid = cfg.resolved_sk_mid();
    for (std::size_t k : kKernelSelectSizes) total += conv_count(f, f, k);
    total += (mid * f + mid) + 3 * (f * mid + f);
  }
  return total + conv_count(f, cin, 1);
}

template <typename T>
ParamStore<T> make_parameters(const ModelConfig& cfg) {
  cfg.validate();
  ParamStore<T> store;
  const std::size_t cin = cfg.in_channels;
  for (std::size_t i = 0; i < cfg.est_depth; ++i) {
    const std::size_t in = i == 0 ? cin : cfg.est_width;
    const std::size_t out = i + 1 == cfg.est_depth ? cin : cfg.est_width;
    add_conv(store, "est.conv" + std::to_string(i), in, out, 3);
  }
  if (cfg.use_channel_attention) add_channel_attention_params(store, "est.ca", cfg.est_width, cfg.ca_mid);
  for (std::size_t level = 0; level < cfg.active_kernels().size(); ++level) {
    add_unet_params(store, cfg, level_prefix(level));
  }
  if (cfg.use_kernel_select) add_kernel_select_params(store, "sk", cfg.fusion_channels(), cfg.resolved_sk_mid());
  add_conv(store, "out", cfg.fusion_channels(), cin, 1);
  return store;
}

template <typename T>
void initialize_parameters(ParamStore<T>& store, std::uint64_t seed) {
  for (auto& [name, entry] : store) {
    Tensor<T>& t = entry.value;
    if (!ends_with(name, ".w")) {
      t.fill(T(0));
      continue;
    }
    const Shape& s = t.shape();
    const double fan_in = static_cast<double>(s.c * s.h * s.w);
    const double bound = std::sqrt(6.0 / fan_in);
    std::mt19937_64 rng(splitmix64(seed ^ fnv1a(name)));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (T& v : t.data()) v = static_cast<T>(dist(rng));
  }
}

template <typename T>
Var<T> noise_estimation_stage(Var<T> x, const ModelConfig& cfg, const ParamStore<T>& params) {
  Var<T> h = x;
  for (std::size_t i = 0; i < cfg.est_depth; ++i) {
    if (i + 1 == cfg.est_depth && cfg.use_channel_attention) {
      h = channel_attention(h, bind_channel_attention(x.tape(), params, "est.ca"));
    }
    h = conv_relu(h, params, "est.conv" + std::to_string(i));
  }
  return h;
}

template <typename T>
Var<T> unet_forward(Var<T> x, const ModelConfig& cfg, const ParamStore<T>& params, const std::string& prefix) {
  const std::size_t multiple = std::size_t{1} << (cfg.unet_depth - 1);
  if (x.shape().h % multiple != 0 || x.shape().w % multiple != 0) {
    throw ShapeError("unet_forward: spatial dims of " + x.shape().str() + " not divisible by " +
                     std::to_string(multiple));
  }
  std::vector<Var<T>> skips;
  Var<T> h = x;
  for (std::size_t l = 0; l < cfg.unet_depth; ++l) {
    const std::string enc = prefix + ".enc" + std::to_string(l);
    h = conv_relu(h, params, enc + ".conv0");
    h = conv_relu(h, params, enc + ".conv1");
    if (l + 1 < cfg.unet_depth) {
      skips.push_back(h);
      h = avg_pool(h, 2);
    }
  }
  for (std::size_t l = cfg.unet_depth - 1; l-- > 0;) {
    const Var<T> skip = skips[l];
    const std::string dec = prefix + ".dec" + std::to_string(l);
    h = bilinear_upsample(h, skip.shape().h, skip.shape().w);
    h = conv_relu(h, params, dec + ".up");
    h = concat_channels<T>({h, skip});
    h = conv_relu(h, params, dec + ".conv0");
    h = conv_relu(h, params, dec + ".conv1");
  }
  return conv_plain(h, params, prefix + ".out");
}

template <typename T>
Var<T> pyramid_stage(Var<T> f, const ModelConfig& cfg, const ParamStore<T>& params, const ForwardHooks<T>& hooks) {
  const Shape s = f.shape();
  const std::vector<std::size_t> kernels = cfg.active_kernels();
  if (s.h % kernels.back() != 0 || s.w % kernels.back() != 0) {
    throw ShapeError("pyramid_stage: spatial dims of " + s.str() + " not divisible by " +
                     std::to_string(kernels.back()));
  }
  std::vector<Var<T>> levels;
  for (std::size_t level = 0; level < kernels.size(); ++level) {
    Var<T> pooled = avg_pool(f, kernels[level]);
    Var<T> denoised = hooks.unet_override ? hooks.unet_override(pooled, level)
                                          : unet_forward(pooled, cfg, params, level_prefix(level));
    Var<T> up = bilinear_upsample(denoised, s.h, s.w);
    if (hooks.observe) hooks.observe("pyramid_level" + std::to_string(level), up.shape());
    levels.push_back(up);
  }
  return concat_channels(levels);
}

template <typename T>
PridNet<T>::PridNet(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), params_(make_parameters<T>(cfg_)) {
  initialize_parameters(params_, seed);
}

template <typename T>
PridNet<T>::PridNet(ModelConfig cfg, ParamStore<T> params) : cfg_(std::move(cfg)), params_(std::move(params)) {
  const ParamStore<T> expected = make_parameters<T>(cfg_);
  if (expected.size() != params_.size()) {
    throw std::invalid_argument("parameter set has " + std::to_string(params_.size()) + " tensors, config needs " +
                                std::to_string(expected.size()));
  }
  for (const auto& [name, entry] : expected) {
    if (!params_.contains(name)) throw std::invalid_argument("missing parameter '" + name + "'");
    if (params_.value(name).shape() != entry.value.shape()) {
      throw ShapeError("parameter '" + name + "' has shape " + params_.value(name).shape().str() + ", expected " +
                       entry.value.shape().str());
    }
  }
}

template <typename T>
Var<T> PridNet<T>::forward(Var<T> noisy, const ForwardHooks<T>& hooks) const {
  const Shape in = noisy.shape();
  if (in.c != cfg_.in_channels) {
    throw ShapeError("model expects " + std::to_string(cfg_.in_channels) + " channels, input is " + in.str());
  }
  auto observe = [&hooks](std::string_view point, Var<T> v) {
    if (hooks.observe) hooks.observe(point, v.shape());
  };
  const std::size_t m = cfg_.pad_multiple();
  const std::size_t ph = (in.h + m - 1) / m * m;
  const std::size_t pw = (in.w + m - 1) / m * m;
  Var<T> x = reflect_pad(noisy, ph - in.h, pw - in.w);
  observe("input_padded", x);

  Var<T> est = noise_estimation_stage(x, cfg_, params_);
  observe("stage1_out", est);
  Var<T> stage2_in = concat_channels<T>({est, x});
  observe("stage2_in", stage2_in);
  Var<T> pyramid = pyramid_stage(stage2_in, cfg_, params_, hooks);
  observe("pyramid_out", pyramid);
  Var<T> fusion_in = concat_channels<T>({pyramid, stage2_in});
  observe("fusion_in", fusion_in);
  Var<T> fused = fusion_in;
  if (cfg_.use_kernel_select) {
    fused = kernel_select(fusion_in, bind_kernel_select(x.tape(), params_, "sk"), hooks.gate_override);
  }
  observe("fusion_out", fused);
  Var<T> out = conv_plain(fused, params_, "out");
  if (cfg_.predict_residual) out = sub(x, out);
  out = crop(out, in.h, in.w);
  observe("output", out);
  return out;
}

template <typename T>
Tensor<T> PridNet<T>::denoise(const Tensor<T>& noisy) const {
  Tape<T> tape(false);
  return forward(tape.constant(noisy)).value();
}

template <typename T>
void write_checkpoint(std::ostream& os, const PridNet<T>& model) {
  os.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::write_bytes(os, nlohmann::json(model.config()).dump());
  detail::write_u32(os, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& [name, entry] : model.params()) {
    detail::write_bytes(os, name);
    write_pt1(os, entry.value);
  }
  if (!os) throw FormatError("failed writing checkpoint");
}

template <typename T>
PridNet<T> read_checkpoint(std::istream& is) {
  ModelConfig cfg = read_checkpoint_header(is);
  try {
    cfg.validate();
  } catch (const std::invalid_argument& e) {
    throw FormatError(e.what());
  }
  const std::uint32_t count = detail::read_u32(is, "checkpoint entry count");
  ParamStore<T> params;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = detail::read_bytes(is, "parameter name", 4096);
    params.add(name, read_pt1<T>(is));
  }
  return PridNet<T>(std::move(cfg), std::move(params));
}

template <typename T>
void save_checkpoint(const std::string& path, const PridNet<T>& model) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path + " for writing");
  write_checkpoint(os, model);
}

template <typename T>
PridNet<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_checkpoint<T>(is);
}

ModelConfig peek_checkpoint_config(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path);
  return read_checkpoint_header(is);
}

#define PRID_INSTANTIATE(T)                                                                                 \
  template ParamStore<T> make_parameters<T>(const ModelConfig&);                                            \
  template void initialize_parameters<T>(ParamStore<T>&, std::uint64_t);                                   \
  template Var<T> noise_estimation_stage<T>(Var<T>, const ModelConfig&, const ParamStore<T>&);              \
  template Var<T> unet_forward<T>(Var<T>, const ModelConfig&, const ParamStore<T>&, const std::string&);    \
  template Var<T> pyramid_stage<T>(Var<T>, const ModelConfig&, const ParamStore<T>&, const ForwardHooks<T>&); \
  template class PridNet<T>;                                                                                \
  template void write_checkpoint<T>(std::ostream&, const PridNet<T>&);                                      \
  template PridNet<T> read_checkpoint<T>(std::istream&);                                                    \
  template void save_checkpoint<T>(const std::string&, const PridNet<T>&);                                  \
  template PridNet<T> load_checkpoint<T>(const std::string&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
