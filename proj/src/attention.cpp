#include "prid/attention.hpp"

namespace prid {

namespace {

void require_channels(const char* op, std::size_t got, std::size_t expected) {
  if (got != expected) {
    throw ShapeError(std::string(op) + ": input has " + std::to_string(got) + " channels, parameters expect " +
                     std::to_string(expected));
  }
}

constexpr std::array<const char*, 3> kBranchSuffix = {"a", "b", "c"};

}  // namespace

template <typename T>
Var<T> channel_attention(Var<T> u, const ChannelAttentionParams<T>& p) {
  require_channels("channel_attention", u.shape().c, p.fc1_w.shape().c);
  Var<T> pooled = global_avg_pool(u);
  Var<T> hidden = relu(fully_connected(pooled, p.fc1_w, p.fc1_b));
  Var<T> mu = sigmoid(fully_connected(hidden, p.fc2_w, p.fc2_b));
  return scale_channels(u, mu);
}

template <typename T>
std::array<Var<T>, 3> gate_weights(Var<T> pooled, const KernelSelectParams<T>& p) {
  const Shape& s = pooled.shape();
  if (s.h != 1 || s.w != 1) throw ShapeError("gate_weights: expected pooled [N,C,1,1], got " + s.str());
  require_channels("gate_weights", s.c, p.fc1_w.shape().c);
  Var<T> hidden = relu(fully_connected(pooled, p.fc1_w, p.fc1_b));
  std::vector<Var<T>> logits;
  for (std::size_t b = 0; b < 3; ++b) logits.push_back(fully_connected(hidden, p.fc2_w[b], p.fc2_b[b]));
  std::vector<Var<T>> w = softmax_over_branches(logits);
  return {w[0], w[1], w[2]};
}

template <typename T>
Var<T> kernel_select(Var<T> u, const KernelSelectParams<T>& p, const GateOverride<T>& gate) {
  const std::size_t c = u.shape().c;
  for (std::size_t b = 0; b < 3; ++b) {
    const Shape& ws = p.conv_w[b].shape();
    if (ws.h != kKernelSelectSizes[b]) {
      throw ShapeError("kernel_select: branch " + std::to_string(b) + " kernel must be " +
                       std::to_string(kKernelSelectSizes[b]) + ", got " + ws.str());
    }
    require_channels("kernel_select", c, ws.c);
    require_channels("kernel_select", c, ws.n);
  }
  std::array<Var<T>, 3> branch;
  for (std::size_t b = 0; b < 3; ++b) branch[b] = conv2d(u, p.conv_w[b], p.conv_b[b]);
  Var<T> fused = add(add(branch[0], branch[1]), branch[2]);
  Var<T> pooled = global_avg_pool(fused);
  const std::array<Var<T>, 3> weights = gate ? gate(pooled) : gate_weights(pooled, p);
  Var<T> out = scale_channels(branch[0], weights[0]);
  out = add(out, scale_channels(branch[1], weights[1]));
  return add(out, scale_channels(branch[2], weights[2]));
}

template <typename T>
void add_channel_attention_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                                  std::size_t mid) {
  if (mid == 0 || channels == 0) throw std::invalid_argument("channel attention widths must be >= 1");
  store.add(prefix + ".fc1.w", Tensor<T>(Shape{mid, channels, 1, 1}));
  store.add(prefix + ".fc1.b", Tensor<T>(Shape{mid, 1, 1, 1}));
  store.add(prefix + ".fc2.w", Tensor<T>(Shape{channels, mid, 1, 1}));
  store.add(prefix + ".fc2.b", Tensor<T>(Shape{channels, 1, 1, 1}));
}

template <typename T>
void add_kernel_select_params(ParamStore<T>& store, const std::string& prefix, std::size_t channels,
                              std::size_t mid) {
  if (mid == 0 || channels == 0) throw std::invalid_argument("kernel select widths must be >= 1");
  for (std::size_t k : kKernelSelectSizes) {
    const std::string name = prefix + ".conv" + std::to_string(k);
    store.add(name + ".w", Tensor<T>(Shape{channels, channels, k, k}));
    store.add(name + ".b", Tensor<T>(Shape{channels, 1, 1, 1}));
  }
  store.add(prefix + ".fc1.w", Tensor<T>(Shape{mid, channels, 1, 1}));
  store.add(prefix + ".fc1.b", Tensor<T>(Shape{mid, 1, 1, 1}));
  for (const char* suffix : kBranchSuffix) {
    const std::string name = prefix + ".fc2_" + suffix;
    store.add(name + ".w", Tensor<T>(Shape{channels, mid, 1, 1}));
    store.add(name + ".b", Tensor<T>(Shape{channels, 1, 1, 1}));
  }
}

template <typename T>
ChannelAttentionParams<T> bind_channel_attention(Tape<T>& tape, const ParamStore<T>& store,
                                                 const std::string& prefix) {
  return {tape.parameter(store, prefix + ".fc1.w"), tape.parameter(store, prefix + ".fc1.b"),
          tape.parameter(store, prefix + ".fc2.w"), tape.parameter(store, prefix + ".fc2.b")};
}

template <typename T>
KernelSelectParams<T> bind_kernel_select(Tape<T>& tape, const ParamStore<T>& store, const std::string& prefix) {
  KernelSelectParams<T> p;
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string name = prefix + ".conv" + std::to_string(kKernelSelectSizes[b]);
    p.conv_w[b] = tape.parameter(store, name + ".w");
    p.conv_b[b] = tape.parameter(store, name + ".b");
  }
  p.fc1_w = tape.parameter(store, prefix + ".fc1.w");
  p.fc1_b = tape.parameter(store, prefix + ".fc1.b");
  for (std::size_t b = 0; b < 3; ++b) {
    const std::string name = prefix + ".fc2_" + kBranchSuffix[b];
    p.fc2_w[b] = tape.parameter(store, name + ".w");
    p.fc2_b[b] = tape.parameter(store, name + ".b");
  }
  return p;
}

#define PRID_INSTANTIATE(T)                                                                                \
  template Var<T> channel_attention<T>(Var<T>, const ChannelAttentionParams<T>&);                          \
  template std::array<Var<T>, 3> gate_weights<T>(Var<T>, const KernelSelectParams<T>&);                    \
  template Var<T> kernel_select<T>(Var<T>, const KernelSelectParams<T>&, const GateOverride<T>&);          \
  template void add_channel_attention_params<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t); \
  template void add_kernel_select_params<T>(ParamStore<T>&, const std::string&, std::size_t, std::size_t);  \
  template ChannelAttentionParams<T> bind_channel_attention<T>(Tape<T>&, const ParamStore<T>&,             \
                                                               const std::string&);                        \
  template KernelSelectParams<T> bind_kernel_select<T>(Tape<T>&, const ParamStore<T>&, const std::string&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
