#include "prid/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

namespace prid {

bool GradcheckReport::passed() const {
  return std::all_of(blocks.begin(), blocks.end(), [](const GradcheckBlock& b) { return b.passed; });
}

double GradcheckReport::max_rel_error() const {
  double worst = 0.0;
  for (const GradcheckBlock& b : blocks) worst = std::max(worst, b.max_rel_error);
  return worst;
}

void GradcheckReport::print(std::ostream& os) const {
  char buf[320];
  for (const GradcheckBlock& b : blocks) {
    std::snprintf(buf, sizeof buf, "%s %s/%s  checked=%zu max_rel=%.3e max_abs=%.3e tol=%.1e\n",
                  b.passed ? "PASS" : "FAIL", subject.c_str(), b.name.c_str(), b.checked, b.max_rel_error,
                  b.max_abs_error, tolerance);
    os << buf;
  }
}

void GradcheckReport::append(const GradcheckReport& other) {
  for (GradcheckBlock b : other.blocks) {
    if (other.subject != subject) b.name = other.subject + "/" + b.name;
    blocks.push_back(std::move(b));
  }
}

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double min_magnitude) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Tensor<double> t(shape);
  for (double& v : t.data()) {
    v = dist(rng);
    if (std::abs(v) < min_magnitude) v = v < 0.0 ? -min_magnitude : min_magnitude;
  }
  return t;
}

namespace {

constexpr std::uint64_t kProjectionSalt = 0x9a0f3c1d5e7b2468ULL;

// Compares an analytic adjoint with central differences of `eval` while
// `slot` is perturbed in place.
GradcheckBlock check_block(const std::string& name, const Tensor<double>& analytic, Tensor<double>& slot,
                           const std::function<double()>& eval, const GradcheckOptions& opts) {
  GradcheckBlock block{name};
  for (std::size_t i = 0; i < slot.size(); ++i) {
    const double saved = slot[i];
    slot[i] = saved + opts.step;
    const double plus = eval();
    slot[i] = saved - opts.step;
    const double minus = eval();
    slot[i] = saved;
    const double numeric = (plus - minus) / (2.0 * opts.step);
    const double a = analytic[i];
    const double abs_err = std::abs(a - numeric);
    const double rel_err = abs_err / std::max({std::abs(a), std::abs(numeric), opts.abs_floor});
    block.max_abs_error = std::max(block.max_abs_error, abs_err);
    block.max_rel_error = std::max(block.max_rel_error, rel_err);
    ++block.checked;
  }
  block.passed = block.max_rel_error < opts.tolerance;
  return block;
}

Var<double> reduce_to_scalar(Var<double> out, Tensor<double>& projection, std::uint64_t seed) {
  if (out.shape().size() == 1) return out;
  if (projection.shape() != out.shape()) projection = random_tensor(out.shape(), seed ^ kProjectionSalt);
  return weighted_sum(out, projection);
}

}  // namespace

GradcheckReport gradcheck(const std::string& subject, const GradFunction& fn, const std::vector<GradInput>& inputs,
                          const GradcheckOptions& opts) {
  GradcheckReport report{subject, opts.tolerance, {}};
  Tensor<double> projection;
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<Var<double>> vars;
    for (const GradInput& in : inputs) vars.push_back(tape.variable(in.value, in.name));
    Var<double> loss = reduce_to_scalar(fn(tape, vars), projection, opts.seed);
    tape.backward(loss);
    for (const Var<double>& v : vars) analytic.push_back(tape.grad(v));
  }
  std::vector<Tensor<double>> values;
  for (const GradInput& in : inputs) values.push_back(in.value);
  auto eval = [&]() {
    Tape<double> tape(false);
    std::vector<Var<double>> vars;
    for (const Tensor<double>& v : values) vars.push_back(tape.constant(v));
    return reduce_to_scalar(fn(tape, vars), projection, opts.seed).value()[0];
  };
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    report.blocks.push_back(check_block(inputs[i].name, analytic[i], values[i], eval, opts));
  }
  return report;
}

GradcheckReport gradcheck_params(const std::string& subject, const ParamStore<double>& params,
                                 const Tensor<double>& input, const ParamFunction& fn, const GradcheckOptions& opts) {
  GradcheckReport report{subject, opts.tolerance, {}};
  ParamStore<double> store = params;
  store.clear_grads();
  Tensor<double> projection;
  Tensor<double> input_grad;
  {
    Tape<double> tape;
    Var<double> x = tape.variable(input, "input");
    Var<double> loss = reduce_to_scalar(fn(x, store), projection, opts.seed);
    backward(tape, loss, store);
    input_grad = tape.grad(x);
  }
  Tensor<double> x_value = input;
  auto eval = [&]() {
    Tape<double> tape(false);
    return reduce_to_scalar(fn(tape.constant(x_value), store), projection, opts.seed).value()[0];
  };
  report.blocks.push_back(check_block("input", input_grad, x_value, eval, opts));
  for (const std::string& name : store.names()) {
    const Tensor<double> analytic = store.has_grad(name) ? store.grad(name) : Tensor<double>(store.value(name).shape());
    report.blocks.push_back(check_block(name, analytic, store.value(name), eval, opts));
  }
  return report;
}

GradcheckReport gradcheck_model(const std::string& subject, const PridNet<double>& model,
                                const Tensor<double>& input, const GradcheckOptions& opts) {
  const ModelConfig cfg = model.config();
  return gradcheck_params(
      subject, model.params(), input,
      [&cfg](Var<double> x, const ParamStore<double>& params) {
        // PridNet adopts a copy; the perturbed store is re-read on every call.
        return PridNet<double>(cfg, params).forward(x);
      },
      opts);
}

namespace {

using V = Var<double>;
using Vs = std::vector<V>;

}  // namespace

GradcheckReport gradcheck_operator_suite(const GradcheckOptions& opts) {
  GradcheckReport suite{"op", opts.tolerance, {}};
  std::uint64_t seed = opts.seed * 1000 + 1;
  auto rnd = [&seed](Shape s, double min_mag = 0.0) { return random_tensor(s, seed++, min_mag); };
  auto run = [&](const std::string& name, const GradFunction& fn, std::vector<GradInput> inputs) {
    suite.append(gradcheck(name, fn, inputs, opts));
  };

  struct ConvCase {
    Shape x, w;
    Conv2dOptions o;
    const char* label;
  };
  for (const ConvCase& c : {ConvCase{{2, 3, 5, 5}, {4, 3, 3, 3}, {1, Padding::same}, "k3 same 2x3x5x5"},
                            ConvCase{{1, 2, 6, 7}, {3, 2, 5, 5}, {1, Padding::same}, "k5 same 1x2x6x7"},
                            ConvCase{{1, 4, 4, 4}, {2, 4, 1, 1}, {1, Padding::valid}, "k1 1x4x4x4"},
                            ConvCase{{1, 2, 7, 6}, {2, 2, 3, 3}, {2, Padding::valid}, "k3 stride2 valid 1x2x7x6"}}) {
    const Conv2dOptions o = c.o;
    run(std::string("conv2d ") + c.label, [o](Tape<double>&, const Vs& v) { return conv2d(v[0], v[1], v[2], o); },
        {{"x", rnd(c.x)}, {"w", rnd(c.w)}, {"b", rnd({c.w.n, 1, 1, 1})}});
  }
  run("fully_connected 2x4 -> 3", [](Tape<double>&, const Vs& v) { return fully_connected(v[0], v[1], v[2]); },
      {{"x", rnd({2, 4, 1, 1})}, {"w", rnd({3, 4, 1, 1})}, {"b", rnd({3, 1, 1, 1})}});
  run("relu 1x2x4x4", [](Tape<double>&, const Vs& v) { return relu(v[0]); }, {{"x", rnd({1, 2, 4, 4}, 1e-3)}});
  run("sigmoid 1x2x3x3", [](Tape<double>&, const Vs& v) { return sigmoid(v[0]); },
      {{"x", [&] {
          Tensor<double> t = rnd({1, 2, 3, 3});
          for (double& x : t.data()) x *= 4.0;
          return t;
        }()}});
  run("softmax_over_branches 3x[2x3x1x1]",
      [](Tape<double>&, const Vs& v) { return concat_channels(softmax_over_branches(v)); },
      {{"a", rnd({2, 3, 1, 1})}, {"b", rnd({2, 3, 1, 1})}, {"c", rnd({2, 3, 1, 1})}});
  run("global_avg_pool 2x3x4x5", [](Tape<double>&, const Vs& v) { return global_avg_pool(v[0]); },
      {{"x", rnd({2, 3, 4, 5})}});
  run("avg_pool k2 1x2x4x6", [](Tape<double>&, const Vs& v) { return avg_pool(v[0], 2); },
      {{"x", rnd({1, 2, 4, 6})}});
  run("avg_pool k4 1x1x8x8", [](Tape<double>&, const Vs& v) { return avg_pool(v[0], 4); },
      {{"x", rnd({1, 1, 8, 8})}});
  run("bilinear_upsample 3x4 -> 7x9", [](Tape<double>&, const Vs& v) { return bilinear_upsample(v[0], 7, 9); },
      {{"x", rnd({1, 2, 3, 4})}});
  run("bilinear_upsample 2x2 -> 4x4", [](Tape<double>&, const Vs& v) { return bilinear_upsample(v[0], 4, 4); },
      {{"x", rnd({2, 1, 2, 2})}});
  run("concat_channels", [](Tape<double>&, const Vs& v) { return concat_channels(v); },
      {{"a", rnd({2, 1, 3, 3})}, {"b", rnd({2, 2, 3, 3})}});
  run("slice_channels", [](Tape<double>&, const Vs& v) { return slice_channels(v[0], 1, 2); },
      {{"x", rnd({2, 4, 2, 3})}});
  run("add", [](Tape<double>&, const Vs& v) { return add(v[0], v[1]); },
      {{"a", rnd({1, 2, 3, 3})}, {"b", rnd({1, 2, 3, 3})}});
  run("sub", [](Tape<double>&, const Vs& v) { return sub(v[0], v[1]); },
      {{"a", rnd({1, 2, 3, 3})}, {"b", rnd({1, 2, 3, 3})}});
  run("scale_channels", [](Tape<double>&, const Vs& v) { return scale_channels(v[0], v[1]); },
      {{"x", rnd({2, 3, 3, 2})}, {"s", rnd({2, 3, 1, 1})}});
  run("reflect_pad 3x4 +5,+6", [](Tape<double>&, const Vs& v) { return reflect_pad(v[0], 5, 6); },
      {{"x", rnd({1, 2, 3, 4})}});
  run("crop 5x6 -> 3x4", [](Tape<double>&, const Vs& v) { return crop(v[0], 3, 4); }, {{"x", rnd({1, 2, 5, 6})}});
  run("sum", [](Tape<double>&, const Vs& v) { return sum(v[0]); }, {{"x", rnd({1, 2, 3, 3})}});
  {
    const Tensor<double> pred = rnd({1, 2, 4, 4});
    Tensor<double> target = rnd({1, 2, 4, 4}, 1e-3);
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += pred[i];
    run("l1_loss", [](Tape<double>&, const Vs& v) { return l1_loss(v[0], v[1]); },
        {{"pred", pred}, {"target", target}});
  }
  return suite;
}

GradcheckReport gradcheck_block_suite(const GradcheckOptions& opts) {
  GradcheckReport suite{"block", opts.tolerance, {}};
  std::uint64_t seed = opts.seed * 1000 + 500;
  auto fill_random = [&seed](ParamStore<double>& store) {
    for (auto& [_, e] : store) e.value = random_tensor(e.value.shape(), seed++);
  };
  {
    ParamStore<double> store;
    add_channel_attention_params(store, "ca", 4, 2);
    fill_random(store);
    suite.append(gradcheck_params("channel_attention 1x4x3x3", store, random_tensor({1, 4, 3, 3}, seed++),
                                  [](Var<double> x, const ParamStore<double>& p) {
                                    return channel_attention(x, bind_channel_attention(x.tape(), p, "ca"));
                                  },
                                  opts));
  }
  {
    ParamStore<double> store;
    add_kernel_select_params(store, "sk", 2, 4);
    fill_random(store);
    suite.append(gradcheck_params("kernel_select 1x2x4x4", store, random_tensor({1, 2, 4, 4}, seed++),
                                  [](Var<double> x, const ParamStore<double>& p) {
                                    return kernel_select(x, bind_kernel_select(x.tape(), p, "sk"));
                                  },
                                  opts));
    suite.append(gradcheck_params("gate_weights 2x2x1x1", store, random_tensor({2, 2, 1, 1}, seed++),
                                  [](Var<double> x, const ParamStore<double>& p) {
                                    const auto w = gate_weights(x, bind_kernel_select(x.tape(), p, "sk"));
                                    return concat_channels<double>({w[0], w[1], w[2]});
                                  },
                                  opts));
  }
  const ModelConfig micro = ModelConfig::micro(1);
  {
    PridNet<double> net(micro, seed++);
    suite.append(gradcheck_params("noise_estimation_stage 1x1x8x8", net.params(), random_tensor({1, 1, 8, 8}, seed++),
                                  [micro](Var<double> x, const ParamStore<double>& p) {
                                    return noise_estimation_stage(x, micro, p);
                                  },
                                  opts));
  }
  {
    ParamStore<double> store = make_parameters<double>(micro);
    initialize_parameters(store, seed++);
    ParamStore<double> level;
    for (const std::string& name : store.names()) {
      if (name.rfind("pyr.L0.", 0) == 0) level.add(name, store.value(name));
    }
    suite.append(gradcheck_params("unet_forward depth2 1x2x8x8", level, random_tensor({1, 2, 8, 8}, seed++),
                                  [micro](Var<double> x, const ParamStore<double>& p) {
                                    return unet_forward(x, micro, p, "pyr.L0");
                                  },
                                  opts));
    ParamStore<double> pyramid;
    for (const std::string& name : store.names()) {
      if (name.rfind("pyr.", 0) == 0) pyramid.add(name, store.value(name));
    }
    suite.append(gradcheck_params("pyramid_stage {1,2} 1x2x8x8", pyramid, random_tensor({1, 2, 8, 8}, seed++),
                                  [micro](Var<double> x, const ParamStore<double>& p) {
                                    return pyramid_stage(x, micro, p);
                                  },
                                  opts));
  }
  return suite;
}

GradcheckReport gradcheck_model_suite(const GradcheckOptions& opts) {
  GradcheckReport suite{"model", opts.tolerance, {}};
  const PridNet<double> net(ModelConfig::micro(1), opts.seed + 17);
  // Inputs in [0, 1] like images.
  Tensor<double> input = random_tensor({1, 1, 8, 8}, opts.seed + 18);
  for (double& v : input.data()) v = 0.5 + 0.5 * v;
  suite.append(gradcheck_model("micro 1x1x8x8", net, input, opts));
  return suite;
}

GradcheckReport gradcheck_fault_fixture(const GradcheckOptions& opts) {
  // y = x^2 with the adjoint recorded as 3x instead of 2x.
  auto faulty_square = [](Tape<double>& tape, const Vs& v) {
    const V x = v[0];
    Tensor<double> out = x.value();
    for (double& e : out.data()) e *= e;
    return tape.record("faulty_square", std::move(out), {x}, [x](Tape<double>& tp, const Tensor<double>& gy) {
      Tensor<double>* gx = tp.grad_sink(x);
      const Tensor<double>& xv = tp.value(x);
      for (std::size_t i = 0; i < xv.size(); ++i) (*gx)[i] += gy[i] * 3.0 * xv[i];
    });
  };
  return gradcheck("fault_fixture", faulty_square, {{"x", random_tensor({1, 1, 3, 3}, opts.seed + 99, 0.1)}}, opts);
}

}  // namespace prid
