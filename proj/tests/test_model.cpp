#include <gtest/gtest.h>

#include <map>
#include <sstream>

#include "oracles.hpp"
#include "prid/gradcheck.hpp"
#include "prid/model.hpp"

namespace prid {
namespace {

using T4 = Tensor<double>;

T4 run(const PridNet<double>& net, const T4& x, const ForwardHooks<double>& hooks = {}) {
  Tape<double> tape(false);
  return net.forward(tape.constant(x), hooks).value();
}

ModelConfig tiny(std::size_t cin = 1) {
  ModelConfig c = ModelConfig::micro(cin);
  c.est_depth = 3;
  c.est_width = 4;
  return c;
}

TEST(ModelConfig, PresetsAndValidation) {
  const ModelConfig p = ModelConfig::standard(3);
  EXPECT_EQ(p.est_depth, 5u);
  EXPECT_EQ(p.ca_mid, 2u);
  EXPECT_EQ(p.pyramid_kernels, (std::vector<std::size_t>{1, 2, 4, 8, 16}));
  EXPECT_EQ(p.pad_multiple(), 64u);
  EXPECT_EQ(ModelConfig::micro().pad_multiple(), 4u);

  ModelConfig bad = ModelConfig::micro();
  bad.in_channels = 2;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ModelConfig::micro();
  bad.pyramid_kernels = {2, 4};
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = ModelConfig::micro();
  bad.est_depth = 1;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(ModelConfig, JsonRoundTripAndUnknownKeys) {
  ModelConfig c = ModelConfig::micro(3);
  c.use_pyramid = false;
  c.sk_mid = 6;
  const ModelConfig back = nlohmann::json(c).get<ModelConfig>();
  EXPECT_EQ(back, c);
  EXPECT_THROW(nlohmann::json::parse(R"({"est_width": 4, "bogus": 1})").get<ModelConfig>(), std::invalid_argument);
  const ModelConfig partial = nlohmann::json::parse(R"({"est_width": 7})").get<ModelConfig>();
  EXPECT_EQ(partial.est_width, 7u);
  EXPECT_EQ(partial.est_depth, ModelConfig{}.est_depth);
}

TEST(ParameterCount, MicroHandCount) {
  // stage 1: 40 + 148 + 37 conv, 10 + 12 attention = 247
  // per U-Net: enc0 76 + 148, enc1 296 + 584, dec0 up 292 + conv 292 + 148, out 10 = 1846
  // kernel select on 6 channels (mid 4): 330 + 906 + 1770 + 28 + 3 * 30 = 3124; out 7
  EXPECT_EQ(parameter_count(ModelConfig::micro(1)), 7070u);
  EXPECT_EQ(make_parameters<double>(ModelConfig::micro(1)).scalar_count(), 7070u);
}

TEST(ParameterCount, MatchesLayerTallyAcrossConfigs) {
  std::vector<ModelConfig> configs = {ModelConfig::micro(1), ModelConfig::micro(3), ModelConfig::standard(1),
                                      ModelConfig::standard(3)};
  ModelConfig a = ModelConfig::micro(3);
  a.use_channel_attention = false;
  configs.push_back(a);
  a = ModelConfig::micro(3);
  a.use_pyramid = false;
  configs.push_back(a);
  a = ModelConfig::micro(1);
  a.use_kernel_select = false;
  a.unet_depth = 3;
  configs.push_back(a);
  for (const auto& c : configs) {
    EXPECT_EQ(parameter_count(c), oracle::count_parameters(c));
    EXPECT_EQ(make_parameters<float>(c).scalar_count(), oracle::count_parameters(c));
  }
}

TEST(NoiseEstimation, ShapesPreserved) {
  for (const auto& [cin, shape] : std::vector<std::pair<std::size_t, Shape>>{{1, {1, 1, 16, 16}}, {3, {2, 3, 33, 47}}}) {
    ModelConfig c = ModelConfig::standard(cin);
    ParamStore<double> p = make_parameters<double>(c);
    initialize_parameters(p, 1);
    Tape<double> tape(false);
    EXPECT_EQ(noise_estimation_stage(tape.constant(T4(shape, 0.5)), c, p).shape(), shape);
  }
}

TEST(NoiseEstimation, ZeroInZeroOut) {
  const ModelConfig c = ModelConfig::standard(3);
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 4);
  Tape<double> tape(false);
  const T4 y = noise_estimation_stage(tape.constant(T4(Shape{1, 3, 9, 9})), c, p).value();
  for (double v : y.data()) EXPECT_EQ(v, 0.0);
}

TEST(NoiseEstimation, MatchesLayerOracle) {
  const ModelConfig c = tiny(1);
  ParamStore<double> p = make_parameters<double>(c);
  unsigned seed = 10;
  for (auto& [_, e] : p) e.value = oracle::random(e.value.shape(), seed++);
  const T4 x = oracle::random(Shape{2, 1, 7, 9}, 3);
  Tape<double> tape(false);
  const T4 y = noise_estimation_stage(tape.constant(x), c, p).value();
  EXPECT_LE(oracle::max_abs_diff(y, oracle::noise_estimation(x, c, p)), 1e-10);
}

TEST(UNet, ShapePreserved) {
  for (std::size_t cin : {1, 3}) {
    ModelConfig c = ModelConfig::micro(cin);
    c.unet_depth = 3;
    ParamStore<double> p = make_parameters<double>(c);
    initialize_parameters(p, 2);
    const Shape s{1, 2 * cin, 32, 32};
    Tape<double> tape(false);
    EXPECT_EQ(unet_forward(tape.constant(T4(s, 0.1)), c, p, "pyr.L0").shape(), s);
  }
}

TEST(UNet, RejectsIndivisibleInput) {
  ModelConfig c = ModelConfig::micro(1);
  c.unet_depth = 3;
  const ParamStore<double> p = make_parameters<double>(c);
  Tape<double> tape(false);
  EXPECT_THROW(unet_forward(tape.constant(T4(Shape{1, 2, 6, 8})), c, p, "pyr.L0"), ShapeError);
}

TEST(UNet, MatchesOracle) {
  ModelConfig c = ModelConfig::micro(1);
  c.unet_depth = 3;
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 77);
  for (auto& [name, e] : p)
    if (name.ends_with(".b")) e.value = oracle::random(e.value.shape(), 5);
  const T4 x = oracle::random(Shape{2, 2, 12, 8}, 6);
  Tape<double> tape(false);
  EXPECT_LE(oracle::max_abs_diff(unet_forward(tape.constant(x), c, p, "pyr.L1").value(), oracle::unet(x, c, p, "pyr.L1")),
            1e-10);
}

TEST(UNet, GradientCheckDepthTwo) {
  const ModelConfig c = ModelConfig::micro(1);
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 8);
  for (auto& [name, e] : p)
    if (name.ends_with(".b")) e.value = oracle::random(e.value.shape(), 9);
  ParamStore<double> level;
  for (const auto& [name, e] : p)
    if (name.starts_with("pyr.L0.")) level.add(name, e.value);
  const auto report = gradcheck_params("unet", level, oracle::random(Shape{1, 2, 8, 8}, 10, 1e-3),
                                       [&c](Var<double> x, const ParamStore<double>& ps) {
                                         return unet_forward(x, c, ps, "pyr.L0");
                                       });
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(UNet, LevelsDoNotShareWeights) {
  const ModelConfig c = ModelConfig::micro(1);
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 12);
  const T4 x = oracle::random(Shape{1, 2, 8, 8}, 13);
  Tape<double> tape(false);
  const T4 a = unet_forward(tape.constant(x), c, p, "pyr.L0").value();
  const T4 b = unet_forward(tape.constant(x), c, p, "pyr.L1").value();
  EXPECT_GT(oracle::max_abs_diff(a, b), 1e-6);
}

TEST(Pyramid, ChannelsAndOracle) {
  ModelConfig c = ModelConfig::micro(1);
  c.pyramid_kernels = {1, 2, 4, 8, 16};
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 14);
  const T4 f = oracle::random(Shape{1, 2, 32, 32}, 15);
  Tape<double> tape(false);
  const T4 y = pyramid_stage(tape.constant(f), c, p).value();
  EXPECT_EQ(y.shape(), (Shape{1, 10, 32, 32}));
  EXPECT_LE(oracle::max_abs_diff(y, oracle::pyramid(f, c, p)), 1e-10);
}

TEST(Pyramid, IdentitySeam) {
  ModelConfig c = ModelConfig::micro(1);
  c.pyramid_kernels = {1, 2, 4, 8, 16};
  const ParamStore<double> p = make_parameters<double>(c);
  ForwardHooks<double> hooks;
  hooks.unet_override = [](Var<double> pooled, std::size_t) { return pooled; };
  const T4 f = oracle::random(Shape{1, 2, 16, 16}, 16);
  Tape<double> tape(false);
  const T4 y = pyramid_stage(tape.constant(f), c, p, hooks).value();
  EXPECT_EQ(oracle::slice(y, 0, 2), f);

  const T4 y2 = pyramid_stage(tape.constant(T4(Shape{1, 2, 16, 16}, 0.625)), c, p, hooks).value();
  for (double v : y2.data()) EXPECT_NEAR(v, 0.625, 1e-15);
}

TEST(Pyramid, RejectsIndivisibleInput) {
  const ModelConfig c = ModelConfig::micro(1);
  const ParamStore<double> p = make_parameters<double>(c);
  Tape<double> tape(false);
  EXPECT_THROW(pyramid_stage(tape.constant(T4(Shape{1, 2, 5, 4})), c, p), ShapeError);
}

TEST(Pyramid, MutatingOneLevelLeavesOthersUnchanged) {
  ModelConfig c = ModelConfig::micro(1);
  c.pyramid_kernels = {1, 2, 4};
  ParamStore<double> p = make_parameters<double>(c);
  initialize_parameters(p, 17);
  const T4 f = oracle::random(Shape{1, 2, 16, 16}, 18);
  Tape<double> tape(false);
  const T4 before = pyramid_stage(tape.constant(f), c, p).value();
  for (auto& [name, e] : p)
    if (name.starts_with("pyr.L0.")) {
      for (double& v : e.value.data()) v += 0.05;
    }
  const T4 after = pyramid_stage(tape.constant(f), c, p).value();
  EXPECT_GT(oracle::max_abs_diff(oracle::slice(before, 0, 2), oracle::slice(after, 0, 2)), 1e-6);
  EXPECT_EQ(oracle::slice(before, 2, 4), oracle::slice(after, 2, 4));
}

TEST(FullForward, ShapeInvarianceIncludingPrimes) {
  const PridNet<double> net1(ModelConfig::micro(1), 3);
  for (const auto& [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{
           {1, 1}, {2, 3}, {7, 13}, {8, 8}, {31, 17}, {97, 61}}) {
    const Shape s{1, 1, h, w};
    EXPECT_EQ(run(net1, T4(s, 0.3)).shape(), s);
  }
  const PridNet<double> net3(ModelConfig::micro(3), 3);
  EXPECT_EQ(run(net3, T4(Shape{1, 3, 255, 257}, 0.3)).shape(), (Shape{1, 3, 255, 257}));
  const PridNet<double> standard(ModelConfig::standard(3), 3);
  EXPECT_EQ(run(standard, T4(Shape{2, 3, 17, 19}, 0.3)).shape(), (Shape{2, 3, 17, 19}));
}

TEST(FullForward, StageChannelCounts) {
  for (const auto& cfg : {ModelConfig::micro(1), ModelConfig::standard(3)}) {
    const PridNet<double> net(cfg, 1);
    std::map<std::string, Shape> seen;
    ForwardHooks<double> hooks;
    hooks.observe = [&seen](std::string_view point, const Shape& s) { seen[std::string(point)] = s; };
    run(net, T4(Shape{1, cfg.in_channels, 5, 6}, 0.2), hooks);
    const std::size_t levels = cfg.pyramid_kernels.size();
    EXPECT_EQ(seen.at("stage2_in").c, 2 * cfg.in_channels);
    EXPECT_EQ(seen.at("pyramid_out").c, levels * 2 * cfg.in_channels);
    EXPECT_EQ(seen.at("fusion_in").c, (levels + 1) * 2 * cfg.in_channels);
    EXPECT_EQ(seen.at("fusion_out").c, (levels + 1) * 2 * cfg.in_channels);
    EXPECT_EQ(seen.at("input_padded").h % cfg.pad_multiple(), 0u);
    EXPECT_EQ(seen.at("output"), (Shape{1, cfg.in_channels, 5, 6}));
  }
}

TEST(FullForward, MatchesComposedOracle) {
  for (std::size_t cin : {1, 3}) {
    PridNet<double> net(ModelConfig::micro(cin), 20 + cin);
    for (auto& [name, e] : net.params())
      if (name.ends_with(".b")) e.value = oracle::random(e.value.shape(), 21, 0.0);
    const T4 x = oracle::random(Shape{1, cin, 10, 7}, 22);
    EXPECT_LE(oracle::max_abs_diff(run(net, x), oracle::full_forward(x, net.config(), net.params())), 1e-10);
  }
}

TEST(FullForward, AblationsRunAndMatchOracle) {
  for (int which = 0; which < 4; ++which) {
    ModelConfig c = ModelConfig::micro(1);
    if (which == 0) c.use_channel_attention = false;
    if (which == 1) c.use_pyramid = false;
    if (which == 2) c.use_kernel_select = false;
    if (which == 3) c.predict_residual = true;
    const PridNet<double> net(c, 30);
    const T4 x = oracle::random(Shape{1, 1, 9, 6}, 31);
    EXPECT_LE(oracle::max_abs_diff(run(net, x), oracle::full_forward(x, c, net.params())), 1e-10) << which;
  }
}

TEST(FullForward, ResidualModeWithZeroParamsIsIdentity) {
  ModelConfig c = ModelConfig::micro(1);
  c.predict_residual = true;
  const PridNet<double> net(c, make_parameters<double>(c));
  const T4 x = oracle::random(Shape{1, 1, 6, 5}, 32);
  EXPECT_EQ(run(net, x), x);
}

TEST(FullForward, DeterministicAndDenoiseAgrees) {
  const PridNet<double> net(ModelConfig::micro(1), 40);
  const T4 x = oracle::random(Shape{2, 1, 12, 12}, 41);
  const T4 a = run(net, x);
  EXPECT_EQ(run(net, x), a);
  EXPECT_EQ(net.denoise(x), a);
  EXPECT_THROW(run(net, T4(Shape{1, 3, 4, 4})), ShapeError);
}

TEST(FullForward, GradientCheckMicro) {
  const auto report = gradcheck_model_suite();
  EXPECT_TRUE(report.passed()) << report.max_rel_error();
}

TEST(Initialization, SeededAndOrderIndependent) {
  const PridNet<double> a(ModelConfig::micro(1), 5), b(ModelConfig::micro(1), 5), c(ModelConfig::micro(1), 6);
  bool any_diff = false;
  for (const auto& [name, e] : a.params()) {
    EXPECT_EQ(e.value, b.params().value(name));
    if (!(e.value == c.params().value(name))) any_diff = true;
    if (name.ends_with(".b")) {
      for (double v : e.value.data()) EXPECT_EQ(v, 0.0);
    } else {
      const Shape s = e.value.shape();
      const double bound = std::sqrt(6.0 / static_cast<double>(s.c * s.h * s.w));
      for (double v : e.value.data()) EXPECT_LE(std::abs(v), bound);
    }
  }
  EXPECT_TRUE(any_diff);
  // Adding the kernel-select block must not disturb tensors shared with the ablation.
  ModelConfig no_sk = ModelConfig::micro(1);
  no_sk.use_kernel_select = false;
  const PridNet<double> d(no_sk, 5);
  EXPECT_EQ(d.params().value("pyr.L1.enc0.conv0.w"), a.params().value("pyr.L1.enc0.conv0.w"));
}

TEST(Checkpoint, RoundTripIsBitExact) {
  for (bool f32 : {false, true}) {
    std::stringstream first;
    T4 x = oracle::random(Shape{1, 3, 9, 11}, 50);
    std::string bytes1, bytes2;
    if (f32) {
      const PridNet<float> net(ModelConfig::micro(3), 51);
      write_checkpoint(first, net);
      bytes1 = first.str();
      std::stringstream in(bytes1);
      const PridNet<float> back = read_checkpoint<float>(in);
      std::stringstream second;
      write_checkpoint(second, back);
      bytes2 = second.str();
      EXPECT_EQ(back.denoise(x.cast<float>()), net.denoise(x.cast<float>()));
    } else {
      const PridNet<double> net(ModelConfig::micro(3), 51);
      write_checkpoint(first, net);
      bytes1 = first.str();
      std::stringstream in(bytes1);
      const PridNet<double> back = read_checkpoint<double>(in);
      std::stringstream second;
      write_checkpoint(second, back);
      bytes2 = second.str();
      EXPECT_EQ(back.config(), net.config());
      EXPECT_EQ(back.denoise(x), net.denoise(x));
    }
    EXPECT_EQ(bytes1, bytes2);
    EXPECT_EQ(bytes1.substr(0, 4), "PRC1");
  }
}

TEST(Checkpoint, RejectsCorruptAndMismatchedData) {
  std::stringstream bad("PRCX....");
  EXPECT_THROW(read_checkpoint<double>(bad), FormatError);

  std::stringstream ss;
  write_checkpoint(ss, PridNet<double>(ModelConfig::micro(1), 1));
  const std::string full = ss.str();
  std::stringstream truncated(full.substr(0, full.size() / 2));
  EXPECT_ANY_THROW(read_checkpoint<double>(truncated));

  ParamStore<double> p = make_parameters<double>(ModelConfig::micro(1));
  EXPECT_THROW(PridNet<double>(ModelConfig::micro(3), p), std::exception);
}

}  // namespace
}  // namespace prid
