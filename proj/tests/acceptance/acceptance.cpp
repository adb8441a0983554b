// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "oracles.hpp"
#include "prid/data.hpp"
#include "prid/gradcheck.hpp"
#include "prid/metrics.hpp"
#include "prid/training.hpp"

namespace fs = std::filesystem;
using namespace prid;
using T4 = Tensor<double>;

namespace {

const fs::path kOut = PRID_TEST_TMP;

struct Outcome {
  bool pass;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt("%.17g", v);
}

void randomize(ParamStore<double>& store, unsigned seed) {
  for (auto& [_, e] : store) e.value = oracle::random(e.value.shape(), seed++);
}

// ---------------------------------------------------------------- criterion 1

Outcome operator_oracles() {
  constexpr int kSeeds = 25;
  const auto t0 = std::chrono::steady_clock::now();
  std::map<std::string, double> worst;
  auto record = [&worst](const std::string& op, double d) { worst[op] = std::max(worst[op], d); };

  for (unsigned seed = 0; seed < kSeeds; ++seed) {
    std::mt19937 rng(seed);
    auto pick = [&rng](std::size_t lo, std::size_t hi) {
      return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
    };
    unsigned ts = 1000 * seed;
    Tape<double> tape(false);

    {
      const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[pick(0, 2)];
      const T4 x = oracle::random({pick(1, 2), pick(1, 3), pick(1, 7), pick(1, 7)}, ts++);
      const T4 w = oracle::random({pick(1, 3), x.shape().c, k, k}, ts++);
      const T4 b = oracle::random({w.shape().n, 1, 1, 1}, ts++);
      record("conv2d", oracle::max_abs_diff(conv2d(tape.constant(x), tape.constant(w), tape.constant(b)).value(),
                                            oracle::conv2d(x, w, &b, 1, (k - 1) / 2)));
      const std::size_t stride = pick(1, 2);
      const T4 xv = oracle::random({1, x.shape().c, k + pick(0, 4), k + pick(0, 4)}, ts++);
      record("conv2d", oracle::max_abs_diff(
                           conv2d(tape.constant(xv), tape.constant(w), Var<double>{}, {stride, Padding::valid}).value(),
                           oracle::conv2d(xv, w, nullptr, stride, 0)));
    }
    {
      const std::size_t k = pick(1, 4);
      const T4 x = oracle::random({pick(1, 2), pick(1, 3), k * pick(1, 4), k * pick(1, 4)}, ts++);
      record("avg_pool", oracle::max_abs_diff(avg_pool(tape.constant(x), k).value(), oracle::avg_pool(x, k)));
    }
    {
      const T4 x = oracle::random({pick(1, 2), pick(1, 3), pick(1, 5), pick(1, 5)}, ts++);
      const std::size_t h = x.shape().h + pick(0, 9), w = x.shape().w + pick(0, 9);
      record("bilinear_upsample",
             oracle::max_abs_diff(bilinear_upsample(tape.constant(x), h, w).value(), oracle::bilinear(x, h, w)));
    }
    {
      const T4 x = oracle::random({pick(1, 3), pick(1, 4), pick(1, 9), pick(1, 9)}, ts++);
      record("global_avg_pool", oracle::max_abs_diff(global_avg_pool(tape.constant(x)).value(), oracle::gap(x)));
    }
    {
      const T4 x = oracle::random({pick(1, 3), pick(1, 8), 1, 1}, ts++);
      const T4 w = oracle::random({pick(1, 8), x.shape().c, 1, 1}, ts++);
      const T4 b = oracle::random({w.shape().n, 1, 1, 1}, ts++);
      record("fully_connected",
             oracle::max_abs_diff(fully_connected(tape.constant(x), tape.constant(w), tape.constant(b)).value(),
                                  oracle::fully_connected(x, w, b)));
    }
    {
      const Shape s{pick(1, 3), pick(1, 6), 1, 1};
      std::vector<T4> logits;
      std::vector<Var<double>> vars;
      for (int b = 0; b < 3; ++b) {
        T4 l = oracle::random(s, ts++);
        for (double& v : l.data()) v *= 8.0;
        logits.push_back(l);
        vars.push_back(tape.constant(l));
      }
      const auto got = softmax_over_branches(vars);
      const auto ref = oracle::softmax(logits);
      for (int b = 0; b < 3; ++b) record("softmax_over_branches", oracle::max_abs_diff(got[b].value(), ref[b]));
    }
    {
      const std::size_t c = pick(1, 5);
      ParamStore<double> p;
      add_channel_attention_params(p, "ca", c, pick(1, 3));
      randomize(p, ts);
      ts += 10;
      const T4 u = oracle::random({pick(1, 2), c, pick(1, 6), pick(1, 6)}, ts++);
      record("channel_attention",
             oracle::max_abs_diff(channel_attention(tape.constant(u), bind_channel_attention(tape, p, "ca")).value(),
                                  oracle::channel_attention(u, p, "ca")));
    }
    {
      const std::size_t c = pick(1, 3);
      ParamStore<double> p;
      add_kernel_select_params(p, "ks", c, pick(1, 4));
      randomize(p, ts);
      ts += 20;
      const T4 u = oracle::random({pick(1, 2), c, pick(1, 8), pick(1, 8)}, ts++);
      record("kernel_select",
             oracle::max_abs_diff(kernel_select(tape.constant(u), bind_kernel_select(tape, p, "ks")).value(),
                                  oracle::kernel_select(u, p, "ks")));
    }
    {
      ModelConfig c = ModelConfig::micro(pick(0, 1) ? 3 : 1);
      c.unet_depth = pick(1, 3);
      c.unet_base_width = pick(2, 4);
      ParamStore<double> p = make_parameters<double>(c);
      randomize(p, ts);
      ts += 100;
      const std::size_t m = std::size_t{1} << (c.unet_depth - 1);
      const T4 x = oracle::random({pick(1, 2), c.stage2_channels(), m * pick(1, 4), m * pick(1, 4)}, ts++);
      record("unet_forward", oracle::max_abs_diff(unet_forward(tape.constant(x), c, p, "pyr.L0").value(),
                                                  oracle::unet(x, c, p, "pyr.L0")));
    }
    {
      ModelConfig c = ModelConfig::micro(1);
      c.pyramid_kernels = seed % 2 ? std::vector<std::size_t>{1, 2} : std::vector<std::size_t>{1, 2, 4};
      c.unet_base_width = pick(2, 3);
      ParamStore<double> p = make_parameters<double>(c);
      randomize(p, ts);
      ts += 200;
      const std::size_t m = c.pad_multiple();
      const T4 f = oracle::random({1, 2, m * pick(1, 3), m * pick(1, 3)}, ts++);
      record("pyramid_stage",
             oracle::max_abs_diff(pyramid_stage(tape.constant(f), c, p).value(), oracle::pyramid(f, c, p)));
    }
  }
  double overall = 0.0;
  std::string detail;
  for (const auto& [op, d] : worst) {
    overall = std::max(overall, d);
    detail += " " + op + "=" + fmt("%.1e", d);
  }
  const double t = seconds_since(t0);
  return {overall <= 1e-10 && worst.size() == 10 && t < 60.0,
          std::to_string(worst.size()) + " ops x " + std::to_string(kSeeds) + " seeds, max |diff| " +
              fmt("%.2e", overall) + " (tol 1e-10)," + detail + ", " + fmt("%.1f", t) + " s"};
}

// ---------------------------------------------------------------- criterion 2

Outcome gradient_suites() {
  const auto t0 = std::chrono::steady_clock::now();
  GradcheckOptions opts;
  GradcheckReport all{"all", opts.tolerance, {}};
  all.append(gradcheck_operator_suite(opts));
  all.append(gradcheck_block_suite(opts));
  all.append(gradcheck_model_suite(opts));
  std::ofstream(kOut / "gradcheck.txt") << [&] {
    std::ostringstream os;
    all.print(os);
    return os.str();
  }();
  const double t = seconds_since(t0);
  std::size_t failed = 0;
  for (const auto& b : all.blocks) failed += b.passed ? 0 : 1;
  return {all.passed() && all.max_rel_error() < 1e-4 && t < 300.0,
          std::to_string(all.blocks.size()) + " blocks (ops, blocks, micro model 1x1x8x8), " +
              std::to_string(failed) + " failed, max rel error " + fmt("%.2e", all.max_rel_error()) +
              " (tol 1e-4), " + fmt("%.1f", t) + " s"};
}

// ---------------------------------------------------------------- criterion 3

Outcome structural_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> problems;

  for (std::size_t cin : {1, 3}) {
    const PridNet<double> net(ModelConfig::micro(cin), 11);
    for (const auto& [h, w] : std::vector<std::pair<std::size_t, std::size_t>>{{1, 1}, {8, 8}, {97, 61}, {255, 257}}) {
      const Shape s{1, cin, h, w};
      if (net.denoise(T4(s, 0.4)).shape() != s) problems.push_back("shape " + s.str());
    }
  }

  double worst_sum = 0.0;
  for (unsigned seed = 0; seed < 50; ++seed) {
    ParamStore<double> p;
    add_kernel_select_params(p, "ks", 6, 4);
    randomize(p, 100 * seed);
    Tape<double> tape(false);
    const auto g = gate_weights(tape.constant(oracle::random({2, 6, 1, 1}, 7 + seed)), bind_kernel_select(tape, p, "ks"));
    for (std::size_t i = 0; i < 12; ++i) {
      worst_sum = std::max(worst_sum, std::abs(g[0].value()[i] + g[1].value()[i] + g[2].value()[i] - 1.0));
    }
  }
  if (worst_sum > 1e-9) problems.push_back("gate sum off by " + fmt("%.2e", worst_sum));

  double worst_ratio = 0.0;
  bool ratio_in_range = true;
  for (unsigned seed = 0; seed < 20; ++seed) {
    ParamStore<double> p;
    add_channel_attention_params(p, "ca", 4, 2);
    randomize(p, 50 * seed);
    const T4 u = oracle::random({2, 4, 5, 5}, 900 + seed, 1e-3);
    Tape<double> tape(false);
    const T4 y = channel_attention(tape.constant(u), bind_channel_attention(tape, p, "ca")).value();
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t c = 0; c < 4; ++c) {
        const double r0 = y.at(n, c, 0, 0) / u.at(n, c, 0, 0);
        ratio_in_range = ratio_in_range && r0 > 0.0 && r0 < 1.0;
        for (std::size_t h = 0; h < 5; ++h)
          for (std::size_t w = 0; w < 5; ++w)
            worst_ratio = std::max(worst_ratio, std::abs(y.at(n, c, h, w) / u.at(n, c, h, w) - r0));
      }
  }
  if (worst_ratio > 1e-9 || !ratio_in_range) problems.push_back("channel scaling " + fmt("%.2e", worst_ratio));

  double hull_violation = 0.0;
  for (unsigned seed = 0; seed < 20; ++seed) {
    ParamStore<double> p;
    add_kernel_select_params(p, "ks", 3, 4);
    randomize(p, 70 * seed);
    const T4 u = oracle::random({1, 3, 6, 7}, 500 + seed);
    Tape<double> tape(false);
    const T4 v = kernel_select(tape.constant(u), bind_kernel_select(tape, p, "ks")).value();
    const T4 b3 = oracle::conv_same(u, p.value("ks.conv3.w"), p.value("ks.conv3.b"));
    const T4 b5 = oracle::conv_same(u, p.value("ks.conv5.w"), p.value("ks.conv5.b"));
    const T4 b7 = oracle::conv_same(u, p.value("ks.conv7.w"), p.value("ks.conv7.b"));
    for (std::size_t i = 0; i < v.size(); ++i) {
      hull_violation = std::max({hull_violation, std::min({b3[i], b5[i], b7[i]}) - v[i], v[i] - std::max({b3[i], b5[i], b7[i]})});
    }
  }
  if (hull_violation > 1e-12) problems.push_back("convex hull violated by " + fmt("%.2e", hull_violation));

  // Perturb one level's parameters; only that level's slice of the pyramid output may move.
  ModelConfig c = ModelConfig::standard(1);
  c.unet_base_width = 4;
  c.unet_depth = 2;
  const PridNet<double> base(c, 21);
  const T4 f = oracle::random({1, 2, 32, 32}, 22);
  auto pyramid_of = [&](const ParamStore<double>& p) {
    Tape<double> tape(false);
    return pyramid_stage(tape.constant(f), c, p).value();
  };
  const T4 before = pyramid_of(base.params());
  const std::size_t levels = c.pyramid_kernels.size();
  bool aliasing = false;
  for (std::size_t level = 0; level < levels; ++level) {
    ParamStore<double> p = base.params().cast<double>();
    for (auto& [name, e] : p) {
      if (name.starts_with("pyr.L" + std::to_string(level) + ".")) {
        for (double& v : e.value.data()) v += 0.05;
      }
    }
    const T4 after = pyramid_of(p);
    for (std::size_t other = 0; other < levels; ++other) {
      const bool same = oracle::slice(before, 2 * other, 2) == oracle::slice(after, 2 * other, 2);
      if ((other == level) == same) aliasing = true;
    }
  }
  if (aliasing) problems.push_back("U-Net parameter aliasing");

  const double t = seconds_since(t0);
  std::string detail = "sizes {1x1, 8x8, 97x61, 255x257} x Cin {1,3}; gate sum err " + fmt("%.1e", worst_sum) +
                       "; channel scale spread " + fmt("%.1e", worst_ratio) + "; hull excess " +
                       fmt("%.1e", std::max(0.0, hull_violation)) + "; 5 U-Nets independent; " + fmt("%.1f", t) + " s";
  for (const auto& p : problems) detail += "; PROBLEM " + p;
  return {problems.empty() && t < 60.0, detail};
}

// ------------------------------------------------------------ criteria 4 to 7

constexpr std::size_t kTrainImages = 16;
constexpr std::size_t kImageSize = 64;
constexpr std::size_t kPatch = 32;
constexpr std::size_t kHeldOut = 4;
constexpr std::uint64_t kSeed = 2024;

TrainPlan experiment_plan() {
  TrainPlan plan;
  plan.epochs = 80;
  plan.lr_schedule = {{0, 1e-3}, {60, 1e-4}};
  plan.patch_size = kPatch;
  plan.batch_size = 2;
  plan.seed = kSeed;
  return plan;
}

std::vector<PatchPair<double>> training_pairs() {
  std::vector<PatchPair<double>> pairs;
  std::uint64_t index = 0;
  for (std::size_t i = 0; i < kTrainImages; ++i) {
    const T4 image = make_fixture_image<double>(i, kImageSize, kImageSize, 1);
    for (const T4& crop : extract_patches(image, kPatch, kPatch)) {
      pairs.push_back(synthesize_pair(crop, NoiseSpec{NoiseKind::gaussian, 0.1, 255.0, kSeed + index++}));
    }
  }
  return pairs;
}

std::vector<PatchPair<double>> held_out_pairs() {
  std::vector<PatchPair<double>> pairs;
  for (std::size_t i = 0; i < kHeldOut; ++i) {
    const T4 image = make_fixture_image<double>(1000 + i, kImageSize, kImageSize, 1);
    pairs.push_back(synthesize_pair(image, NoiseSpec{NoiseKind::gaussian, 0.1, 255.0, 777000 + i}));
  }
  return pairs;
}

struct Variant {
  std::string name;
  ModelConfig config;
};

std::vector<Variant> variants() {
  std::vector<Variant> v{{"full", ModelConfig::micro(1)}};
  v.push_back({"no_channel_attention", ModelConfig::micro(1)});
  v.back().config.use_channel_attention = false;
  v.push_back({"no_pyramid", ModelConfig::micro(1)});
  v.back().config.use_pyramid = false;
  v.push_back({"no_kernel_select", ModelConfig::micro(1)});
  v.back().config.use_kernel_select = false;
  return v;
}

struct RunResult {
  std::string loss_csv;
  std::string metric_table;
  double noisy_psnr = 0.0;
  double denoised_psnr = 0.0;
  double denoised_ssim = 0.0;
  std::size_t params = 0;
  double seconds = 0.0;
  std::string checkpoint;
  std::vector<T4> outputs;  // unclamped held-out outputs of the in-memory model
};

T4 clamp_unit(T4 t) {
  for (double& v : t.data()) v = std::clamp(v, 0.0, 1.0);
  return t;
}

RunResult run_variant(const Variant& v, const std::vector<PatchPair<double>>& train_set,
                      const std::vector<PatchPair<double>>& test_set, const std::string& tag) {
  const auto t0 = std::chrono::steady_clock::now();
  RunResult r;
  PridNet<double> model(v.config, kSeed);
  r.params = model.params().scalar_count();
  const auto history = train(model, train_set, experiment_plan());
  std::ostringstream loss;
  write_loss_csv(loss, history);
  r.loss_csv = loss.str();
  std::ofstream(kOut / ("loss_" + v.name + "_" + tag + ".csv")) << r.loss_csv;

  std::ostringstream table;
  table << "image,noisy_psnr,denoised_psnr,denoised_ssim\n";
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    r.outputs.push_back(model.denoise(test_set[i].noisy));
    const T4 out = clamp_unit(r.outputs.back());
    const double np = psnr(test_set[i].noisy, test_set[i].clean);
    const double dp = psnr(out, test_set[i].clean);
    const double ds = ssim(out, test_set[i].clean);
    table << "heldout" << i << "," << exact(np) << "," << exact(dp) << "," << exact(ds) << "\n";
    r.noisy_psnr += np / static_cast<double>(test_set.size());
    r.denoised_psnr += dp / static_cast<double>(test_set.size());
    r.denoised_ssim += ds / static_cast<double>(test_set.size());
  }
  table << "mean," << exact(r.noisy_psnr) << "," << exact(r.denoised_psnr) << "," << exact(r.denoised_ssim) << "\n";
  r.metric_table = table.str();
  std::ofstream(kOut / ("metrics_" + v.name + "_" + tag + ".csv")) << r.metric_table;

  const fs::path ckpt = kOut / ("model_" + v.name + "_" + tag + ".prc");
  save_checkpoint(ckpt.string(), model);
  r.checkpoint = ckpt.string();
  r.seconds = seconds_since(t0);
  return r;
}

std::string slurp(const std::string& p) {
  std::ifstream is(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(is), {});
}

}  // namespace

int main() {
  fs::create_directories(kOut);
  int failures = 0;
  auto report = [&failures](int id, const std::string& title, const Outcome& o) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " " << title << ": " << o.detail << std::endl;
    if (!o.pass) ++failures;
  };

  report(1, "operator oracles", operator_oracles());
  report(2, "gradient checks", gradient_suites());
  report(3, "structural invariants", structural_invariants());

  const auto train_set = training_pairs();
  const auto test_set = held_out_pairs();
  const auto vs = variants();
  std::vector<RunResult> first, second;
  for (const Variant& v : vs) first.push_back(run_variant(v, train_set, test_set, "run1"));

  {
    const RunResult& full = first.front();
    const double gain = full.denoised_psnr - full.noisy_psnr;
    const TrainPlan plan = experiment_plan();
    report(4, "desk-scale denoising",
           Outcome{gain >= 2.0 && plan.epochs <= 200 && train_set.size() >= 64,
                   std::to_string(train_set.size()) + " AWGN sigma=0.1 pairs of " + std::to_string(kPatch) + "x" +
                       std::to_string(kPatch) + ", " + std::to_string(plan.epochs) + " epochs, lr 1e-3 -> 1e-4; " +
                       "held-out mean PSNR noisy " + fmt("%.2f", full.noisy_psnr) + " dB -> denoised " +
                       fmt("%.2f", full.denoised_psnr) + " dB (gain " + fmt("%.2f", gain) + " dB, need >= 2.00), " +
                       fmt("%.0f", full.seconds) + " s"});
  }

  {
    std::ostringstream csv;
    csv << "variant,parameters,noisy_psnr,denoised_psnr,denoised_ssim,gain_db,final_l1\n";
    bool ok = true;
    std::string detail;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      const RunResult& r = first[i];
      const std::string last_row = r.loss_csv.substr(r.loss_csv.rfind('\n', r.loss_csv.size() - 2) + 1);
      csv << vs[i].name << "," << r.params << "," << exact(r.noisy_psnr) << "," << exact(r.denoised_psnr) << ","
          << exact(r.denoised_ssim) << "," << exact(r.denoised_psnr - r.noisy_psnr) << ","
          << last_row.substr(last_row.rfind(',') + 1);
      detail += (i ? ", " : "") + vs[i].name + " " + fmt("%.2f", r.denoised_psnr);
      if (i > 0 && first[0].denoised_psnr < r.denoised_psnr - 0.3) ok = false;
    }
    std::ofstream(kOut / "ablation.csv") << csv.str();
    report(5, "ablations", Outcome{ok, "held-out PSNR dB: " + detail + " (full must be >= each - 0.30); logged to " +
                                           (kOut / "ablation.csv").string()});
  }

  {
    for (const Variant& v : vs) second.push_back(run_variant(v, train_set, test_set, "run2"));
    bool same = true;
    std::string mismatch;
    for (std::size_t i = 0; i < vs.size(); ++i) {
      if (first[i].loss_csv != second[i].loss_csv) {
        same = false;
        mismatch += " loss:" + vs[i].name;
      }
      if (first[i].metric_table != second[i].metric_table) {
        same = false;
        mismatch += " metrics:" + vs[i].name;
      }
      if (slurp(first[i].checkpoint) != slurp(second[i].checkpoint)) {
        same = false;
        mismatch += " checkpoint:" + vs[i].name;
      }
    }
    report(6, "determinism",
           Outcome{same, std::to_string(vs.size()) + " variants retrained with seed " + std::to_string(kSeed) +
                             (same ? ": loss CSVs, metric tables and checkpoints bit-identical" : ": differs" + mismatch)});
  }

  {
    const std::string path = first.front().checkpoint;
    const PridNet<double> original = load_checkpoint<double>(path);
    const std::string resaved = (kOut / "model_full_resaved.prc").string();
    save_checkpoint(resaved, original);
    const PridNet<double> reloaded = load_checkpoint<double>(resaved);
    const bool bytes_equal = slurp(path) == slurp(resaved);
    bool outputs_equal = true;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      outputs_equal = outputs_equal && reloaded.denoise(test_set[i].noisy) == first.front().outputs[i];
    }
    const T4 odd = make_fixture_image<double>(5, 97, 61, 1);
    outputs_equal = outputs_equal && original.denoise(odd) == reloaded.denoise(odd);
    report(7, "checkpoint round trip",
           Outcome{bytes_equal && outputs_equal,
                   std::string("save->load->save ") + (bytes_equal ? "bit-exact" : "DIFFERS") + " (" +
                       std::to_string(slurp(path).size()) + " bytes), reloaded outputs " +
                       (outputs_equal ? "bit-identical" : "DIFFER")});
  }

  std::cout << (failures == 0 ? "all 7 criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
