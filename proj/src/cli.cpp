#include "prid/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "prid/gradcheck.hpp"
#include "prid/metrics.hpp"
#include "prid/png_io.hpp"

namespace prid {

namespace fs = std::filesystem;

namespace {

/// Error that maps to a specific exit code.
struct CommandError : std::runtime_error {
  CommandError(int code, const std::string& msg) : std::runtime_error(msg), code(code) {}
  int code;
};

[[noreturn]] void usage_error(const std::string& msg) { throw CommandError(kExitUsage, msg); }

std::vector<fs::path> png_files(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) usage_error("not a readable directory: " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.is_regular_file() && entry.path().extension() == ".png") files.push_back(entry.path());
  }
  if (ec) usage_error("cannot list " + dir + ": " + ec.message());
  std::sort(files.begin(), files.end());
  return files;
}

Tensor<double> read_image(const std::string& path, int* depth = nullptr) {
  try {
    return read_png(path, depth);
  } catch (const FormatError& e) {
    usage_error(e.what());
  }
}

template <typename T>
Tensor<double> clamp_unit(const Tensor<T>& t) {
  Tensor<double> out = t.template cast<double>();
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

std::string format_metric(double v, int precision) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string exact(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
PridNet<T> load_model(const std::string& path) {
  try {
    return load_checkpoint<T>(path);
  } catch (const std::exception& e) {
    usage_error("cannot load checkpoint " + path + ": " + e.what());
  }
}

struct TrainArgs {
  std::string config, model, dir, csv;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, patch, batch;
  std::optional<double> lr;
  bool f64 = false;
};

template <typename T>
int train_command(const TrainArgs& a, std::ostream& out) {
  CliConfig cfg = a.config.empty() ? CliConfig{} : load_cli_config(a.config);
  TrainPlan& plan = cfg.train;
  if (a.seed) plan.seed = *a.seed;
  if (a.epochs) plan.epochs = *a.epochs;
  if (a.patch) plan.patch_size = *a.patch;
  if (a.batch) plan.batch_size = *a.batch;
  if (a.lr) {
    // Rescale the whole schedule so its first rate becomes --lr.
    const double ratio = *a.lr / plan.lr_schedule.front().lr;
    for (LrStep& s : plan.lr_schedule) s.lr *= ratio;
  }
  try {
    plan.validate();
    cfg.noise.validate();
  } catch (const std::invalid_argument& e) {
    usage_error(e.what());
  }

  std::vector<PatchPair<T>> data;
  try {
    data = load_training_pairs<T>(a.dir, plan.patch_size, cfg.noise);
  } catch (const CommandError&) {
    throw;
  } catch (const std::exception& e) {
    usage_error(e.what());
  }
  if (data.empty()) usage_error("no training patches in " + a.dir);

  ModelConfig model_cfg;
  try {
    model_cfg = cfg.model(data.front().clean.shape().c);
    model_cfg.validate();
  } catch (const std::exception& e) {
    usage_error(e.what());
  }
  if (model_cfg.in_channels != data.front().clean.shape().c) {
    usage_error("model expects " + std::to_string(model_cfg.in_channels) + " channels, images have " +
                std::to_string(data.front().clean.shape().c));
  }

  PridNet<T> model(model_cfg, plan.seed);
  out << "training on " << data.size() << " patches of " << plan.patch_size << "x" << plan.patch_size << ", "
      << model.params().scalar_count() << " parameters, " << plan.epochs << " epochs\n";
  std::vector<EpochRecord> history;
  try {
    history = train(model, data, plan, [&out](const EpochRecord& r) {
      out << "epoch " << r.epoch << " lr " << r.lr << " l1 " << exact(r.mean_l1) << "\n";
      return true;
    });
  } catch (const NumericalError& e) {
    throw CommandError(kExitNumerical, e.what());
  }
  save_checkpoint(a.model, model);
  const std::string csv = a.csv.empty() ? a.model + ".loss.csv" : a.csv;
  std::ofstream os(csv);
  if (!os) usage_error("cannot write " + csv);
  write_loss_csv(os, history);
  out << "wrote " << a.model << " and " << csv << "\n";
  return kExitOk;
}

template <typename T>
int denoise_command(const std::string& model_path, const std::string& in, const std::string& out_path,
                    std::ostream& out) {
  const PridNet<T> model = load_model<T>(model_path);
  int depth = 8;
  const Tensor<double> image = read_image(in, &depth);
  if (image.shape().c != model.config().in_channels) {
    usage_error("checkpoint expects " + std::to_string(model.config().in_channels) + " channels, " + in + " has " +
                std::to_string(image.shape().c));
  }
  const auto start = std::chrono::steady_clock::now();
  const Tensor<T> result = model.denoise(image.cast<T>());
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_png(out_path, clamp_unit(result), depth);
  out << "denoised " << image.shape().w << "x" << image.shape().h << " in " << std::fixed << std::setprecision(3)
      << seconds << " s\n";
  return kExitOk;
}

struct EvalRow {
  std::string name;
  double psnr;
  double ssim;
};

template <typename T>
std::vector<EvalRow> evaluate_pairs(const std::string& dir, const std::optional<PridNet<T>>& model) {
  std::map<std::string, fs::path> noisy, clean;
  for (const fs::path& p : png_files(dir)) {
    const std::string stem = p.stem().string();
    auto ends = [&stem](const std::string& suffix) {
      return stem.size() > suffix.size() && stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    if (ends("_noisy")) {
      noisy[stem.substr(0, stem.size() - 6)] = p;
    } else if (ends("_clean")) {
      clean[stem.substr(0, stem.size() - 6)] = p;
    }
  }
  std::vector<std::string> orphans;
  for (const auto& [k, p] : noisy) {
    if (!clean.count(k)) orphans.push_back(p.filename().string());
  }
  for (const auto& [k, p] : clean) {
    if (!noisy.count(k)) orphans.push_back(p.filename().string());
  }
  if (!orphans.empty()) {
    std::string msg = "unpaired files:";
    for (const std::string& o : orphans) msg += " " + o;
    usage_error(msg);
  }
  if (noisy.empty()) usage_error("no <name>_noisy.png / <name>_clean.png pairs in " + dir);

  std::vector<EvalRow> rows;
  for (const auto& [name, noisy_path] : noisy) {
    const Tensor<double> n = read_image(noisy_path.string());
    const Tensor<double> c = read_image(clean.at(name).string());
    if (n.shape() != c.shape()) usage_error("shape mismatch in pair '" + name + "'");
    Tensor<double> restored = n;
    if (model) {
      if (n.shape().c != model->config().in_channels) usage_error("channel mismatch in pair '" + name + "'");
      restored = clamp_unit(model->denoise(n.cast<T>()));
    }
    double s = 0.0;
    try {
      s = ssim(restored, c);
    } catch (const ShapeError& e) {
      usage_error(name + ": " + e.what());
    }
    rows.push_back({name, psnr(restored, c), s});
  }
  return rows;
}

template <typename T>
int eval_command(const std::string& dir, const std::string& model_path, const std::string& csv_path,
                 std::ostream& out) {
  std::optional<PridNet<T>> model;
  if (!model_path.empty()) model.emplace(load_model<T>(model_path));
  const std::vector<EvalRow> rows = evaluate_pairs<T>(dir, model);
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const EvalRow& r : rows) {
    psnr_sum += r.psnr;
    ssim_sum += r.ssim;
  }
  const EvalRow mean{"mean", psnr_sum / static_cast<double>(rows.size()), ssim_sum / static_cast<double>(rows.size())};

  std::size_t width = 5;
  for (const EvalRow& r : rows) width = std::max(width, r.name.size());
  auto table_row = [&](const std::string& a, const std::string& b, const std::string& c) {
    out << std::left << std::setw(static_cast<int>(width)) << a << "  " << std::right << std::setw(9) << b << "  "
        << std::setw(7) << c << "\n";
  };
  table_row("image", "PSNR", "SSIM");
  for (const EvalRow& r : rows) table_row(r.name, format_metric(r.psnr, 2), format_metric(r.ssim, 4));
  table_row("mean", format_metric(mean.psnr, 2), format_metric(mean.ssim, 4));

  std::ostringstream csv;
  csv << "image,psnr,ssim\n";
  for (const EvalRow& r : rows) csv << r.name << "," << exact(r.psnr) << "," << exact(r.ssim) << "\n";
  csv << mean.name << "," << exact(mean.psnr) << "," << exact(mean.ssim) << "\n";
  out << "\n" << csv.str();
  if (!csv_path.empty()) {
    std::ofstream os(csv_path);
    if (!os) usage_error("cannot write " + csv_path);
    os << csv.str();
  }
  return kExitOk;
}

int gradcheck_command(const std::string& scope, bool inject_fault, std::uint64_t seed, std::ostream& out) {
  GradcheckOptions opts;
  opts.seed = seed;
  GradcheckReport report;
  if (scope == "op") {
    report = gradcheck_operator_suite(opts);
  } else if (scope == "block") {
    report = gradcheck_block_suite(opts);
  } else if (scope == "model") {
    report = gradcheck_model_suite(opts);
  } else {
    usage_error("unknown --scope '" + scope + "' (expected op, block or model)");
  }
  if (inject_fault) report.append(gradcheck_fault_fixture(opts));
  report.print(out);
  out << (report.passed() ? "gradcheck passed" : "gradcheck FAILED") << " (" << report.blocks.size()
      << " blocks, max rel error " << std::scientific << std::setprecision(3) << report.max_rel_error() << ")\n";
  return report.passed() ? kExitOk : kExitFailure;
}

int inspect_command(const std::string& model_path, std::ostream& out) {
  const PridNet<double> model = load_model<double>(model_path);
  out << "config " << nlohmann::json(model.config()).dump() << "\n";
  out << "parameters " << model.params().scalar_count() << " in " << model.params().size() << " tensors\n";
  for (const auto& [name, entry] : model.params()) out << "  " << name << " " << entry.value.shape() << "\n";
  return kExitOk;
}

}  // namespace

ModelConfig CliConfig::model(std::size_t channels) const {
  ModelConfig base;
  if (preset == "micro") {
    base = ModelConfig::micro(channels);
  } else if (preset == "standard") {
    base = ModelConfig::standard(channels);
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "' (expected micro or standard)");
  }
  nlohmann::json merged = base;
  for (const auto& [key, value] : model_overrides.items()) merged[key] = value;
  return merged.get<ModelConfig>();
}

CliConfig parse_cli_config(const nlohmann::json& j) {
  if (!j.is_object()) throw std::invalid_argument("config must be a JSON object");
  CliConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "preset") {
      cfg.preset = value.get<std::string>();
    } else if (key == "model") {
      ModelConfig probe;
      from_json(value, probe);  // rejects unknown keys early
      cfg.model_overrides = value;
    } else if (key == "train") {
      from_json(value, cfg.train);
    } else if (key == "noise") {
      from_json(value, cfg.noise);
    } else {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
  }
  if (cfg.preset != "micro" && cfg.preset != "standard") {
    throw std::invalid_argument("unknown preset '" + cfg.preset + "' (expected micro or standard)");
  }
  return cfg;
}

CliConfig load_cli_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw CommandError(kExitUsage, "cannot open config " + path);
  try {
    return parse_cli_config(nlohmann::json::parse(is));
  } catch (const nlohmann::json::parse_error& e) {
    throw CommandError(kExitUsage, path + ": " + e.what());
  } catch (const std::exception& e) {
    throw CommandError(kExitUsage, path + ": " + e.what());
  }
}

template <typename T>
std::vector<PatchPair<T>> load_training_pairs(const std::string& dir, std::size_t patch, const NoiseSpec& noise) {
  std::vector<PatchPair<T>> pairs;
  std::uint64_t index = 0;
  std::size_t channels = 0;
  for (const fs::path& file : png_files(dir)) {
    const Tensor<T> image = read_image(file.string()).cast<T>();
    if (channels == 0) channels = image.shape().c;
    if (image.shape().c != channels) usage_error("mixed channel counts in " + dir);
    if (image.shape().h < patch || image.shape().w < patch) continue;
    for (Tensor<T>& crop : extract_patches(image, patch, patch)) {
      NoiseSpec spec = noise;
      spec.seed = noise.seed + index++;
      pairs.push_back(synthesize_pair(crop, spec));
    }
  }
  return pairs;
}

template std::vector<PatchPair<float>> load_training_pairs<float>(const std::string&, std::size_t, const NoiseSpec&);
template std::vector<PatchPair<double>> load_training_pairs<double>(const std::string&, std::size_t,
                                                                    const NoiseSpec&);

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pyramid denoising network: train, denoise, evaluate, gradient-check"};
  app.require_subcommand(1);

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Train on synthetic noisy crops of a directory of clean PNGs");
  train_cmd->add_option("--config", train_args.config, "JSON settings file");
  train_cmd->add_option("--model", train_args.model, "Checkpoint to write")->required();
  train_cmd->add_option("--dir", train_args.dir, "Directory of clean PNG images")->required();
  train_cmd->add_option("--out", train_args.csv, "Loss CSV (default: <model>.loss.csv)");
  train_cmd->add_option("--seed", train_args.seed, "Seed for initialisation and shuffling");
  train_cmd->add_option("--epochs", train_args.epochs, "Number of epochs");
  train_cmd->add_option("--lr", train_args.lr, "Initial learning rate (later steps scale with it)");
  train_cmd->add_option("--patch", train_args.patch, "Patch size");
  train_cmd->add_option("--batch", train_args.batch, "Batch size");
  train_cmd->add_flag("--f64", train_args.f64, "Use 64-bit arithmetic");

  std::string model_path, in_path, out_path, dir, scope = "model";
  bool f64 = false, inject_fault = false;
  std::uint64_t seed = 0;
  auto* denoise_cmd = app.add_subcommand("denoise", "Denoise one PNG image");
  denoise_cmd->add_option("--model", model_path, "Checkpoint")->required();
  denoise_cmd->add_option("--in", in_path, "Input PNG")->required();
  denoise_cmd->add_option("--out", out_path, "Output PNG")->required();
  denoise_cmd->add_flag("--f64", f64, "Use 64-bit arithmetic");

  auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM over <name>_noisy.png / <name>_clean.png pairs");
  eval_cmd->add_option("--dir", dir, "Directory of pairs")->required();
  eval_cmd->add_option("--model", model_path, "Checkpoint (omit to score the noisy inputs)");
  eval_cmd->add_option("--out", out_path, "Also write the CSV here");
  eval_cmd->add_flag("--f64", f64, "Use 64-bit arithmetic");

  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient checks (64-bit)");
  grad_cmd->add_option("--scope", scope, "op, block or model")->check(CLI::IsMember({"op", "block", "model"}));
  grad_cmd->add_option("--seed", seed, "Seed for random test points");
  grad_cmd->add_flag("--inject-fault", inject_fault, "Append a fixture with a deliberately wrong adjoint");
  grad_cmd->add_flag("--f64", f64, "Accepted for symmetry; gradient checks always run in 64-bit");

  auto* inspect_cmd = app.add_subcommand("inspect", "Print a checkpoint's config and parameter table");
  inspect_cmd->add_option("--model", model_path, "Checkpoint")->required();

  std::vector<const char*> argv;
  for (const std::string& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      return train_args.f64 ? train_command<double>(train_args, out) : train_command<float>(train_args, out);
    }
    if (denoise_cmd->parsed()) {
      return f64 ? denoise_command<double>(model_path, in_path, out_path, out)
                 : denoise_command<float>(model_path, in_path, out_path, out);
    }
    if (eval_cmd->parsed()) {
      return f64 ? eval_command<double>(dir, model_path, out_path, out)
                 : eval_command<float>(dir, model_path, out_path, out);
    }
    if (grad_cmd->parsed()) return gradcheck_command(scope, inject_fault, seed, out);
    if (inspect_cmd->parsed()) return inspect_command(model_path, out);
  } catch (const CommandError& e) {
    err << "error: " << e.what() << "\n";
    return e.code;
  } catch (const NumericalError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace prid
