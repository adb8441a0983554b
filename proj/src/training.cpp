#include "prid/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

namespace prid {

template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr) {
  for (const auto& [name, entry] : params) {
    if (!entry.grad) throw std::invalid_argument("adam_step: missing gradient for parameter '" + name + "'");
  }
  ++state.step;
  const AdamHyper& h = state.hyper;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(h.beta1, t);
  const double correction2 = 1.0 - std::pow(h.beta2, t);
  for (auto& [name, entry] : params) {
    Tensor<T>& p = entry.value;
    const Tensor<T>& g = *entry.grad;
    auto [mit, m_new] = state.m.try_emplace(name, p.shape());
    auto [vit, v_new] = state.v.try_emplace(name, p.shape());
    Tensor<T>& m = mit->second;
    Tensor<T>& v = vit->second;
    if (m.shape() != p.shape() || v.shape() != p.shape()) {
      throw ShapeError("adam_step: moment shape mismatch for '" + name + "'");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = h.beta1 * static_cast<double>(m[i]) + (1.0 - h.beta1) * gi;
      const double vi = h.beta2 * static_cast<double>(v[i]) + (1.0 - h.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double m_hat = mi / correction1;
      const double v_hat = vi / correction2;
      p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * m_hat / (std::sqrt(v_hat) + h.eps));
    }
  }
}

TrainPlan TrainPlan::standard() {
  TrainPlan p;
  p.epochs = 4000;
  p.lr_schedule = {{0, 1e-4}, {1500, 1e-5}};
  p.patch_size = 256;
  p.batch_size = 2;
  return p;
}

void TrainPlan::validate() const {
  auto fail = [](const std::string& msg) { throw std::invalid_argument("train plan: " + msg); };
  if (epochs == 0) fail("epochs must be >= 1");
  if (patch_size == 0 || batch_size == 0) fail("patch and batch sizes must be >= 1");
  if (lr_schedule.empty()) fail("lr_schedule must not be empty");
  if (lr_schedule.front().epoch != 0) fail("lr_schedule must start at epoch 0");
  for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
    if (!(lr_schedule[i].lr > 0.0)) fail("learning rates must be > 0");
    if (i > 0 && lr_schedule[i].epoch <= lr_schedule[i - 1].epoch) fail("lr thresholds must be strictly increasing");
  }
}

double TrainPlan::lr_at(std::size_t epoch) const {
  double lr = lr_schedule.front().lr;
  for (const LrStep& s : lr_schedule) {
    if (s.epoch <= epoch) lr = s.lr;
  }
  return lr;
}

void to_json(nlohmann::json& j, const TrainPlan& p) {
  nlohmann::json schedule = nlohmann::json::array();
  for (const LrStep& s : p.lr_schedule) schedule.push_back({s.epoch, s.lr});
  j = nlohmann::json{{"epochs", p.epochs},
                     {"lr_schedule", schedule},
                     {"patch_size", p.patch_size},
                     {"batch_size", p.batch_size},
                     {"seed", p.seed}};
}

void from_json(const nlohmann::json& j, TrainPlan& p) {
  if (!j.is_object()) throw std::invalid_argument("train plan must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (key == "epochs") {
      value.get_to(p.epochs);
    } else if (key == "lr_schedule") {
      p.lr_schedule.clear();
      for (const auto& step : value) {
        if (!step.is_array() || step.size() != 2) {
          throw std::invalid_argument("lr_schedule entries must be [epoch, lr] pairs");
        }
        p.lr_schedule.push_back({step[0].get<std::size_t>(), step[1].get<double>()});
      }
    } else if (key == "patch_size") {
      value.get_to(p.patch_size);
    } else if (key == "batch_size") {
      value.get_to(p.batch_size);
    } else if (key == "seed") {
      value.get_to(p.seed);
    } else {
      throw std::invalid_argument("unknown train config key '" + key + "'");
    }
  }
}

namespace {

template <typename T>
std::string describe_nonfinite(Tape<T>& tape, const ParamStore<T>& params) {
  if (auto op = tape.first_nonfinite_op()) return "first non-finite value produced by op '" + *op + "'";
  for (const auto& [name, entry] : params) {
    if (entry.grad && !entry.grad->all_finite()) return "non-finite gradient in parameter '" + name + "'";
  }
  return "non-finite loss";
}

}  // namespace

template <typename T>
std::vector<EpochRecord> train(PridNet<T>& model, const std::vector<PatchPair<T>>& data, const TrainPlan& plan,
                               const EpochCallback& on_epoch) {
  plan.validate();
  if (data.empty()) throw std::invalid_argument("train: no training pairs");
  std::mt19937_64 rng(plan.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  AdamState<T> adam;
  std::vector<EpochRecord> history;
  ParamStore<T>& params = model.params();

  for (std::size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    const double lr = plan.lr_at(epoch);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += plan.batch_size) {
      const std::size_t end = std::min(start + plan.batch_size, order.size());
      std::vector<const Tensor<T>*> noisy, clean;
      for (std::size_t i = start; i < end; ++i) {
        noisy.push_back(&data[order[i]].noisy);
        clean.push_back(&data[order[i]].clean);
      }
      Tape<T> tape;
      Var<T> input = tape.constant(stack_batch(noisy));
      Var<T> target = tape.constant(stack_batch(clean));
      Var<T> loss = l1_loss(model.forward(input), target);
      params.clear_grads();
      backward(tape, loss, params);
      const double value = static_cast<double>(loss.value()[0]);
      bool finite = std::isfinite(value);
      for (const auto& [_, entry] : params) finite = finite && entry.grad->all_finite();
      if (!finite) {
        throw NumericalError("training diverged at epoch " + std::to_string(epoch) + ": " +
                             describe_nonfinite(tape, params));
      }
      adam_step(params, adam, lr);
      loss_sum += value;
      ++batches;
    }
    history.push_back({epoch, lr, loss_sum / static_cast<double>(batches)});
    if (on_epoch && !on_epoch(history.back())) break;
  }
  return history;
}

void write_loss_csv(std::ostream& os, const std::vector<EpochRecord>& history) {
  os << "epoch,lr,mean_l1\n";
  char buf[96];
  for (const EpochRecord& r : history) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", r.epoch, r.lr, r.mean_l1);
    os << buf;
  }
}

#define PRID_INSTANTIATE(T)                                                                          \
  template void adam_step<T>(ParamStore<T>&, AdamState<T>&, double);                                  \
  template std::vector<EpochRecord> train<T>(PridNet<T>&, const std::vector<PatchPair<T>>&, const TrainPlan&, \
                                             const EpochCallback&);
PRID_INSTANTIATE(float)
PRID_INSTANTIATE(double)
#undef PRID_INSTANTIATE

}  // namespace prid
