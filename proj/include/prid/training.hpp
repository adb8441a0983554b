#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "prid/data.hpp"
#include "prid/model.hpp"

namespace prid {

/// Raised when training produces a non-finite loss or gradient.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
struct AdamState {
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;
  std::uint64_t step = 0;
  AdamHyper hyper;
};

/// One bias-corrected Adam update from the gradient slots of `params`.
/// Throws std::invalid_argument naming the first parameter without a gradient.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr);

struct LrStep {
  std::size_t epoch = 0;  // rate applies from this epoch on
  double lr = 1e-4;
  bool operator==(const LrStep&) const = default;
};

struct TrainPlan {
  std::size_t epochs = 30;
  std::vector<LrStep> lr_schedule = {{0, 1e-3}};
  std::size_t patch_size = 32;
  std::size_t batch_size = 2;
  std::uint64_t seed = 0;

  /// Full-length schedule: 4000 epochs, 1e-4 then 1e-5 from epoch 1500, 256 patches, batch 2.
  static TrainPlan standard();

  void validate() const;
  double lr_at(std::size_t epoch) const;
  bool operator==(const TrainPlan&) const = default;
};

void to_json(nlohmann::json& j, const TrainPlan& p);
void from_json(const nlohmann::json& j, TrainPlan& p);

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double mean_l1 = 0.0;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochRecord&)>;

/// L1/Adam training over shuffled mini-batches. Shuffling derives from plan.seed
/// only, so a fixed seed and initial model give a bit-identical history.
/// Throws NumericalError naming the first non-finite op or parameter.
template <typename T>
std::vector<EpochRecord> train(PridNet<T>& model, const std::vector<PatchPair<T>>& data, const TrainPlan& plan,
                               const EpochCallback& on_epoch = {});

/// "epoch,lr,mean_l1" with round-trip precision.
void write_loss_csv(std::ostream& os, const std::vector<EpochRecord>& history);

}  // namespace prid
