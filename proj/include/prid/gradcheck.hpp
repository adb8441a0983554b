#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "prid/model.hpp"

namespace prid {

struct GradcheckBlock {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  bool passed = true;
};

struct GradcheckReport {
  std::string subject;
  double tolerance = 0.0;
  std::vector<GradcheckBlock> blocks;

  bool passed() const;
  double max_rel_error() const;
  /// One "PASS|FAIL <subject>/<block> ..." line per block.
  void print(std::ostream& os) const;
  void append(const GradcheckReport& other);
};

struct GradcheckOptions {
  double tolerance = 1e-4;
  double step = 1e-5;
  /// Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-6;
  std::uint64_t seed = 0;
};

struct GradInput {
  std::string name;
  Tensor<double> value;
};

/// Builds the function under test on a fresh tape from leaf variables.
using GradFunction = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

/// Central finite differences against reverse-mode adjoints for every element of
/// every input. Non-scalar outputs are reduced with fixed pseudo-random weights.
GradcheckReport gradcheck(const std::string& subject, const GradFunction& fn, const std::vector<GradInput>& inputs,
                          const GradcheckOptions& opts = {});

using ParamFunction = std::function<Var<double>(Var<double> input, const ParamStore<double>& params)>;

/// Like gradcheck(), for functions that bind their parameters from a store. Checks
/// the input and every tensor of `params` (one block each).
GradcheckReport gradcheck_params(const std::string& subject, const ParamStore<double>& params,
                                 const Tensor<double>& input, const ParamFunction& fn,
                                 const GradcheckOptions& opts = {});

/// Checks the input and every parameter tensor of `model` (one block each).
GradcheckReport gradcheck_model(const std::string& subject, const PridNet<double>& model,
                                const Tensor<double>& input, const GradcheckOptions& opts = {});

/// Random tensor in [-1, 1] with every element at least `min_magnitude` away from 0.
Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double min_magnitude = 0.0);

/// Every differentiable operator on a few small randomized shapes.
GradcheckReport gradcheck_operator_suite(const GradcheckOptions& opts = {});
/// Channel attention, kernel select, U-Net, pyramid stage and noise-estimation stage.
GradcheckReport gradcheck_block_suite(const GradcheckOptions& opts = {});
/// End-to-end micro model (widths 4, pyramid {1, 2}, unet_depth 2) on a 1x1x8x8 input.
GradcheckReport gradcheck_model_suite(const GradcheckOptions& opts = {});

/// Harness sanity fixture: an op whose recorded adjoint is deliberately wrong.
GradcheckReport gradcheck_fault_fixture(const GradcheckOptions& opts = {});

}  // namespace prid
