#pragma once

// Finite-difference verification of the autodiff engine.
//
// Each check differentiates a scalar function of one or more leaf tensors,
// then perturbs a sample of input entries by +-eps and compares
//   rel = |analytic - numeric| / max(|analytic|, |numeric|, 1e-6).
// Non-scalar ops are reduced with a fixed random projection sum(out * R).

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "deblur_lab/tensor.hpp"

namespace deblur {

struct GradcheckResult {
  std::string name;
  std::string group;  // "op" or "model"
  double max_rel_error = 0.0;
  std::size_t probes = 0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradcheckOptions {
  double eps = 1e-5;
  double op_tolerance = 1e-4;
  double model_tolerance = 1e-3;
  // Entries probed per input tensor (ops) or per layer family (model).
  std::size_t probes = 5;
  bool include_model = true;
  int model_img = 32;
  std::uint64_t seed = 1234;
};

struct GradcheckReport {
  std::vector<GradcheckResult> results;
  double max_op_error = 0.0;
  double max_model_error = 0.0;
  double seconds = 0.0;
  bool passed() const;
};

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Probes `probes` entries (chosen by seed) of every input; all entries when an
// input is smaller. Inputs must be leaves with requires_grad set.
GradcheckResult check_gradient(const std::string& name, const ScalarFn& fn, const std::vector<Tensor>& inputs,
                               const GradcheckOptions& options, double tolerance);

// Every differentiable op plus the end-to-end reduced model.
GradcheckReport run_gradcheck_suite(const GradcheckOptions& options = {});

}  // namespace deblur
