#pragma once

#include <cstdint>
#include <vector>

#include "deblur_lab/tensor.hpp"

namespace deblur {

struct AdamHyper {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-7;
};

// First/second moment buffers, one per parameter, in parameter order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update using each parameter's accumulated gradient
// (a parameter without a gradient is treated as having a zero gradient).
// Empty state is initialized on the first call; a state whose buffers do not
// match the parameters raises DimensionError.
void adam_step(std::vector<Tensor>& params, AdamState& state, const AdamHyper& hyper);

}  // namespace deblur
