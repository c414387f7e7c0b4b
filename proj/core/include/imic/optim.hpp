#pragma once

#include <vector>

#include "imic/encoder.hpp"

namespace imic {

struct AdamConfig {
  double lr = 3e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-6;
};

struct OptimState {
  AdamConfig config;
  std::vector<Layer> first_moment;
  std::vector<Layer> second_moment;
  long step = 0;

  OptimState() = default;
  OptimState(const EncoderParams& params, AdamConfig config);
};

/// Bias-corrected Adam on the summed gradient in `buffer` (no division by the
/// accumulation count) with decoupled weight decay:
///   w <- w - lr * (m_hat / (sqrt(v_hat) + eps) + weight_decay * w)
/// Zeros the buffer afterwards. Throws ContractError on an empty buffer and
/// NumericError on a non-finite update.
void adam_step(EncoderParams& params, GradBuffer& buffer, OptimState& state);

}  // namespace imic
