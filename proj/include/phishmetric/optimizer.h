#pragma once

#include <cstdint>

#include "phishmetric/nn/layers.h"

namespace phishmetric {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// First/second moment estimates; empty until the first update.
struct AdamState {
  nn::ParamStore<float> m;
  nn::ParamStore<float> v;
  std::int64_t t = 0;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One bias-corrected Adam step: params -= lr * m_hat / (sqrt(v_hat) + eps).
void adam_update(nn::ParamStore<float>& params, const nn::ParamStore<float>& grads, AdamState& state, double lr,
                 const AdamSettings& settings);

// Step decay: base * factor^floor(step / every).
double decayed_learning_rate(double base, double factor, std::int64_t every, std::int64_t step);

}  // namespace phishmetric
