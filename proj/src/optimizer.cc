#include "phishmetric/optimizer.h"

#include <cmath>

#include "phishmetric/error.h"

namespace phishmetric {

void adam_update(nn::ParamStore<float>& params, const nn::ParamStore<float>& grads, AdamState& state, double lr,
                 const AdamSettings& settings) {
  if (state.m.size() != params.size()) {
    state.m = params.zeros_like();
    state.v = params.zeros_like();
    state.t = 0;
  }
  if (grads.size() != params.size()) throw Error(errc::kDimension, "gradient layout does not match parameters");
  ++state.t;
  const double b1 = settings.beta1, b2 = settings.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  const double step = lr * std::sqrt(c2) / c1;
  const double eps_hat = settings.epsilon * std::sqrt(c2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params.tensors[i].values();
    auto g = grads.tensors[i].values();
    auto m = state.m.tensors[i].values();
    auto v = state.v.tensors[i].values();
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      m[j] = static_cast<float>(b1 * m[j] + (1.0 - b1) * gj);
      v[j] = static_cast<float>(b2 * v[j] + (1.0 - b2) * gj * gj);
      p[j] = static_cast<float>(p[j] - step * m[j] / (std::sqrt(static_cast<double>(v[j])) + eps_hat));
    }
  }
}

double decayed_learning_rate(double base, double factor, std::int64_t every, std::int64_t step) {
  if (every <= 0) return base;
  return base * std::pow(factor, static_cast<double>(step / every));
}

}  // namespace phishmetric
