#pragma once

#include <cmath>
#include <span>

#include "phishmetric/error.h"

namespace phishmetric {

// Sum of squared coordinate differences, accumulated in double in index order.
inline double squared_l2(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw Error(errc::kDimension, "vectors differ in length");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

inline double l2_distance(std::span<const float> a, std::span<const float> b) { return std::sqrt(squared_l2(a, b)); }

}  // namespace phishmetric
