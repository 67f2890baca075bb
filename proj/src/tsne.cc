#include "phishmetric/tsne.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "phishmetric/distance.h"
#include "phishmetric/error.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

// Row-conditional affinities with the Gaussian bandwidth found by bisection
// so that each row's entropy equals log(perplexity).
std::vector<double> conditional_affinities(const std::vector<double>& d2, std::size_t n, double perplexity) {
  std::vector<double> p(n * n, 0.0);
  const double target = std::log(perplexity);
  for (std::size_t i = 0; i < n; ++i) {
    double beta = 1, lo = 0, hi = std::numeric_limits<double>::infinity();
    double min_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) min_d = std::min(min_d, d2[i * n + j]);
    }
    for (int iter = 0; iter < 200; ++iter) {
      double sum = 0, weighted = 0;
      for (std::size_t j = 0; j < n; ++j) {
        if (j == i) continue;
        // Shifting by the row minimum keeps exp() away from underflow.
        const double v = std::exp(-beta * (d2[i * n + j] - min_d));
        p[i * n + j] = v;
        sum += v;
        weighted += v * (d2[i * n + j] - min_d);
      }
      const double entropy = std::log(sum) + beta * weighted / sum;
      for (std::size_t j = 0; j < n; ++j) p[i * n + j] /= sum;
      const double diff = entropy - target;
      if (std::abs(diff) < 1e-5) break;
      if (diff > 0) {
        lo = beta;
        beta = std::isinf(hi) ? beta * 2 : (beta + hi) / 2;
      } else {
        hi = beta;
        beta = (beta + lo) / 2;
      }
    }
  }
  return p;
}

}  // namespace

std::vector<ProjectedPoint> project_embeddings_2d(const std::vector<std::vector<float>>& embeddings,
                                                  const std::vector<std::string>& labels, std::uint64_t seed,
                                                  const TsneOptions& options) {
  const std::size_t n = embeddings.size();
  if (labels.size() != n) throw Error(errc::kInvalidArgument, "embeddings and labels differ in length");
  if (!(options.perplexity > 0)) throw Error(errc::kInvalidArgument, "perplexity must be > 0");
  std::vector<ProjectedPoint> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i].label = labels[i];
  if (n < 2) return out;
  for (const auto& e : embeddings) {
    if (e.size() != embeddings.front().size()) throw Error(errc::kDimension, "embeddings differ in dimension");
  }

  double perplexity = options.perplexity;
  const double max_perplexity = std::max(1.0, static_cast<double>(n - 1) / 3.0);
  if (perplexity > max_perplexity) {
    log_event(LogLevel::kWarn, "perplexity_reduced",
              {{"requested", perplexity}, {"used", max_perplexity}, {"points", n}});
    perplexity = max_perplexity;
  }

  std::vector<double> d2(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) d2[i * n + j] = d2[j * n + i] = squared_l2(embeddings[i], embeddings[j]);
  }
  const std::vector<double> cond = conditional_affinities(d2, n, perplexity);
  std::vector<double> p(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      p[i * n + j] = std::max((cond[i * n + j] + cond[j * n + i]) / (2.0 * static_cast<double>(n)), 1e-12);
    }
  }

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> init(0.0, 1e-4);
  std::vector<double> y(n * 2), update(n * 2, 0.0), gains(n * 2, 1.0), grad(n * 2);
  // Identical inputs share a start point; their gradients then stay equal,
  // so they coincide in the output.
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t twin = 0;
    while (twin < i && embeddings[twin] != embeddings[i]) ++twin;
    if (twin < i) {
      y[2 * i] = y[2 * twin];
      y[2 * i + 1] = y[2 * twin + 1];
    } else {
      y[2 * i] = init(rng);
      y[2 * i + 1] = init(rng);
    }
  }
  const double learning_rate =
      options.learning_rate > 0 ? options.learning_rate
                                : std::max(static_cast<double>(n) / options.exaggeration / 4.0, 50.0);

  std::vector<double> q(n * n);
  for (int iter = 0; iter < options.iterations; ++iter) {
    const double exaggeration = iter < options.exaggeration_iterations ? options.exaggeration : 1.0;
    const double momentum = iter < options.exaggeration_iterations ? 0.5 : 0.8;
    double q_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
      q[i * n + i] = 0;
      for (std::size_t j = i + 1; j < n; ++j) {
        const double dx = y[2 * i] - y[2 * j], dy = y[2 * i + 1] - y[2 * j + 1];
        const double v = 1.0 / (1.0 + dx * dx + dy * dy);
        q[i * n + j] = q[j * n + i] = v;
        q_sum += 2 * v;
      }
    }
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j) continue;
        const double num = q[i * n + j];
        const double mult = 4.0 * (exaggeration * p[i * n + j] - num / q_sum) * num;
        grad[2 * i] += mult * (y[2 * i] - y[2 * j]);
        grad[2 * i + 1] += mult * (y[2 * i + 1] - y[2 * j + 1]);
      }
    }
    for (std::size_t k = 0; k < y.size(); ++k) {
      const bool same_sign = (grad[k] > 0) == (update[k] > 0);
      gains[k] = std::max(same_sign ? gains[k] * 0.8 : gains[k] + 0.2, 0.01);
      update[k] = momentum * update[k] - learning_rate * gains[k] * grad[k];
      y[k] += update[k];
    }
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mx += y[2 * i];
      my += y[2 * i + 1];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      y[2 * i] -= mx;
      y[2 * i + 1] -= my;
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    out[i].x = y[2 * i];
    out[i].y = y[2 * i + 1];
  }
  return out;
}

void write_projection(const std::vector<ProjectedPoint>& points, const std::filesystem::path& path) {
  std::ostringstream s;
  s.precision(10);
  s << "# x\ty\tlabel\n";
  for (const auto& p : points) s << p.x << '\t' << p.y << '\t' << p.label << '\n';
  write_file_atomic(path, s.str());
}

}  // namespace phishmetric
