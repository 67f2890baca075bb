#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace phishmetric {

struct TsneOptions {
  double perplexity = 30;
  int iterations = 1000;
  int exaggeration_iterations = 250;
  double exaggeration = 12;
  // Values <= 0 select max(n / exaggeration / 4, 50).
  double learning_rate = 0;
};

struct ProjectedPoint {
  double x = 0;
  double y = 0;
  std::string label;
};

// Exact t-SNE. Perplexity is lowered (with a warning) when there are too
// few points for it. Deterministic given the seed.
std::vector<ProjectedPoint> project_embeddings_2d(const std::vector<std::vector<float>>& embeddings,
                                                  const std::vector<std::string>& labels, std::uint64_t seed,
                                                  const TsneOptions& options = {});

// Tab-separated "x y label" rows.
void write_projection(const std::vector<ProjectedPoint>& points, const std::filesystem::path& path);

}  // namespace phishmetric
