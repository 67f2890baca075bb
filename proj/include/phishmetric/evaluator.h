#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "phishmetric/corpus.h"
#include "phishmetric/embedder.h"
#include "phishmetric/index.h"

namespace phishmetric {

// Fraction of predictions whose target is among the first k distinct
// websites of top_matches.
double top_k_match_rate(const std::vector<PredictionResult>& predictions, const std::vector<std::string>& targets,
                        int k);

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  // Records with distance <= threshold are flagged; -inf for the origin.
  double threshold = 0;
};

struct RocCurve {
  std::vector<RocPoint> points;  // FPR and TPR nondecreasing
  double auc = 0;                // trapezoidal
  double auc_mann_whitney = 0;   // pairwise, ties count 1/2
  double partial_auc = 0;        // unnormalised area for FPR in [0, 0.01]
};

// Score is -distance and phishing is the positive class.
RocCurve roc_curve(std::span<const double> min_distances, const std::vector<bool>& is_phishing);
double mann_whitney_auc(std::span<const double> min_distances, const std::vector<bool>& is_phishing);
double partial_auc(const std::vector<RocPoint>& points, double max_fpr = 0.01);

struct TimingStats {
  double mean = 0;
  double sd = 0;  // population
  std::size_t count = 0;
};
TimingStats timing_stats(std::span<const double> seconds);

struct RecordPrediction {
  std::string record_id;
  SourceClass source_class = SourceClass::kBenignTest;
  std::optional<std::string> target;
  PredictionResult result;
  double seconds = 0;
};

struct EvalReport {
  std::string method;
  std::size_t phishing_count = 0;
  std::size_t benign_count = 0;
  double top1_match = 0;
  double top5_match = 0;
  std::vector<RocPoint> roc_points;
  double auc = 0;
  double auc_mann_whitney = 0;
  double partial_auc_at_1pct = 0;
  // Target website -> website wrongly matched at top-1 -> count.
  std::map<std::string, std::map<std::string, int>> per_website_confusion;
  TimingStats timing;
  std::optional<double> threshold;
  std::optional<double> tpr_at_threshold;
  std::optional<double> fpr_at_threshold;
  std::vector<RecordPrediction> predictions;

  nlohmann::json to_json() const;  // summary, without per-record rows
  void write(const std::filesystem::path& report_path) const;
  void write_roc(const std::filesystem::path& path) const;          // "fpr\ttpr" rows
  void write_predictions(const std::filesystem::path& path) const;  // JSON lines
};

// Maps a [0,1] screenshot to an embedding. It never sees labels.
using EmbedFn = std::function<EmbeddingVector(const ImageTensor&)>;

// Shared protocol: predict every test record against the index, then
// aggregate. Labels are read only after all predictions are fixed.
EvalReport evaluate_embeddings(const EmbeddingIndex& index, const std::vector<Screenshot>& test_records,
                               const ImageSource& images, const EmbedFn& embed_fn, int workers = 1,
                               const std::string& method = "model");

EvalReport evaluate_model(const ModelState& model, const EmbeddingIndex& index,
                          const std::vector<Screenshot>& test_records, const ImageSource& images, int workers = 1);

// Untrained backbone, no added layer, GMP head. `backbone` supplies
// backbone kind, weights file and desk-scale knobs.
EvalReport baseline_pretrained_nn(const ModelConfig& backbone, const std::vector<Screenshot>& index_records,
                                  const std::vector<Screenshot>& test_records, const ImageSource& images,
                                  std::uint64_t seed, int workers = 1);

struct HogParams {
  int cell_size = 16;
  int block_cells = 2;
  int bins = 9;
};
std::vector<float> hog_descriptor(const ImageTensor& image, const HogParams& params);
EvalReport baseline_hog_nn(const std::vector<Screenshot>& index_records, const std::vector<Screenshot>& test_records,
                           const ImageSource& images, const HogParams& params = {}, int workers = 1);

// Test records (phishing and benign) from a split.
std::vector<Screenshot> test_records(const CorpusManifest& manifest, const SplitAssignment& split,
                                     Split which = Split::kTest);
// Trusted pages plus training phishing pages.
std::vector<Screenshot> index_records(const CorpusManifest& manifest, const SplitAssignment& split);

}  // namespace phishmetric
