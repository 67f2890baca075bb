#pragma once

#include <filesystem>
#include <optional>
#include <shared_mutex>
#include <span>
#include <string>
#include <vector>

#include "phishmetric/corpus.h"
#include "phishmetric/embedder.h"

namespace phishmetric {

// Trusted-list embeddings, one float32 row per screenshot.
class EmbeddingIndex {
 public:
  EmbeddingIndex() = default;
  EmbeddingIndex(int dim, std::string fingerprint) : dim_(dim), fingerprint_(std::move(fingerprint)) {}

  int dim() const { return dim_; }
  std::size_t rows() const { return record_ids_.size(); }
  std::span<const float> row(std::size_t i) const {
    return {vectors_.data() + i * static_cast<std::size_t>(dim_), static_cast<std::size_t>(dim_)};
  }
  const std::vector<float>& vectors() const { return vectors_; }
  const std::string& label(std::size_t i) const { return labels_[i]; }
  const std::string& record_id(std::size_t i) const { return record_ids_[i]; }
  const std::vector<std::string>& labels() const { return labels_; }
  const std::vector<std::string>& record_ids() const { return record_ids_; }
  const std::string& fingerprint() const { return fingerprint_; }
  const std::optional<double>& threshold() const { return threshold_; }

  void set_threshold(double tau);
  void clear_threshold() { threshold_.reset(); }
  // Appends a row; throws on a duplicate record_id, wrong length or a
  // non-finite entry.
  void append(std::span<const float> vector, const std::string& website_id, const std::string& record_id);
  std::size_t website_count() const;

  friend bool operator==(const EmbeddingIndex&, const EmbeddingIndex&) = default;

 private:
  int dim_ = 0;
  std::vector<float> vectors_;
  std::vector<std::string> labels_;
  std::vector<std::string> record_ids_;
  std::string fingerprint_;
  std::optional<double> threshold_;
};

struct Match {
  std::string website_id;
  std::string record_id;
  double distance = 0;  // plain (non-squared) L2

  friend bool operator==(const Match&, const Match&) = default;
};

enum class Verdict { kPhishing, kBenign, kNoThreshold };
std::string to_string(Verdict v);

struct PredictionResult {
  std::string query_record;
  std::vector<Match> top_matches;  // ascending distance, one per website
  double min_distance = 0;
  Verdict verdict = Verdict::kNoThreshold;
};

EmbeddingIndex build_index(const ModelState& model, const std::vector<Screenshot>& records, const ImageSource& images,
                           int workers = 1);

// Exact scan. Websites are ranked by their closest row; ties (on distance,
// across or within websites) go to the lowest record_id. Returns
// min(k, website_count) matches.
std::vector<Match> query(const EmbeddingIndex& index, std::span<const float> embedding, int k);

// Verdict from a precomputed embedding: phishing iff min distance < tau.
PredictionResult classify(const EmbeddingIndex& index, std::span<const float> embedding, int k = 5,
                          const std::string& query_record = {});
// Embeds and classifies; the index must have been built by this exact model.
PredictionResult predict(const EmbeddingIndex& index, const ModelState& model, const ImageTensor& image, int k = 5,
                         const std::string& query_record = {});

// Binds a model to an index after one fingerprint check.
class Predictor {
 public:
  Predictor(const EmbeddingIndex& index, const ModelState& model);
  PredictionResult operator()(const ImageTensor& image, int k = 5, const std::string& query_record = {}) const;

 private:
  const EmbeddingIndex& index_;
  const ModelState& model_;
};

// Equal-error-rate threshold. Candidates are the midpoints between adjacent
// distinct pooled distances; the one minimising |FPR - FNR| wins, ties to
// the smallest. FPR = share of benign distances < tau, FNR = share of
// phishing distances >= tau.
double select_threshold(std::span<const double> phishing_distances, std::span<const double> benign_distances);

// Rolling trusted-list update: embeds and appends the screenshots without
// retraining. Threshold and fingerprint are preserved.
EmbeddingIndex add_website(const EmbeddingIndex& index, const ModelState& model,
                           const std::vector<Screenshot>& screenshots, const ImageSource& images);

// Layout: magic, version, dim, rows, fingerprint, threshold, CRC-32 of the
// remainder, float32 rows, label table.
void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

// Index shared between readers with exclusive appends.
class SharedIndex {
 public:
  explicit SharedIndex(EmbeddingIndex index) : index_(std::move(index)) {}
  std::vector<Match> query(std::span<const float> embedding, int k) const;
  PredictionResult classify(std::span<const float> embedding, int k = 5) const;
  void add_website(const ModelState& model, const std::vector<Screenshot>& screenshots, const ImageSource& images);
  EmbeddingIndex snapshot() const;

 private:
  mutable std::shared_mutex mutex_;
  EmbeddingIndex index_;
};

}  // namespace phishmetric
