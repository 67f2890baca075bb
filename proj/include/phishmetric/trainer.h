#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "phishmetric/corpus.h"
#include "phishmetric/embedder.h"

namespace phishmetric {

// ---------------------------------------------------------------- loss

template <typename T>
struct TripletLossGrad {
  T loss = 0;
  std::vector<T> d_anchor, d_positive, d_negative;
};

// max(|a - p|^2 - |a - n|^2 + margin, 0)
double triplet_loss(std::span<const float> anchor, std::span<const float> positive, std::span<const float> negative,
                    double margin);
// Loss and its gradient w.r.t. each embedding. The gradient is zero unless
// the hinge is strictly active.
template <typename T>
TripletLossGrad<T> triplet_loss_grad(std::span<const T> anchor, std::span<const T> positive,
                                     std::span<const T> negative, T margin);

// ---------------------------------------------------------------- data

// Training screenshots grouped by website. Training phishing pages are
// pooled with their target's trusted pages. Records are kept sorted by
// record_id, so "lowest record_id" is "lowest index".
class TrainingPool {
 public:
  TrainingPool() = default;
  explicit TrainingPool(std::vector<Screenshot> records);
  static TrainingPool from_split(const CorpusManifest& manifest, const SplitAssignment& split);

  const std::vector<Screenshot>& records() const { return records_; }
  const std::vector<std::string>& websites() const { return websites_; }
  const std::vector<std::size_t>& members(std::size_t website) const { return members_[website]; }
  std::size_t website_of(std::size_t record) const { return website_of_[record]; }
  std::size_t size() const { return records_.size(); }

 private:
  std::vector<Screenshot> records_;
  std::vector<std::string> websites_;
  std::vector<std::vector<std::size_t>> members_;
  std::vector<std::size_t> website_of_;
};

// Indices into a TrainingPool.
struct Triplet {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;

  friend bool operator==(const Triplet&, const Triplet&) = default;
};

// Anchor uniform over screenshots whose website has at least two pages,
// positive uniform over the anchor's other pages, negative uniform over all
// pages of other websites.
Triplet sample_triplet_random(const TrainingPool& pool, std::mt19937_64& rng);

// One uniformly drawn screenshot per website, in website order.
std::vector<std::size_t> sample_query_set(const TrainingPool& pool, std::mt19937_64& rng);

struct HardSubset {
  std::vector<std::size_t> queries;
  // Same-website page farthest from each query; empty when the website has
  // no other page.
  std::vector<std::optional<std::size_t>> hard_positives;
  // Other-website page closest to each query.
  std::vector<std::size_t> hard_negatives;

  // (query, hard positive, hard negative) for every query that has both.
  std::vector<Triplet> triplets() const;
};

// Selection by L2 embedding distance; ties go to the lowest record_id.
HardSubset mine_hard_examples(const TrainingPool& pool, std::span<const std::size_t> queries,
                              const std::vector<EmbeddingVector>& embeddings);

// ---------------------------------------------------------------- training

struct TrainHyper {
  double margin = 2.2;
  double learning_rate = 2e-5;
  double lr_decay_factor = 0.99;
  std::int64_t lr_decay_every = 300;
  AdamSettings adam;
  int batch_size = 32;
  std::int64_t stage1_minibatches = 21000;
  int stage2_query_sets = 75;
  int stage2_repeats_per_query_set = 8;
  int stage2_minibatches_per_subset = 30;
  std::int64_t checkpoint_every = 1000;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoint files
  int workers = 1;                       // embedding workers during mining

  std::int64_t stage2_total_minibatches() const {
    return static_cast<std::int64_t>(stage2_query_sets) * stage2_repeats_per_query_set * stage2_minibatches_per_subset;
  }
  void validate() const;
};

nlohmann::json to_json(const TrainHyper& h);
TrainHyper train_hyper_from_json(const nlohmann::json& j);

// Learning rate in effect for the minibatch with global index `step`.
double learning_rate_at(const TrainHyper& hyper, std::int64_t step);

struct TrainLogRecord {
  std::string stage;
  std::int64_t minibatch = 0;  // global step
  double loss = 0;
  double lr = 0;
};
std::string to_json_line(const TrainLogRecord& r);

struct TrainObserver {
  std::function<void(const TrainLogRecord&)> on_minibatch;
  // Called after each mining pass with the number of embeddings computed.
  std::function<void(int query_set, int repeat, std::size_t embeddings)> on_mining;
};

struct TrainResult {
  ModelState model;
  std::vector<TrainLogRecord> log;
  std::vector<std::filesystem::path> checkpoints;
  bool aborted = false;
  std::string abort_reason;
};

struct TripletImages {
  ImageTensor anchor, positive, negative;
};

// Mean triplet loss over the batch, one Adam step at learning_rate_at(step),
// step += 1. Returns the batch loss. A non-finite loss or gradient leaves
// the model untouched and throws Error(non_finite).
double train_minibatch(ModelState& model, std::span<const TripletImages> batch, const TrainHyper& hyper);

TrainResult train_stage1(ModelState model, const TrainingPool& pool, const ImageSource& images,
                         const TrainHyper& hyper, std::mt19937_64& rng, const TrainObserver& observer = {});
TrainResult train_stage2(ModelState model, const TrainingPool& pool, const ImageSource& images,
                         const TrainHyper& hyper, std::mt19937_64& rng, const TrainObserver& observer = {});

// Runs `minibatches` steps on batches from make_batch, which sees the
// current weights. Checkpointing and abort handling match the stages.
using BatchFn = std::function<std::vector<TripletImages>(const ModelState&)>;
TrainResult train_with(ModelState model, const std::string& stage, std::int64_t minibatches, const BatchFn& make_batch,
                       const TrainHyper& hyper, const TrainObserver& observer = {});

// Embeddings of every pool record under the current weights.
std::vector<EmbeddingVector> embed_pool(const ModelState& model, const TrainingPool& pool, const ImageSource& images,
                                        int workers);

}  // namespace phishmetric
