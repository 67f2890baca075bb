#include "phishmetric/trainer.h"

#include <algorithm>
#include <cmath>
#include <map>

#include "phishmetric/distance.h"
#include "phishmetric/error.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

namespace phishmetric {

// ---------------------------------------------------------------- loss

double triplet_loss(std::span<const float> anchor, std::span<const float> positive, std::span<const float> negative,
                    double margin) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size()) {
    throw Error(errc::kDimension, "triplet embeddings differ in dimension");
  }
  return std::max(squared_l2(anchor, positive) - squared_l2(anchor, negative) + margin, 0.0);
}

template <typename T>
TripletLossGrad<T> triplet_loss_grad(std::span<const T> anchor, std::span<const T> positive,
                                     std::span<const T> negative, T margin) {
  const std::size_t n = anchor.size();
  if (positive.size() != n || negative.size() != n) {
    throw Error(errc::kDimension, "triplet embeddings differ in dimension");
  }
  TripletLossGrad<T> out;
  out.d_anchor.assign(n, T(0));
  out.d_positive.assign(n, T(0));
  out.d_negative.assign(n, T(0));
  T dp = 0, dn = 0;
  for (std::size_t i = 0; i < n; ++i) {
    dp += (anchor[i] - positive[i]) * (anchor[i] - positive[i]);
    dn += (anchor[i] - negative[i]) * (anchor[i] - negative[i]);
  }
  const T raw = dp - dn + margin;
  if (!(raw > T(0))) return out;
  out.loss = raw;
  for (std::size_t i = 0; i < n; ++i) {
    out.d_anchor[i] = T(2) * (negative[i] - positive[i]);
    out.d_positive[i] = T(2) * (positive[i] - anchor[i]);
    out.d_negative[i] = T(2) * (anchor[i] - negative[i]);
  }
  return out;
}

template TripletLossGrad<float> triplet_loss_grad<float>(std::span<const float>, std::span<const float>,
                                                         std::span<const float>, float);
template TripletLossGrad<double> triplet_loss_grad<double>(std::span<const double>, std::span<const double>,
                                                           std::span<const double>, double);

// ---------------------------------------------------------------- pool

TrainingPool::TrainingPool(std::vector<Screenshot> records) : records_(std::move(records)) {
  std::sort(records_.begin(), records_.end(),
            [](const Screenshot& a, const Screenshot& b) { return a.record_id < b.record_id; });
  std::map<std::string, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!records_[i].website_id) {
      throw Error(errc::kInvalidArgument, "training record " + records_[i].record_id + " has no website_id");
    }
    if (i > 0 && records_[i].record_id == records_[i - 1].record_id) {
      throw Error(errc::kDuplicateRecord, "duplicate record_id " + records_[i].record_id);
    }
    groups[*records_[i].website_id].push_back(i);
  }
  website_of_.resize(records_.size());
  for (auto& [site, idx] : groups) {
    for (std::size_t r : idx) website_of_[r] = websites_.size();
    websites_.push_back(site);
    members_.push_back(std::move(idx));
  }
}

TrainingPool TrainingPool::from_split(const CorpusManifest& manifest, const SplitAssignment& split) {
  std::vector<Screenshot> records;
  for (const auto& r : manifest.records) {
    if (r.source_class == SourceClass::kBenignTest) continue;
    if (split.of(r.record_id) == Split::kTrain) records.push_back(r);
  }
  return TrainingPool(std::move(records));
}

Triplet sample_triplet_random(const TrainingPool& pool, std::mt19937_64& rng) {
  if (pool.websites().size() < 2) {
    throw Error(errc::kSampling, "need at least two websites: hard negative/negative undefined");
  }
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool.members(pool.website_of(i)).size() >= 2) eligible.push_back(i);
  }
  if (eligible.empty()) throw Error(errc::kSampling, "no website has two training screenshots");
  Triplet t;
  t.anchor = eligible[std::uniform_int_distribution<std::size_t>(0, eligible.size() - 1)(rng)];
  const std::size_t site = pool.website_of(t.anchor);
  const auto& same = pool.members(site);
  std::size_t k = std::uniform_int_distribution<std::size_t>(0, same.size() - 2)(rng);
  // Skip over the anchor's own slot.
  const std::size_t anchor_slot = static_cast<std::size_t>(std::find(same.begin(), same.end(), t.anchor) - same.begin());
  if (k >= anchor_slot) ++k;
  t.positive = same[k];
  const std::size_t others = pool.size() - same.size();
  std::size_t j = std::uniform_int_distribution<std::size_t>(0, others - 1)(rng);
  // Map j onto the records outside `site`, walking websites in order.
  for (std::size_t w = 0; w < pool.websites().size(); ++w) {
    if (w == site) continue;
    const auto& m = pool.members(w);
    if (j < m.size()) {
      t.negative = m[j];
      break;
    }
    j -= m.size();
  }
  return t;
}

std::vector<std::size_t> sample_query_set(const TrainingPool& pool, std::mt19937_64& rng) {
  std::vector<std::size_t> q;
  q.reserve(pool.websites().size());
  for (std::size_t w = 0; w < pool.websites().size(); ++w) {
    const auto& m = pool.members(w);
    q.push_back(m[std::uniform_int_distribution<std::size_t>(0, m.size() - 1)(rng)]);
  }
  return q;
}

std::vector<Triplet> HardSubset::triplets() const {
  std::vector<Triplet> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (hard_positives[i]) out.push_back({queries[i], *hard_positives[i], hard_negatives[i]});
  }
  return out;
}

HardSubset mine_hard_examples(const TrainingPool& pool, std::span<const std::size_t> queries,
                              const std::vector<EmbeddingVector>& embeddings) {
  if (embeddings.size() != pool.size()) throw Error(errc::kDimension, "one embedding per pool record required");
  if (pool.websites().size() < 2) throw Error(errc::kSampling, "hard negative undefined with a single website");
  HardSubset subset;
  for (const std::size_t q : queries) {
    const std::size_t site = pool.website_of(q);
    std::optional<std::size_t> hard_pos;
    double pos_d = -1;
    std::optional<std::size_t> hard_neg;
    double neg_d = 0;
    // Index order is record_id order, so strict comparisons keep the
    // lowest record_id on ties.
    for (std::size_t i = 0; i < pool.size(); ++i) {
      if (i == q) continue;
      const double d = l2_distance(embeddings[q], embeddings[i]);
      if (pool.website_of(i) == site) {
        if (!hard_pos || d > pos_d) {
          hard_pos = i;
          pos_d = d;
        }
      } else if (!hard_neg || d < neg_d) {
        hard_neg = i;
        neg_d = d;
      }
    }
    subset.queries.push_back(q);
    subset.hard_positives.push_back(hard_pos);
    subset.hard_negatives.push_back(*hard_neg);
  }
  return subset;
}

// ---------------------------------------------------------------- hyper

void TrainHyper::validate() const {
  auto fail = [](const std::string& m) { throw Error(errc::kInvalidArgument, m); };
  if (!(margin > 0)) fail("margin must be > 0");
  if (!(learning_rate > 0)) fail("learning_rate must be > 0");
  if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) fail("lr_decay_factor must lie in (0, 1]");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (stage1_minibatches < 0) fail("stage1_minibatches must be >= 0");
  if (stage2_query_sets < 0 || stage2_repeats_per_query_set < 0 || stage2_minibatches_per_subset < 0) {
    fail("stage2 schedule entries must be >= 0");
  }
  if (checkpoint_every < 1) fail("checkpoint_every must be >= 1");
}

nlohmann::json to_json(const TrainHyper& h) {
  return {{"margin", h.margin},
          {"learning_rate", h.learning_rate},
          {"lr_decay_factor", h.lr_decay_factor},
          {"lr_decay_every", h.lr_decay_every},
          {"adam_beta1", h.adam.beta1},
          {"adam_beta2", h.adam.beta2},
          {"adam_epsilon", h.adam.epsilon},
          {"batch_size", h.batch_size},
          {"stage1_minibatches", h.stage1_minibatches},
          {"stage2_query_sets", h.stage2_query_sets},
          {"stage2_repeats_per_query_set", h.stage2_repeats_per_query_set},
          {"stage2_minibatches_per_subset", h.stage2_minibatches_per_subset},
          {"checkpoint_every", h.checkpoint_every},
          {"checkpoint_dir", h.checkpoint_dir.string()},
          {"workers", h.workers}};
}

TrainHyper train_hyper_from_json(const nlohmann::json& j) {
  TrainHyper h;
  h.margin = j.value("margin", h.margin);
  h.learning_rate = j.value("learning_rate", h.learning_rate);
  h.lr_decay_factor = j.value("lr_decay_factor", h.lr_decay_factor);
  h.lr_decay_every = j.value("lr_decay_every", h.lr_decay_every);
  h.adam.beta1 = j.value("adam_beta1", h.adam.beta1);
  h.adam.beta2 = j.value("adam_beta2", h.adam.beta2);
  h.adam.epsilon = j.value("adam_epsilon", h.adam.epsilon);
  h.batch_size = j.value("batch_size", h.batch_size);
  h.stage1_minibatches = j.value("stage1_minibatches", h.stage1_minibatches);
  h.stage2_query_sets = j.value("stage2_query_sets", h.stage2_query_sets);
  h.stage2_repeats_per_query_set = j.value("stage2_repeats_per_query_set", h.stage2_repeats_per_query_set);
  h.stage2_minibatches_per_subset = j.value("stage2_minibatches_per_subset", h.stage2_minibatches_per_subset);
  h.checkpoint_every = j.value("checkpoint_every", h.checkpoint_every);
  h.checkpoint_dir = j.value("checkpoint_dir", std::string());
  h.workers = j.value("workers", h.workers);
  h.validate();
  return h;
}

double learning_rate_at(const TrainHyper& hyper, std::int64_t step) {
  return decayed_learning_rate(hyper.learning_rate, hyper.lr_decay_factor, hyper.lr_decay_every, step);
}

std::string to_json_line(const TrainLogRecord& r) {
  return nlohmann::json{{"stage", r.stage}, {"minibatch", r.minibatch}, {"loss", r.loss}, {"lr", r.lr}}.dump();
}

// ---------------------------------------------------------------- loop

double train_minibatch(ModelState& model, std::span<const TripletImages> batch, const TrainHyper& hyper) {
  if (batch.empty()) throw Error(errc::kEmpty, "empty minibatch");
  const auto& net = model.net;
  nn::ParamStore<float> grads = net.network.params().zeros_like();
  const float scale = 1.0f / static_cast<float>(batch.size());
  double total = 0;
  for (const auto& t : batch) {
    nn::Tape<float> ta, tp, tn;
    const auto fa = net.embed_recorded(t.anchor, ta);
    const auto fp = net.embed_recorded(t.positive, tp);
    const auto fn = net.embed_recorded(t.negative, tn);
    auto g = triplet_loss_grad<float>(fa, fp, fn, static_cast<float>(hyper.margin));
    total += g.loss;
    if (!std::isfinite(g.loss)) break;
    if (g.loss <= 0) continue;
    for (auto* v : {&g.d_anchor, &g.d_positive, &g.d_negative}) {
      for (auto& x : *v) x *= scale;
    }
    net.backward(g.d_anchor, ta, &grads, false);
    net.backward(g.d_positive, tp, &grads, false);
    net.backward(g.d_negative, tn, &grads, false);
  }
  const double loss = total / static_cast<double>(batch.size());
  if (!std::isfinite(loss)) throw Error(errc::kNonFinite, "non-finite training loss at step " + std::to_string(model.meta.step));
  for (const auto& t : grads.tensors) {
    for (const float v : t.values()) {
      if (!std::isfinite(v)) {
        throw Error(errc::kNonFinite, "non-finite gradient at step " + std::to_string(model.meta.step));
      }
    }
  }
  adam_update(model.net.network.params(), grads, model.meta.adam, learning_rate_at(hyper, model.meta.step),
              hyper.adam);
  ++model.meta.step;
  return loss;
}

namespace {

class Session {
 public:
  Session(std::string stage, ModelState model, const TrainHyper& hyper, const TrainObserver& observer)
      : stage_(std::move(stage)), hyper_(hyper), observer_(observer) {
    result_.model = std::move(model);
  }

  // False once the run has aborted.
  bool step(std::span<const TripletImages> batch) {
    if (result_.aborted) return false;
    TrainLogRecord rec{stage_, result_.model.meta.step, 0, learning_rate_at(hyper_, result_.model.meta.step)};
    try {
      rec.loss = train_minibatch(result_.model, batch, hyper_);
    } catch (const Error& e) {
      if (e.code() != errc::kNonFinite) throw;
      result_.aborted = true;
      result_.abort_reason = e.what();
      log_event(LogLevel::kError, "training_aborted",
                {{"stage", stage_}, {"reason", e.what()},
                 {"last_checkpoint", result_.checkpoints.empty() ? "" : result_.checkpoints.back().string()}});
      return false;
    }
    result_.log.push_back(rec);
    if (observer_.on_minibatch) observer_.on_minibatch(rec);
    ++local_steps_;
    if (!hyper_.checkpoint_dir.empty() && local_steps_ % hyper_.checkpoint_every == 0) checkpoint();
    return true;
  }

  void checkpoint() {
    const auto path = hyper_.checkpoint_dir / (stage_ + "_step" + std::to_string(result_.model.meta.step) + ".ckpt");
    save_checkpoint(result_.model, path);
    result_.checkpoints.push_back(path);
  }

  ModelState& model() { return result_.model; }
  TrainResult finish() { return std::move(result_); }

 private:
  std::string stage_;
  const TrainHyper& hyper_;
  const TrainObserver& observer_;
  TrainResult result_;
  std::int64_t local_steps_ = 0;
};

TripletImages load_triplet(const TrainingPool& pool, const ImageSource& images, const Triplet& t) {
  return {images.load(pool.records()[t.anchor]), images.load(pool.records()[t.positive]),
          images.load(pool.records()[t.negative])};
}

}  // namespace

std::vector<EmbeddingVector> embed_pool(const ModelState& model, const TrainingPool& pool, const ImageSource& images,
                                        int workers) {
  std::vector<EmbeddingVector> out(pool.size());
  parallel_for(pool.size(), workers, [&](std::size_t i) { out[i] = embed(model, images.load(pool.records()[i])); });
  return out;
}

TrainResult train_with(ModelState model, const std::string& stage, std::int64_t minibatches, const BatchFn& make_batch,
                       const TrainHyper& hyper, const TrainObserver& observer) {
  hyper.validate();
  Session session(stage, std::move(model), hyper, observer);
  for (std::int64_t m = 0; m < minibatches; ++m) {
    const std::vector<TripletImages> batch = make_batch(session.model());
    if (!session.step(batch)) break;
  }
  return session.finish();
}

TrainResult train_stage1(ModelState model, const TrainingPool& pool, const ImageSource& images,
                         const TrainHyper& hyper, std::mt19937_64& rng, const TrainObserver& observer) {
  hyper.validate();
  Session session("stage1", std::move(model), hyper, observer);
  std::vector<TripletImages> batch(static_cast<std::size_t>(hyper.batch_size));
  for (std::int64_t m = 0; m < hyper.stage1_minibatches; ++m) {
    for (auto& slot : batch) slot = load_triplet(pool, images, sample_triplet_random(pool, rng));
    if (!session.step(batch)) break;
  }
  return session.finish();
}

TrainResult train_stage2(ModelState model, const TrainingPool& pool, const ImageSource& images,
                         const TrainHyper& hyper, std::mt19937_64& rng, const TrainObserver& observer) {
  hyper.validate();
  Session session("stage2", std::move(model), hyper, observer);
  const std::size_t b = static_cast<std::size_t>(hyper.batch_size);
  std::vector<TripletImages> batch(b);
  for (int qs = 0; qs < hyper.stage2_query_sets; ++qs) {
    const std::vector<std::size_t> queries = sample_query_set(pool, rng);
    for (int rep = 0; rep < hyper.stage2_repeats_per_query_set; ++rep) {
      const auto embeddings = embed_pool(session.model(), pool, images, hyper.workers);
      if (observer.on_mining) observer.on_mining(qs, rep, embeddings.size());
      const std::vector<Triplet> triplets = mine_hard_examples(pool, queries, embeddings).triplets();
      if (triplets.empty()) throw Error(errc::kSampling, "no website has a hard positive");
      std::vector<TripletImages> subset;
      subset.reserve(triplets.size());
      for (const auto& t : triplets) subset.push_back(load_triplet(pool, images, t));
      for (int m = 0; m < hyper.stage2_minibatches_per_subset; ++m) {
        for (std::size_t j = 0; j < b; ++j) batch[j] = subset[(static_cast<std::size_t>(m) * b + j) % subset.size()];
        if (!session.step(batch)) return session.finish();
      }
    }
  }
  return session.finish();
}

}  // namespace phishmetric
