#include "phishmetric/index.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <set>
#include <unordered_map>

#include "phishmetric/distance.h"
#include "phishmetric/error.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

constexpr char kIndexMagic[8] = {'P', 'M', 'I', 'N', 'D', 'E', 'X', '1'};
constexpr std::uint32_t kIndexVersion = 1;

}  // namespace

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::kPhishing: return "phishing";
    case Verdict::kBenign: return "benign";
    case Verdict::kNoThreshold: break;
  }
  return "no_threshold";
}

void EmbeddingIndex::set_threshold(double tau) {
  if (!(tau > 0) || !std::isfinite(tau)) throw Error(errc::kInvalidArgument, "threshold must be finite and > 0");
  threshold_ = tau;
}

void EmbeddingIndex::append(std::span<const float> vector, const std::string& website_id,
                            const std::string& record_id) {
  if (static_cast<int>(vector.size()) != dim_) {
    throw Error(errc::kDimension, "index rows have dimension " + std::to_string(dim_) + ", got " +
                                      std::to_string(vector.size()));
  }
  for (const float v : vector) {
    if (!std::isfinite(v)) throw Error(errc::kNonFinite, "non-finite embedding for " + record_id);
  }
  if (std::find(record_ids_.begin(), record_ids_.end(), record_id) != record_ids_.end()) {
    throw Error(errc::kDuplicateRecord, "record " + record_id + " is already indexed");
  }
  vectors_.insert(vectors_.end(), vector.begin(), vector.end());
  labels_.push_back(website_id);
  record_ids_.push_back(record_id);
}

std::size_t EmbeddingIndex::website_count() const {
  return std::set<std::string>(labels_.begin(), labels_.end()).size();
}

EmbeddingIndex build_index(const ModelState& model, const std::vector<Screenshot>& records, const ImageSource& images,
                           int workers) {
  if (records.empty()) throw Error(errc::kEmpty, "cannot build an index from zero records");
  for (const auto& r : records) {
    if (!r.website_id) throw Error(errc::kInvalidArgument, "index record " + r.record_id + " has no website_id");
  }
  std::vector<EmbeddingVector> rows(records.size());
  parallel_for(records.size(), workers, [&](std::size_t i) { rows[i] = embed(model, images.load(records[i])); });
  EmbeddingIndex index(model.embedding_dim(), model_fingerprint(model));
  for (std::size_t i = 0; i < records.size(); ++i) index.append(rows[i], *records[i].website_id, records[i].record_id);
  return index;
}

std::vector<Match> query(const EmbeddingIndex& index, std::span<const float> embedding, int k) {
  if (k < 1) throw Error(errc::kInvalidArgument, "k must be >= 1");
  if (static_cast<int>(embedding.size()) != index.dim()) {
    throw Error(errc::kDimension, "query has dimension " + std::to_string(embedding.size()) + ", index has " +
                                      std::to_string(index.dim()));
  }
  std::unordered_map<std::string, std::size_t> best_slot;
  std::vector<Match> best;
  auto better = [](double d, const std::string& id, const Match& m) {
    return d < m.distance || (d == m.distance && id < m.record_id);
  };
  for (std::size_t i = 0; i < index.rows(); ++i) {
    const double d = l2_distance(embedding, index.row(i));
    const auto [it, inserted] = best_slot.try_emplace(index.label(i), best.size());
    if (inserted) {
      best.push_back({index.label(i), index.record_id(i), d});
    } else if (better(d, index.record_id(i), best[it->second])) {
      best[it->second].distance = d;
      best[it->second].record_id = index.record_id(i);
    }
  }
  const std::size_t n = std::min(best.size(), static_cast<std::size_t>(k));
  std::partial_sort(best.begin(), best.begin() + static_cast<std::ptrdiff_t>(n), best.end(),
                    [](const Match& a, const Match& b) {
                      return a.distance < b.distance || (a.distance == b.distance && a.record_id < b.record_id);
                    });
  best.resize(n);
  return best;
}

PredictionResult classify(const EmbeddingIndex& index, std::span<const float> embedding, int k,
                          const std::string& query_record) {
  if (index.rows() == 0) throw Error(errc::kEmpty, "index is empty");
  PredictionResult r;
  r.query_record = query_record;
  r.top_matches = query(index, embedding, k);
  r.min_distance = r.top_matches.front().distance;
  if (!index.threshold()) {
    r.verdict = Verdict::kNoThreshold;
  } else {
    r.verdict = r.min_distance < *index.threshold() ? Verdict::kPhishing : Verdict::kBenign;
  }
  return r;
}

Predictor::Predictor(const EmbeddingIndex& index, const ModelState& model) : index_(index), model_(model) {
  if (model_fingerprint(model) != index.fingerprint()) {
    throw Error(errc::kFingerprint, "index was built with a different model");
  }
}

PredictionResult Predictor::operator()(const ImageTensor& image, int k, const std::string& query_record) const {
  return classify(index_, embed(model_, image), k, query_record);
}

PredictionResult predict(const EmbeddingIndex& index, const ModelState& model, const ImageTensor& image, int k,
                         const std::string& query_record) {
  return Predictor(index, model)(image, k, query_record);
}

double select_threshold(std::span<const double> phishing_distances, std::span<const double> benign_distances) {
  if (phishing_distances.empty() || benign_distances.empty()) {
    throw Error(errc::kEmpty, "threshold selection needs phishing and benign validation distances");
  }
  std::vector<double> phish(phishing_distances.begin(), phishing_distances.end());
  std::vector<double> benign(benign_distances.begin(), benign_distances.end());
  std::sort(phish.begin(), phish.end());
  std::sort(benign.begin(), benign.end());
  std::vector<double> pooled = phish;
  pooled.insert(pooled.end(), benign.begin(), benign.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<double> grid;
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) grid.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  if (grid.empty()) grid.push_back(std::max(pooled.front(), std::numeric_limits<double>::min()));

  // |FPR - FNR| compared exactly as |b_lt * n_p - p_ge * n_b| over the
  // common denominator n_b * n_p.
  const auto n_p = static_cast<long long>(phish.size());
  const auto n_b = static_cast<long long>(benign.size());
  double best_tau = grid.front();
  long long best_gap = std::numeric_limits<long long>::max();
  for (const double tau : grid) {
    const auto b_lt = static_cast<long long>(std::lower_bound(benign.begin(), benign.end(), tau) - benign.begin());
    const auto p_ge = n_p - static_cast<long long>(std::lower_bound(phish.begin(), phish.end(), tau) - phish.begin());
    const long long gap = std::llabs(b_lt * n_p - p_ge * n_b);
    if (gap < best_gap) {
      best_gap = gap;
      best_tau = tau;
    }
  }
  return best_tau;
}

EmbeddingIndex add_website(const EmbeddingIndex& index, const ModelState& model,
                           const std::vector<Screenshot>& screenshots, const ImageSource& images) {
  if (model_fingerprint(model) != index.fingerprint()) {
    throw Error(errc::kFingerprint, "index was built with a different model");
  }
  std::set<std::string> seen(index.record_ids().begin(), index.record_ids().end());
  for (const auto& s : screenshots) {
    if (!s.website_id) throw Error(errc::kInvalidArgument, "screenshot " + s.record_id + " has no website_id");
    if (!seen.insert(s.record_id).second) {
      throw Error(errc::kDuplicateRecord, "record " + s.record_id + " is already indexed");
    }
  }
  EmbeddingIndex out = index;
  for (const auto& s : screenshots) out.append(embed(model, images.load(s)), *s.website_id, s.record_id);
  return out;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
  ByteWriter body;
  body.floats(index.vectors());
  for (std::size_t i = 0; i < index.rows(); ++i) {
    body.str(index.label(i));
    body.str(index.record_id(i));
  }
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kIndexMagic), 8));
  w.u32(kIndexVersion);
  w.u32(static_cast<std::uint32_t>(index.dim()));
  w.u64(index.rows());
  w.str(index.fingerprint());
  w.u8(index.threshold() ? 1 : 0);
  w.f64(index.threshold().value_or(0.0));
  // The checksum covers the header fields above and the payload.
  std::vector<std::uint8_t> covered = w.bytes();
  covered.insert(covered.end(), body.bytes().begin(), body.bytes().end());
  w.u32(crc32_of(covered));
  w.raw(body.bytes());
  write_file_atomic(path, w.bytes());
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 8 || std::memcmp(bytes.data(), kIndexMagic, 8) != 0) {
    throw Error(errc::kParse, "not an index file: " + path.string());
  }
  ByteReader r(bytes);
  r.raw(8);
  const std::uint32_t version = r.u32();
  const std::uint32_t dim = r.u32();
  const std::uint64_t rows = r.u64();
  const std::string fingerprint = r.str();
  const bool has_tau = r.u8() != 0;
  const double tau = r.f64();
  const std::size_t header_end = r.offset();
  const std::uint32_t stored_crc = r.u32();
  std::vector<std::uint8_t> covered(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(header_end));
  covered.insert(covered.end(), bytes.begin() + static_cast<std::ptrdiff_t>(r.offset()), bytes.end());
  if (crc32_of(covered) != stored_crc) throw Error(errc::kChecksum, "index checksum mismatch: " + path.string());
  if (version != kIndexVersion) throw Error(errc::kParse, "unsupported index version " + std::to_string(version));

  std::vector<float> vectors(static_cast<std::size_t>(rows) * dim);
  r.floats(vectors);
  EmbeddingIndex index(static_cast<int>(dim), fingerprint);
  for (std::uint64_t i = 0; i < rows; ++i) {
    const std::string label = r.str();
    const std::string id = r.str();
    index.append(std::span<const float>(vectors.data() + i * dim, dim), label, id);
  }
  if (r.remaining() != 0) throw Error(errc::kParse, "trailing bytes in index " + path.string());
  if (has_tau) index.set_threshold(tau);
  return index;
}

std::vector<Match> SharedIndex::query(std::span<const float> embedding, int k) const {
  std::shared_lock lock(mutex_);
  return phishmetric::query(index_, embedding, k);
}

PredictionResult SharedIndex::classify(std::span<const float> embedding, int k) const {
  std::shared_lock lock(mutex_);
  return phishmetric::classify(index_, embedding, k);
}

void SharedIndex::add_website(const ModelState& model, const std::vector<Screenshot>& screenshots,
                              const ImageSource& images) {
  std::unique_lock lock(mutex_);
  index_ = phishmetric::add_website(index_, model, screenshots, images);
}

EmbeddingIndex SharedIndex::snapshot() const {
  std::shared_lock lock(mutex_);
  return index_;
}

}  // namespace phishmetric
