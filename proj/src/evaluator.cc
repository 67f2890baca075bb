#include "phishmetric/evaluator.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include <opencv2/core.hpp>
#include <opencv2/objdetect.hpp>

#include "phishmetric/error.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

void check_aligned(std::span<const double> distances, const std::vector<bool>& is_phishing) {
  if (distances.size() != is_phishing.size()) {
    throw Error(errc::kInvalidArgument, "distances and labels differ in length");
  }
  const auto positives = std::count(is_phishing.begin(), is_phishing.end(), true);
  if (positives == 0 || positives == static_cast<long>(is_phishing.size())) {
    throw Error(errc::kInvalidArgument, "ROC needs both phishing and benign records");
  }
}

// Groups of equal distance in ascending order, as (positives, negatives).
std::vector<std::pair<std::size_t, std::size_t>> tie_groups(std::span<const double> distances,
                                                            const std::vector<bool>& is_phishing,
                                                            std::vector<double>* group_values) {
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  std::vector<std::pair<std::size_t, std::size_t>> groups;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    std::pair<std::size_t, std::size_t> g{0, 0};
    while (j < order.size() && distances[order[j]] == distances[order[i]]) {
      (is_phishing[order[j]] ? g.first : g.second)++;
      ++j;
    }
    groups.push_back(g);
    if (group_values) group_values->push_back(distances[order[i]]);
    i = j;
  }
  return groups;
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

double top_k_match_rate(const std::vector<PredictionResult>& predictions, const std::vector<std::string>& targets,
                        int k) {
  if (predictions.empty()) throw Error(errc::kEmpty, "no predictions to score");
  if (predictions.size() != targets.size()) throw Error(errc::kInvalidArgument, "predictions and targets differ");
  if (k < 1) throw Error(errc::kInvalidArgument, "k must be >= 1");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& matches = predictions[i].top_matches;
    const std::size_t n = std::min(matches.size(), static_cast<std::size_t>(k));
    for (std::size_t j = 0; j < n; ++j) {
      if (matches[j].website_id == targets[i]) {
        ++hits;
        break;
      }
    }
  }
  return static_cast<double>(hits) / static_cast<double>(predictions.size());
}

double mann_whitney_auc(std::span<const double> min_distances, const std::vector<bool>& is_phishing) {
  check_aligned(min_distances, is_phishing);
  const auto groups = tie_groups(min_distances, is_phishing, nullptr);
  double total_neg = 0, total_pos = 0;
  for (const auto& [p, n] : groups) {
    total_pos += static_cast<double>(p);
    total_neg += static_cast<double>(n);
  }
  // A phishing record beats every benign record with a larger distance.
  double wins = 0, neg_seen = 0;
  for (const auto& [p, n] : groups) {
    neg_seen += static_cast<double>(n);
    wins += static_cast<double>(p) * (total_neg - neg_seen) + 0.5 * static_cast<double>(p) * static_cast<double>(n);
  }
  return wins / (total_pos * total_neg);
}

double partial_auc(const std::vector<RocPoint>& points, double max_fpr) {
  double area = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    const RocPoint& a = points[i - 1];
    const RocPoint& b = points[i];
    if (a.fpr >= max_fpr) break;
    if (b.fpr <= max_fpr) {
      area += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
    } else {
      const double t = (max_fpr - a.fpr) / (b.fpr - a.fpr);
      const double tpr_cut = a.tpr + t * (b.tpr - a.tpr);
      area += (max_fpr - a.fpr) * (a.tpr + tpr_cut) / 2;
      break;
    }
  }
  return area;
}

RocCurve roc_curve(std::span<const double> min_distances, const std::vector<bool>& is_phishing) {
  check_aligned(min_distances, is_phishing);
  std::vector<double> values;
  const auto groups = tie_groups(min_distances, is_phishing, &values);
  double total_pos = 0, total_neg = 0;
  for (const auto& [p, n] : groups) {
    total_pos += static_cast<double>(p);
    total_neg += static_cast<double>(n);
  }
  RocCurve roc;
  roc.points.push_back({0.0, 0.0, -std::numeric_limits<double>::infinity()});
  double tp = 0, fp = 0;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    tp += static_cast<double>(groups[g].first);
    fp += static_cast<double>(groups[g].second);
    roc.points.push_back({fp / total_neg, tp / total_pos, values[g]});
  }
  for (std::size_t i = 1; i < roc.points.size(); ++i) {
    const RocPoint& a = roc.points[i - 1];
    const RocPoint& b = roc.points[i];
    roc.auc += (b.fpr - a.fpr) * (a.tpr + b.tpr) / 2;
  }
  roc.auc_mann_whitney = mann_whitney_auc(min_distances, is_phishing);
  roc.partial_auc = partial_auc(roc.points);
  return roc;
}

TimingStats timing_stats(std::span<const double> seconds) {
  TimingStats t;
  t.count = seconds.size();
  if (seconds.empty()) return t;
  t.mean = std::accumulate(seconds.begin(), seconds.end(), 0.0) / static_cast<double>(seconds.size());
  double ss = 0;
  for (const double s : seconds) ss += (s - t.mean) * (s - t.mean);
  t.sd = std::sqrt(ss / static_cast<double>(seconds.size()));
  return t;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["method"] = method;
  j["phishing_count"] = phishing_count;
  j["benign_count"] = benign_count;
  j["top1_match"] = top1_match;
  j["top5_match"] = top5_match;
  j["auc"] = finite_or_null(auc);
  j["auc_mann_whitney"] = finite_or_null(auc_mann_whitney);
  j["partial_auc_at_1pct"] = finite_or_null(partial_auc_at_1pct);
  j["per_website_confusion"] = per_website_confusion;
  j["timing"] = {{"mean_seconds", timing.mean}, {"sd_seconds", timing.sd}, {"count", timing.count}};
  if (threshold) {
    j["threshold"] = *threshold;
    j["tpr_at_threshold"] = tpr_at_threshold.value_or(0.0);
    j["fpr_at_threshold"] = fpr_at_threshold.value_or(0.0);
  }
  auto& roc = j["roc_points"] = nlohmann::json::array();
  for (const auto& p : roc_points) roc.push_back({p.fpr, p.tpr, finite_or_null(p.threshold)});
  return j;
}

void EvalReport::write(const std::filesystem::path& report_path) const {
  write_file_atomic(report_path, to_json().dump(2) + "\n");
}

void EvalReport::write_roc(const std::filesystem::path& path) const {
  std::ostringstream out;
  out.precision(17);
  out << "# fpr\ttpr\n";
  for (const auto& p : roc_points) out << p.fpr << '\t' << p.tpr << '\n';
  write_file_atomic(path, out.str());
}

void EvalReport::write_predictions(const std::filesystem::path& path) const {
  std::string text;
  for (const auto& p : predictions) {
    nlohmann::json j;
    j["record_id"] = p.record_id;
    j["class"] = to_string(p.source_class);
    j["target"] = p.target ? nlohmann::json(*p.target) : nlohmann::json();
    j["min_distance"] = p.result.min_distance;
    j["verdict"] = to_string(p.result.verdict);
    j["seconds"] = p.seconds;
    auto& m = j["top_matches"] = nlohmann::json::array();
    for (const auto& match : p.result.top_matches) {
      m.push_back({{"website_id", match.website_id}, {"record_id", match.record_id}, {"distance", match.distance}});
    }
    text += j.dump() + "\n";
  }
  write_file_atomic(path, text);
}

EvalReport evaluate_embeddings(const EmbeddingIndex& index, const std::vector<Screenshot>& test_records,
                               const ImageSource& images, const EmbedFn& embed_fn, int workers,
                               const std::string& method) {
  if (test_records.empty()) throw Error(errc::kEmpty, "no test records");
  std::vector<PredictionResult> results(test_records.size());
  std::vector<double> seconds(test_records.size());
  parallel_for(test_records.size(), workers, [&](std::size_t i) {
    const ImageTensor image = images.load(test_records[i]);
    const auto start = std::chrono::steady_clock::now();
    results[i] = classify(index, embed_fn(image), 5, test_records[i].record_id);
    seconds[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  });

  // Predictions are fixed; labels are consulted from here on.
  EvalReport report;
  report.method = method;
  report.threshold = index.threshold();
  std::vector<PredictionResult> phish_results;
  std::vector<std::string> targets;
  std::vector<double> distances;
  std::vector<bool> is_phishing;
  for (std::size_t i = 0; i < test_records.size(); ++i) {
    const Screenshot& r = test_records[i];
    if (r.source_class == SourceClass::kTrusted) {
      throw Error(errc::kInvalidArgument, "trusted record " + r.record_id + " in test set");
    }
    const bool phishing = r.source_class == SourceClass::kPhishing;
    report.predictions.push_back({r.record_id, r.source_class, r.website_id, results[i], seconds[i]});
    distances.push_back(results[i].min_distance);
    is_phishing.push_back(phishing);
    if (phishing) {
      phish_results.push_back(results[i]);
      targets.push_back(*r.website_id);
      const std::string& top1 = results[i].top_matches.front().website_id;
      if (top1 != *r.website_id) report.per_website_confusion[*r.website_id][top1]++;
    }
  }
  report.phishing_count = phish_results.size();
  report.benign_count = test_records.size() - phish_results.size();
  if (!phish_results.empty()) {
    report.top1_match = top_k_match_rate(phish_results, targets, 1);
    report.top5_match = top_k_match_rate(phish_results, targets, 5);
  }
  if (report.phishing_count > 0 && report.benign_count > 0) {
    const RocCurve roc = roc_curve(distances, is_phishing);
    report.roc_points = roc.points;
    report.auc = roc.auc;
    report.auc_mann_whitney = roc.auc_mann_whitney;
    report.partial_auc_at_1pct = roc.partial_auc;
  } else {
    report.auc = report.auc_mann_whitney = report.partial_auc_at_1pct = std::numeric_limits<double>::quiet_NaN();
    log_event(LogLevel::kWarn, "roc_skipped", {{"reason", "single-class test set"}, {"method", method}});
  }
  if (report.threshold) {
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < distances.size(); ++i) {
      if (distances[i] < *report.threshold) (is_phishing[i] ? tp : fp)++;
    }
    if (report.phishing_count) report.tpr_at_threshold = static_cast<double>(tp) / report.phishing_count;
    if (report.benign_count) report.fpr_at_threshold = static_cast<double>(fp) / report.benign_count;
  }
  report.timing = timing_stats(seconds);
  return report;
}

EvalReport evaluate_model(const ModelState& model, const EmbeddingIndex& index,
                          const std::vector<Screenshot>& test_records, const ImageSource& images, int workers) {
  if (model_fingerprint(model) != index.fingerprint()) {
    throw Error(errc::kFingerprint, "index was built with a different model");
  }
  return evaluate_embeddings(
      index, test_records, images, [&](const ImageTensor& image) { return embed(model, image); }, workers, "model");
}

EvalReport baseline_pretrained_nn(const ModelConfig& backbone, const std::vector<Screenshot>& index_records,
                                  const std::vector<Screenshot>& test_records, const ImageSource& images,
                                  std::uint64_t seed, int workers) {
  ModelConfig config = backbone;
  config.added_layer = AddedLayer::kNone;
  config.head = Head::kGlobalMaxPool;
  config.network = NetworkType::kTriplet;
  const ModelState model = build_model(config, seed);
  const EmbeddingIndex index = build_index(model, index_records, images, workers);
  return evaluate_embeddings(
      index, test_records, images, [&](const ImageTensor& image) { return embed(model, image); }, workers,
      "pretrained_" + to_string(config.backbone));
}

std::vector<float> hog_descriptor(const ImageTensor& image, const HogParams& params) {
  const int h = image.height(), w = image.width();
  const int block = params.cell_size * params.block_cells;
  if (params.cell_size < 1 || params.block_cells < 1 || params.bins < 1 || block > h || block > w ||
      (h - block) % params.cell_size != 0 || (w - block) % params.cell_size != 0) {
    throw Error(errc::kInvalidArgument, "HOG cell/block sizes do not tile a " + std::to_string(w) + "x" +
                                            std::to_string(h) + " image");
  }
  cv::Mat gray(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double v = 0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
      gray.at<std::uint8_t>(y, x) = cv::saturate_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  }
  cv::HOGDescriptor hog(cv::Size(w, h), cv::Size(block, block), cv::Size(params.cell_size, params.cell_size),
                        cv::Size(params.cell_size, params.cell_size), params.bins);
  std::vector<float> descriptor;
  hog.compute(gray, descriptor);
  return descriptor;
}

EvalReport baseline_hog_nn(const std::vector<Screenshot>& index_records, const std::vector<Screenshot>& test_records,
                           const ImageSource& images, const HogParams& params, int workers) {
  if (index_records.empty()) throw Error(errc::kEmpty, "no index records");
  std::vector<std::vector<float>> rows(index_records.size());
  parallel_for(index_records.size(), workers,
               [&](std::size_t i) { rows[i] = hog_descriptor(images.load(index_records[i]), params); });
  const std::string tag = "hog:" + std::to_string(params.cell_size) + "/" + std::to_string(params.block_cells) + "/" +
                          std::to_string(params.bins);
  EmbeddingIndex index(static_cast<int>(rows.front().size()), tag);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (!index_records[i].website_id) {
      throw Error(errc::kInvalidArgument, "index record " + index_records[i].record_id + " has no website_id");
    }
    index.append(rows[i], *index_records[i].website_id, index_records[i].record_id);
  }
  return evaluate_embeddings(
      index, test_records, images, [&](const ImageTensor& image) { return hog_descriptor(image, params); }, workers,
      "hog");
}

std::vector<Screenshot> test_records(const CorpusManifest& manifest, const SplitAssignment& split, Split which) {
  std::vector<Screenshot> out;
  for (const auto& r : manifest.records) {
    if (r.source_class != SourceClass::kTrusted && split.of(r.record_id) == which) out.push_back(r);
  }
  return out;
}

std::vector<Screenshot> index_records(const CorpusManifest& manifest, const SplitAssignment& split) {
  std::vector<Screenshot> out;
  for (const auto& r : manifest.records) {
    if (r.source_class == SourceClass::kTrusted ||
        (r.source_class == SourceClass::kPhishing && split.of(r.record_id) == Split::kTrain)) {
      out.push_back(r);
    }
  }
  return out;
}

}  // namespace phishmetric
