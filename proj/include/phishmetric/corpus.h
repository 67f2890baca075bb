#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "phishmetric/image.h"

namespace phishmetric {

struct WebsiteIdentity {
  std::string website_id;
  std::string name;
  std::set<std::string> domains;
  std::optional<std::string> category;

  friend bool operator==(const WebsiteIdentity&, const WebsiteIdentity&) = default;
};

enum class SourceClass { kTrusted, kPhishing, kBenignTest };

std::string to_string(SourceClass c);
SourceClass parse_source_class(const std::string& s);

struct Screenshot {
  std::string record_id;
  std::filesystem::path image_path;
  std::optional<std::string> website_id;  // absent for benign-test pages
  SourceClass source_class = SourceClass::kTrusted;
  std::optional<std::string> url;
  std::map<std::string, std::string> capture_meta;

  friend bool operator==(const Screenshot&, const Screenshot&) = default;
};

struct CorpusManifest {
  std::string version = "1";
  std::vector<WebsiteIdentity> websites;
  std::vector<Screenshot> records;

  const Screenshot& record(const std::string& record_id) const;
  const WebsiteIdentity* website(const std::string& website_id) const;
  std::vector<Screenshot> records_of(SourceClass c) const;

  friend bool operator==(const CorpusManifest&, const CorpusManifest&) = default;
};

// Manifest text format (UTF-8, tab separated, '#' starts a comment line):
//   @version <string>
//   @website <website_id> <name> <domain;domain;...> <category|->
//   <record_id> <website_id|-> <trusted|phishing|benign_test> <image_path> [<url|->] [<k=v;k=v>]
// Relative image paths are resolved against the manifest's directory.
CorpusManifest load_manifest(const std::filesystem::path& path);
CorpusManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& source_name = "<memory>");
// Paths are written relative to the manifest directory when possible.
void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path);
// Throws the first violated manifest invariant.
void validate_manifest(const CorpusManifest& manifest);

enum class Split { kTrain, kValidation, kTest };
std::string to_string(Split s);

struct SplitAssignment {
  std::map<std::string, Split> by_record;
  double phishing_train_fraction = 0.4;
  double validation_fraction = 0.0;
  std::uint64_t seed = 0;

  Split of(const std::string& record_id) const;
  std::vector<Screenshot> select(const CorpusManifest& manifest, Split split,
                                 std::optional<SourceClass> source = std::nullopt) const;
  // One "record_id<TAB>split" line per record in record_id order.
  std::string serialize() const;
  static SplitAssignment parse(const std::string& text);
};

// Trusted pages always train. Each website's phishing pages are shuffled and
// floor(fraction * n) of them train; held-out phishing and benign-test pages
// are divided into validation (floor(validation_fraction * n)) and test.
SplitAssignment split_corpus(const CorpusManifest& manifest, double phishing_train_fraction,
                             double validation_fraction, std::uint64_t seed);

// Decodes and resizes to 3x224x224 (plain bilinear, aspect not preserved).
ImageTensor load_image(const Screenshot& record);

class ImageSource {
 public:
  virtual ~ImageSource() = default;
  virtual ImageTensor load(const Screenshot& record) const = 0;
};

class DiskImageSource final : public ImageSource {
 public:
  ImageTensor load(const Screenshot& record) const override { return load_image(record); }
};

// Memoises load_image by record_id; safe for concurrent callers.
class CachedImageSource final : public ImageSource {
 public:
  ImageTensor load(const Screenshot& record) const override;
  std::size_t size() const;

 private:
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, std::shared_ptr<const ImageTensor>> cache_;
};

struct DuplicatePair {
  std::string first;  // first < second
  std::string second;
  double distance = 0;
};

struct DuplicateComponent {
  std::string canonical;  // lowest record_id of the component
  std::vector<std::string> members;
};

struct DuplicateReport {
  double threshold = 0;
  std::vector<DuplicatePair> pairs;
  std::vector<DuplicateComponent> components;

  std::string serialize() const;
};

using FeatureFn = std::function<std::vector<float>(const ImageTensor&)>;

// Flags every pair whose feature-space L2 distance is below `threshold`
// and groups flagged pairs into connected components.
DuplicateReport near_duplicate_scan(const std::vector<Screenshot>& records, const ImageSource& images,
                                    const FeatureFn& feature_fn, double threshold);
DuplicateReport near_duplicate_scan(const std::vector<Screenshot>& records,
                                    const std::vector<std::vector<float>>& features, double threshold);
// 1st percentile of feature distances between pages of different websites.
double default_dedup_threshold(const std::vector<Screenshot>& records, const std::vector<std::vector<float>>& features);

}  // namespace phishmetric
