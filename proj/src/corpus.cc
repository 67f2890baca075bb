#include "phishmetric/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "phishmetric/error.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

std::string at_line(const std::string& source, int line) { return source + ":" + std::to_string(line) + ": "; }

std::size_t count_floor(double fraction, std::size_t n) {
  // The epsilon keeps products such as 0.29 * 100 from flooring to 28.
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

std::string meta_to_string(const std::map<std::string, std::string>& meta) {
  std::string out;
  for (const auto& [k, v] : meta) {
    if (!out.empty()) out += ";";
    out += k + "=" + v;
  }
  return out;
}

double l2(const std::vector<float>& a, const std::vector<float>& b) {
  if (a.size() != b.size()) throw Error(errc::kDimension, "feature vectors differ in length");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return std::sqrt(s);
}

}  // namespace

std::string to_string(SourceClass c) {
  switch (c) {
    case SourceClass::kTrusted: return "trusted";
    case SourceClass::kPhishing: return "phishing";
    case SourceClass::kBenignTest: break;
  }
  return "benign_test";
}

SourceClass parse_source_class(const std::string& s) {
  if (s == "trusted") return SourceClass::kTrusted;
  if (s == "phishing") return SourceClass::kPhishing;
  if (s == "benign_test") return SourceClass::kBenignTest;
  throw Error(errc::kParse, "unknown source_class '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kValidation: return "validation";
    case Split::kTest: break;
  }
  return "test";
}

const Screenshot& CorpusManifest::record(const std::string& record_id) const {
  for (const auto& r : records) {
    if (r.record_id == record_id) return r;
  }
  throw Error(errc::kInvalidArgument, "no record " + record_id);
}

const WebsiteIdentity* CorpusManifest::website(const std::string& website_id) const {
  for (const auto& w : websites) {
    if (w.website_id == website_id) return &w;
  }
  return nullptr;
}

std::vector<Screenshot> CorpusManifest::records_of(SourceClass c) const {
  std::vector<Screenshot> out;
  for (const auto& r : records) {
    if (r.source_class == c) out.push_back(r);
  }
  return out;
}

CorpusManifest parse_manifest(const std::string& text, const std::filesystem::path& base_dir,
                              const std::string& source_name) {
  CorpusManifest m;
  std::set<std::string> website_ids, record_ids;
  std::vector<int> record_lines;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    if (trim(raw).empty() || raw[0] == '#') continue;
    const std::vector<std::string> f = split(raw, '\t');
    const std::string where = at_line(source_name, line_no);
    if (f[0] == "@version") {
      if (f.size() != 2) throw Error(errc::kParse, where + "@version takes one field");
      m.version = f[1];
    } else if (f[0] == "@website") {
      if (f.size() != 5) throw Error(errc::kParse, where + "@website needs id, name, domains, category");
      WebsiteIdentity w;
      w.website_id = f[1];
      w.name = f[2];
      for (const auto& d : split(f[3], ';')) {
        if (!trim(d).empty()) w.domains.insert(trim(d));
      }
      if (f[4] != "-" && !f[4].empty()) w.category = f[4];
      if (w.website_id.empty()) throw Error(errc::kParse, where + "empty website_id");
      if (w.domains.empty()) throw Error(errc::kParse, where + "website " + w.website_id + " has no domains");
      if (!website_ids.insert(w.website_id).second) {
        throw Error(errc::kDuplicateRecord, where + "duplicate website_id " + w.website_id);
      }
      m.websites.push_back(std::move(w));
    } else if (f[0].starts_with("@")) {
      throw Error(errc::kParse, where + "unknown directive " + f[0]);
    } else {
      if (f.size() < 4 || f.size() > 6) throw Error(errc::kParse, where + "record needs 4 to 6 fields");
      Screenshot r;
      r.record_id = f[0];
      if (f[1] != "-") r.website_id = f[1];
      r.source_class = [&] {
        try {
          return parse_source_class(f[2]);
        } catch (const Error& e) {
          throw Error(errc::kParse, where + e.what());
        }
      }();
      std::filesystem::path p(f[3]);
      r.image_path = p.is_absolute() ? p : (base_dir / p).lexically_normal();
      if (f.size() >= 5 && f[4] != "-" && !f[4].empty()) r.url = f[4];
      if (f.size() == 6 && !f[5].empty()) {
        for (const auto& kv : split(f[5], ';')) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw Error(errc::kParse, where + "capture_meta entry without '='");
          r.capture_meta[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
      }
      if (r.record_id.empty()) throw Error(errc::kParse, where + "empty record_id");
      if (!record_ids.insert(r.record_id).second) {
        throw Error(errc::kDuplicateRecord, where + "duplicate record_id " + r.record_id);
      }
      if (r.source_class != SourceClass::kBenignTest && !r.website_id) {
        throw Error(errc::kDanglingWebsite, where + to_string(r.source_class) + " record requires website_id");
      }
      m.records.push_back(std::move(r));
      record_lines.push_back(line_no);
    }
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    const auto& r = m.records[i];
    if (r.website_id && !website_ids.count(*r.website_id)) {
      throw Error(errc::kDanglingWebsite, at_line(source_name, record_lines[i]) + "record " + r.record_id +
                                              " references unknown website_id " + *r.website_id);
    }
  }
  return m;
}

CorpusManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(errc::kIo, "cannot open manifest " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_manifest(buf.str(), std::filesystem::absolute(path).parent_path(), path.string());
}

void validate_manifest(const CorpusManifest& manifest) {
  std::ostringstream text;
  // Re-parsing the serialized form checks exactly the invariants load enforces.
  text << "@version\t" << manifest.version << "\n";
  for (const auto& w : manifest.websites) {
    text << "@website\t" << w.website_id << "\t" << w.name << "\t";
    bool first = true;
    for (const auto& d : w.domains) {
      text << (first ? "" : ";") << d;
      first = false;
    }
    text << "\t" << w.category.value_or("-") << "\n";
  }
  for (const auto& r : manifest.records) {
    text << r.record_id << "\t" << r.website_id.value_or("-") << "\t" << to_string(r.source_class) << "\t"
         << r.image_path.string() << "\n";
  }
  parse_manifest(text.str(), "/", "<manifest>");
}

void save_manifest(const CorpusManifest& manifest, const std::filesystem::path& path) {
  validate_manifest(manifest);
  const auto dir = std::filesystem::absolute(path).parent_path();
  std::ostringstream out;
  out << "# phishmetric corpus manifest\n@version\t" << manifest.version << "\n";
  for (const auto& w : manifest.websites) {
    out << "@website\t" << w.website_id << "\t" << w.name << "\t";
    bool first = true;
    for (const auto& d : w.domains) {
      out << (first ? "" : ";") << d;
      first = false;
    }
    out << "\t" << w.category.value_or("-") << "\n";
  }
  for (const auto& r : manifest.records) {
    // In-memory paths are relative to the working directory; on disk they
    // are relative to the manifest, or absolute when outside its directory.
    std::filesystem::path p = std::filesystem::absolute(r.image_path).lexically_normal();
    const auto rel = p.lexically_relative(dir);
    if (!rel.empty() && !rel.string().starts_with("..")) p = rel;
    out << r.record_id << "\t" << r.website_id.value_or("-") << "\t" << to_string(r.source_class) << "\t"
        << p.string() << "\t" << r.url.value_or("-");
    if (!r.capture_meta.empty()) out << "\t" << meta_to_string(r.capture_meta);
    out << "\n";
  }
  write_file_atomic(path, out.str());
}

// ------------------------------------------------------------ splits

Split SplitAssignment::of(const std::string& record_id) const {
  const auto it = by_record.find(record_id);
  if (it == by_record.end()) throw Error(errc::kInvalidArgument, "record " + record_id + " has no split");
  return it->second;
}

std::vector<Screenshot> SplitAssignment::select(const CorpusManifest& manifest, Split split,
                                                std::optional<SourceClass> source) const {
  std::vector<Screenshot> out;
  for (const auto& r : manifest.records) {
    if (source && r.source_class != *source) continue;
    if (of(r.record_id) == split) out.push_back(r);
  }
  return out;
}

std::string SplitAssignment::serialize() const {
  std::ostringstream out;
  out << "# phishing_train_fraction=" << phishing_train_fraction << " validation_fraction=" << validation_fraction
      << " seed=" << seed << "\n";
  for (const auto& [id, s] : by_record) out << id << "\t" << to_string(s) << "\n";
  return out.str();
}

SplitAssignment SplitAssignment::parse(const std::string& text) {
  SplitAssignment a;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      for (const auto& tok : split(line.substr(1), ' ')) {
        const auto eq = tok.find('=');
        if (eq == std::string::npos) continue;
        const std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "phishing_train_fraction") a.phishing_train_fraction = std::stod(v);
        if (k == "validation_fraction") a.validation_fraction = std::stod(v);
        if (k == "seed") a.seed = std::stoull(v);
      }
      continue;
    }
    const auto f = split(line, '\t');
    if (f.size() != 2) throw Error(errc::kParse, "bad split line: " + line);
    Split s = f[1] == "train" ? Split::kTrain : f[1] == "validation" ? Split::kValidation : Split::kTest;
    if (f[1] != "train" && f[1] != "validation" && f[1] != "test") throw Error(errc::kParse, "bad split " + f[1]);
    a.by_record[f[0]] = s;
  }
  return a;
}

SplitAssignment split_corpus(const CorpusManifest& manifest, double phishing_train_fraction,
                             double validation_fraction, std::uint64_t seed) {
  if (!(phishing_train_fraction >= 0 && phishing_train_fraction <= 1) ||
      !(validation_fraction >= 0 && validation_fraction <= 1)) {
    throw Error(errc::kInvalidArgument, "split fractions must lie in [0, 1]");
  }
  SplitAssignment a;
  a.phishing_train_fraction = phishing_train_fraction;
  a.validation_fraction = validation_fraction;
  a.seed = seed;
  std::mt19937_64 rng(seed);

  auto sorted_ids = [](std::vector<std::string> ids) {
    std::sort(ids.begin(), ids.end());
    return ids;
  };
  auto hold_out = [&](std::vector<std::string> ids) {
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t n_val = count_floor(validation_fraction, ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) a.by_record[ids[i]] = i < n_val ? Split::kValidation : Split::kTest;
  };

  std::map<std::string, std::vector<std::string>> phishing_by_site;
  std::vector<std::string> benign;
  for (const auto& r : manifest.records) {
    switch (r.source_class) {
      case SourceClass::kTrusted: a.by_record[r.record_id] = Split::kTrain; break;
      case SourceClass::kPhishing: phishing_by_site[*r.website_id].push_back(r.record_id); break;
      case SourceClass::kBenignTest: benign.push_back(r.record_id); break;
    }
  }
  for (auto& [site, ids] : phishing_by_site) {
    std::vector<std::string> order = sorted_ids(ids);
    std::shuffle(order.begin(), order.end(), rng);
    // A lone phishing page stays held out unless everything trains.
    const std::size_t n_train = count_floor(phishing_train_fraction, order.size());
    for (std::size_t i = 0; i < n_train; ++i) a.by_record[order[i]] = Split::kTrain;
    hold_out(std::vector<std::string>(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end()));
  }
  hold_out(sorted_ids(benign));
  return a;
}

// ------------------------------------------------------------ images

ImageTensor load_image(const Screenshot& record) {
  ImageTensor img = decode_image(record.image_path);
  if (img.height() == kScreenshotSize && img.width() == kScreenshotSize) return img;
  return resize_bilinear(img, kScreenshotSize, kScreenshotSize);
}

ImageTensor CachedImageSource::load(const Screenshot& record) const {
  {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(record.record_id);
    if (it != cache_.end()) return *it->second;
  }
  auto img = std::make_shared<const ImageTensor>(load_image(record));
  std::lock_guard lock(mutex_);
  cache_.emplace(record.record_id, img);
  return *img;
}

std::size_t CachedImageSource::size() const {
  std::lock_guard lock(mutex_);
  return cache_.size();
}

// ------------------------------------------------------------ dedup

std::string DuplicateReport::serialize() const {
  std::ostringstream out;
  out.precision(17);
  out << "# near-duplicate report\nthreshold\t" << threshold << "\n";
  for (const auto& c : components) {
    out << "component\t" << c.canonical << "\t";
    for (std::size_t i = 0; i < c.members.size(); ++i) out << (i ? "," : "") << c.members[i];
    out << "\n";
  }
  for (const auto& p : pairs) out << "pair\t" << p.first << "\t" << p.second << "\t" << p.distance << "\n";
  return out.str();
}

DuplicateReport near_duplicate_scan(const std::vector<Screenshot>& records,
                                    const std::vector<std::vector<float>>& features, double threshold) {
  if (records.size() != features.size()) throw Error(errc::kDimension, "one feature vector per record required");
  DuplicateReport report;
  report.threshold = threshold;
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return records[a].record_id < records[b].record_id; });

  std::vector<std::size_t> parent(records.size());
  std::iota(parent.begin(), parent.end(), 0);
  std::function<std::size_t(std::size_t)> root = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t i = 0; i < order.size(); ++i) {
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const double d = l2(features[order[i]], features[order[j]]);
      if (d < threshold) {
        report.pairs.push_back({records[order[i]].record_id, records[order[j]].record_id, d});
        parent[root(j)] = root(i);
      }
    }
  }
  // order[] is sorted, so walking it yields members in record_id order and
  // the first member seen is the canonical one.
  std::map<std::size_t, DuplicateComponent> groups;
  for (std::size_t i = 0; i < order.size(); ++i) groups[root(i)].members.push_back(records[order[i]].record_id);
  for (auto& [r, comp] : groups) {
    if (comp.members.size() < 2) continue;
    comp.canonical = comp.members.front();
    report.components.push_back(std::move(comp));
  }
  std::sort(report.components.begin(), report.components.end(),
            [](const auto& a, const auto& b) { return a.canonical < b.canonical; });
  return report;
}

DuplicateReport near_duplicate_scan(const std::vector<Screenshot>& records, const ImageSource& images,
                                    const FeatureFn& feature_fn, double threshold) {
  std::vector<std::vector<float>> features;
  features.reserve(records.size());
  for (const auto& r : records) features.push_back(feature_fn(images.load(r)));
  return near_duplicate_scan(records, features, threshold);
}

double default_dedup_threshold(const std::vector<Screenshot>& records,
                               const std::vector<std::vector<float>>& features) {
  std::vector<double> cross;
  for (std::size_t i = 0; i < records.size(); ++i) {
    for (std::size_t j = i + 1; j < records.size(); ++j) {
      if (records[i].website_id && records[j].website_id && *records[i].website_id != *records[j].website_id) {
        cross.push_back(l2(features[i], features[j]));
      }
    }
  }
  if (cross.empty()) throw Error(errc::kEmpty, "no cross-website pairs to derive a dedup threshold from");
  std::sort(cross.begin(), cross.end());
  const std::size_t k = static_cast<std::size_t>(std::floor(0.01 * static_cast<double>(cross.size() - 1)));
  return cross[k];
}

}  // namespace phishmetric
