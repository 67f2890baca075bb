// phishmetric: command-line entry point for corpus handling, training,
// indexing, prediction, evaluation, robustness runs and projections.
//
// Settings come from a JSON config file (--config, or the PHISHMETRIC_CONFIG
// environment variable) and are overridden by flags. Logs are JSON lines on
// stderr; a failure ends with one {"error": code, "message": ...} line and a
// nonzero exit status.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <Eigen/Core>

#include "json.hpp"
#include "phishmetric/capture.h"
#include "phishmetric/corpus.h"
#include "phishmetric/embedder.h"
#include "phishmetric/error.h"
#include "phishmetric/evaluator.h"
#include "phishmetric/index.h"
#include "phishmetric/log.h"
#include "phishmetric/robustness.h"
#include "phishmetric/synthetic.h"
#include "phishmetric/trainer.h"
#include "phishmetric/tsne.h"
#include "phishmetric/util.h"

namespace pm = phishmetric;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "0.1.0";
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// ------------------------------------------------------------------ settings

struct Settings {
  // Paths.
  std::string manifest, split, checkpoint, init_checkpoint, index, image, out, out_dir, weights;
  // Seeds and parallelism.
  std::uint64_t seed = 1;
  int workers = 1;
  // Model.
  pm::ModelConfig model;
  std::string backbone = "vgg16", added_layer = "conv5x5_512", head = "gmp";
  // Training.
  pm::TrainHyper hyper;
  std::string stage = "both";
  // Split.
  double phishing_train_fraction = 0.4;
  double validation_fraction = 0.0;
  // Dedup.
  std::optional<double> dedup_threshold;
  // Prediction.
  int k = 5;
  // Evaluation.
  std::string baseline = "none";
  // Robustness.
  std::string grid = "table3";
  std::vector<std::string> perturbations;
  std::string adv;
  std::vector<double> epsilons;
  std::string sampling = "random";
  int trials = 5;
  std::int64_t finetune_minibatches = 0;
  double eps_low = 0.003, eps_high = 0.01;
  // Projection.
  pm::TsneOptions tsne;
  // Ingest.
  std::string synthetic_dir, capture_list, images_dir, renderer = pm::CommandCaptureBackend::kFirefoxTemplate;
  pm::DeskCorpusOptions desk;
  double capture_timeout = 30;
  std::string website;
};

const std::set<std::string> kConfigKeys = {
    "manifest", "split", "checkpoint", "init_checkpoint", "index", "out", "out_dir", "weights", "seed",
    "workers", "model", "train", "stage", "phishing_train_fraction", "validation_fraction", "dedup_threshold",
    "k", "baseline", "grid", "perturbations", "adv", "epsilons", "sampling", "trials", "finetune_minibatches",
    "eps_low", "eps_high", "perplexity", "iterations", "renderer", "capture_timeout"};

template <typename T>
void take(const json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

// Applies a config file to the defaults; flags parsed afterwards win.
void apply_config(const fs::path& path, Settings& s) {
  std::ifstream in(path);
  if (!in) throw pm::Error(pm::errc::kIo, "cannot read config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw pm::Error(pm::errc::kParse, "config " + path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw pm::Error(pm::errc::kParse, "config " + path.string() + " is not a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (!kConfigKeys.count(key)) throw pm::Error(pm::errc::kInvalidArgument, "unknown config key '" + key + "'");
  }
  try {
    for (const char* key : {"manifest", "split", "checkpoint", "init_checkpoint", "index", "out", "out_dir",
                            "weights", "stage", "baseline", "grid", "adv", "sampling", "renderer"}) {
      if (!j.contains(key)) continue;
      const std::string v = j.at(key).get<std::string>();
      const std::string k = key;
      if (k == "manifest") s.manifest = v;
      if (k == "split") s.split = v;
      if (k == "checkpoint") s.checkpoint = v;
      if (k == "init_checkpoint") s.init_checkpoint = v;
      if (k == "index") s.index = v;
      if (k == "out") s.out = v;
      if (k == "out_dir") s.out_dir = v;
      if (k == "weights") s.weights = v;
      if (k == "stage") s.stage = v;
      if (k == "baseline") s.baseline = v;
      if (k == "grid") s.grid = v;
      if (k == "adv") s.adv = v;
      if (k == "sampling") s.sampling = v;
      if (k == "renderer") s.renderer = v;
    }
    take(j, "seed", s.seed);
    take(j, "workers", s.workers);
    take(j, "phishing_train_fraction", s.phishing_train_fraction);
    take(j, "validation_fraction", s.validation_fraction);
    if (j.contains("dedup_threshold")) s.dedup_threshold = j.at("dedup_threshold").get<double>();
    take(j, "k", s.k);
    take(j, "perturbations", s.perturbations);
    take(j, "epsilons", s.epsilons);
    take(j, "trials", s.trials);
    take(j, "finetune_minibatches", s.finetune_minibatches);
    take(j, "eps_low", s.eps_low);
    take(j, "eps_high", s.eps_high);
    take(j, "perplexity", s.tsne.perplexity);
    take(j, "iterations", s.tsne.iterations);
    take(j, "capture_timeout", s.capture_timeout);
    if (j.contains("train")) s.hyper = pm::train_hyper_from_json(j.at("train"));
    if (j.contains("model")) {
      s.model = pm::model_config_from_json(j.at("model"));
      s.backbone = pm::to_string(s.model.backbone);
      s.added_layer = pm::to_string(s.model.added_layer);
      s.head = pm::to_string(s.model.head);
      s.weights = s.model.pretrained_weights;
    }
  } catch (const json::exception& e) {
    throw pm::Error(pm::errc::kParse, "config " + path.string() + ": " + e.what());
  }
}

// Finds --config before CLI11 runs so that flags can override its values.
std::optional<fs::path> config_path(int argc, char** argv) {
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--config" && i + 1 < argc) return fs::path(argv[i + 1]);
    if (a.rfind("--config=", 0) == 0) return fs::path(a.substr(9));
  }
  if (const char* env = std::getenv("PHISHMETRIC_CONFIG"); env && *env) return fs::path(env);
  return std::nullopt;
}

// ------------------------------------------------------------------ helpers

pm::ModelConfig model_config(const Settings& s) {
  pm::ModelConfig c = s.model;
  c.backbone = pm::parse_backbone(s.backbone);
  c.added_layer = pm::parse_added_layer(s.added_layer);
  c.head = pm::parse_head(s.head);
  c.pretrained_weights = s.weights;
  c.pretrained_init = !s.weights.empty();
  return c;
}

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw pm::Error(pm::errc::kInvalidArgument, std::string(flag) + " is required");
}

void require_file(const std::string& path, const char* flag) {
  require(path, flag);
  if (!fs::exists(path)) throw pm::Error(pm::errc::kIo, std::string(flag) + " " + path + " does not exist");
}

pm::SplitAssignment load_split(const std::string& path) {
  const auto bytes = pm::read_file_bytes(path);
  return pm::SplitAssignment::parse(std::string(bytes.begin(), bytes.end()));
}

json file_digest(const std::string& path) {
  if (path.empty() || !fs::is_regular_file(path)) return nullptr;
  return pm::sha256_hex(pm::read_file_bytes(path));
}

json effective_config(const Settings& s) {
  json j;
  j["manifest"] = s.manifest;
  j["split"] = s.split;
  j["checkpoint"] = s.checkpoint;
  j["init_checkpoint"] = s.init_checkpoint;
  j["index"] = s.index;
  j["out"] = s.out;
  j["out_dir"] = s.out_dir;
  j["seed"] = s.seed;
  j["workers"] = s.workers;
  j["model"] = pm::to_json(model_config(s));
  j["train"] = pm::to_json(s.hyper);
  j["stage"] = s.stage;
  j["phishing_train_fraction"] = s.phishing_train_fraction;
  j["validation_fraction"] = s.validation_fraction;
  j["dedup_threshold"] = s.dedup_threshold ? json(*s.dedup_threshold) : json();
  j["k"] = s.k;
  j["baseline"] = s.baseline;
  j["grid"] = s.grid;
  j["perturbations"] = s.perturbations;
  j["adv"] = s.adv;
  j["epsilons"] = s.epsilons;
  j["sampling"] = s.sampling;
  j["trials"] = s.trials;
  j["finetune_minibatches"] = s.finetune_minibatches;
  j["eps_low"] = s.eps_low;
  j["eps_high"] = s.eps_high;
  j["perplexity"] = s.tsne.perplexity;
  j["iterations"] = s.tsne.iterations;
  return j;
}

// Records what is needed to repeat a run: the resolved settings, the
// digests of every input file and the library versions.
json provenance(const std::string& command, const Settings& s, int argc, char** argv) {
  json p;
  p["command"] = command;
  std::vector<std::string> args(argv, argv + argc);
  p["argv"] = args;
  const json cfg = effective_config(s);
  p["config"] = cfg;
  p["config_sha256"] = pm::sha256_hex(cfg.dump());
  p["seed"] = s.seed;
  p["workers"] = s.workers;
  json inputs;
  for (const auto* path : {&s.manifest, &s.split, &s.checkpoint, &s.init_checkpoint, &s.index, &s.image, &s.weights}) {
    if (!path->empty()) inputs[*path] = file_digest(*path);
  }
  p["inputs"] = inputs;
  p["versions"] = {{"phishmetric", kVersion},
                   {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                 std::to_string(EIGEN_MINOR_VERSION)},
                   {"compiler", __VERSION__}};
  return p;
}

void write_provenance(const fs::path& path, const json& p) { pm::write_file_atomic(path, p.dump(2) + "\n"); }

// Provenance goes next to the main artifact, or to the log for commands
// whose only output is stdout.
void emit_provenance(const std::string& artifact, const json& p) {
  if (artifact.empty()) {
    pm::log_event(pm::LogLevel::kInfo, "provenance", p);
  } else {
    write_provenance(artifact + ".provenance.json", p);
  }
}

json prediction_json(const pm::PredictionResult& r) {
  json matches = json::array();
  for (const auto& m : r.top_matches) {
    matches.push_back({{"website_id", m.website_id}, {"record_id", m.record_id}, {"distance", m.distance}});
  }
  json j = {{"min_distance", r.min_distance}, {"verdict", pm::to_string(r.verdict)}, {"top_matches", matches}};
  if (!r.top_matches.empty()) j["website_id"] = r.top_matches.front().website_id;
  if (!r.query_record.empty()) j["query"] = r.query_record;
  return j;
}

pm::ImageTensor load_image_file(const std::string& path) {
  pm::Screenshot s;
  s.image_path = path;
  return pm::load_image(s);
}

pm::ModelState load_model(const Settings& s) {
  require_file(s.checkpoint, "--checkpoint");
  return pm::load_checkpoint(s.checkpoint);
}

pm::EmbeddingIndex index_for(const Settings& s, const pm::ModelState& model, const pm::CorpusManifest& manifest,
                             const pm::SplitAssignment& split, const pm::ImageSource& images) {
  if (!s.index.empty()) {
    require_file(s.index, "--index");
    return pm::load_index(s.index);
  }
  return pm::build_index(model, pm::index_records(manifest, split), images, s.workers);
}

void ensure_dir(const std::string& dir) {
  require(dir, "--out-dir");
  fs::create_directories(dir);
}

// ------------------------------------------------------------------ commands

int cmd_ingest(const Settings& s, const json& prov) {
  if (!s.synthetic_dir.empty()) {
    const auto m = pm::generate_desk_corpus(s.synthetic_dir, s.desk);
    write_provenance(fs::path(s.synthetic_dir) / "manifest.tsv.provenance.json", prov);
    std::cout << json{{"manifest", (fs::path(s.synthetic_dir) / "manifest.tsv").string()},
                      {"records", m.records.size()},
                      {"websites", m.websites.size()}}
                     .dump()
              << "\n";
    return 0;
  }
  require(s.out, "--out");
  pm::CorpusManifest m;
  if (!s.capture_list.empty()) {
    // The capture list is a manifest whose records carry URLs; each image
    // path names the file to render into.
    require_file(s.capture_list, "--capture-list");
    m = pm::load_manifest(s.capture_list);
    const pm::CommandCaptureBackend backend(s.renderer, "command");
    pm::CaptureOptions opt;
    opt.timeout_seconds = s.capture_timeout;
    const fs::path images_dir = s.images_dir.empty() ? fs::path(s.out).parent_path() / "images" : fs::path(s.images_dir);
    fs::create_directories(images_dir);
    for (auto& r : m.records) {
      if (!r.url) throw pm::Error(pm::errc::kInvalidArgument, "capture record " + r.record_id + " has no url");
      const fs::path out = images_dir / r.image_path.filename();
      pm::Screenshot shot = pm::capture_screenshot(*r.url, out, r.record_id, backend, opt);
      r.image_path = shot.image_path;
      r.capture_meta = shot.capture_meta;
      pm::log_event(pm::LogLevel::kInfo, "captured", {{"record_id", r.record_id}, {"url", *r.url}});
    }
  } else {
    require_file(s.manifest, "--manifest");
    m = pm::load_manifest(s.manifest);
  }
  pm::validate_manifest(m);
  pm::save_manifest(m, s.out);
  emit_provenance(s.out, prov);
  std::cout << json{{"manifest", s.out},
                    {"records", m.records.size()},
                    {"websites", m.websites.size()},
                    {"trusted", m.records_of(pm::SourceClass::kTrusted).size()},
                    {"phishing", m.records_of(pm::SourceClass::kPhishing).size()},
                    {"benign_test", m.records_of(pm::SourceClass::kBenignTest).size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_split(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require(s.out, "--out");
  const auto m = pm::load_manifest(s.manifest);
  const auto split = pm::split_corpus(m, s.phishing_train_fraction, s.validation_fraction, s.seed);
  pm::write_file_atomic(s.out, split.serialize());
  emit_provenance(s.out, prov);
  json counts;
  for (pm::Split which : {pm::Split::kTrain, pm::Split::kValidation, pm::Split::kTest}) {
    counts[pm::to_string(which)] = split.select(m, which).size();
  }
  std::cout << counts.dump() << "\n";
  return 0;
}

int cmd_dedup(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require(s.out, "--out");
  const auto m = pm::load_manifest(s.manifest);
  pm::ModelState model;
  if (!s.checkpoint.empty()) {
    model = load_model(s);
  } else {
    pm::ModelConfig c = model_config(s);
    c.added_layer = pm::AddedLayer::kNone;
    c.head = pm::Head::kGlobalMaxPool;
    model = pm::build_model(c, s.seed);
  }
  pm::CachedImageSource images;
  std::vector<pm::ImageTensor> tensors;
  tensors.reserve(m.records.size());
  for (const auto& r : m.records) tensors.push_back(images.load(r));
  const auto features = pm::embed_batch(model, tensors, s.workers);
  const double threshold = s.dedup_threshold ? *s.dedup_threshold : pm::default_dedup_threshold(m.records, features);
  const auto report = pm::near_duplicate_scan(m.records, features, threshold);
  pm::write_file_atomic(s.out, report.serialize());
  emit_provenance(s.out, prov);
  std::cout << json{{"threshold", threshold}, {"pairs", report.pairs.size()}, {"components", report.components.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_train(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require_file(s.split, "--split");
  ensure_dir(s.out_dir);
  if (s.stage != "1" && s.stage != "2" && s.stage != "both") {
    throw pm::Error(pm::errc::kInvalidArgument, "--stage must be 1, 2 or both");
  }
  const auto m = pm::load_manifest(s.manifest);
  const auto split = load_split(s.split);
  const auto pool = pm::TrainingPool::from_split(m, split);
  pm::TrainHyper hyper = s.hyper;
  hyper.workers = s.workers;
  if (hyper.checkpoint_dir.empty()) hyper.checkpoint_dir = fs::path(s.out_dir) / "checkpoints";
  fs::create_directories(hyper.checkpoint_dir);
  hyper.validate();

  pm::ModelState model;
  if (!s.init_checkpoint.empty()) {
    require_file(s.init_checkpoint, "--init-checkpoint");
    model = pm::load_checkpoint(s.init_checkpoint);
  } else if (s.stage == "2") {
    throw pm::Error(pm::errc::kInvalidArgument, "--stage 2 needs --init-checkpoint");
  } else {
    model = pm::build_model(model_config(s), s.seed);
  }

  pm::CachedImageSource images;
  std::mt19937_64 rng(s.seed);
  std::string log_text;
  pm::TrainObserver obs;
  obs.on_minibatch = [&](const pm::TrainLogRecord& r) {
    const std::string line = pm::to_json_line(r);
    log_text += line + "\n";
    pm::log_event(pm::LogLevel::kDebug, "minibatch", json::parse(line));
  };
  bool aborted = false;
  auto run = [&](auto&& stage_fn, const char* name) {
    pm::log_event(pm::LogLevel::kInfo, "stage_start", {{"stage", name}});
    auto r = stage_fn(std::move(model), pool, images, hyper, rng, obs);
    model = std::move(r.model);
    aborted = aborted || r.aborted;
    pm::log_event(pm::LogLevel::kInfo, "stage_done",
                  {{"stage", name}, {"minibatches", r.log.size()}, {"aborted", r.aborted}});
  };
  if (s.stage == "1" || s.stage == "both") run(pm::train_stage1, "stage1");
  if (!aborted && (s.stage == "2" || s.stage == "both")) run(pm::train_stage2, "stage2");

  const fs::path final_path = fs::path(s.out_dir) / "final.ckpt";
  pm::save_checkpoint(model, final_path);
  pm::write_file_atomic(fs::path(s.out_dir) / "train_log.jsonl", log_text);
  write_provenance(fs::path(s.out_dir) / "provenance.json", prov);
  std::cout << json{{"checkpoint", final_path.string()},
                    {"fingerprint", pm::model_fingerprint(model)},
                    {"steps", model.meta.step},
                    {"aborted", aborted}}
                   .dump()
            << "\n";
  return aborted ? kExitFailure : 0;
}

int cmd_index_build(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require_file(s.split, "--split");
  require(s.out, "--out");
  const auto model = load_model(s);
  const auto m = pm::load_manifest(s.manifest);
  const auto split = load_split(s.split);
  pm::DiskImageSource images;
  const auto index = pm::build_index(model, pm::index_records(m, split), images, s.workers);
  pm::save_index(index, s.out);
  emit_provenance(s.out, prov);
  std::cout << json{{"index", s.out}, {"rows", index.rows()}, {"websites", index.website_count()}}.dump() << "\n";
  return 0;
}

int cmd_predict(const Settings& s, const json& prov) {
  require_file(s.index, "--index");
  require_file(s.image, "--image");
  const auto model = load_model(s);
  const auto index = pm::load_index(s.index);
  const pm::Predictor predictor(index, model);
  const auto result = predictor(load_image_file(s.image), s.k, s.image);
  const std::string text = prediction_json(result).dump();
  if (!s.out.empty()) pm::write_file_atomic(s.out, text + "\n");
  emit_provenance(s.out, prov);
  std::cout << text << "\n";
  return 0;
}

int cmd_index_add(const Settings& s, const json& prov) {
  require_file(s.index, "--index");
  require_file(s.manifest, "--manifest");
  require(s.website, "--website");
  require(s.out, "--out");
  const auto model = load_model(s);
  const auto index = pm::load_index(s.index);
  const auto m = pm::load_manifest(s.manifest);
  std::vector<pm::Screenshot> shots;
  for (const auto& r : m.records_of(pm::SourceClass::kTrusted)) {
    if (r.website_id == s.website) shots.push_back(r);
  }
  if (shots.empty()) throw pm::Error(pm::errc::kEmpty, "no trusted screenshots of website " + s.website);
  pm::DiskImageSource images;
  const auto updated = pm::add_website(index, model, shots, images);
  pm::save_index(updated, s.out);
  emit_provenance(s.out, prov);
  std::cout << json{{"index", s.out}, {"rows", updated.rows()}, {"added", shots.size()}}.dump() << "\n";
  return 0;
}

int cmd_index_threshold(const Settings& s, const json& prov) {
  require_file(s.index, "--index");
  require_file(s.manifest, "--manifest");
  require_file(s.split, "--split");
  require(s.out, "--out");
  const auto model = load_model(s);
  auto index = pm::load_index(s.index);
  const auto m = pm::load_manifest(s.manifest);
  const auto split = load_split(s.split);
  const auto validation = pm::test_records(m, split, pm::Split::kValidation);
  if (validation.empty()) {
    throw pm::Error(pm::errc::kEmpty, "the split has no validation records; rerun split with --validation-fraction");
  }
  pm::CachedImageSource images;
  const pm::Predictor predictor(index, model);
  std::vector<double> phishing, benign;
  for (const auto& r : validation) {
    const double d = predictor(images.load(r), 1).min_distance;
    (r.source_class == pm::SourceClass::kPhishing ? phishing : benign).push_back(d);
  }
  const double tau = pm::select_threshold(phishing, benign);
  index.set_threshold(tau);
  pm::save_index(index, s.out);
  emit_provenance(s.out, prov);
  std::cout << json{{"index", s.out}, {"threshold", tau}, {"phishing", phishing.size()}, {"benign", benign.size()}}
                   .dump()
            << "\n";
  return 0;
}

int cmd_evaluate(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require_file(s.split, "--split");
  ensure_dir(s.out_dir);
  const auto m = pm::load_manifest(s.manifest);
  const auto split = load_split(s.split);
  const auto tests = pm::test_records(m, split);
  const auto indexed = pm::index_records(m, split);
  pm::CachedImageSource images;
  pm::EvalReport report;
  if (s.baseline == "none") {
    const auto model = load_model(s);
    const auto index = index_for(s, model, m, split, images);
    report = pm::evaluate_model(model, index, tests, images, s.workers);
  } else if (s.baseline == "pretrained") {
    report = pm::baseline_pretrained_nn(model_config(s), indexed, tests, images, s.seed, s.workers);
  } else if (s.baseline == "hog") {
    report = pm::baseline_hog_nn(indexed, tests, images, {}, s.workers);
  } else {
    throw pm::Error(pm::errc::kInvalidArgument, "--baseline must be none, pretrained or hog");
  }
  const fs::path dir = s.out_dir;
  report.write(dir / "report.json");
  report.write_roc(dir / "roc.tsv");
  report.write_predictions(dir / "predictions.jsonl");
  write_provenance(dir / "provenance.json", prov);
  std::cout << report.to_json().dump() << "\n";
  return 0;
}

std::vector<pm::AdversarialSpec> adversarial_specs(const Settings& s) {
  if (s.adv.empty()) return {};
  if (s.adv != "fgsm") throw pm::Error(pm::errc::kInvalidArgument, "--adv supports only fgsm");
  if (s.epsilons.empty()) return pm::table4_grid();
  std::vector<pm::AdversarialSpec> specs;
  for (const double eps : s.epsilons) {
    std::ostringstream text;
    text.precision(17);
    text << "fgsm:eps=" << eps << ",sampling=" << s.sampling;
    specs.push_back(pm::AdversarialSpec::parse(text.str()));
  }
  return specs;
}

int cmd_robustness(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require_file(s.split, "--split");
  ensure_dir(s.out_dir);
  std::vector<pm::PerturbationSpec> specs;
  if (s.grid == "table3") {
    for (int row : {1, 2}) {
      for (auto& p : pm::table3_grid(row)) specs.push_back(p);
    }
  } else if (s.grid != "none") {
    throw pm::Error(pm::errc::kInvalidArgument, "--grid must be table3 or none");
  }
  for (const auto& text : s.perturbations) specs.push_back(pm::PerturbationSpec::parse(text));
  const auto adv = adversarial_specs(s);
  if (s.finetune_minibatches < 0 || !(s.eps_low <= s.eps_high)) {
    throw pm::Error(pm::errc::kInvalidArgument, "invalid fine-tuning settings");
  }

  auto model = load_model(s);
  const auto m = pm::load_manifest(s.manifest);
  const auto split = load_split(s.split);
  const auto tests = pm::test_records(m, split);
  pm::CachedImageSource images;
  const fs::path dir = s.out_dir;
  json summary;

  auto evaluate = [&](const pm::ModelState& mm, const pm::EmbeddingIndex& index, const std::string& tag) {
    if (!specs.empty()) {
      const auto r = pm::robustness_report(mm, index, tests, images, specs, s.seed, s.trials, s.workers);
      r.write(dir / ("perturbations" + tag + ".json"));
      summary["perturbations" + tag] = r.to_json();
    }
    if (!adv.empty()) {
      const auto r = pm::adversarial_report(mm, index, tests, images, adv, s.seed, s.trials, s.workers, s.hyper.margin);
      r.write(dir / ("adversarial" + tag + ".json"));
      summary["adversarial" + tag] = r.to_json();
    }
  };
  const auto index = index_for(s, model, m, split, images);
  evaluate(model, index, "");

  if (s.finetune_minibatches > 0) {
    pm::TrainHyper hyper = s.hyper;
    hyper.workers = s.workers;
    hyper.checkpoint_dir.clear();
    std::mt19937_64 rng(s.seed);
    const auto pool = pm::TrainingPool::from_split(m, split);
    auto r = pm::adversarial_finetune(std::move(model), pool, images, hyper, s.eps_low, s.eps_high,
                                      s.finetune_minibatches, rng);
    if (r.aborted) throw pm::Error(pm::errc::kNonFinite, r.abort_reason);
    pm::save_checkpoint(r.model, dir / "finetuned.ckpt");
    const auto tuned_index = pm::build_index(r.model, pm::index_records(m, split), images, s.workers);
    evaluate(r.model, tuned_index, "_finetuned");
  }
  write_provenance(dir / "provenance.json", prov);
  std::cout << summary.dump() << "\n";
  return 0;
}

int cmd_project(const Settings& s, const json& prov) {
  require_file(s.manifest, "--manifest");
  require(s.out, "--out");
  const auto model = load_model(s);
  const auto m = pm::load_manifest(s.manifest);
  std::vector<pm::Screenshot> records = m.records;
  if (!s.split.empty()) {
    require_file(s.split, "--split");
    records = pm::test_records(m, load_split(s.split));
  }
  pm::CachedImageSource images;
  std::vector<pm::ImageTensor> tensors;
  std::vector<std::string> labels;
  for (const auto& r : records) {
    tensors.push_back(images.load(r));
    labels.push_back(r.website_id.value_or("benign"));
  }
  const auto embeddings = pm::embed_batch(model, tensors, s.workers);
  const auto points = pm::project_embeddings_2d(embeddings, labels, s.seed, s.tsne);
  pm::write_projection(points, s.out);
  emit_provenance(s.out, prov);
  std::cout << json{{"points", points.size()}, {"out", s.out}}.dump() << "\n";
  return 0;
}

// ------------------------------------------------------------------ parser

std::string grid_help() {
  std::ostringstream h;
  h << "Preset grids:\n  --grid table3 (hand-crafted perturbations):\n";
  for (int row : {1, 2}) {
    h << "    row " << row << ":";
    for (const auto& p : pm::table3_grid(row)) h << " " << p.name();
    h << "\n";
  }
  h << "  --adv fgsm without --epsilon (adversarial attacks):\n   ";
  for (const auto& a : pm::table4_grid()) h << " " << a.name();
  h << "\n";
  return h.str();
}

void add_model_flags(CLI::App* app, Settings& s) {
  app->add_option("--backbone", s.backbone, "vgg16 or resnet50")->capture_default_str();
  app->add_option("--added-layer", s.added_layer, "conv5x5_512, conv3x3_512 or none")->capture_default_str();
  app->add_option("--head", s.head, "gmp, gap, fc1024 or flatten")->capture_default_str();
  app->add_option("--input-size", s.model.input_size, "Network input side length")->capture_default_str();
  app->add_option("--width-divisor", s.model.width_divisor, "Divides every backbone width")->capture_default_str();
  app->add_option("--weights", s.weights, "Backbone weights file; random initialisation when absent");
}

void add_hyper_flags(CLI::App* app, Settings& s) {
  auto& h = s.hyper;
  app->add_option("--margin", h.margin, "Triplet margin")->capture_default_str();
  app->add_option("--lr", h.learning_rate, "Learning rate")->capture_default_str();
  app->add_option("--lr-decay-factor", h.lr_decay_factor, "Learning-rate decay factor")->capture_default_str();
  app->add_option("--lr-decay-every", h.lr_decay_every, "Minibatches between decays")->capture_default_str();
  app->add_option("--batch-size", h.batch_size, "Triplets per minibatch")->capture_default_str();
  app->add_option("--stage1-minibatches", h.stage1_minibatches, "Random-triplet minibatches")->capture_default_str();
  app->add_option("--query-sets", h.stage2_query_sets, "Stage-2 query sets")->capture_default_str();
  app->add_option("--repeats", h.stage2_repeats_per_query_set, "Mining passes per query set")->capture_default_str();
  app->add_option("--minibatches-per-subset", h.stage2_minibatches_per_subset, "Minibatches per mined subset")
      ->capture_default_str();
  app->add_option("--checkpoint-every", h.checkpoint_every, "Minibatches between checkpoints")->capture_default_str();
}

void add_common(CLI::App* app, Settings& s, std::string& config, std::string& log_level) {
  app->add_option("--config", config, "JSON config file (default: $PHISHMETRIC_CONFIG); flags override it");
  app->add_option("--seed", s.seed, "Random seed")->capture_default_str();
  app->add_option("--workers", s.workers, "Worker threads")->capture_default_str();
  app->add_option("--log-level", log_level, "debug, info, warn, error or quiet")->capture_default_str();
}

pm::LogLevel parse_level(const std::string& s) {
  if (s == "debug") return pm::LogLevel::kDebug;
  if (s == "info") return pm::LogLevel::kInfo;
  if (s == "warn") return pm::LogLevel::kWarn;
  if (s == "error") return pm::LogLevel::kError;
  if (s == "quiet") return pm::LogLevel::kQuiet;
  throw pm::Error(pm::errc::kInvalidArgument, "unknown log level " + s);
}

void print_error(const std::string& code, const std::string& message) {
  std::cerr << json{{"error", code}, {"message", message}}.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  Settings s;
  std::string config, log_level = "info";
  try {
    if (const auto path = config_path(argc, argv)) apply_config(*path, s);
  } catch (const pm::Error& e) {
    print_error(e.code(), e.what());
    return kExitUsage;
  }

  CLI::App app{"Visual-similarity phishing detection: triplet embeddings, trusted-list index, distance threshold.\n" +
               grid_help()};
  app.require_subcommand(1);
  add_common(&app, s, config, log_level);
  app.set_version_flag("--version", kVersion);

  auto* ingest = app.add_subcommand("ingest", "Validate a manifest, capture pages, or generate the synthetic corpus");
  ingest->add_option("--manifest", s.manifest, "Input manifest");
  ingest->add_option("--out", s.out, "Output manifest");
  ingest->add_option("--capture-list", s.capture_list, "Manifest of URLs to render; image paths name the outputs");
  ingest->add_option("--images-dir", s.images_dir, "Directory for captured images");
  ingest->add_option("--renderer", s.renderer, "Renderer command with {url} {width} {height} {out}");
  ingest->add_option("--capture-timeout", s.capture_timeout, "Seconds per page")->capture_default_str();
  ingest->add_option("--synthetic", s.synthetic_dir, "Write the synthetic desk corpus to this directory");
  ingest->add_option("--websites", s.desk.websites, "Synthetic: trusted websites")->capture_default_str();
  ingest->add_option("--trusted-per-site", s.desk.trusted_per_site, "Synthetic: trusted pages per website")
      ->capture_default_str();
  ingest->add_option("--phishing-per-site", s.desk.phishing_per_site, "Synthetic: phishing pages per website")
      ->capture_default_str();
  ingest->add_option("--benign", s.desk.benign_pages, "Synthetic: benign pages")->capture_default_str();
  ingest->add_option("--corpus-seed", s.desk.seed, "Synthetic: generator seed")->capture_default_str();

  auto* split = app.add_subcommand("split", "Assign records to train, validation and test");
  split->add_option("--manifest", s.manifest, "Manifest");
  split->add_option("--phishing-train-fraction", s.phishing_train_fraction, "Training share of phishing pages")
      ->capture_default_str();
  split->add_option("--validation-fraction", s.validation_fraction, "Validation share of held-out pages")
      ->capture_default_str();
  split->add_option("--out", s.out, "Split file");

  auto* dedup = app.add_subcommand("dedup", "Report near-duplicate screenshots");
  dedup->add_option("--manifest", s.manifest, "Manifest");
  dedup->add_option("--checkpoint", s.checkpoint, "Model whose embeddings are compared (default: backbone only)");
  dedup->add_option("--dedup-threshold", s.dedup_threshold,
                    "Distance below which pages are duplicates (default: 1st percentile across websites)");
  dedup->add_option("--out", s.out, "Report file");
  add_model_flags(dedup, s);

  auto* train = app.add_subcommand("train", "Train the triplet network");
  train->add_option("--stage", s.stage, "1, 2 or both")->capture_default_str();
  train->add_option("--manifest", s.manifest, "Manifest");
  train->add_option("--split", s.split, "Split file");
  train->add_option("--init-checkpoint", s.init_checkpoint, "Start from this checkpoint");
  train->add_option("--out-dir", s.out_dir, "Output directory");
  add_model_flags(train, s);
  add_hyper_flags(train, s);

  auto* index = app.add_subcommand("index", "Build, query, extend or calibrate the trusted-list index");
  index->require_subcommand(1);
  auto* ib = index->add_subcommand("build", "Embed the trusted list");
  ib->add_option("--checkpoint", s.checkpoint, "Model");
  ib->add_option("--manifest", s.manifest, "Manifest");
  ib->add_option("--split", s.split, "Split file");
  ib->add_option("--out", s.out, "Index file");
  auto* iq = index->add_subcommand("query", "Nearest websites for one image");
  iq->add_option("--checkpoint", s.checkpoint, "Model");
  iq->add_option("--index", s.index, "Index file");
  iq->add_option("--image", s.image, "Screenshot");
  iq->add_option("--k", s.k, "Websites to list")->capture_default_str();
  iq->add_option("--out", s.out, "Result file (also printed)");
  auto* ia = index->add_subcommand("add", "Append a website's trusted screenshots");
  ia->add_option("--checkpoint", s.checkpoint, "Model");
  ia->add_option("--index", s.index, "Index file");
  ia->add_option("--manifest", s.manifest, "Manifest listing the website");
  ia->add_option("--website", s.website, "website_id to add");
  ia->add_option("--out", s.out, "New index file");
  auto* it = index->add_subcommand("threshold", "Set the equal-error threshold from validation records");
  it->add_option("--checkpoint", s.checkpoint, "Model");
  it->add_option("--index", s.index, "Index file");
  it->add_option("--manifest", s.manifest, "Manifest");
  it->add_option("--split", s.split, "Split file with validation records");
  it->add_option("--out", s.out, "New index file");

  auto* predict = app.add_subcommand("predict", "Classify one screenshot");
  predict->add_option("--checkpoint", s.checkpoint, "Model");
  predict->add_option("--index", s.index, "Index file");
  predict->add_option("--image", s.image, "Screenshot");
  predict->add_option("--k", s.k, "Websites to list")->capture_default_str();
  predict->add_option("--out", s.out, "Result file (also printed)");

  auto* evaluate = app.add_subcommand("evaluate", "Evaluate on the test split");
  evaluate->add_option("--baseline", s.baseline, "none (the model), pretrained or hog")->capture_default_str();
  evaluate->add_option("--manifest", s.manifest, "Manifest");
  evaluate->add_option("--split", s.split, "Split file");
  evaluate->add_option("--checkpoint", s.checkpoint, "Model (baseline none)");
  evaluate->add_option("--index", s.index, "Index file (default: built from the split)");
  evaluate->add_option("--out-dir", s.out_dir, "Output directory");
  add_model_flags(evaluate, s);

  auto* robustness = app.add_subcommand("robustness", "Perturbation and adversarial evaluation");
  robustness->add_option("--manifest", s.manifest, "Manifest");
  robustness->add_option("--split", s.split, "Split file");
  robustness->add_option("--checkpoint", s.checkpoint, "Model");
  robustness->add_option("--index", s.index, "Index file (default: built from the split)");
  robustness->add_option("--grid", s.grid, "table3 or none")->capture_default_str();
  robustness->add_option("--perturb", s.perturbations, "Extra perturbation, e.g. blur:sigma=1.5");
  robustness->add_option("--adv", s.adv, "fgsm to run adversarial attacks");
  robustness->add_option("--epsilon", s.epsilons, "FGSM epsilon (repeatable; default: preset grid)");
  robustness->add_option("--sampling", s.sampling, "random, closest or iterative")->capture_default_str();
  robustness->add_option("--trials", s.trials, "Seeds per stochastic row")->capture_default_str();
  robustness->add_option("--finetune", s.finetune_minibatches, "Adversarial fine-tuning minibatches")
      ->capture_default_str();
  robustness->add_option("--eps-low", s.eps_low, "Fine-tuning epsilon lower bound")->capture_default_str();
  robustness->add_option("--eps-high", s.eps_high, "Fine-tuning epsilon upper bound")->capture_default_str();
  robustness->add_option("--out-dir", s.out_dir, "Output directory");
  add_hyper_flags(robustness, s);

  auto* project = app.add_subcommand("project", "2-D t-SNE projection of embeddings");
  project->add_option("--checkpoint", s.checkpoint, "Model");
  project->add_option("--manifest", s.manifest, "Manifest");
  project->add_option("--split", s.split, "Restrict to test records of this split");
  project->add_option("--perplexity", s.tsne.perplexity, "Perplexity")->capture_default_str();
  project->add_option("--iterations", s.tsne.iterations, "Iterations")->capture_default_str();
  project->add_option("--out", s.out, "Points file");

  for (auto* sub : {ingest, split, dedup, train, ib, iq, ia, it, predict, evaluate, robustness, project}) {
    add_common(sub, s, config, log_level);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kExitUsage;
  }

  try {
    pm::set_log_level(parse_level(log_level));
    std::string name;
    CLI::App* leaf = &app;
    while (!leaf->get_subcommands().empty()) {
      leaf = leaf->get_subcommands().front();
      name += (name.empty() ? "" : " ") + leaf->get_name();
    }
    if (s.workers < 1) throw pm::Error(pm::errc::kInvalidArgument, "--workers must be >= 1");
    model_config(s);  // validates the enum flags before any work
    const json prov = provenance(name, s, argc, argv);
    pm::log_event(pm::LogLevel::kInfo, "start", {{"command", name}, {"config_sha256", prov["config_sha256"]}});
    int status = kExitUsage;
    if (leaf == ingest) status = cmd_ingest(s, prov);
    if (leaf == split) status = cmd_split(s, prov);
    if (leaf == dedup) status = cmd_dedup(s, prov);
    if (leaf == train) status = cmd_train(s, prov);
    if (leaf == ib) status = cmd_index_build(s, prov);
    if (leaf == iq || leaf == predict) status = cmd_predict(s, prov);
    if (leaf == ia) status = cmd_index_add(s, prov);
    if (leaf == it) status = cmd_index_threshold(s, prov);
    if (leaf == evaluate) status = cmd_evaluate(s, prov);
    if (leaf == robustness) status = cmd_robustness(s, prov);
    if (leaf == project) status = cmd_project(s, prov);
    pm::log_event(pm::LogLevel::kInfo, "done", {{"command", name}, {"status", status}});
    return status;
  } catch (const pm::Error& e) {
    print_error(e.code(), e.what());
  } catch (const std::exception& e) {
    print_error("internal", e.what());
  }
  return kExitFailure;
}
