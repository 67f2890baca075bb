#include "phishmetric/embedder.h"

#include <cmath>
#include <cstring>

#include "phishmetric/error.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

constexpr char kCheckpointMagic[8] = {'P', 'M', 'C', 'K', 'P', 'T', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;
constexpr int kAddedChannels = 512;
constexpr int kFcWidth = 1024;

const std::vector<int> kVggPlan = {64, 64, 0, 128, 128, 0, 256, 256, 256, 0, 512, 512, 512, 0, 512, 512, 512, 0};

int scaled(int channels, int divisor) { return std::max(1, channels / std::max(1, divisor)); }

template <typename T>
void build_vgg16(nn::Network<T>& net, const ModelConfig& config, std::mt19937_64& rng) {
  int block = 1, conv = 1;
  for (int width : kVggPlan) {
    const auto& in = net.output_dims();
    const std::string prefix = "backbone.block" + std::to_string(block);
    if (width == 0) {
      net.append(nn::make_max_pool<T>(prefix + "_pool", in, 2, 2, 0));
      ++block;
      conv = 1;
      continue;
    }
    const std::string name = prefix + "_conv" + std::to_string(conv++);
    net.append(nn::make_conv2d<T>(name, in, {scaled(width, config.width_divisor), 3, 1, 1, true}, net.params(), rng));
    net.append(nn::make_relu<T>(name + "_relu", net.output_dims()));
  }
}

template <typename T>
void build_resnet50(nn::Network<T>& net, const ModelConfig& config, std::mt19937_64& rng) {
  const int div = config.width_divisor;
  net.append(nn::make_conv2d<T>("backbone.conv1", net.output_dims(), {scaled(64, div), 7, 2, 3, false}, net.params(), rng));
  net.append(nn::make_channel_affine<T>("backbone.bn1", net.output_dims(), net.params()));
  net.append(nn::make_relu<T>("backbone.relu", net.output_dims()));
  net.append(nn::make_max_pool<T>("backbone.maxpool", net.output_dims(), 3, 2, 1));
  const int widths[4] = {64, 128, 256, 512};
  const int blocks[4] = {3, 4, 6, 3};
  for (int s = 0; s < 4; ++s) {
    for (int b = 0; b < blocks[s]; ++b) {
      const int stride = (b == 0 && s > 0) ? 2 : 1;
      const std::string name = "backbone.layer" + std::to_string(s + 1) + "." + std::to_string(b);
      net.append(nn::make_bottleneck<T>(name, net.output_dims(), scaled(widths[s], div), stride, net.params(), rng));
    }
  }
}

int conv_out(int size, int k, int s, int p) { return (size + 2 * p - k) / s + 1; }

void load_pretrained(nn::ParamStore<float>& params, const ModelConfig& config) {
  if (config.pretrained_weights.empty() || !std::filesystem::exists(config.pretrained_weights)) {
    throw Error(errc::kMissingWeights,
                "pretrained_init requires a weights file; not found: '" + config.pretrained_weights + "'");
  }
  const nn::ParamStore<float> file = load_weights(config.pretrained_weights);
  std::size_t loaded = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.names[i].rfind("backbone.", 0) != 0) continue;
    const std::size_t j = file.find(params.names[i]);
    if (j == file.size()) {
      throw Error(errc::kMissingWeights, "weights file lacks " + params.names[i]);
    }
    if (file.tensors[j].dims() != params.tensors[i].dims()) {
      throw Error(errc::kDimension, "weights for " + params.names[i] + " have shape " +
                                        dims_to_string(file.tensors[j].dims()) + ", expected " +
                                        dims_to_string(params.tensors[i].dims()));
    }
    params.tensors[i] = file.tensors[j];
    ++loaded;
  }
  log_event(LogLevel::kDebug, "pretrained_loaded", {{"tensors", loaded}, {"path", config.pretrained_weights}});
}

nlohmann::json tensor_table(const nn::ParamStore<float>& params) {
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    table.push_back({{"name", params.names[i]}, {"dims", params.tensors[i].dims()}});
  }
  return table;
}

void write_tensors(ByteWriter& w, const nn::ParamStore<float>& params) {
  for (const auto& t : params.tensors) w.floats(t.values());
}

nn::ParamStore<float> read_tensors(ByteReader& r, const nlohmann::json& table) {
  nn::ParamStore<float> out;
  for (const auto& entry : table) {
    Tensor<float> t(entry.at("dims").get<std::vector<int>>());
    r.floats(t.values());
    out.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return out;
}

struct CheckpointFile {
  nlohmann::json header;
  nn::ParamStore<float> params;
  std::optional<AdamState> adam;
};

std::vector<std::uint8_t> encode_checkpoint(const nlohmann::json& header, const nn::ParamStore<float>& params,
                                            const AdamState* adam) {
  ByteWriter w;
  w.raw(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(kCheckpointMagic), 8));
  w.u32(kCheckpointVersion);
  w.str(header.dump());
  write_tensors(w, params);
  if (adam) {
    write_tensors(w, adam->m);
    write_tensors(w, adam->v);
  }
  const std::uint32_t crc = crc32_of(w.bytes());
  w.u32(crc);
  return std::move(w.bytes());
}

CheckpointFile decode_checkpoint(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = read_file_bytes(path);
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0) {
    throw Error(errc::kParse, "not a checkpoint file: " + path.string());
  }
  const std::span<const std::uint8_t> body(bytes.data(), bytes.size() - 4);
  ByteReader tail(std::span<const std::uint8_t>(bytes).subspan(bytes.size() - 4));
  if (crc32_of(body) != tail.u32()) throw Error(errc::kChecksum, "checkpoint checksum mismatch: " + path.string());

  ByteReader r(body);
  r.raw(8);
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw Error(errc::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  CheckpointFile file;
  file.header = nlohmann::json::parse(r.str());
  file.params = read_tensors(r, file.header.at("tensors"));
  if (file.header.value("has_adam", false)) {
    AdamState adam;
    adam.m = read_tensors(r, file.header.at("tensors"));
    adam.v = read_tensors(r, file.header.at("tensors"));
    adam.t = file.header.at("adam_t").get<std::int64_t>();
    file.adam = std::move(adam);
  }
  if (r.remaining() != 0) throw Error(errc::kParse, "trailing bytes in checkpoint " + path.string());
  return file;
}

}  // namespace

// ------------------------------------------------------------ config

std::string to_string(Backbone v) { return v == Backbone::kVgg16 ? "vgg16" : "resnet50"; }

std::string to_string(AddedLayer v) {
  switch (v) {
    case AddedLayer::kConv5x5x512: return "conv5x5_512";
    case AddedLayer::kConv3x3x512: return "conv3x3_512";
    case AddedLayer::kNone: break;
  }
  return "none";
}

std::string to_string(Head v) {
  switch (v) {
    case Head::kGlobalMaxPool: return "global_max_pool";
    case Head::kGlobalAvgPool: return "global_avg_pool";
    case Head::kFullyConnected1024: return "fully_connected_1024";
    case Head::kFlatten: break;
  }
  return "flatten";
}

Backbone parse_backbone(const std::string& s) {
  if (s == "vgg16" || s == "vgg16-style") return Backbone::kVgg16;
  if (s == "resnet50" || s == "resnet50-style") return Backbone::kResnet50;
  throw Error(errc::kInvalidArgument, "unknown backbone '" + s + "'");
}

AddedLayer parse_added_layer(const std::string& s) {
  if (s == "conv5x5_512") return AddedLayer::kConv5x5x512;
  if (s == "conv3x3_512") return AddedLayer::kConv3x3x512;
  if (s == "none") return AddedLayer::kNone;
  throw Error(errc::kInvalidArgument, "unknown added layer '" + s + "'");
}

Head parse_head(const std::string& s) {
  if (s == "global_max_pool" || s == "gmp") return Head::kGlobalMaxPool;
  if (s == "global_avg_pool" || s == "gap") return Head::kGlobalAvgPool;
  if (s == "fully_connected_1024" || s == "fc1024") return Head::kFullyConnected1024;
  if (s == "flatten") return Head::kFlatten;
  throw Error(errc::kInvalidArgument, "unknown head '" + s + "'");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"backbone", to_string(c.backbone)},
          {"pretrained_init", c.pretrained_init},
          {"added_layer", to_string(c.added_layer)},
          {"head", to_string(c.head)},
          {"network", c.network == NetworkType::kTriplet ? "triplet" : "siamese"},
          {"input_size", c.input_size},
          {"width_divisor", c.width_divisor},
          {"pretrained_weights", c.pretrained_weights}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone = parse_backbone(j.value("backbone", "vgg16"));
  c.pretrained_init = j.value("pretrained_init", true);
  c.added_layer = parse_added_layer(j.value("added_layer", "conv5x5_512"));
  c.head = parse_head(j.value("head", "global_max_pool"));
  const std::string network = j.value("network", "triplet");
  if (network != "triplet" && network != "siamese") throw Error(errc::kInvalidArgument, "unknown network " + network);
  c.network = network == "triplet" ? NetworkType::kTriplet : NetworkType::kSiamese;
  c.input_size = j.value("input_size", kScreenshotSize);
  c.width_divisor = j.value("width_divisor", 1);
  c.pretrained_weights = j.value("pretrained_weights", std::string());
  return c;
}

std::vector<int> backbone_output_dims(const ModelConfig& config) {
  int s = config.input_size;
  if (config.backbone == Backbone::kVgg16) {
    for (int i = 0; i < 5; ++i) s /= 2;
    return {scaled(512, config.width_divisor), s, s};
  }
  s = conv_out(s, 7, 2, 3);
  s = conv_out(s, 3, 2, 1);
  for (int i = 0; i < 3; ++i) s = conv_out(s, 3, 2, 1);
  return {scaled(512, config.width_divisor) * 4, s, s};
}

int embedding_dim(const ModelConfig& config) {
  std::vector<int> d = backbone_output_dims(config);
  if (config.added_layer != AddedLayer::kNone) d[0] = kAddedChannels;
  switch (config.head) {
    case Head::kGlobalMaxPool:
    case Head::kGlobalAvgPool: return d[0];
    case Head::kFullyConnected1024: return kFcWidth;
    case Head::kFlatten: break;
  }
  return d[0] * d[1] * d[2];
}

// ------------------------------------------------------------ preprocessing

Preprocessor::Preprocessor(int input_size) : Preprocessor(kScreenshotSize, input_size) {}

Preprocessor::Preprocessor(int source_size, int input_size)
    : resampler_(source_size, source_size, input_size, input_size) {}

template <typename T>
Tensor<T> Preprocessor::apply(const Tensor<T>& image) const {
  const int n = source_size();
  if (image.rank() != 3 || image.channels() != 3 || image.height() != n || image.width() != n) {
    throw Error(errc::kDimension, "preprocess expects a 3x" + std::to_string(n) + "x" + std::to_string(n) +
                                      " image, got " + dims_to_string(image.dims()));
  }
  Tensor<T> out = resampler_.apply(image);
  const std::size_t plane = static_cast<std::size_t>(out.height()) * out.width();
  for (int c = 0; c < 3; ++c) {
    const T mean = static_cast<T>(kMean[static_cast<std::size_t>(c)]);
    const T stdev = static_cast<T>(kStd[static_cast<std::size_t>(c)]);
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = (out[c * plane + i] - mean) / stdev;
  }
  return out;
}

template <typename T>
Tensor<T> Preprocessor::adjoint(const Tensor<T>& grad_input) const {
  Tensor<T> g = grad_input;
  const std::size_t plane = static_cast<std::size_t>(g.height()) * g.width();
  for (int c = 0; c < 3; ++c) {
    const T stdev = static_cast<T>(kStd[static_cast<std::size_t>(c)]);
    for (std::size_t i = 0; i < plane; ++i) g[c * plane + i] /= stdev;
  }
  return resampler_.adjoint(g);
}

template Tensor<float> Preprocessor::apply(const Tensor<float>&) const;
template Tensor<double> Preprocessor::apply(const Tensor<double>&) const;
template Tensor<float> Preprocessor::adjoint(const Tensor<float>&) const;
template Tensor<double> Preprocessor::adjoint(const Tensor<double>&) const;

ImageTensor preprocess(const ImageTensor& image, int input_size) { return Preprocessor(input_size).apply(image); }

// ------------------------------------------------------------ network

template <typename T>
std::vector<T> EmbeddingNet<T>::embed(const Tensor<T>& image) const {
  const Tensor<T> out = network.forward(preprocessor.apply(image), nullptr, true);
  return {out.values().begin(), out.values().end()};
}

template <typename T>
std::vector<T> EmbeddingNet<T>::embed_recorded(const Tensor<T>& image, nn::Tape<T>& tape) const {
  const Tensor<T> out = network.forward(preprocessor.apply(image), &tape, true);
  return {out.values().begin(), out.values().end()};
}

template <typename T>
Tensor<T> EmbeddingNet<T>::backward(std::span<const T> grad_embedding, nn::Tape<T>& tape, nn::ParamStore<T>* grads,
                                    bool want_input_grad) const {
  Tensor<T> g(network.output_dims());
  if (g.size() != grad_embedding.size()) throw Error(errc::kDimension, "embedding gradient has wrong length");
  std::copy(grad_embedding.begin(), grad_embedding.end(), g.values().begin());
  Tensor<T> gin = network.backward(g, tape, grads);
  if (!want_input_grad) return {};
  return preprocessor.adjoint(gin);
}

template struct EmbeddingNet<float>;
template struct EmbeddingNet<double>;

template <typename T>
EmbeddingNet<T> build_embedding_net(const ModelConfig& config, std::uint64_t rng_seed) {
  if (config.network == NetworkType::kSiamese) {
    throw Error(errc::kUnsupported, "the siamese network variant is not implemented");
  }
  if (config.input_size < 32) throw Error(errc::kUnsupported, "input_size must be at least 32");
  if (config.width_divisor < 1) throw Error(errc::kUnsupported, "width_divisor must be >= 1");
  std::mt19937_64 rng(rng_seed);
  EmbeddingNet<T> net{Preprocessor(config.input_size), nn::Network<T>({3, config.input_size, config.input_size})};
  auto& n = net.network;
  if (config.backbone == Backbone::kVgg16) {
    build_vgg16(n, config, rng);
  } else {
    build_resnet50(n, config, rng);
  }
  if (config.added_layer != AddedLayer::kNone) {
    const int k = config.added_layer == AddedLayer::kConv5x5x512 ? 5 : 3;
    n.append(nn::make_conv2d<T>("added_conv", n.output_dims(), {kAddedChannels, k, 1, k / 2, true}, n.params(), rng));
    n.append(nn::make_relu<T>("added_relu", n.output_dims()));
  }
  switch (config.head) {
    case Head::kGlobalMaxPool: n.append(nn::make_global_max_pool<T>("head_gmp", n.output_dims())); break;
    case Head::kGlobalAvgPool: n.append(nn::make_global_avg_pool<T>("head_gap", n.output_dims())); break;
    case Head::kFullyConnected1024:
      n.append(nn::make_flatten<T>("head_flatten", n.output_dims()));
      n.append(nn::make_linear<T>("head_fc", n.output_dims(), kFcWidth, n.params(), rng));
      break;
    case Head::kFlatten: n.append(nn::make_flatten<T>("head_flatten", n.output_dims())); break;
  }
  return net;
}

template EmbeddingNet<float> build_embedding_net<float>(const ModelConfig&, std::uint64_t);
template EmbeddingNet<double> build_embedding_net<double>(const ModelConfig&, std::uint64_t);

ModelState build_model(const ModelConfig& config, std::uint64_t rng_seed) {
  ModelState model{config, build_embedding_net<float>(config, rng_seed), {}};
  if (config.pretrained_init) load_pretrained(model.net.network.params(), config);
  return model;
}

EmbeddingVector embed(const ModelState& model, const ImageTensor& image) { return model.net.embed(image); }

std::vector<EmbeddingVector> embed_batch(const ModelState& model, const std::vector<ImageTensor>& images,
                                         int workers) {
  std::vector<EmbeddingVector> out(images.size());
  parallel_for(images.size(), workers, [&](std::size_t i) { out[i] = model.net.embed(images[i]); });
  return out;
}

std::string model_fingerprint(const ModelState& model) {
  ByteWriter w;
  w.str(to_json(model.config).dump());
  for (std::size_t i = 0; i < model.net.network.params().size(); ++i) {
    w.str(model.net.network.params().names[i]);
    w.floats(model.net.network.params().tensors[i].values());
  }
  return sha256_hex(w.bytes());
}

// ------------------------------------------------------------ persistence

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
  const bool has_adam = model.meta.adam.m.size() == model.net.network.params().size() && model.meta.adam.t > 0;
  nlohmann::json header = {{"kind", "checkpoint"},
                           {"config", to_json(model.config)},
                           {"step", model.meta.step},
                           {"has_adam", has_adam},
                           {"adam_t", model.meta.adam.t},
                           {"tensors", tensor_table(model.net.network.params())}};
  write_file_atomic(path, encode_checkpoint(header, model.net.network.params(), has_adam ? &model.meta.adam : nullptr));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  CheckpointFile file = decode_checkpoint(path);
  if (file.header.value("kind", "") != "checkpoint") throw Error(errc::kParse, path.string() + " holds weights only");
  ModelConfig config = model_config_from_json(file.header.at("config"));
  config.pretrained_init = file.header.at("config").value("pretrained_init", true);
  ModelState model{config, build_embedding_net<float>(config, 0), {}};
  auto& params = model.net.network.params();
  if (params.names != file.params.names) throw Error(errc::kParse, "checkpoint tensors do not match its config");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params.tensors[i].dims() != file.params.tensors[i].dims()) {
      throw Error(errc::kParse, "checkpoint tensor " + params.names[i] + " has the wrong shape");
    }
  }
  params = std::move(file.params);
  model.meta.step = file.header.at("step").get<std::int64_t>();
  if (file.adam) model.meta.adam = std::move(*file.adam);
  return model;
}

void save_weights(const nn::ParamStore<float>& params, const ModelConfig& config, const std::filesystem::path& path) {
  nlohmann::json header = {{"kind", "weights"},
                           {"config", to_json(config)},
                           {"step", 0},
                           {"has_adam", false},
                           {"adam_t", 0},
                           {"tensors", tensor_table(params)}};
  write_file_atomic(path, encode_checkpoint(header, params, nullptr));
}

nn::ParamStore<float> load_weights(const std::filesystem::path& path) { return decode_checkpoint(path).params; }

}  // namespace phishmetric
