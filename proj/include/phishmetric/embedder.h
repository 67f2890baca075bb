#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "phishmetric/image.h"
#include "phishmetric/nn/network.h"
#include "phishmetric/optimizer.h"

namespace phishmetric {

enum class Backbone { kVgg16, kResnet50 };
enum class AddedLayer { kConv5x5x512, kConv3x3x512, kNone };
enum class Head { kGlobalMaxPool, kGlobalAvgPool, kFullyConnected1024, kFlatten };
// kSiamese is accepted by the parser so ablation configs round-trip, but
// build_model rejects it.
enum class NetworkType { kTriplet, kSiamese };

struct ModelConfig {
  Backbone backbone = Backbone::kVgg16;
  bool pretrained_init = true;
  AddedLayer added_layer = AddedLayer::kConv5x5x512;
  Head head = Head::kGlobalMaxPool;
  NetworkType network = NetworkType::kTriplet;
  // Side length of the square image the backbone sees. Screenshots are
  // always loaded at 224; smaller values resample inside preprocessing.
  int input_size = kScreenshotSize;
  // Divides every backbone channel count (1 = the standard widths).
  int width_divisor = 1;
  // Backbone weights file, required when pretrained_init is set.
  std::string pretrained_weights;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

// Output length of the network described by `config`, from shape arithmetic.
int embedding_dim(const ModelConfig& config);
// Spatial size and channel count of the truncated backbone's feature map.
std::vector<int> backbone_output_dims(const ModelConfig& config);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::string to_string(Backbone v);
std::string to_string(AddedLayer v);
std::string to_string(Head v);
Backbone parse_backbone(const std::string& s);
AddedLayer parse_added_layer(const std::string& s);
Head parse_head(const std::string& s);

using EmbeddingVector = std::vector<float>;

// Resampling to the network resolution followed by per-channel
// (x - mean) / std with the ImageNet statistics. Not idempotent: apply once.
class Preprocessor {
 public:
  Preprocessor() : Preprocessor(kScreenshotSize) {}
  explicit Preprocessor(int input_size);
  // Square source images of another size; used by small test harnesses.
  Preprocessor(int source_size, int input_size);

  static constexpr std::array<double, 3> kMean = {0.485, 0.456, 0.406};
  static constexpr std::array<double, 3> kStd = {0.229, 0.224, 0.225};

  int input_size() const { return resampler_.out_height(); }
  int source_size() const { return resampler_.in_height(); }

  template <typename T>
  Tensor<T> apply(const Tensor<T>& image) const;
  // Pulls a gradient w.r.t. the network input back to the [0,1] image.
  template <typename T>
  Tensor<T> adjoint(const Tensor<T>& grad_input) const;

 private:
  BilinearResampler resampler_;
};

// Preprocessing plus network: the full map from a 224x224 [0,1] image to
// its embedding, with the adjoint passes needed by training and FGSM.
template <typename T>
struct EmbeddingNet {
  Preprocessor preprocessor;
  nn::Network<T> network;

  std::vector<T> embed(const Tensor<T>& image) const;
  // Records activations on `tape` for a later backward().
  std::vector<T> embed_recorded(const Tensor<T>& image, nn::Tape<T>& tape) const;
  // Accumulates parameter gradients (when grads != nullptr) and returns the
  // gradient w.r.t. the [0,1] input image.
  Tensor<T> backward(std::span<const T> grad_embedding, nn::Tape<T>& tape, nn::ParamStore<T>* grads,
                     bool want_input_grad) const;
};

struct TrainingMeta {
  std::int64_t step = 0;  // minibatches applied so far
  AdamState adam;

  friend bool operator==(const TrainingMeta&, const TrainingMeta&) = default;
};

struct ModelState {
  ModelConfig config;
  EmbeddingNet<float> net;
  TrainingMeta meta;

  int embedding_dim() const { return static_cast<int>(net.network.output_size()); }
};

// Backbone weights come from config.pretrained_weights when pretrained_init
// is set; everything else is He-initialised from rng_seed.
ModelState build_model(const ModelConfig& config, std::uint64_t rng_seed);
// Same architecture for any scalar type; used by the gradient harnesses.
template <typename T>
EmbeddingNet<T> build_embedding_net(const ModelConfig& config, std::uint64_t rng_seed);

ImageTensor preprocess(const ImageTensor& image, int input_size = kScreenshotSize);

EmbeddingVector embed(const ModelState& model, const ImageTensor& image);
std::vector<EmbeddingVector> embed_batch(const ModelState& model, const std::vector<ImageTensor>& images,
                                         int workers = 1);

// SHA-256 over the config and every parameter byte.
std::string model_fingerprint(const ModelState& model);

void save_checkpoint(const ModelState& model, const std::filesystem::path& path);
ModelState load_checkpoint(const std::filesystem::path& path);
// Writes only the network parameters (a weights file usable as
// pretrained_weights for another config with the same backbone).
void save_weights(const nn::ParamStore<float>& params, const ModelConfig& config, const std::filesystem::path& path);
nn::ParamStore<float> load_weights(const std::filesystem::path& path);

}  // namespace phishmetric
