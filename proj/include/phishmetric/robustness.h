#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "phishmetric/corpus.h"
#include "phishmetric/embedder.h"
#include "phishmetric/evaluator.h"
#include "phishmetric/index.h"
#include "phishmetric/trainer.h"

namespace phishmetric {

// ------------------------------------------------------------ perturbations

enum class PerturbationKind { kIdentity, kBlur, kDarken, kBrighten, kGaussianNoise, kSaltPepper, kOcclusion, kShift };

// Half-open pixel rectangle [x0, x1) x [y0, y1).
struct Box {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  friend bool operator==(const Box&, const Box&) = default;
};

struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::kIdentity;
  double sigma = 0;     // blur
  double gamma = 1;     // darken (>= 1) / brighten (<= 1)
  double variance = 0;  // gaussian_noise
  double fraction = 0;  // salt_pepper, share of pixels
  int quadrant = 0;     // occlusion, 1-4 row-major; 0 means use `box`
  std::optional<Box> box;
  double fill = 1.0;  // occlusion and shift
  int dx = 0, dy = 0;

  bool stochastic() const;
  void validate() const;
  std::string name() const;
  // "blur:sigma=1.5", "darken:gamma=1.3", "gaussian_noise:var=0.01",
  // "salt_pepper:fraction=0.05", "occlusion:quadrant=4", "occlusion:x0=0,y0=0,x1=50,y1=40",
  // "shift:dx=-30,dy=-30", optional ",fill=v" on the last two, "identity".
  static PerturbationSpec parse(const std::string& text);

  friend bool operator==(const PerturbationSpec&, const PerturbationSpec&) = default;
};

// Applies the perturbation to a [0,1] 3xHxW image; the result is clipped
// to [0,1]. Identity parameters return the input unchanged.
ImageTensor perturb(const ImageTensor& image, const PerturbationSpec& spec, std::mt19937_64& rng);

// The two parameter rows of the hand-crafted perturbation grid.
std::vector<PerturbationSpec> table3_grid(int row);  // row 1 or 2

// ------------------------------------------------------------ FGSM

template <typename T>
struct InputGradient {
  double loss = 0;
  Tensor<T> grad;  // d loss / d image, [0,1] image space
};

// Triplet loss gradient w.r.t. the anchor image with fixed positive and
// negative embeddings.
template <typename T>
InputGradient<T> triplet_input_gradient(const EmbeddingNet<T>& net, const Tensor<T>& anchor,
                                        std::span<const T> positive, std::span<const T> negative, double margin);

// x + eps * sign(grad), clipped to [0,1], with |result - x| <= eps exact in
// double arithmetic. sign(0) = 0.
ImageTensor fgsm_step(const ImageTensor& x, const Tensor<float>& grad, double epsilon);

struct FgsmResult {
  ImageTensor image;
  double loss = 0;
  bool zero_gradient = false;  // loss was 0 at x: image returned unchanged
};

FgsmResult fgsm_from_embeddings(const ModelState& model, const ImageTensor& anchor, std::span<const float> positive,
                                std::span<const float> negative, double epsilon, double margin = 2.2);
FgsmResult fgsm_triplet(const ModelState& model, const ImageTensor& anchor, const ImageTensor& positive,
                        const ImageTensor& negative, double epsilon, double margin = 2.2);

// Index row of `target_website` closest to `embedding` (ties: lowest
// record_id), and a uniformly drawn row of any other website.
std::size_t closest_row_of(const EmbeddingIndex& index, std::span<const float> embedding,
                           const std::string& target_website);
std::size_t random_row_not_of(const EmbeddingIndex& index, const std::string& website, std::mt19937_64& rng);
std::size_t random_row_of(const EmbeddingIndex& index, const std::string& website, std::mt19937_64& rng);

// Positive: the closest same-target row of the index. Negative: a random
// row of another website. Index rows stand in for the screenshots'
// embeddings, so the index must come from this model.
FgsmResult fgsm_closest(const ModelState& model, const EmbeddingIndex& index, const ImageTensor& anchor,
                        const std::string& target_website, double epsilon, std::mt19937_64& rng,
                        double margin = 2.2);
// Repeats fgsm_closest with step_epsilon, re-selecting the positive each step.
FgsmResult fgsm_iterative(const ModelState& model, const EmbeddingIndex& index, const ImageTensor& anchor,
                          const std::string& target_website, double step_epsilon, int steps, std::mt19937_64& rng,
                          double margin = 2.2);

enum class AdversarialSampling { kRandomPositive, kClosestPoint, kIterative };
std::string to_string(AdversarialSampling s);

struct AdversarialSpec {
  double epsilon = 0.005;
  AdversarialSampling sampling = AdversarialSampling::kRandomPositive;
  int steps = 1;
  double step_epsilon = 0.002;

  void validate() const;
  std::string name() const;
  // "fgsm:eps=0.005,sampling=random", "fgsm:sampling=iterative,step=0.002,steps=5".
  static AdversarialSpec parse(const std::string& text);
};

// The four attack rows of the adversarial table.
std::vector<AdversarialSpec> table4_grid();

// Adversarial fine-tuning: random triplets, and in every minibatch the
// first half of the anchors are replaced by FGSM outputs with
// eps ~ U[eps_low, eps_high]. Optimizer state and step counter continue.
TrainResult adversarial_finetune(ModelState model, const TrainingPool& pool, const ImageSource& images,
                                 const TrainHyper& hyper, double eps_low, double eps_high, std::int64_t minibatches,
                                 std::mt19937_64& rng, const TrainObserver& observer = {});

// ------------------------------------------------------------ reports

struct ShiftStats {
  double mean = 0;
  double sd = 0;  // population
  std::size_t count = 0;
};
ShiftStats embedding_shift_report(const ModelState& model,
                                  const std::vector<std::pair<ImageTensor, ImageTensor>>& pairs);

// (orig - pert) / orig; 0 when orig is 0.
double relative_drop(double original, double perturbed);

struct RobustnessRow {
  std::string name;
  int trials = 1;
  double top1 = 0;
  double auc = 0;
  double top1_drop = 0;
  double auc_drop = 0;
};

struct RobustnessReport {
  double original_top1 = 0;
  double original_auc = 0;
  std::vector<RobustnessRow> rows;

  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

// Perturbs every phishing test image (benign pages stay clean) and
// re-evaluates. Stochastic specs are averaged over `trials` seeds.
RobustnessReport robustness_report(const ModelState& model, const EmbeddingIndex& index,
                                   const std::vector<Screenshot>& test_records, const ImageSource& images,
                                   const std::vector<PerturbationSpec>& specs, std::uint64_t seed, int trials = 5,
                                   int workers = 1);

// Same protocol for FGSM attacks; every attack spec is averaged over
// `trials` sampling seeds.
RobustnessReport adversarial_report(const ModelState& model, const EmbeddingIndex& index,
                                    const std::vector<Screenshot>& test_records, const ImageSource& images,
                                    const std::vector<AdversarialSpec>& specs, std::uint64_t seed, int trials = 5,
                                    int workers = 1, double margin = 2.2);

}  // namespace phishmetric
