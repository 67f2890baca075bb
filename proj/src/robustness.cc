#include "phishmetric/robustness.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "phishmetric/distance.h"
#include "phishmetric/error.h"
#include "phishmetric/log.h"
#include "phishmetric/util.h"

namespace phishmetric {
namespace {

float clip01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

bool finite_in(double v, double lo, double hi) { return std::isfinite(v) && v >= lo && v <= hi; }

// Replicate-border separable Gaussian with radius round(3 sigma).
ImageTensor gaussian_blur(const ImageTensor& image, double sigma) {
  const int r = static_cast<int>(std::lround(3.0 * sigma));
  if (r == 0) return image;
  std::vector<double> w(static_cast<std::size_t>(2 * r + 1));
  for (int k = -r; k <= r; ++k) w[static_cast<std::size_t>(k + r)] = std::exp(-(k * k) / (2.0 * sigma * sigma));
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& v : w) v /= total;

  const int C = image.channels(), H = image.height(), W = image.width();
  std::vector<double> tmp(static_cast<std::size_t>(C) * H * W);
  ImageTensor out(image.dims());
  for (int c = 0; c < C; ++c) {
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int k = -r; k <= r; ++k) acc += w[static_cast<std::size_t>(k + r)] * image.at(c, y, std::clamp(x + k, 0, W - 1));
        tmp[(static_cast<std::size_t>(c) * H + y) * W + x] = acc;
      }
    }
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        double acc = 0;
        for (int k = -r; k <= r; ++k) {
          acc += w[static_cast<std::size_t>(k + r)] * tmp[(static_cast<std::size_t>(c) * H + std::clamp(y + k, 0, H - 1)) * W + x];
        }
        out.at(c, y, x) = clip01(acc);
      }
    }
  }
  return out;
}

Box quadrant_box(int quadrant, int h, int w) {
  const int hh = h / 2, hw = w / 2;
  switch (quadrant) {
    case 1: return {0, 0, hw, hh};
    case 2: return {hw, 0, w, hh};
    case 3: return {0, hh, hw, h};
    default: return {hw, hh, w, h};
  }
}

std::string format_number(double v) {
  std::ostringstream s;
  s << v;
  return s.str();
}

// Per-record stream, independent of evaluation order and worker count.
std::uint64_t record_seed(std::uint64_t seed, int trial, const std::string& record_id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(trial), crc32_of(record_id)};
  std::array<std::uint64_t, 1> out{};
  seq.generate(reinterpret_cast<std::uint32_t*>(out.data()), reinterpret_cast<std::uint32_t*>(out.data() + 1));
  return out[0];
}

class TransformedSource final : public ImageSource {
 public:
  using Fn = std::function<ImageTensor(const Screenshot&, ImageTensor)>;
  TransformedSource(const ImageSource& base, Fn fn) : base_(base), fn_(std::move(fn)) {}
  ImageTensor load(const Screenshot& record) const override { return fn_(record, base_.load(record)); }

 private:
  const ImageSource& base_;
  Fn fn_;
};

void check_index_model(const EmbeddingIndex& index, const ModelState& model) {
  if (model_fingerprint(model) != index.fingerprint()) {
    throw Error(errc::kFingerprint, "index was built with a different model");
  }
}

void check_epsilon(double epsilon) {
  if (!finite_in(epsilon, 0.0, std::numeric_limits<double>::max())) {
    throw Error(errc::kInvalidArgument, "epsilon must be finite and >= 0");
  }
}

}  // namespace

// ------------------------------------------------------------ perturbations

bool PerturbationSpec::stochastic() const {
  return (kind == PerturbationKind::kGaussianNoise && variance > 0) ||
         (kind == PerturbationKind::kSaltPepper && fraction > 0);
}

void PerturbationSpec::validate() const {
  auto fail = [](const std::string& msg) { throw Error(errc::kInvalidArgument, msg); };
  switch (kind) {
    case PerturbationKind::kIdentity: break;
    case PerturbationKind::kBlur:
      if (!finite_in(sigma, 0, 1e3)) fail("blur sigma must be in [0, 1000]");
      break;
    case PerturbationKind::kDarken:
      if (!finite_in(gamma, 1, 1e3)) fail("darken gamma must be >= 1");
      break;
    case PerturbationKind::kBrighten:
      if (!(gamma > 0) || !finite_in(gamma, 0, 1)) fail("brighten gamma must be in (0, 1]");
      break;
    case PerturbationKind::kGaussianNoise:
      if (!finite_in(variance, 0, 1e3)) fail("noise variance must be >= 0");
      break;
    case PerturbationKind::kSaltPepper:
      if (!finite_in(fraction, 0, 1)) fail("salt-and-pepper fraction must be in [0, 1]");
      break;
    case PerturbationKind::kOcclusion:
      if (quadrant < 0 || quadrant > 4) fail("occlusion quadrant must be 1-4");
      if (quadrant == 0 && !box) fail("occlusion needs a quadrant or a box");
      if (box && (box->x0 < 0 || box->y0 < 0 || box->x1 < box->x0 || box->y1 < box->y0)) fail("malformed occlusion box");
      if (!finite_in(fill, 0, 1)) fail("fill must be in [0, 1]");
      break;
    case PerturbationKind::kShift:
      if (!finite_in(fill, 0, 1)) fail("fill must be in [0, 1]");
      break;
  }
}

std::string PerturbationSpec::name() const {
  switch (kind) {
    case PerturbationKind::kIdentity: return "identity";
    case PerturbationKind::kBlur: return "blur:sigma=" + format_number(sigma);
    case PerturbationKind::kDarken: return "darken:gamma=" + format_number(gamma);
    case PerturbationKind::kBrighten: return "brighten:gamma=" + format_number(gamma);
    case PerturbationKind::kGaussianNoise: return "gaussian_noise:var=" + format_number(variance);
    case PerturbationKind::kSaltPepper: return "salt_pepper:fraction=" + format_number(fraction);
    case PerturbationKind::kOcclusion:
      if (quadrant > 0) return "occlusion:quadrant=" + std::to_string(quadrant) + ",fill=" + format_number(fill);
      return "occlusion:x0=" + std::to_string(box->x0) + ",y0=" + std::to_string(box->y0) +
             ",x1=" + std::to_string(box->x1) + ",y1=" + std::to_string(box->y1) + ",fill=" + format_number(fill);
    case PerturbationKind::kShift:
      return "shift:dx=" + std::to_string(dx) + ",dy=" + std::to_string(dy) + ",fill=" + format_number(fill);
  }
  return "identity";
}

PerturbationSpec PerturbationSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  const std::string kind = t.substr(0, colon);
  PerturbationSpec s;
  if (kind == "identity") s.kind = PerturbationKind::kIdentity;
  else if (kind == "blur") s.kind = PerturbationKind::kBlur;
  else if (kind == "darken") s.kind = PerturbationKind::kDarken;
  else if (kind == "brighten") s.kind = PerturbationKind::kBrighten;
  else if (kind == "gaussian_noise" || kind == "noise") s.kind = PerturbationKind::kGaussianNoise;
  else if (kind == "salt_pepper") s.kind = PerturbationKind::kSaltPepper;
  else if (kind == "occlusion") s.kind = PerturbationKind::kOcclusion;
  else if (kind == "shift") s.kind = PerturbationKind::kShift;
  else throw Error(errc::kParse, "unknown perturbation '" + kind + "'");

  Box box;
  bool has_box = false;
  if (colon != std::string::npos) {
    for (const std::string& kv : split(t.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(errc::kParse, "expected key=value in '" + text + "'");
      const std::string key = trim(kv.substr(0, eq));
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(kv.substr(eq + 1), &used);
        if (trim(kv.substr(eq + 1 + used)).size() != 0) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw Error(errc::kParse, "bad number for '" + key + "' in '" + text + "'");
      }
      if (key == "sigma") s.sigma = v;
      else if (key == "gamma") s.gamma = v;
      else if (key == "var" || key == "variance") s.variance = v;
      else if (key == "fraction") s.fraction = v;
      else if (key == "quadrant") s.quadrant = static_cast<int>(v);
      else if (key == "fill") s.fill = v;
      else if (key == "dx") s.dx = static_cast<int>(v);
      else if (key == "dy") s.dy = static_cast<int>(v);
      else if (key == "x0") box.x0 = static_cast<int>(v), has_box = true;
      else if (key == "y0") box.y0 = static_cast<int>(v), has_box = true;
      else if (key == "x1") box.x1 = static_cast<int>(v), has_box = true;
      else if (key == "y1") box.y1 = static_cast<int>(v), has_box = true;
      else throw Error(errc::kParse, "unknown parameter '" + key + "' for " + kind);
    }
  }
  if (has_box) s.box = box;
  s.validate();
  return s;
}

ImageTensor perturb(const ImageTensor& image, const PerturbationSpec& spec, std::mt19937_64& rng) {
  spec.validate();
  if (image.rank() != 3 || image.channels() != 3) {
    throw Error(errc::kDimension, "perturb expects a 3xHxW image, got " + dims_to_string(image.dims()));
  }
  const int C = image.channels(), H = image.height(), W = image.width();
  switch (spec.kind) {
    case PerturbationKind::kIdentity: return image;
    case PerturbationKind::kBlur: return spec.sigma == 0 ? image : gaussian_blur(image, spec.sigma);
    case PerturbationKind::kDarken:
    case PerturbationKind::kBrighten: {
      if (spec.gamma == 1) return image;
      ImageTensor out = image;
      for (float& v : out.values()) v = clip01(std::pow(static_cast<double>(v), spec.gamma));
      return out;
    }
    case PerturbationKind::kGaussianNoise: {
      if (spec.variance == 0) return image;
      std::normal_distribution<double> noise(0.0, std::sqrt(spec.variance));
      ImageTensor out = image;
      for (float& v : out.values()) v = clip01(v + noise(rng));
      return out;
    }
    case PerturbationKind::kSaltPepper: {
      const std::size_t pixels = static_cast<std::size_t>(H) * W;
      const auto n = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(pixels)));
      if (n == 0) return image;
      std::vector<std::size_t> pos(pixels);
      std::iota(pos.begin(), pos.end(), 0);
      for (std::size_t i = 0; i < n; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pixels - 1);
        std::swap(pos[i], pos[pick(rng)]);
      }
      ImageTensor out = image;
      for (std::size_t i = 0; i < n; ++i) {
        const float v = i < n / 2 ? 0.0f : 1.0f;
        for (int c = 0; c < C; ++c) out[static_cast<std::size_t>(c) * pixels + pos[i]] = v;
      }
      return out;
    }
    case PerturbationKind::kOcclusion: {
      const Box b = spec.quadrant > 0 ? quadrant_box(spec.quadrant, H, W) : *spec.box;
      ImageTensor out = image;
      for (int c = 0; c < C; ++c) {
        for (int y = std::max(b.y0, 0); y < std::min(b.y1, H); ++y) {
          for (int x = std::max(b.x0, 0); x < std::min(b.x1, W); ++x) out.at(c, y, x) = static_cast<float>(spec.fill);
        }
      }
      return out;
    }
    case PerturbationKind::kShift: {
      if (spec.dx == 0 && spec.dy == 0) return image;
      ImageTensor out(image.dims(), static_cast<float>(spec.fill));
      for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
          const int sy = y - spec.dy;
          if (sy < 0 || sy >= H) continue;
          for (int x = 0; x < W; ++x) {
            const int sx = x - spec.dx;
            if (sx >= 0 && sx < W) out.at(c, y, x) = image.at(c, sy, sx);
          }
        }
      }
      return out;
    }
  }
  return image;
}

std::vector<PerturbationSpec> table3_grid(int row) {
  std::vector<std::string> specs;
  if (row == 1) {
    specs = {"blur:sigma=1.5", "darken:gamma=1.3", "brighten:gamma=0.8", "gaussian_noise:var=0.01",
             "salt_pepper:fraction=0.05", "occlusion:quadrant=4", "shift:dx=-30,dy=-30"};
  } else if (row == 2) {
    specs = {"blur:sigma=3.5", "darken:gamma=1.5", "brighten:gamma=0.5", "gaussian_noise:var=0.1",
             "salt_pepper:fraction=0.15", "occlusion:quadrant=2", "shift:dx=-50,dy=-50"};
  } else {
    throw Error(errc::kInvalidArgument, "perturbation grid row must be 1 or 2");
  }
  std::vector<PerturbationSpec> out;
  for (const auto& s : specs) out.push_back(PerturbationSpec::parse(s));
  return out;
}

// ------------------------------------------------------------ FGSM

template <typename T>
InputGradient<T> triplet_input_gradient(const EmbeddingNet<T>& net, const Tensor<T>& anchor,
                                        std::span<const T> positive, std::span<const T> negative, double margin) {
  nn::Tape<T> tape;
  const std::vector<T> fa = net.embed_recorded(anchor, tape);
  const TripletLossGrad<T> g = triplet_loss_grad<T>(fa, positive, negative, static_cast<T>(margin));
  InputGradient<T> out;
  out.loss = static_cast<double>(g.loss);
  if (g.loss > 0) {
    out.grad = net.backward(g.d_anchor, tape, nullptr, true);
  } else {
    out.grad = Tensor<T>(anchor.dims());
  }
  return out;
}

template InputGradient<float> triplet_input_gradient(const EmbeddingNet<float>&, const Tensor<float>&,
                                                     std::span<const float>, std::span<const float>, double);
template InputGradient<double> triplet_input_gradient(const EmbeddingNet<double>&, const Tensor<double>&,
                                                      std::span<const double>, std::span<const double>, double);

ImageTensor fgsm_step(const ImageTensor& x, const Tensor<float>& grad, double epsilon) {
  check_epsilon(epsilon);
  if (grad.dims() != x.dims()) throw Error(errc::kDimension, "gradient and image differ in shape");
  ImageTensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const float g = grad[i];
    if (g == 0 || epsilon == 0) continue;
    const double xi = x[i];
    float v = clip01(xi + (g > 0 ? epsilon : -epsilon));
    // Rounding to float may overshoot the budget by an ulp.
    while (std::abs(static_cast<double>(v) - xi) > epsilon) v = std::nextafter(v, x[i]);
    out[i] = v;
  }
  return out;
}

FgsmResult fgsm_from_embeddings(const ModelState& model, const ImageTensor& anchor, std::span<const float> positive,
                                std::span<const float> negative, double epsilon, double margin) {
  check_epsilon(epsilon);
  const InputGradient<float> g = triplet_input_gradient<float>(model.net, anchor, positive, negative, margin);
  FgsmResult r;
  r.loss = g.loss;
  if (!(g.loss > 0)) {
    r.zero_gradient = true;
    r.image = anchor;
    log_event(LogLevel::kDebug, "fgsm_zero_gradient", {{"loss", g.loss}});
    return r;
  }
  r.image = fgsm_step(anchor, g.grad, epsilon);
  return r;
}

FgsmResult fgsm_triplet(const ModelState& model, const ImageTensor& anchor, const ImageTensor& positive,
                        const ImageTensor& negative, double epsilon, double margin) {
  return fgsm_from_embeddings(model, anchor, embed(model, positive), embed(model, negative), epsilon, margin);
}

std::size_t closest_row_of(const EmbeddingIndex& index, std::span<const float> embedding,
                           const std::string& target_website) {
  std::optional<std::size_t> best;
  double best_d = 0;
  for (std::size_t i = 0; i < index.rows(); ++i) {
    if (index.label(i) != target_website) continue;
    const double d = squared_l2(embedding, index.row(i));
    if (!best || d < best_d || (d == best_d && index.record_id(i) < index.record_id(*best))) {
      best = i;
      best_d = d;
    }
  }
  if (!best) throw Error(errc::kSampling, "no index rows for website " + target_website);
  return *best;
}

std::size_t random_row_not_of(const EmbeddingIndex& index, const std::string& website, std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < index.rows(); ++i) {
    if (index.label(i) != website) candidates.push_back(i);
  }
  if (candidates.empty()) throw Error(errc::kSampling, "no index rows outside website " + website);
  return candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
}

std::size_t random_row_of(const EmbeddingIndex& index, const std::string& website, std::mt19937_64& rng) {
  std::vector<std::size_t> candidates;
  for (std::size_t i = 0; i < index.rows(); ++i) {
    if (index.label(i) == website) candidates.push_back(i);
  }
  if (candidates.empty()) throw Error(errc::kSampling, "no index rows for website " + website);
  return candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng)];
}

FgsmResult fgsm_closest(const ModelState& model, const EmbeddingIndex& index, const ImageTensor& anchor,
                        const std::string& target_website, double epsilon, std::mt19937_64& rng, double margin) {
  const std::size_t pos = closest_row_of(index, embed(model, anchor), target_website);
  const std::size_t neg = random_row_not_of(index, target_website, rng);
  return fgsm_from_embeddings(model, anchor, index.row(pos), index.row(neg), epsilon, margin);
}

FgsmResult fgsm_iterative(const ModelState& model, const EmbeddingIndex& index, const ImageTensor& anchor,
                          const std::string& target_website, double step_epsilon, int steps, std::mt19937_64& rng,
                          double margin) {
  if (steps < 1) throw Error(errc::kInvalidArgument, "iterative FGSM needs steps >= 1");
  FgsmResult out;
  out.image = anchor;
  out.zero_gradient = true;
  for (int s = 0; s < steps; ++s) {
    FgsmResult r = fgsm_closest(model, index, out.image, target_website, step_epsilon, rng, margin);
    if (s == 0) out.loss = r.loss;
    out.zero_gradient = out.zero_gradient && r.zero_gradient;
    out.image = std::move(r.image);
  }
  return out;
}

std::string to_string(AdversarialSampling s) {
  switch (s) {
    case AdversarialSampling::kRandomPositive: return "random";
    case AdversarialSampling::kClosestPoint: return "closest";
    case AdversarialSampling::kIterative: break;
  }
  return "iterative";
}

void AdversarialSpec::validate() const {
  check_epsilon(epsilon);
  if (sampling == AdversarialSampling::kIterative) {
    if (steps < 1) throw Error(errc::kInvalidArgument, "iterative FGSM needs steps >= 1");
    check_epsilon(step_epsilon);
  }
}

std::string AdversarialSpec::name() const {
  if (sampling == AdversarialSampling::kIterative) {
    return "fgsm:sampling=iterative,step=" + format_number(step_epsilon) + ",steps=" + std::to_string(steps);
  }
  return "fgsm:eps=" + format_number(epsilon) + ",sampling=" + to_string(sampling);
}

AdversarialSpec AdversarialSpec::parse(const std::string& text) {
  const std::string t = trim(text);
  const auto colon = t.find(':');
  if (t.substr(0, colon) != "fgsm") throw Error(errc::kParse, "unknown attack '" + t.substr(0, colon) + "'");
  AdversarialSpec s;
  if (colon != std::string::npos) {
    for (const std::string& kv : split(t.substr(colon + 1), ',')) {
      const auto eq = kv.find('=');
      if (eq == std::string::npos) throw Error(errc::kParse, "expected key=value in '" + text + "'");
      const std::string key = trim(kv.substr(0, eq));
      const std::string value = trim(kv.substr(eq + 1));
      try {
        if (key == "eps" || key == "epsilon") s.epsilon = std::stod(value);
        else if (key == "step" || key == "step_epsilon") s.step_epsilon = std::stod(value);
        else if (key == "steps") s.steps = std::stoi(value);
        else if (key == "sampling") {
          if (value == "random") s.sampling = AdversarialSampling::kRandomPositive;
          else if (value == "closest") s.sampling = AdversarialSampling::kClosestPoint;
          else if (value == "iterative") s.sampling = AdversarialSampling::kIterative;
          else throw Error(errc::kParse, "unknown sampling '" + value + "'");
        } else {
          throw Error(errc::kParse, "unknown parameter '" + key + "' for fgsm");
        }
      } catch (const std::logic_error&) {
        throw Error(errc::kParse, "bad value for '" + key + "' in '" + text + "'");
      }
    }
  }
  if (s.sampling == AdversarialSampling::kIterative) s.epsilon = s.step_epsilon * s.steps;
  s.validate();
  return s;
}

std::vector<AdversarialSpec> table4_grid() {
  return {AdversarialSpec::parse("fgsm:eps=0.005,sampling=random"),
          AdversarialSpec::parse("fgsm:eps=0.005,sampling=closest"),
          AdversarialSpec::parse("fgsm:eps=0.01,sampling=random"),
          AdversarialSpec::parse("fgsm:sampling=iterative,step=0.002,steps=5")};
}

TrainResult adversarial_finetune(ModelState model, const TrainingPool& pool, const ImageSource& images,
                                 const TrainHyper& hyper, double eps_low, double eps_high, std::int64_t minibatches,
                                 std::mt19937_64& rng, const TrainObserver& observer) {
  check_epsilon(eps_low);
  check_epsilon(eps_high);
  if (eps_low > eps_high) throw Error(errc::kInvalidArgument, "epsilon range is empty");
  std::uniform_real_distribution<double> eps_dist(eps_low, eps_high);
  auto make_batch = [&](const ModelState& current) {
    std::vector<TripletImages> batch(static_cast<std::size_t>(hyper.batch_size));
    for (auto& slot : batch) {
      const Triplet t = sample_triplet_random(pool, rng);
      slot = {images.load(pool.records()[t.anchor]), images.load(pool.records()[t.positive]),
              images.load(pool.records()[t.negative])};
    }
    for (std::size_t i = 0; i < batch.size() / 2; ++i) {
      const double eps = eps_low == eps_high ? eps_low : eps_dist(rng);
      batch[i].anchor =
          fgsm_triplet(current, batch[i].anchor, batch[i].positive, batch[i].negative, eps, hyper.margin).image;
    }
    return batch;
  };
  return train_with(std::move(model), "adversarial", minibatches, make_batch, hyper, observer);
}

// ------------------------------------------------------------ reports

ShiftStats embedding_shift_report(const ModelState& model,
                                  const std::vector<std::pair<ImageTensor, ImageTensor>>& pairs) {
  if (pairs.empty()) throw Error(errc::kEmpty, "no image pairs");
  std::vector<double> d;
  for (const auto& [a, b] : pairs) d.push_back(l2_distance(embed(model, a), embed(model, b)));
  const TimingStats t = timing_stats(d);
  return {t.mean, t.sd, t.count};
}

double relative_drop(double original, double perturbed) {
  if (original == 0) return 0;
  return (original - perturbed) / original;
}

nlohmann::json RobustnessReport::to_json() const {
  nlohmann::json j;
  j["original_top1"] = original_top1;
  j["original_auc"] = original_auc;
  auto& rs = j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    rs.push_back({{"name", r.name}, {"trials", r.trials}, {"top1", r.top1}, {"auc", r.auc},
                  {"top1_drop", r.top1_drop}, {"auc_drop", r.auc_drop}});
  }
  return j;
}

void RobustnessReport::write(const std::filesystem::path& path) const {
  write_file_atomic(path, to_json().dump(2) + "\n");
}

namespace {

template <typename MakeFn>
RobustnessReport run_report(const ModelState& model, const EmbeddingIndex& index,
                            const std::vector<Screenshot>& test_records, const ImageSource& images, std::size_t count,
                            const MakeFn& make_row_source, int workers) {
  check_index_model(index, model);
  const EmbedFn embed_fn = [&](const ImageTensor& image) { return embed(model, image); };
  RobustnessReport report;
  const EvalReport base = evaluate_embeddings(index, test_records, images, embed_fn, workers);
  report.original_top1 = base.top1_match;
  report.original_auc = base.auc;
  for (std::size_t s = 0; s < count; ++s) {
    auto [name, trials, fn] = make_row_source(s);
    RobustnessRow row;
    row.name = name;
    row.trials = trials;
    for (int t = 0; t < trials; ++t) {
      const TransformedSource source(images, [&, t](const Screenshot& r, ImageTensor img) {
        return r.source_class == SourceClass::kPhishing ? fn(r, std::move(img), t) : img;
      });
      const EvalReport e = evaluate_embeddings(index, test_records, source, embed_fn, workers);
      row.top1 += e.top1_match / trials;
      row.auc += e.auc / trials;
    }
    row.top1_drop = relative_drop(report.original_top1, row.top1);
    row.auc_drop = relative_drop(report.original_auc, row.auc);
    log_event(LogLevel::kInfo, "robustness_row",
              {{"name", row.name}, {"top1_drop", row.top1_drop}, {"auc_drop", row.auc_drop}});
    report.rows.push_back(row);
  }
  return report;
}

}  // namespace

RobustnessReport robustness_report(const ModelState& model, const EmbeddingIndex& index,
                                   const std::vector<Screenshot>& test_records, const ImageSource& images,
                                   const std::vector<PerturbationSpec>& specs, std::uint64_t seed, int trials,
                                   int workers) {
  if (trials < 1) throw Error(errc::kInvalidArgument, "trials must be >= 1");
  for (const auto& s : specs) s.validate();
  using Fn = std::function<ImageTensor(const Screenshot&, ImageTensor, int)>;
  return run_report(model, index, test_records, images, specs.size(),
                    [&](std::size_t i) {
                      const PerturbationSpec spec = specs[i];
                      Fn fn = [spec, seed](const Screenshot& r, ImageTensor img, int t) {
                        std::mt19937_64 rng(record_seed(seed, t, r.record_id));
                        return perturb(img, spec, rng);
                      };
                      return std::tuple<std::string, int, Fn>(spec.name(), spec.stochastic() ? trials : 1, fn);
                    },
                    workers);
}

RobustnessReport adversarial_report(const ModelState& model, const EmbeddingIndex& index,
                                    const std::vector<Screenshot>& test_records, const ImageSource& images,
                                    const std::vector<AdversarialSpec>& specs, std::uint64_t seed, int trials,
                                    int workers, double margin) {
  if (trials < 1) throw Error(errc::kInvalidArgument, "trials must be >= 1");
  for (const auto& s : specs) s.validate();
  using Fn = std::function<ImageTensor(const Screenshot&, ImageTensor, int)>;
  return run_report(model, index, test_records, images, specs.size(),
                    [&](std::size_t i) {
                      const AdversarialSpec spec = specs[i];
                      Fn fn = [&model, &index, spec, seed, margin](const Screenshot& r, ImageTensor img, int t) {
                        std::mt19937_64 rng(record_seed(seed, t, r.record_id));
                        const std::string& target = *r.website_id;
                        switch (spec.sampling) {
                          case AdversarialSampling::kRandomPositive: {
                            const std::size_t pos = random_row_of(index, target, rng);
                            const std::size_t neg = random_row_not_of(index, target, rng);
                            return fgsm_from_embeddings(model, img, index.row(pos), index.row(neg), spec.epsilon,
                                                        margin).image;
                          }
                          case AdversarialSampling::kClosestPoint:
                            return fgsm_closest(model, index, img, target, spec.epsilon, rng, margin).image;
                          case AdversarialSampling::kIterative:
                            break;
                        }
                        return fgsm_iterative(model, index, img, target, spec.step_epsilon, spec.steps, rng, margin)
                            .image;
                      };
                      return std::tuple<std::string, int, Fn>(spec.name(), trials, fn);
                    },
                    workers);
}

}  // namespace phishmetric
