#include "phishmetric/nn/layers.h"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "phishmetric/error.h"

namespace phishmetric::nn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using CMapMat = Eigen::Map<const RowMat<T>>;

void check_input(const std::string& layer, const std::vector<int>& expected, const std::vector<int>& got) {
  if (expected != got) {
    throw Error(errc::kDimension, "layer " + layer + " expects " + dims_to_string(expected) + ", got " +
                                      dims_to_string(got));
  }
}

template <typename T>
void he_normal(Tensor<T>& w, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (auto& v : w.values()) v = static_cast<T>(dist(rng));
}

// ---------------------------------------------------------------- Conv2d

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(std::string name, std::vector<int> in_dims, ConvSpec spec, ParamStore<T>& params, std::mt19937_64& rng)
      : Layer<T>(std::move(name), std::move(in_dims)), spec_(spec) {
    in_c_ = this->in_dims_[0];
    in_h_ = this->in_dims_[1];
    in_w_ = this->in_dims_[2];
    out_h_ = (in_h_ + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    out_w_ = (in_w_ + 2 * spec.padding - spec.kernel) / spec.stride + 1;
    if (out_h_ <= 0 || out_w_ <= 0) {
      throw Error(errc::kUnsupported, "conv " + this->name_ + " input " + dims_to_string(this->in_dims_) +
                                          " too small for kernel " + std::to_string(spec.kernel));
    }
    this->out_dims_ = {spec.out_channels, out_h_, out_w_};
    patch_ = in_c_ * spec.kernel * spec.kernel;
    Tensor<T> w({spec.out_channels, in_c_, spec.kernel, spec.kernel});
    he_normal(w, patch_, rng);
    weight_ = params.add(this->name_ + ".weight", std::move(w));
    if (spec.bias) bias_ = params.add(this->name_ + ".bias", Tensor<T>({spec.out_channels}));
    pointwise_ = spec.kernel == 1 && spec.stride == 1 && spec.padding == 0;
  }

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& p, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    const int n = out_h_ * out_w_;
    Tensor<T> out(this->out_dims_);
    CMapMat<T> w(p.tensors[weight_].data(), spec_.out_channels, patch_);
    MapMat<T> o(out.data(), spec_.out_channels, n);
    if (pointwise_) {
      o.noalias() = w * CMapMat<T>(x.data(), patch_, n);
    } else {
      AlignedVector<T> cols = im2col(x);
      o.noalias() = w * CMapMat<T>(cols.data(), patch_, n);
    }
    if (bias_) {
      const Tensor<T>& b = p.tensors[*bias_];
      for (int c = 0; c < spec_.out_channels; ++c) o.row(c).array() += b[static_cast<std::size_t>(c)];
    }
    if (tape) tape->push(x);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>& p, Tape<T>& tape,
                     ParamStore<T>* grads) const override {
    const Tensor<T> x = tape.pop();
    const int n = out_h_ * out_w_;
    CMapMat<T> go(g.data(), spec_.out_channels, n);
    CMapMat<T> w(p.tensors[weight_].data(), spec_.out_channels, patch_);
    AlignedVector<T> cols;
    const T* col_ptr = x.data();
    if (!pointwise_) {
      cols = im2col(x);
      col_ptr = cols.data();
    }
    if (grads) {
      MapMat<T> gw(grads->tensors[weight_].data(), spec_.out_channels, patch_);
      gw.noalias() += go * CMapMat<T>(col_ptr, patch_, n).transpose();
      if (bias_) {
        Tensor<T>& gb = grads->tensors[*bias_];
        for (int c = 0; c < spec_.out_channels; ++c) gb[static_cast<std::size_t>(c)] += go.row(c).sum();
      }
    }
    Tensor<T> gin(this->in_dims_);
    if (pointwise_) {
      MapMat<T>(gin.data(), patch_, n).noalias() = w.transpose() * go;
    } else {
      RowMat<T> gcols = w.transpose() * go;
      col2im(gcols.data(), gin);
    }
    return gin;
  }

 private:
  AlignedVector<T> im2col(const Tensor<T>& x) const {
    const int k = spec_.kernel;
    const int n = out_h_ * out_w_;
    AlignedVector<T> cols(static_cast<std::size_t>(patch_) * n);
    for (int c = 0; c < in_c_; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          T* row = cols.data() + static_cast<std::size_t>((c * k + ky) * k + kx) * n;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * spec_.stride - spec_.padding + ky;
            T* dst = row + static_cast<std::size_t>(oy) * out_w_;
            if (iy < 0 || iy >= in_h_) {
              std::fill(dst, dst + out_w_, T(0));
              continue;
            }
            const T* src = x.data() + (static_cast<std::size_t>(c) * in_h_ + iy) * in_w_;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * spec_.stride - spec_.padding + kx;
              dst[ox] = (ix < 0 || ix >= in_w_) ? T(0) : src[ix];
            }
          }
        }
      }
    }
    return cols;
  }

  void col2im(const T* cols, Tensor<T>& gin) const {
    const int k = spec_.kernel;
    const int n = out_h_ * out_w_;
    for (int c = 0; c < in_c_; ++c) {
      for (int ky = 0; ky < k; ++ky) {
        for (int kx = 0; kx < k; ++kx) {
          const T* row = cols + static_cast<std::size_t>((c * k + ky) * k + kx) * n;
          for (int oy = 0; oy < out_h_; ++oy) {
            const int iy = oy * spec_.stride - spec_.padding + ky;
            if (iy < 0 || iy >= in_h_) continue;
            T* dst = gin.data() + (static_cast<std::size_t>(c) * in_h_ + iy) * in_w_;
            const T* src = row + static_cast<std::size_t>(oy) * out_w_;
            for (int ox = 0; ox < out_w_; ++ox) {
              const int ix = ox * spec_.stride - spec_.padding + kx;
              if (ix >= 0 && ix < in_w_) dst[ix] += src[ox];
            }
          }
        }
      }
    }
  }

  ConvSpec spec_;
  int in_c_, in_h_, in_w_, out_h_, out_w_, patch_;
  bool pointwise_ = false;
  std::size_t weight_ = 0;
  std::optional<std::size_t> bias_;
};

// ---------------------------------------------------------------- ReLU

template <typename T>
class Relu final : public Layer<T> {
 public:
  Relu(std::string name, std::vector<int> in_dims) : Layer<T>(std::move(name), std::move(in_dims)) {
    this->out_dims_ = this->in_dims_;
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>&, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> out = x;
    for (auto& v : out.values()) v = v > T(0) ? v : T(0);
    if (tape) tape->push(out);
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>&, Tape<T>& tape, ParamStore<T>*) const override {
    const Tensor<T> out = tape.pop();
    Tensor<T> gin = g;
    for (std::size_t i = 0; i < gin.size(); ++i) {
      if (!(out[i] > T(0))) gin[i] = T(0);
    }
    return gin;
  }
};

// ---------------------------------------------------------------- MaxPool2d

template <typename T>
class MaxPool2d final : public Layer<T> {
 public:
  MaxPool2d(std::string name, std::vector<int> in_dims, int kernel, int stride, int padding)
      : Layer<T>(std::move(name), std::move(in_dims)), k_(kernel), s_(stride), pad_(padding) {
    const int oh = (this->in_dims_[1] + 2 * pad_ - k_) / s_ + 1;
    const int ow = (this->in_dims_[2] + 2 * pad_ - k_) / s_ + 1;
    if (oh <= 0 || ow <= 0) {
      throw Error(errc::kUnsupported, "pool " + this->name_ + " input " + dims_to_string(this->in_dims_) +
                                          " too small");
    }
    this->out_dims_ = {this->in_dims_[0], oh, ow};
  }

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>&, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> out(this->out_dims_);
    for (int c = 0; c < out.channels(); ++c) {
      for (int oy = 0; oy < out.height(); ++oy) {
        for (int ox = 0; ox < out.width(); ++ox) out.at(c, oy, ox) = x[argmax(x, c, oy, ox)];
      }
    }
    if (tape) tape->push(x);
    return out;
  }

  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>&, Tape<T>& tape, ParamStore<T>*) const override {
    const Tensor<T> x = tape.pop();
    Tensor<T> gin(this->in_dims_);
    for (int c = 0; c < g.channels(); ++c) {
      for (int oy = 0; oy < g.height(); ++oy) {
        for (int ox = 0; ox < g.width(); ++ox) gin[argmax(x, c, oy, ox)] += g.at(c, oy, ox);
      }
    }
    return gin;
  }

 private:
  // First maximal element in the window (row-major scan).
  std::size_t argmax(const Tensor<T>& x, int c, int oy, int ox) const {
    std::size_t best = 0;
    T best_v = -std::numeric_limits<T>::infinity();
    bool found = false;
    for (int ky = 0; ky < k_; ++ky) {
      const int iy = oy * s_ - pad_ + ky;
      if (iy < 0 || iy >= x.height()) continue;
      for (int kx = 0; kx < k_; ++kx) {
        const int ix = ox * s_ - pad_ + kx;
        if (ix < 0 || ix >= x.width()) continue;
        const std::size_t idx = (static_cast<std::size_t>(c) * x.height() + iy) * x.width() + ix;
        if (!found || x[idx] > best_v) {
          best = idx;
          best_v = x[idx];
          found = true;
        }
      }
    }
    return best;
  }

  int k_, s_, pad_;
};

// ---------------------------------------------------------------- global pools

template <typename T>
class GlobalMaxPool final : public Layer<T> {
 public:
  GlobalMaxPool(std::string name, std::vector<int> in_dims) : Layer<T>(std::move(name), std::move(in_dims)) {
    this->out_dims_ = {this->in_dims_[0]};
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>&, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    const int c_n = x.channels();
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    Tensor<T> out({c_n});
    for (int c = 0; c < c_n; ++c) {
      const T* p = x.data() + c * plane;
      out[static_cast<std::size_t>(c)] = *std::max_element(p, p + plane);
    }
    if (tape) tape->push(x);
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>&, Tape<T>& tape, ParamStore<T>*) const override {
    const Tensor<T> x = tape.pop();
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    Tensor<T> gin(this->in_dims_);
    for (int c = 0; c < x.channels(); ++c) {
      const T* p = x.data() + c * plane;
      const std::size_t at = static_cast<std::size_t>(std::max_element(p, p + plane) - p);
      gin[c * plane + at] = g[static_cast<std::size_t>(c)];
    }
    return gin;
  }
};

template <typename T>
class GlobalAvgPool final : public Layer<T> {
 public:
  GlobalAvgPool(std::string name, std::vector<int> in_dims) : Layer<T>(std::move(name), std::move(in_dims)) {
    this->out_dims_ = {this->in_dims_[0]};
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>&, Tape<T>*) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    Tensor<T> out({x.channels()});
    for (int c = 0; c < x.channels(); ++c) {
      T s = 0;
      for (std::size_t i = 0; i < plane; ++i) s += x[c * plane + i];
      out[static_cast<std::size_t>(c)] = s / static_cast<T>(plane);
    }
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>&, Tape<T>&, ParamStore<T>*) const override {
    Tensor<T> gin(this->in_dims_);
    const std::size_t plane = static_cast<std::size_t>(this->in_dims_[1]) * this->in_dims_[2];
    for (int c = 0; c < this->in_dims_[0]; ++c) {
      const T v = g[static_cast<std::size_t>(c)] / static_cast<T>(plane);
      for (std::size_t i = 0; i < plane; ++i) gin[c * plane + i] = v;
    }
    return gin;
  }
};

template <typename T>
class Flatten final : public Layer<T> {
 public:
  Flatten(std::string name, std::vector<int> in_dims) : Layer<T>(std::move(name), std::move(in_dims)) {
    this->out_dims_ = {static_cast<int>(Tensor<T>::count(this->in_dims_))};
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>&, Tape<T>*) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> out = x;
    out.reshape(this->out_dims_);
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>&, Tape<T>&, ParamStore<T>*) const override {
    Tensor<T> gin = g;
    gin.reshape(this->in_dims_);
    return gin;
  }
};

// ---------------------------------------------------------------- Linear

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(std::string name, std::vector<int> in_dims, int out_features, ParamStore<T>& params, std::mt19937_64& rng)
      : Layer<T>(std::move(name), std::move(in_dims)), out_(out_features) {
    if (this->in_dims_.size() != 1) {
      throw Error(errc::kUnsupported, "linear layer " + this->name_ + " needs a flat input");
    }
    in_ = this->in_dims_[0];
    this->out_dims_ = {out_};
    Tensor<T> w({out_, in_});
    he_normal(w, in_, rng);
    weight_ = params.add(this->name_ + ".weight", std::move(w));
    bias_ = params.add(this->name_ + ".bias", Tensor<T>({out_}));
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& p, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> out = p.tensors[bias_];
    Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> o(out.data(), out_);
    o.noalias() += CMapMat<T>(p.tensors[weight_].data(), out_, in_) *
                   Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.data(), in_);
    if (tape) tape->push(x);
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>& p, Tape<T>& tape,
                     ParamStore<T>* grads) const override {
    const Tensor<T> x = tape.pop();
    using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
    Eigen::Map<const Vec> gv(g.data(), out_);
    if (grads) {
      MapMat<T>(grads->tensors[weight_].data(), out_, in_).noalias() +=
          gv * Eigen::Map<const Vec>(x.data(), in_).transpose();
      Eigen::Map<Vec>(grads->tensors[bias_].data(), out_) += gv;
    }
    Tensor<T> gin(this->in_dims_);
    Eigen::Map<Vec>(gin.data(), in_).noalias() = CMapMat<T>(p.tensors[weight_].data(), out_, in_).transpose() * gv;
    return gin;
  }

 private:
  int in_ = 0, out_ = 0;
  std::size_t weight_ = 0, bias_ = 0;
};

// ---------------------------------------------------------------- ChannelAffine

template <typename T>
class ChannelAffine final : public Layer<T> {
 public:
  ChannelAffine(std::string name, std::vector<int> in_dims, ParamStore<T>& params)
      : Layer<T>(std::move(name), std::move(in_dims)) {
    this->out_dims_ = this->in_dims_;
    scale_ = params.add(this->name_ + ".scale", Tensor<T>({this->in_dims_[0]}, T(1)));
    shift_ = params.add(this->name_ + ".shift", Tensor<T>({this->in_dims_[0]}));
  }
  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& p, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> out = x;
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    for (int c = 0; c < x.channels(); ++c) {
      const T a = p.tensors[scale_][static_cast<std::size_t>(c)];
      const T b = p.tensors[shift_][static_cast<std::size_t>(c)];
      for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = a * x[c * plane + i] + b;
    }
    if (tape) tape->push(x);
    return out;
  }
  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>& p, Tape<T>& tape,
                     ParamStore<T>* grads) const override {
    const Tensor<T> x = tape.pop();
    const std::size_t plane = static_cast<std::size_t>(x.height()) * x.width();
    Tensor<T> gin(this->in_dims_);
    for (int c = 0; c < x.channels(); ++c) {
      const T a = p.tensors[scale_][static_cast<std::size_t>(c)];
      T ga = 0, gb = 0;
      for (std::size_t i = 0; i < plane; ++i) {
        const T gi = g[c * plane + i];
        ga += gi * x[c * plane + i];
        gb += gi;
        gin[c * plane + i] = a * gi;
      }
      if (grads) {
        grads->tensors[scale_][static_cast<std::size_t>(c)] += ga;
        grads->tensors[shift_][static_cast<std::size_t>(c)] += gb;
      }
    }
    return gin;
  }

 private:
  std::size_t scale_ = 0, shift_ = 0;
};

// ---------------------------------------------------------------- Bottleneck

template <typename T>
class Bottleneck final : public Layer<T> {
 public:
  Bottleneck(std::string name, std::vector<int> in_dims, int width, int stride, ParamStore<T>& params,
             std::mt19937_64& rng)
      : Layer<T>(std::move(name), std::move(in_dims)) {
    const std::string& n = this->name_;
    auto add = [&](std::vector<LayerPtr<T>>& seq, LayerPtr<T> layer) { seq.push_back(std::move(layer)); };
    auto dims = [](const std::vector<LayerPtr<T>>& seq, const std::vector<int>& d0) {
      return seq.empty() ? d0 : seq.back()->out_dims();
    };
    const int out_c = width * 4;
    add(main_, make_conv2d<T>(n + ".conv1", this->in_dims_, {width, 1, 1, 0, false}, params, rng));
    add(main_, make_channel_affine<T>(n + ".bn1", dims(main_, this->in_dims_), params));
    add(main_, make_relu<T>(n + ".relu1", dims(main_, this->in_dims_)));
    add(main_, make_conv2d<T>(n + ".conv2", dims(main_, this->in_dims_), {width, 3, stride, 1, false}, params, rng));
    add(main_, make_channel_affine<T>(n + ".bn2", dims(main_, this->in_dims_), params));
    add(main_, make_relu<T>(n + ".relu2", dims(main_, this->in_dims_)));
    add(main_, make_conv2d<T>(n + ".conv3", dims(main_, this->in_dims_), {out_c, 1, 1, 0, false}, params, rng));
    add(main_, make_channel_affine<T>(n + ".bn3", dims(main_, this->in_dims_), params));
    if (stride != 1 || this->in_dims_[0] != out_c) {
      add(shortcut_, make_conv2d<T>(n + ".downsample", this->in_dims_, {out_c, 1, stride, 0, false}, params, rng));
      add(shortcut_, make_channel_affine<T>(n + ".downsample_bn", shortcut_.back()->out_dims(), params));
    }
    this->out_dims_ = main_.back()->out_dims();
  }

  Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& p, Tape<T>* tape) const override {
    check_input(this->name_, this->in_dims_, x.dims());
    Tensor<T> m = x;
    for (const auto& l : main_) m = l->forward(m, p, tape);
    Tensor<T> s = x;
    for (const auto& l : shortcut_) s = l->forward(s, p, tape);
    for (std::size_t i = 0; i < m.size(); ++i) {
      const T v = m[i] + s[i];
      m[i] = v > T(0) ? v : T(0);
    }
    if (tape) tape->push(m);
    return m;
  }

  Tensor<T> backward(const Tensor<T>& g, const ParamStore<T>& p, Tape<T>& tape,
                     ParamStore<T>* grads) const override {
    const Tensor<T> out = tape.pop();
    Tensor<T> gsum = g;
    for (std::size_t i = 0; i < gsum.size(); ++i) {
      if (!(out[i] > T(0))) gsum[i] = T(0);
    }
    Tensor<T> gs = gsum;
    for (auto it = shortcut_.rbegin(); it != shortcut_.rend(); ++it) gs = (*it)->backward(gs, p, tape, grads);
    Tensor<T> gm = std::move(gsum);
    for (auto it = main_.rbegin(); it != main_.rend(); ++it) gm = (*it)->backward(gm, p, tape, grads);
    for (std::size_t i = 0; i < gm.size(); ++i) gm[i] += gs[i];
    return gm;
  }

 private:
  std::vector<LayerPtr<T>> main_;
  std::vector<LayerPtr<T>> shortcut_;
};

}  // namespace

template <typename T>
std::size_t ParamStore<T>::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
std::size_t ParamStore<T>::find(const std::string& name) const {
  return static_cast<std::size_t>(std::find(names.begin(), names.end(), name) - names.begin());
}

template <typename T>
ParamStore<T> ParamStore<T>::zeros_like() const {
  ParamStore<T> out;
  out.names = names;
  out.tensors.reserve(tensors.size());
  for (const auto& t : tensors) out.tensors.emplace_back(t.dims());
  return out;
}

template <typename T>
void ParamStore<T>::set_zero() {
  for (auto& t : tensors) t.fill(T(0));
}

template <typename T>
void ParamStore<T>::add_scaled(const ParamStore& other, T scale) {
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto dst = tensors[i].values();
    auto src = other.tensors[i].values();
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += scale * src[j];
  }
}

template <typename T>
LayerPtr<T> make_conv2d(const std::string& name, const std::vector<int>& in_dims, const ConvSpec& spec,
                        ParamStore<T>& params, std::mt19937_64& rng) {
  return std::make_shared<Conv2d<T>>(name, in_dims, spec, params, rng);
}
template <typename T>
LayerPtr<T> make_relu(const std::string& name, const std::vector<int>& in_dims) {
  return std::make_shared<Relu<T>>(name, in_dims);
}
template <typename T>
LayerPtr<T> make_max_pool(const std::string& name, const std::vector<int>& in_dims, int kernel, int stride,
                          int padding) {
  return std::make_shared<MaxPool2d<T>>(name, in_dims, kernel, stride, padding);
}
template <typename T>
LayerPtr<T> make_global_max_pool(const std::string& name, const std::vector<int>& in_dims) {
  return std::make_shared<GlobalMaxPool<T>>(name, in_dims);
}
template <typename T>
LayerPtr<T> make_global_avg_pool(const std::string& name, const std::vector<int>& in_dims) {
  return std::make_shared<GlobalAvgPool<T>>(name, in_dims);
}
template <typename T>
LayerPtr<T> make_flatten(const std::string& name, const std::vector<int>& in_dims) {
  return std::make_shared<Flatten<T>>(name, in_dims);
}
template <typename T>
LayerPtr<T> make_linear(const std::string& name, const std::vector<int>& in_dims, int out_features,
                        ParamStore<T>& params, std::mt19937_64& rng) {
  return std::make_shared<Linear<T>>(name, in_dims, out_features, params, rng);
}
template <typename T>
LayerPtr<T> make_channel_affine(const std::string& name, const std::vector<int>& in_dims, ParamStore<T>& params) {
  return std::make_shared<ChannelAffine<T>>(name, in_dims, params);
}
template <typename T>
LayerPtr<T> make_bottleneck(const std::string& name, const std::vector<int>& in_dims, int width, int stride,
                            ParamStore<T>& params, std::mt19937_64& rng) {
  return std::make_shared<Bottleneck<T>>(name, in_dims, width, stride, params, rng);
}

#define PHISHMETRIC_INSTANTIATE(T)                                                                              \
  template struct ParamStore<T>;                                                                                \
  template LayerPtr<T> make_conv2d<T>(const std::string&, const std::vector<int>&, const ConvSpec&,             \
                                      ParamStore<T>&, std::mt19937_64&);                                        \
  template LayerPtr<T> make_relu<T>(const std::string&, const std::vector<int>&);                               \
  template LayerPtr<T> make_max_pool<T>(const std::string&, const std::vector<int>&, int, int, int);            \
  template LayerPtr<T> make_global_max_pool<T>(const std::string&, const std::vector<int>&);                    \
  template LayerPtr<T> make_global_avg_pool<T>(const std::string&, const std::vector<int>&);                    \
  template LayerPtr<T> make_flatten<T>(const std::string&, const std::vector<int>&);                            \
  template LayerPtr<T> make_linear<T>(const std::string&, const std::vector<int>&, int, ParamStore<T>&,         \
                                      std::mt19937_64&);                                                        \
  template LayerPtr<T> make_channel_affine<T>(const std::string&, const std::vector<int>&, ParamStore<T>&);     \
  template LayerPtr<T> make_bottleneck<T>(const std::string&, const std::vector<int>&, int, int, ParamStore<T>&, \
                                          std::mt19937_64&);

PHISHMETRIC_INSTANTIATE(float)
PHISHMETRIC_INSTANTIATE(double)
#undef PHISHMETRIC_INSTANTIATE

}  // namespace phishmetric::nn
