#pragma once

#include <filesystem>
#include <vector>

#include "phishmetric/tensor.h"

namespace phishmetric {

// 3xHxW RGB image with values in [0, 1].
using ImageTensor = Tensor<float>;

inline constexpr int kScreenshotSize = 224;

// Decodes any format OpenCV understands. Grayscale is replicated to three
// channels and alpha is dropped.
ImageTensor decode_image(const std::filesystem::path& path);
// Lossless 8-bit PNG; values are clamped and rounded.
void write_png(const std::filesystem::path& path, const ImageTensor& image);

// Separable bilinear resampling with half-pixel centers and edge clamping.
// The interpolation is linear in the input, so the same taps drive the
// adjoint used to push gradients from a resized image back to its source.
class BilinearResampler {
 public:
  BilinearResampler() = default;
  BilinearResampler(int in_h, int in_w, int out_h, int out_w);

  int in_height() const { return in_h_; }
  int in_width() const { return in_w_; }
  int out_height() const { return out_h_; }
  int out_width() const { return out_w_; }
  bool is_identity() const { return in_h_ == out_h_ && in_w_ == out_w_; }

  template <typename T>
  Tensor<T> apply(const Tensor<T>& in) const;
  template <typename T>
  Tensor<T> adjoint(const Tensor<T>& grad_out) const;

 private:
  struct Tap {
    int lo;
    int hi;
    double w_hi;  // weight of `hi`; `lo` gets 1 - w_hi
  };
  static std::vector<Tap> taps(int in, int out);

  int in_h_ = 0, in_w_ = 0, out_h_ = 0, out_w_ = 0;
  std::vector<Tap> rows_, cols_;
};

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width);

}  // namespace phishmetric
