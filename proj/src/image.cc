#include "phishmetric/image.h"

#include <algorithm>
#include <cmath>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>

#include "phishmetric/error.h"

namespace phishmetric {

ImageTensor decode_image(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(errc::kIo, "image not found: " + path.string());
  cv::Mat raw = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (raw.empty()) throw Error(errc::kDecode, "cannot decode image: " + path.string());

  float full_scale = 1.0f;
  switch (raw.depth()) {
    case CV_8U: full_scale = 255.0f; break;
    case CV_16U: full_scale = 65535.0f; break;
    case CV_32F: break;
    default: throw Error(errc::kDecode, "unsupported pixel depth in " + path.string());
  }
  const int channels = raw.channels();
  if (channels != 1 && channels != 3 && channels != 4) {
    throw Error(errc::kDecode, "unsupported channel count in " + path.string());
  }
  cv::Mat px;
  raw.convertTo(px, CV_32F);

  ImageTensor out({3, px.rows, px.cols});
  for (int y = 0; y < px.rows; ++y) {
    const float* row = px.ptr<float>(y);
    for (int x = 0; x < px.cols; ++x) {
      const float* p = row + static_cast<std::ptrdiff_t>(x) * channels;
      if (channels == 1) {
        const float v = std::clamp(p[0] / full_scale, 0.0f, 1.0f);
        out.at(0, y, x) = out.at(1, y, x) = out.at(2, y, x) = v;
      } else {
        // OpenCV stores BGR(A).
        out.at(0, y, x) = std::clamp(p[2] / full_scale, 0.0f, 1.0f);
        out.at(1, y, x) = std::clamp(p[1] / full_scale, 0.0f, 1.0f);
        out.at(2, y, x) = std::clamp(p[0] / full_scale, 0.0f, 1.0f);
      }
    }
  }
  return out;
}

void write_png(const std::filesystem::path& path, const ImageTensor& image) {
  if (image.rank() != 3 || image.channels() != 3) {
    throw Error(errc::kDimension, "write_png expects a 3xHxW image, got " + dims_to_string(image.dims()));
  }
  cv::Mat px(image.height(), image.width(), CV_8UC3);
  for (int y = 0; y < image.height(); ++y) {
    auto* row = px.ptr<std::uint8_t>(y);
    for (int x = 0; x < image.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(image.at(c, y, x), 0.0f, 1.0f);
        row[x * 3 + (2 - c)] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!cv::imwrite(path.string(), px, {cv::IMWRITE_PNG_COMPRESSION, 3})) {
    throw Error(errc::kIo, "cannot write " + path.string());
  }
}

std::vector<BilinearResampler::Tap> BilinearResampler::taps(int in, int out) {
  std::vector<Tap> t(static_cast<std::size_t>(out));
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double src = (i + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int lo = static_cast<int>(std::floor(src));
    double frac = src - lo;
    if (lo >= in - 1) {
      lo = in - 1;
      frac = 0;
    }
    t[static_cast<std::size_t>(i)] = {lo, std::min(lo + 1, in - 1), frac};
  }
  return t;
}

BilinearResampler::BilinearResampler(int in_h, int in_w, int out_h, int out_w)
    : in_h_(in_h), in_w_(in_w), out_h_(out_h), out_w_(out_w) {
  if (in_h <= 0 || in_w <= 0 || out_h <= 0 || out_w <= 0) {
    throw Error(errc::kInvalidArgument, "resample sizes must be positive");
  }
  rows_ = taps(in_h, out_h);
  cols_ = taps(in_w, out_w);
}

template <typename T>
Tensor<T> BilinearResampler::apply(const Tensor<T>& in) const {
  if (in.rank() != 3 || in.height() != in_h_ || in.width() != in_w_) {
    throw Error(errc::kDimension, "resampler expects " + std::to_string(in_h_) + "x" +
                                      std::to_string(in_w_) + " input, got " + dims_to_string(in.dims()));
  }
  if (is_identity()) return in;
  const int c_n = in.channels();
  // Horizontal pass then vertical pass.
  Tensor<T> tmp({c_n, in_h_, out_w_});
  for (int c = 0; c < c_n; ++c) {
    for (int y = 0; y < in_h_; ++y) {
      for (int x = 0; x < out_w_; ++x) {
        const Tap& t = cols_[static_cast<std::size_t>(x)];
        const T w = static_cast<T>(t.w_hi);
        tmp.at(c, y, x) = in.at(c, y, t.lo) * (T(1) - w) + in.at(c, y, t.hi) * w;
      }
    }
  }
  Tensor<T> out({c_n, out_h_, out_w_});
  for (int c = 0; c < c_n; ++c) {
    for (int y = 0; y < out_h_; ++y) {
      const Tap& t = rows_[static_cast<std::size_t>(y)];
      const T w = static_cast<T>(t.w_hi);
      for (int x = 0; x < out_w_; ++x) {
        out.at(c, y, x) = tmp.at(c, t.lo, x) * (T(1) - w) + tmp.at(c, t.hi, x) * w;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> BilinearResampler::adjoint(const Tensor<T>& grad_out) const {
  if (is_identity()) return grad_out;
  const int c_n = grad_out.channels();
  Tensor<T> tmp({c_n, in_h_, out_w_});
  for (int c = 0; c < c_n; ++c) {
    for (int y = 0; y < out_h_; ++y) {
      const Tap& t = rows_[static_cast<std::size_t>(y)];
      const T w = static_cast<T>(t.w_hi);
      for (int x = 0; x < out_w_; ++x) {
        const T g = grad_out.at(c, y, x);
        tmp.at(c, t.lo, x) += g * (T(1) - w);
        tmp.at(c, t.hi, x) += g * w;
      }
    }
  }
  Tensor<T> out({c_n, in_h_, in_w_});
  for (int c = 0; c < c_n; ++c) {
    for (int y = 0; y < in_h_; ++y) {
      for (int x = 0; x < out_w_; ++x) {
        const Tap& t = cols_[static_cast<std::size_t>(x)];
        const T w = static_cast<T>(t.w_hi);
        const T g = tmp.at(c, y, x);
        out.at(c, y, t.lo) += g * (T(1) - w);
        out.at(c, y, t.hi) += g * w;
      }
    }
  }
  return out;
}

template Tensor<float> BilinearResampler::apply(const Tensor<float>&) const;
template Tensor<double> BilinearResampler::apply(const Tensor<double>&) const;
template Tensor<float> BilinearResampler::adjoint(const Tensor<float>&) const;
template Tensor<double> BilinearResampler::adjoint(const Tensor<double>&) const;

ImageTensor resize_bilinear(const ImageTensor& image, int height, int width) {
  return BilinearResampler(image.height(), image.width(), height, width).apply(image);
}

}  // namespace phishmetric
