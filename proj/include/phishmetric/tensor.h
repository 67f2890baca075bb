#pragma once

#include <cstddef>
#include <initializer_list>
#include <new>
#include <numeric>
#include <span>
#include <string>
#include <vector>

namespace phishmetric {

// Cache-line aligned storage. Eigen picks its vectorised kernel paths from the
// buffer address, so fixed alignment keeps results bit-reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, std::size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor. Images and feature maps use the CHW convention
// (dims = {channels, height, width}); parameters use whatever rank they need.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> dims, T fill = T(0))
      : dims_(std::move(dims)), data_(count(dims_), fill) {}
  Tensor(std::initializer_list<int> dims, T fill = T(0))
      : Tensor(std::vector<int>(dims), fill) {}

  const std::vector<int>& dims() const { return dims_; }
  int rank() const { return static_cast<int>(dims_.size()); }
  int dim(int i) const { return dims_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  // CHW accessors; valid for rank-3 tensors.
  int channels() const { return dims_[0]; }
  int height() const { return dims_[1]; }
  int width() const { return dims_[2]; }
  T& at(int c, int y, int x) {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }
  const T& at(int c, int y, int x) const {
    return data_[(static_cast<std::size_t>(c) * dims_[1] + y) * dims_[2] + x];
  }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }
  // Reinterprets the buffer with new dims of the same element count.
  void reshape(std::vector<int> dims) { dims_ = std::move(dims); }

  static std::size_t count(const std::vector<int>& dims) {
    return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                           [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
  }

  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  std::vector<int> dims_;
  AlignedVector<T> data_;
};

std::string dims_to_string(const std::vector<int>& dims);

}  // namespace phishmetric
