#pragma once

#include <string>
#include <vector>

#include "phishmetric/nn/layers.h"

namespace phishmetric::nn {

// A feed-forward stack of layers plus the parameters they address.
// Layers are immutable and shared between copies; copying a Network copies
// its parameters only.
template <typename T>
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<int> input_dims) : input_dims_(std::move(input_dims)) {}

  void append(LayerPtr<T> layer);

  const std::vector<int>& input_dims() const { return input_dims_; }
  const std::vector<int>& output_dims() const;
  std::size_t output_size() const;
  const std::vector<LayerPtr<T>>& layers() const { return layers_; }

  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // With check_finite set, throws Error(non_finite) naming the first layer
  // whose output contains NaN or Inf.
  Tensor<T> forward(const Tensor<T>& x, Tape<T>* tape = nullptr, bool check_finite = false) const;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape, ParamStore<T>* grads) const;

 private:
  std::vector<int> input_dims_;
  std::vector<LayerPtr<T>> layers_;
  ParamStore<T> params_;
};

}  // namespace phishmetric::nn
