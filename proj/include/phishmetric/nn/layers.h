#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "phishmetric/tensor.h"

namespace phishmetric::nn {

// Named parameter tensors. A network and its gradient buffer share the
// same layout, so layers address parameters by index.
template <typename T>
struct ParamStore {
  std::vector<std::string> names;
  std::vector<Tensor<T>> tensors;

  std::size_t add(std::string name, Tensor<T> value) {
    names.push_back(std::move(name));
    tensors.push_back(std::move(value));
    return tensors.size() - 1;
  }
  std::size_t size() const { return tensors.size(); }
  std::size_t scalar_count() const;
  // Index of `name`, or size() when absent.
  std::size_t find(const std::string& name) const;
  ParamStore zeros_like() const;
  void set_zero();
  void add_scaled(const ParamStore& other, T scale);

  friend bool operator==(const ParamStore&, const ParamStore&) = default;
};

// Activations saved by forward for use by backward. Layers push in forward
// order and pop in reverse, so nested blocks compose without bookkeeping.
template <typename T>
class Tape {
 public:
  void push(Tensor<T> t) { stack_.push_back(std::move(t)); }
  Tensor<T> pop() {
    Tensor<T> t = std::move(stack_.back());
    stack_.pop_back();
    return t;
  }
  bool empty() const { return stack_.empty(); }
  std::size_t depth() const { return stack_.size(); }

 private:
  std::vector<Tensor<T>> stack_;
};

template <typename T>
class Layer {
 public:
  Layer(std::string name, std::vector<int> in_dims)
      : name_(std::move(name)), in_dims_(std::move(in_dims)) {}
  virtual ~Layer() = default;

  const std::string& name() const { return name_; }
  const std::vector<int>& in_dims() const { return in_dims_; }
  const std::vector<int>& out_dims() const { return out_dims_; }

  // tape == nullptr means inference: nothing is recorded.
  virtual Tensor<T> forward(const Tensor<T>& x, const ParamStore<T>& p, Tape<T>* tape) const = 0;
  // Returns d(loss)/d(input). Parameter gradients are accumulated into
  // `grads` when it is non-null.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, const ParamStore<T>& p, Tape<T>& tape,
                             ParamStore<T>* grads) const = 0;

 protected:
  std::string name_;
  std::vector<int> in_dims_;
  std::vector<int> out_dims_;
};

template <typename T>
using LayerPtr = std::shared_ptr<const Layer<T>>;

struct ConvSpec {
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int padding = 1;
  bool bias = true;
};

// Every factory registers its parameters in `params`; weights are drawn
// from `rng` (He-normal for conv/linear) so float and double networks built
// from the same seed hold the same values up to rounding.
template <typename T>
LayerPtr<T> make_conv2d(const std::string& name, const std::vector<int>& in_dims, const ConvSpec& spec,
                        ParamStore<T>& params, std::mt19937_64& rng);
template <typename T>
LayerPtr<T> make_relu(const std::string& name, const std::vector<int>& in_dims);
template <typename T>
LayerPtr<T> make_max_pool(const std::string& name, const std::vector<int>& in_dims, int kernel, int stride,
                          int padding);
template <typename T>
LayerPtr<T> make_global_max_pool(const std::string& name, const std::vector<int>& in_dims);
template <typename T>
LayerPtr<T> make_global_avg_pool(const std::string& name, const std::vector<int>& in_dims);
template <typename T>
LayerPtr<T> make_flatten(const std::string& name, const std::vector<int>& in_dims);
template <typename T>
LayerPtr<T> make_linear(const std::string& name, const std::vector<int>& in_dims, int out_features,
                        ParamStore<T>& params, std::mt19937_64& rng);
// Per-channel y = scale * x + shift; stands in for batch norm with frozen
// statistics folded into the affine terms.
template <typename T>
LayerPtr<T> make_channel_affine(const std::string& name, const std::vector<int>& in_dims, ParamStore<T>& params);
// ResNet bottleneck (1x1 -> 3x3(stride) -> 1x1, expansion 4) with a
// projection shortcut when shape changes.
template <typename T>
LayerPtr<T> make_bottleneck(const std::string& name, const std::vector<int>& in_dims, int width, int stride,
                            ParamStore<T>& params, std::mt19937_64& rng);

}  // namespace phishmetric::nn
