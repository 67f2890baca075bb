#include "phishmetric/nn/network.h"

#include <cmath>

#include "phishmetric/error.h"

namespace phishmetric::nn {

template <typename T>
void Network<T>::append(LayerPtr<T> layer) {
  const auto& expected = layers_.empty() ? input_dims_ : layers_.back()->out_dims();
  if (layer->in_dims() != expected) {
    throw Error(errc::kDimension, "layer " + layer->name() + " input " + dims_to_string(layer->in_dims()) +
                                      " does not follow " + dims_to_string(expected));
  }
  layers_.push_back(std::move(layer));
}

template <typename T>
const std::vector<int>& Network<T>::output_dims() const {
  return layers_.empty() ? input_dims_ : layers_.back()->out_dims();
}

template <typename T>
std::size_t Network<T>::output_size() const {
  return Tensor<T>::count(output_dims());
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& x, Tape<T>* tape, bool check_finite) const {
  Tensor<T> h = x;
  for (const auto& layer : layers_) {
    h = layer->forward(h, params_, tape);
    if (check_finite) {
      for (const T v : h.values()) {
        if (!std::isfinite(v)) throw Error(errc::kNonFinite, "non-finite activation in layer " + layer->name());
      }
    }
  }
  return h;
}

template <typename T>
Tensor<T> Network<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape, ParamStore<T>* grads) const {
  Tensor<T> g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g, params_, tape, grads);
  return g;
}

template class Network<float>;
template class Network<double>;

}  // namespace phishmetric::nn
