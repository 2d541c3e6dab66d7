#include "salicon/network.hpp"

#include <algorithm>
#include <utility>

namespace salicon {

template <typename T>
BasicNetwork<T>::BasicNetwork(NetSpec spec, const WeightStore& weights,
                              NetworkOptions options)
    : spec_(std::move(spec)), options_(options) {
  shapes_ = infer_shapes(spec_);
  order_ = topological_order(spec_);
  for (std::size_t k = 0; k < order_.size(); ++k) {
    const LayerSpec& l = spec_.layers[order_[k]];
    bool upstream = l.trainable();
    for (const auto& b : l.bottoms) {
      upstream = upstream || needs_grad_.at(b);
      last_use_[b] = k;
    }
    for (const auto& t : l.tops) needs_grad_[t] = upstream;
  }
  load_weights(weights);
}

template <typename T>
void BasicNetwork<T>::load_weights(const WeightStore& weights) {
  BlobMap params;
  std::map<std::string, ParamInfo, std::less<>> info;
  for (const auto& l : spec_.layers) {
    if (!l.has_parameters()) continue;
    const Dims& in = shapes_.at(l.bottoms[0]);
    const auto& conv = l.conv();
    const Dims wdims{conv.num_output, in.c, conv.geometry.kernel_h,
                     conv.geometry.kernel_w};
    const std::string wn = weight_name(l.name);
    const std::string bn = bias_name(l.name);
    for (const auto& name : {wn, bn}) {
      if (!weights.contains(name)) {
        throw Error(ErrorKind::kInput, "weights lack '" + name + "'");
      }
    }
    const Tensor4& w = weights.get(wn);
    if (!(w.dims() == wdims)) {
      throw Error(ErrorKind::kInput, "'" + wn + "' has dims " +
                                         to_string(w.dims()) + ", layer needs " +
                                         to_string(wdims));
    }
    const Tensor4& b = weights.get(bn);
    if (b.count() != conv.num_output) {
      throw Error(ErrorKind::kInput, "'" + bn + "' has " +
                                         std::to_string(b.count()) +
                                         " values, layer needs " +
                                         std::to_string(conv.num_output));
    }
    params.emplace(wn, tensor_cast<T>(w));
    params.emplace(bn, tensor_cast<T>(b.reshaped({1, 1, 1, conv.num_output})));
    info[wn] = {l.name, l.lr_mult, l.decay_mult};
    info[bn] = {l.name, l.lr_mult_bias, l.decay_mult_bias};
  }
  params_ = std::move(params);
  param_info_ = std::move(info);
}

template <typename T>
const typename BasicNetwork<T>::BlobMap& BasicNetwork<T>::forward(
    BlobMap inputs) {
  blobs_.clear();
  blob_grads_.clear();
  argmax_.clear();
  loss_grad_.reset();
  forward_done_ = false;

  for (const auto& [name, tensor] : inputs) {
    const bool declared = std::any_of(
        spec_.layers.begin(), spec_.layers.end(), [&](const LayerSpec& l) {
          return l.kind == LayerKind::kInput && l.tops[0] == name;
        });
    if (!declared) {
      throw Error(ErrorKind::kInput, "'" + name + "' is not an input blob");
    }
  }

  for (std::size_t k = 0; k < order_.size(); ++k) {
    const LayerSpec& l = spec_.layers[order_[k]];
    const std::string& top = l.tops[0];
    auto bottom = [&](std::size_t i) -> const Tensor& {
      return blobs_.at(l.bottoms[i]);
    };
    switch (l.kind) {
      case LayerKind::kInput: {
        auto it = inputs.find(top);
        if (it == inputs.end()) {
          throw Error(ErrorKind::kInput, "missing input blob '" + top + "'");
        }
        if (!(it->second.dims() == shapes_.at(top))) {
          throw Error(ErrorKind::kInput, "input '" + top + "' has dims " +
                                             to_string(it->second.dims()) +
                                             ", expected " +
                                             to_string(shapes_.at(top)));
        }
        blobs_[top] = std::move(it->second);
        break;
      }
      case LayerKind::kConv: {
        const Tensor& w = params_.at(weight_name(l.name));
        const Tensor& b = params_.at(bias_name(l.name));
        blobs_[top] = layers::conv2d_forward<T>(bottom(0), w, b.data(),
                                                l.conv().geometry);
        break;
      }
      case LayerKind::kRelu:
        blobs_[top] = layers::relu_forward(bottom(0));
        break;
      case LayerKind::kMaxPool: {
        auto pooled = layers::maxpool_forward(
            bottom(0), std::get<layers::PoolParams>(l.params));
        blobs_[top] = std::move(pooled.output);
        if (options_.retain_activations) {
          argmax_[l.name] = std::move(pooled.argmax);
        }
        break;
      }
      case LayerKind::kBilinearResize:
        blobs_[top] = layers::bilinear_resize_forward(
            bottom(0), std::get<ResizeSpec>(l.params).out_hw);
        break;
      case LayerKind::kConcat:
        blobs_[top] = layers::concat_channels(bottom(0), bottom(1));
        break;
      case LayerKind::kLoss: {
        auto result = layers::sigmoid_cross_entropy(bottom(0), bottom(1));
        loss_ = result.loss;
        loss_grad_ = std::move(result.grad_logits);
        blobs_[top] = Tensor::filled({1, 1, 1, 1}, static_cast<T>(loss_));
        break;
      }
    }
    if (!options_.retain_activations) {
      for (const auto& b : l.bottoms) {
        if (last_use_.at(b) == k) blobs_.erase(b);
      }
    }
  }
  forward_done_ = true;
  return blobs_;
}

template <typename T>
void BasicNetwork<T>::accumulate_grad(const std::string& blob, Tensor grad) {
  auto it = blob_grads_.find(blob);
  if (it == blob_grads_.end()) {
    blob_grads_.emplace(blob, std::move(grad));
  } else {
    saxpy_inplace(it->second, grad, T(1));
  }
}

template <typename T>
void BasicNetwork<T>::backward() {
  if (!forward_done_) {
    throw Error(ErrorKind::kState, "backward called before forward");
  }
  if (!options_.retain_activations) {
    throw Error(ErrorKind::kState, "backward needs retained activations");
  }
  if (!loss_grad_) {
    throw Error(ErrorKind::kState, "backward needs a loss layer");
  }
  blob_grads_.clear();
  param_grads_.clear();

  for (std::size_t k = order_.size(); k-- > 0;) {
    const LayerSpec& l = spec_.layers[order_[k]];
    if (l.kind == LayerKind::kInput) continue;
    if (l.kind == LayerKind::kLoss) {
      if (needs_grad_.at(l.bottoms[0])) accumulate_grad(l.bottoms[0], *loss_grad_);
      continue;
    }
    auto found = blob_grads_.find(l.tops[0]);
    if (found == blob_grads_.end()) continue;
    Tensor grad = std::move(found->second);
    blob_grads_.erase(found);

    const Tensor& in = blobs_.at(l.bottoms[0]);
    const bool want_bottom = needs_grad_.at(l.bottoms[0]);
    switch (l.kind) {
      case LayerKind::kConv: {
        const std::string wn = weight_name(l.name);
        const std::string bn = bias_name(l.name);
        auto grads = layers::conv2d_backward<T>(in, params_.at(wn),
                                                l.conv().geometry, grad,
                                                want_bottom);
        if (l.lr_mult > 0.0) param_grads_[wn] = std::move(grads.weights);
        if (l.lr_mult_bias > 0.0) {
          const std::size_t len = grads.bias.size();
          param_grads_[bn] = Tensor({1, 1, 1, len}, std::move(grads.bias));
        }
        if (want_bottom) accumulate_grad(l.bottoms[0], std::move(grads.input));
        break;
      }
      case LayerKind::kRelu:
        if (want_bottom) accumulate_grad(l.bottoms[0], layers::relu_backward(in, grad));
        break;
      case LayerKind::kMaxPool:
        if (want_bottom) {
          accumulate_grad(l.bottoms[0], layers::maxpool_backward(
                                            argmax_.at(l.name), grad, in.dims()));
        }
        break;
      case LayerKind::kBilinearResize:
        if (want_bottom) {
          accumulate_grad(l.bottoms[0],
                          layers::bilinear_resize_backward(
                              grad, {in.dims().h, in.dims().w},
                              options_.interp_backward));
        }
        break;
      case LayerKind::kConcat: {
        auto [ga, gb] = layers::concat_channels_backward(grad, in.dims().c);
        if (want_bottom) accumulate_grad(l.bottoms[0], std::move(ga));
        if (needs_grad_.at(l.bottoms[1])) accumulate_grad(l.bottoms[1], std::move(gb));
        break;
      }
      default:
        break;
    }
  }
}

template <typename T>
double BasicNetwork<T>::loss() const {
  if (!loss_grad_) throw Error(ErrorKind::kState, "no loss has been computed");
  return loss_;
}

template <typename T>
bool BasicNetwork<T>::has_blob(std::string_view name) const {
  return blobs_.find(name) != blobs_.end();
}

template <typename T>
const typename BasicNetwork<T>::Tensor& BasicNetwork<T>::blob(
    std::string_view name) const {
  auto it = blobs_.find(name);
  if (it == blobs_.end()) {
    throw Error(ErrorKind::kState, "blob '" + std::string(name) + "' is not available");
  }
  return it->second;
}

template <typename T>
const layers::ArgmaxMap& BasicNetwork<T>::pooling_argmax(
    std::string_view layer) const {
  auto it = argmax_.find(layer);
  if (it == argmax_.end()) {
    throw Error(ErrorKind::kState, "no argmax recorded for '" + std::string(layer) + "'");
  }
  return it->second;
}

template <typename T>
const typename BasicNetwork<T>::Tensor& BasicNetwork<T>::param(
    std::string_view name) const {
  auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorKind::kInput, "no parameter '" + std::string(name) + "'");
  }
  return it->second;
}

template <typename T>
bool BasicNetwork<T>::has_param_grad(std::string_view name) const {
  return param_grads_.find(name) != param_grads_.end();
}

template <typename T>
const typename BasicNetwork<T>::Tensor& BasicNetwork<T>::param_grad(
    std::string_view name) const {
  auto it = param_grads_.find(name);
  if (it == param_grads_.end()) {
    throw Error(ErrorKind::kState, "no gradient for '" + std::string(name) + "'");
  }
  return it->second;
}

template <typename T>
WeightStore BasicNetwork<T>::export_weights() const {
  WeightStore store;
  for (const auto& l : spec_.layers) {
    if (!l.has_parameters()) continue;
    for (const auto& name : {weight_name(l.name), bias_name(l.name)}) {
      store.add(name, tensor_cast<float>(params_.at(name)));
    }
  }
  return store;
}

template class BasicNetwork<float>;
template class BasicNetwork<double>;

}  // namespace salicon
