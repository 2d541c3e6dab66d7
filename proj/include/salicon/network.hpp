#ifndef SALICON_NETWORK_HPP_
#define SALICON_NETWORK_HPP_

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "salicon/layers.hpp"
#include "salicon/netspec.hpp"
#include "salicon/tensor.hpp"
#include "salicon/weights.hpp"

namespace salicon {

struct NetworkOptions {
  // Keep every activation after forward (required for backward). When off,
  // intermediate blobs are released as soon as their last consumer has run
  // and only terminal blobs survive.
  bool retain_activations = true;
  layers::InterpBackward interp_backward = layers::InterpBackward::kAdjoint;
};

// An instantiated layer graph. Single-writer: forward and backward need
// exclusive access; separate instances may share one WeightStore.
template <typename T>
class BasicNetwork {
 public:
  using Tensor = BasicTensor4<T>;
  using BlobMap = std::map<std::string, Tensor, std::less<>>;

  // Copies every conv layer's parameters out of `weights`; throws kInput when
  // one is missing or mis-shaped.
  BasicNetwork(NetSpec spec, const WeightStore& weights,
               NetworkOptions options = {});

  // Runs every layer in topological order. `inputs` must hold each input
  // blob with its declared dims. Returns the live blobs.
  const BlobMap& forward(BlobMap inputs);

  // Populates gradients of the loss for every parameter with a positive
  // learning-rate multiplier. Requires a forward pass with retained
  // activations on a spec that has a loss layer.
  void backward();

  double loss() const;
  const Tensor& blob(std::string_view name) const;
  bool has_blob(std::string_view name) const;
  const BlobMap& blobs() const { return blobs_; }
  // Argmax routing recorded by a pooling layer in the last forward pass.
  const layers::ArgmaxMap& pooling_argmax(std::string_view layer) const;

  // Parameter tensors keyed by weight_name()/bias_name().
  BlobMap& params() { return params_; }
  const BlobMap& params() const { return params_; }
  const Tensor& param(std::string_view name) const;

  bool has_param_grad(std::string_view name) const;
  const Tensor& param_grad(std::string_view name) const;
  const BlobMap& param_grads() const { return param_grads_; }

  // Learning-rate and decay multipliers of a parameter tensor.
  struct ParamInfo {
    std::string layer;
    double lr_mult;
    double decay_mult;
  };
  const std::map<std::string, ParamInfo, std::less<>>& param_info() const {
    return param_info_;
  }

  // Parameters in spec order, converted to float.
  WeightStore export_weights() const;
  // Overwrites parameters from a store (same validation as construction).
  void load_weights(const WeightStore& weights);

  const NetSpec& spec() const { return spec_; }
  const ShapeMap& shapes() const { return shapes_; }
  const NetworkOptions& options() const { return options_; }
  void set_interp_backward(layers::InterpBackward mode) {
    options_.interp_backward = mode;
  }

 private:
  void accumulate_grad(const std::string& blob, Tensor grad);

  NetSpec spec_;
  NetworkOptions options_;
  ShapeMap shapes_;
  std::vector<std::size_t> order_;
  // Blob -> whether any trainable parameter lies upstream of it.
  std::map<std::string, bool, std::less<>> needs_grad_;
  // Blob -> index into order_ of its last consumer.
  std::map<std::string, std::size_t, std::less<>> last_use_;

  BlobMap params_;
  std::map<std::string, ParamInfo, std::less<>> param_info_;
  BlobMap blobs_;
  std::map<std::string, layers::ArgmaxMap, std::less<>> argmax_;
  std::optional<Tensor> loss_grad_;
  double loss_ = 0.0;
  bool forward_done_ = false;

  BlobMap blob_grads_;
  BlobMap param_grads_;
};

using Network = BasicNetwork<float>;
using NetworkD = BasicNetwork<double>;

extern template class BasicNetwork<float>;
extern template class BasicNetwork<double>;

}  // namespace salicon

#endif  // SALICON_NETWORK_HPP_
