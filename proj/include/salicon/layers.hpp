#ifndef SALICON_LAYERS_HPP_
#define SALICON_LAYERS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "salicon/tensor.hpp"

// Forward and backward kernels for every layer type of the two-stream
// saliency network. Each kernel is a pure function of its arguments and is
// instantiated for float (production) and double (gradient checking).
namespace salicon::layers {

struct ConvGeometry {
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 1;
  std::size_t pad_w = 1;

  static ConvGeometry same3x3() { return {}; }
  static ConvGeometry pointwise() { return {1, 1, 1, 1, 0, 0}; }

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

// Output extents of a convolution; throws kShape when the padded input is
// smaller than the kernel.
Dims conv_output_dims(const Dims& input, std::size_t out_channels,
                      const ConvGeometry& g);

// Cross-correlation with zero padding plus per-channel bias.
// weights: (out_channels, in_channels, kernel_h, kernel_w); bias: out_channels.
template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input,
                               const BasicTensor4<T>& weights,
                               std::span<const T> bias, const ConvGeometry& g);

template <typename T>
struct ConvGrads {
  BasicTensor4<T> input;    // empty (1x1x1x1 zero) when not requested
  BasicTensor4<T> weights;
  std::vector<T> bias;
};

// Gradients of sum(grad_out * conv2d_forward(input)).
template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor4<T>& input,
                             const BasicTensor4<T>& weights,
                             const ConvGeometry& g,
                             const BasicTensor4<T>& grad_out,
                             bool want_input_grad = true);

template <typename T>
BasicTensor4<T> relu_forward(const BasicTensor4<T>& input);

// Passes grad_out where input > 0; the subgradient at exactly 0 is 0.
template <typename T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& input,
                              const BasicTensor4<T>& grad_out);

// Max pooling with ceil rounding of the output extent. Windows that run past
// the input border only read in-bounds elements.
struct PoolParams {
  std::size_t window = 2;
  std::size_t stride = 2;

  friend bool operator==(const PoolParams&, const PoolParams&) = default;
};

Dims pool_output_dims(const Dims& input, const PoolParams& p);

// Flat input offset of each output element's maximum.
using ArgmaxMap = std::vector<std::uint32_t>;

template <typename T>
struct PoolResult {
  BasicTensor4<T> output;
  ArgmaxMap argmax;
};

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor4<T>& input,
                              const PoolParams& p);

// Scatters each grad_out element onto its recorded argmax (accumulating).
template <typename T>
BasicTensor4<T> maxpool_backward(const ArgmaxMap& argmax,
                                 const BasicTensor4<T>& grad_out,
                                 const Dims& in_dims);

struct Extent2 {
  std::size_t h = 1;
  std::size_t w = 1;

  friend bool operator==(const Extent2&, const Extent2&) = default;
};

// Half-pixel-center bilinear resize of every (n, c) plane:
//   src = clamp((dst + 0.5) * in / out - 0.5, 0, in - 1).
template <typename T>
BasicTensor4<T> bilinear_resize_forward(const BasicTensor4<T>& input,
                                        Extent2 out_hw);

enum class InterpBackward {
  kAdjoint,      // exact transpose of the forward interpolation
  kPaperResize,  // bilinear resize of the gradient back to the input extent
};

const char* to_string(InterpBackward mode);
InterpBackward parse_interp_backward(std::string_view text);

template <typename T>
BasicTensor4<T> bilinear_resize_backward(
    const BasicTensor4<T>& grad_out, Extent2 in_hw,
    InterpBackward mode = InterpBackward::kAdjoint);

// Channel concatenation, a's channels first.
template <typename T>
BasicTensor4<T> concat_channels(const BasicTensor4<T>& a,
                                const BasicTensor4<T>& b);

template <typename T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> concat_channels_backward(
    const BasicTensor4<T>& grad_out, std::size_t a_channels);

template <typename T>
struct LossResult {
  double loss = 0.0;
  BasicTensor4<T> grad_logits;
};

// Mean per-pixel sigmoid cross-entropy against targets in [0, 1].
template <typename T>
LossResult<T> sigmoid_cross_entropy(const BasicTensor4<T>& logits,
                                    const BasicTensor4<T>& target);

}  // namespace salicon::layers

#endif  // SALICON_LAYERS_HPP_
