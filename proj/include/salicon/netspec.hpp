#ifndef SALICON_NETSPEC_HPP_
#define SALICON_NETSPEC_HPP_

#include <cstddef>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "salicon/layers.hpp"
#include "salicon/tensor.hpp"

namespace salicon {

enum class LayerKind { kInput, kConv, kRelu, kMaxPool, kBilinearResize, kConcat, kLoss };

const char* to_string(LayerKind kind);
LayerKind parse_layer_kind(std::string_view text);

struct InputSpec {
  Dims dims;
};

struct ConvSpec {
  std::size_t num_output = 1;
  layers::ConvGeometry geometry;
};

struct ResizeSpec {
  layers::Extent2 out_hw;
};

struct NoParams {};

using LayerParams =
    std::variant<NoParams, InputSpec, ConvSpec, layers::PoolParams, ResizeSpec>;

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kInput;
  std::vector<std::string> bottoms;
  std::vector<std::string> tops;
  LayerParams params;
  // Only meaningful for conv layers. Zero learning rate and zero decay
  // freezes the parameter.
  double lr_mult = 1.0;
  double lr_mult_bias = 2.0;
  double decay_mult = 1.0;
  double decay_mult_bias = 0.0;

  bool has_parameters() const { return kind == LayerKind::kConv; }
  bool trainable() const {
    return has_parameters() && (lr_mult > 0.0 || lr_mult_bias > 0.0);
  }
  const ConvSpec& conv() const { return std::get<ConvSpec>(params); }
};

struct NetSpec {
  std::string name = "net";
  std::vector<LayerSpec> layers;

  const LayerSpec* find(std::string_view layer_name) const;
  LayerSpec* find(std::string_view layer_name);
  bool has_loss() const;
};

using ShapeMap = std::map<std::string, Dims>;

// Parameter tensor names of a conv layer in a WeightStore.
std::string weight_name(std::string_view layer);
std::string bias_name(std::string_view layer);

// Layer indices in execution order (stable with respect to declaration
// order). Throws kGraph on cycles, dangling bottoms, duplicate names or
// blobs produced twice.
std::vector<std::size_t> topological_order(const NetSpec& spec);

// Dims of every blob. Throws kShape naming the offending blobs on mismatch.
ShapeMap infer_shapes(const NetSpec& spec);

// Text form: one `layer { ... }` record per layer with `key: value` lines.
std::string format_netspec(const NetSpec& spec);
NetSpec parse_netspec(std::string_view text);
NetSpec load_netspec(const std::filesystem::path& path);
void save_netspec(const NetSpec& spec, const std::filesystem::path& path);

// ----------------------------------------------------------------------------
// Two-stream saliency architecture.

namespace blobs {
inline constexpr std::string_view kFineInput = "fine_scale";
inline constexpr std::string_view kCoarseInput = "coarse_scale";
inline constexpr std::string_view kGroundTruth = "ground_truth";
inline constexpr std::string_view kSaliency = "saliency_map";
inline constexpr std::string_view kLoss = "loss";
inline constexpr std::string_view kCoarsePrefix = "sec_";
inline constexpr std::string_view kFusionLayer = "saliency_map";
inline constexpr std::string_view kInterpolationLayer =
    "custom_interpolation_layer";
}  // namespace blobs

enum class NetMode { kInference, kTraining };

struct ConvBlock {
  std::size_t convs;
  std::size_t channels;
};

struct TwoStreamConfig {
  Dims fine_input{1, 3, 1200, 1600};
  Dims coarse_input{1, 3, 600, 800};
  std::vector<ConvBlock> blocks;  // VGG-16 by default
  // Leading blocks whose convolutions get lr_mult = decay_mult = 0.
  std::size_t frozen_blocks = 3;
  NetMode mode = NetMode::kInference;

  static TwoStreamConfig vgg16(NetMode mode);
  // Two single-conv blocks on 1x3x24x32 / 1x3x12x16 inputs.
  static TwoStreamConfig miniature(NetMode mode);
};

std::vector<ConvBlock> vgg16_blocks();
// conv1_1 ... conv5_3.
std::vector<std::string> vgg16_conv_names();

// Spatial extent of the fine stream after every pooling stage; this is the
// resolution of the fused saliency logits.
layers::Extent2 fused_extent(const TwoStreamConfig& cfg);

NetSpec build_two_stream_spec(const TwoStreamConfig& cfg);
NetSpec build_salicon_spec(NetMode mode);

}  // namespace salicon

#endif  // SALICON_NETSPEC_HPP_
