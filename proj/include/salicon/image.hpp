#ifndef SALICON_IMAGE_HPP_
#define SALICON_IMAGE_HPP_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "salicon/layers.hpp"
#include "salicon/tensor.hpp"

namespace salicon {

// 8-bit RGB, row-major, 3 bytes per pixel.
struct RawImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  RawImage() = default;
  RawImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> rgb);

  std::uint8_t at(std::size_t x, std::size_t y, std::size_t channel) const {
    return pixels[(y * width + x) * 3 + channel];
  }
};

// PNG (any bit depth / color type) or binary PPM (P6) / PGM (P5). Grayscale
// sources are replicated to three channels. Throws kDecode or kIo.
RawImage decode_image(const std::filesystem::path& path);

void write_png_rgb(const std::filesystem::path& path, const RawImage& image);
void write_png_gray(const std::filesystem::path& path, std::size_t width,
                    std::size_t height, std::span<const std::uint8_t> gray);
void write_ppm(const std::filesystem::path& path, const RawImage& image);

// ----------------------------------------------------------------------------

struct PreprocConfig {
  // Per-channel means in network input order (after the optional swap).
  std::array<double, 3> channel_means{103.939, 116.779, 123.68};
  layers::Extent2 fine_hw{1200, 1600};
  layers::Extent2 coarse_hw{600, 800};
  bool swap_rgb_to_bgr = true;
};

struct NetworkInputs {
  Tensor4 fine;
  Tensor4 coarse;
};

// RGB -> (optional BGR) -> bilinear resize to both scales -> mean subtraction.
NetworkInputs preprocess(const RawImage& image, const PreprocConfig& cfg);

// Single-channel map with values in [0, 1].
struct SaliencyMap {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> values;

  float at(std::size_t x, std::size_t y) const { return values[y * width + x]; }
  // round(255 * s) per pixel.
  std::vector<std::uint8_t> to_gray8() const;
};

// Sigmoid of (1, 1, h, w) logits, resized to out_hw; with a threshold,
// values below it become 0.
SaliencyMap postprocess(const Tensor4& logits, layers::Extent2 out_hw,
                        std::optional<double> threshold = std::nullopt);

void save_saliency_png(const std::filesystem::path& path, const SaliencyMap& map);
// Row-major little-endian f32 values, no header.
void save_saliency_raw(const std::filesystem::path& path, const SaliencyMap& map);

// Ground-truth fixation map scaled to [0, 1] and resized to loss_hw,
// dims (1, 1, loss_h, loss_w).
Tensor4 fixation_tensor(const RawImage& image, layers::Extent2 loss_hw);
Tensor4 load_fixation_map(const std::filesystem::path& path,
                          layers::Extent2 loss_hw = {38, 50});

}  // namespace salicon

#endif  // SALICON_IMAGE_HPP_
