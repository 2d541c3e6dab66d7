#ifndef SALICON_WEIGHTS_HPP_
#define SALICON_WEIGHTS_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "salicon/netspec.hpp"
#include "salicon/tensor.hpp"

namespace salicon {

// Ordered collection of named tensors. Biases are stored as (1, 1, 1, len).
class WeightStore {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;

  // Throws kFormat on a duplicate name.
  void add(std::string name, Tensor4 tensor);
  // Inserts or overwrites, keeping the original position on overwrite.
  void set(const std::string& name, Tensor4 tensor);

  bool contains(std::string_view name) const;
  const Tensor4& get(std::string_view name) const;
  Tensor4& get(std::string_view name);

  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  const std::vector<std::pair<std::string, Tensor4>>& entries() const {
    return entries_;
  }

  std::uint32_t version = kFormatVersion;
  std::string note;  // free-form, in memory only

  // Compares entries (names, order and bits); metadata is ignored.
  friend bool operator==(const WeightStore& a, const WeightStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor4>> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// NTW1 layout, all integers little-endian:
//   "NTW1" | u32 entry count | per entry:
//     u16 name length | UTF-8 name | u32 n, c, h, w | n*c*h*w IEEE-754 f32
std::vector<std::uint8_t> encode_ntw1(const WeightStore& store);
// Throws kFormat with the byte offset on bad magic, truncation, trailing
// bytes or duplicate names.
WeightStore decode_ntw1(std::span<const std::uint8_t> bytes);

void save_weights(const WeightStore& store, const std::filesystem::path& path);
WeightStore load_weights(const std::filesystem::path& path);

// Raw-import manifest: one entry per line,
//   <name> <n> <c> <h> <w> <relative path to little-endian f32 file>
// Blank lines and '#' comments are ignored. Paths are relative to the
// manifest's directory.
WeightStore import_raw(const std::filesystem::path& manifest_path);
// Writes one .f32 file per entry plus `manifest.txt` into `dir`.
std::filesystem::path export_raw(const WeightStore& store,
                                 const std::filesystem::path& dir);

struct TransplantOptions {
  std::uint64_t seed = 0;
  double gaussian_std = 0.01;
  double bias_const = 0.0;
};

// Builds the parameter set of a two-stream spec from single-stream VGG
// weights: each `convX_Y` tensor is copied into both `convX_Y` and
// `sec_convX_Y`; the fusion layer is drawn from N(0, std^2) and its bias
// set to a constant. Entries follow spec layer order.
WeightStore transplant_vgg(const WeightStore& vgg, const NetSpec& spec,
                           const TransplantOptions& options = {});

// Random parameters for every conv layer of `spec` (He-scaled Gaussian
// weights, zero biases). Used for tests and synthetic fixtures.
WeightStore random_weights(const NetSpec& spec, std::uint64_t seed);

// Single-stream VGG-16 conv weights with He-scaled Gaussian values under
// canonical names, standing in for an exported pretrained model.
WeightStore random_vgg16(std::uint64_t seed, const std::vector<ConvBlock>& blocks = vgg16_blocks(),
                         std::size_t in_channels = 3);

}  // namespace salicon

#endif  // SALICON_WEIGHTS_HPP_
