#include "salicon/weights.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <random>
#include <sstream>

namespace salicon {
namespace {

constexpr std::uint8_t kMagic[4] = {'N', 'T', 'W', '1'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int shift = 0; shift < 32; shift += 8) {
    out.push_back(static_cast<std::uint8_t>((v >> shift) & 0xff));
  }
}

std::uint32_t u32_at(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint32_t checked_u32(std::size_t v, const std::string& what) {
  if (v > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::kFormat, what + " does not fit in 32 bits");
  }
  return static_cast<std::uint32_t>(v);
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (remaining() < n) {
      throw Error(ErrorKind::kFormat,
                  std::string("truncated ") + what + " at byte offset " +
                      std::to_string(pos_) + " (need " + std::to_string(n) +
                      " bytes, " + std::to_string(remaining()) + " left)");
    }
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint32_t u32(const char* what) { return u32_at(take(4, what)); }
  std::uint16_t u16(const char* what) {
    const std::uint8_t* p = take(2, what);
    return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path,
                                    const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw Error(ErrorKind::kIo, "cannot open " + what + " '" + path.string() + "'");
  }
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path,
                std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

void append_floats(std::vector<std::uint8_t>& out, std::span<const float> values) {
  for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
}

std::vector<float> floats_from(const std::uint8_t* p, std::size_t count) {
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    values[i] = std::bit_cast<float>(u32_at(p + 4 * i));
  }
  return values;
}

Tensor4 gaussian_tensor(const Dims& dims, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor4 t(dims);
  for (float& v : t.data()) v = static_cast<float>(dist(rng));
  return t;
}

Dims bias_dims(std::size_t channels) { return {1, 1, 1, channels}; }

}  // namespace

void WeightStore::add(std::string name, Tensor4 tensor) {
  if (index_.count(name) != 0) {
    throw Error(ErrorKind::kFormat, "duplicate tensor name '" + name + "'");
  }
  index_.emplace(name, entries_.size());
  entries_.emplace_back(std::move(name), std::move(tensor));
}

void WeightStore::set(const std::string& name, Tensor4 tensor) {
  auto it = index_.find(name);
  if (it == index_.end()) {
    add(name, std::move(tensor));
  } else {
    entries_[it->second].second = std::move(tensor);
  }
}

bool WeightStore::contains(std::string_view name) const {
  return index_.find(name) != index_.end();
}

const Tensor4& WeightStore::get(std::string_view name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorKind::kInput, "no tensor named '" + std::string(name) + "'");
  }
  return entries_[it->second].second;
}

Tensor4& WeightStore::get(std::string_view name) {
  return const_cast<Tensor4&>(std::as_const(*this).get(name));
}

std::vector<std::uint8_t> encode_ntw1(const WeightStore& store) {
  std::vector<std::uint8_t> out(std::begin(kMagic), std::end(kMagic));
  put_u32(out, checked_u32(store.size(), "entry count"));
  for (const auto& [name, tensor] : store.entries()) {
    if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
      throw Error(ErrorKind::kFormat, "tensor name longer than 65535 bytes");
    }
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    for (std::size_t d : tensor.dims().as_array()) {
      put_u32(out, checked_u32(d, "dimension of '" + name + "'"));
    }
    append_floats(out, tensor.data());
  }
  return out;
}

WeightStore decode_ntw1(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  const std::uint8_t* magic = r.take(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw Error(ErrorKind::kFormat, "bad magic at byte offset 0 (expected NTW1)");
  }
  const std::uint32_t count = r.u32("entry count");
  WeightStore store;
  for (std::uint32_t e = 0; e < count; ++e) {
    const std::size_t entry_offset = r.offset();
    const std::uint16_t name_len = r.u16("name length");
    const std::uint8_t* name_ptr = r.take(name_len, "name");
    std::string name(reinterpret_cast<const char*>(name_ptr), name_len);
    if (store.contains(name)) {
      throw Error(ErrorKind::kFormat, "duplicate tensor name '" + name +
                                          "' at byte offset " +
                                          std::to_string(entry_offset));
    }
    Dims dims;
    const std::size_t dims_offset = r.offset();
    dims.n = r.u32("dims");
    dims.c = r.u32("dims");
    dims.h = r.u32("dims");
    dims.w = r.u32("dims");
    std::size_t elements = 0;
    try {
      elements = dims.count();
    } catch (const Error&) {
      throw Error(ErrorKind::kFormat, "invalid dims " + to_string(dims) +
                                          " for '" + name + "' at byte offset " +
                                          std::to_string(dims_offset));
    }
    if (elements > r.remaining() / 4) {
      throw Error(ErrorKind::kFormat, "truncated payload of '" + name +
                                          "' at byte offset " +
                                          std::to_string(r.offset()));
    }
    const std::uint8_t* payload = r.take(elements * 4, "payload");
    store.add(std::move(name), Tensor4(dims, floats_from(payload, elements)));
  }
  if (r.remaining() != 0) {
    throw Error(ErrorKind::kFormat, "unexpected trailing data at byte offset " +
                                        std::to_string(r.offset()));
  }
  return store;
}

void save_weights(const WeightStore& store, const std::filesystem::path& path) {
  write_file(path, encode_ntw1(store));
}

WeightStore load_weights(const std::filesystem::path& path) {
  const auto bytes = read_file(path, "weights file");
  try {
    return decode_ntw1(bytes);
  } catch (const Error& e) {
    throw Error(e.kind(), path.string() + ": " + e.message());
  }
}

WeightStore import_raw(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) {
    throw Error(ErrorKind::kIo, "cannot open manifest '" + manifest_path.string() + "'");
  }
  const auto base = manifest_path.parent_path();
  WeightStore store;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string name;
    if (!(fields >> name)) continue;
    Dims dims;
    std::string rel;
    if (!(fields >> dims.n >> dims.c >> dims.h >> dims.w >> rel)) {
      throw Error(ErrorKind::kFormat, manifest_path.string() + " line " +
                                          std::to_string(line_no) +
                                          ": expected '<name> n c h w <file>'");
    }
    std::string extra;
    if (fields >> extra) {
      throw Error(ErrorKind::kFormat, manifest_path.string() + " line " +
                                          std::to_string(line_no) +
                                          ": trailing field '" + extra + "'");
    }
    std::size_t elements = 0;
    try {
      elements = dims.count();
    } catch (const Error&) {
      throw Error(ErrorKind::kFormat, "entry '" + name + "' has invalid dims " +
                                          to_string(dims));
    }
    const auto bytes = read_file(base / rel, "raw tensor file of entry '" + name + "'");
    if (bytes.size() != elements * 4) {
      throw Error(ErrorKind::kFormat,
                  "entry '" + name + "': file holds " + std::to_string(bytes.size()) +
                      " bytes, dims " + to_string(dims) + " need " +
                      std::to_string(elements * 4));
    }
    store.add(name, Tensor4(dims, floats_from(bytes.data(), elements)));
  }
  return store;
}

std::filesystem::path export_raw(const WeightStore& store,
                                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto manifest = dir / "manifest.txt";
  std::ofstream out(manifest);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + manifest.string() + "'");
  for (const auto& [name, tensor] : store.entries()) {
    const std::string file = name + ".f32";
    std::vector<std::uint8_t> bytes;
    bytes.reserve(tensor.count() * 4);
    append_floats(bytes, tensor.data());
    write_file(dir / file, bytes);
    const Dims& d = tensor.dims();
    out << name << ' ' << d.n << ' ' << d.c << ' ' << d.h << ' ' << d.w << ' '
        << file << '\n';
  }
  return manifest;
}

WeightStore transplant_vgg(const WeightStore& vgg, const NetSpec& spec,
                           const TransplantOptions& options) {
  if (!(options.gaussian_std >= 0.0) || !std::isfinite(options.bias_const)) {
    throw Error(ErrorKind::kConfig, "fusion init needs std >= 0 and a finite bias");
  }
  const ShapeMap shapes = infer_shapes(spec);
  const std::string prefix(blobs::kCoarsePrefix);
  std::mt19937_64 rng(options.seed);
  WeightStore out;
  for (const auto& layer : spec.layers) {
    if (layer.kind != LayerKind::kConv) continue;
    const Dims& in = shapes.at(layer.bottoms[0]);
    const auto& conv = layer.conv();
    const Dims wdims{conv.num_output, in.c, conv.geometry.kernel_h,
                     conv.geometry.kernel_w};

    if (layer.name == blobs::kFusionLayer) {
      out.add(weight_name(layer.name), gaussian_tensor(wdims, options.gaussian_std, rng));
      out.add(bias_name(layer.name),
              Tensor4::filled(bias_dims(conv.num_output),
                              static_cast<float>(options.bias_const)));
      continue;
    }

    std::string source = layer.name;
    if (source.starts_with(prefix)) source.erase(0, prefix.size());
    if (!vgg.contains(weight_name(source)) || !vgg.contains(bias_name(source))) {
      throw Error(ErrorKind::kTransplant, "VGG weights lack layer '" + source +
                                              "' (needed by '" + layer.name + "')");
    }
    const Tensor4& w = vgg.get(weight_name(source));
    require_same_dims(w.dims(), wdims, "VGG layer '" + source + "' weights");
    const Tensor4& b = vgg.get(bias_name(source));
    if (b.count() != conv.num_output) {
      throw Error(ErrorKind::kShape, "VGG layer '" + source + "' bias has " +
                                         std::to_string(b.count()) + " values, expected " +
                                         std::to_string(conv.num_output));
    }
    out.add(weight_name(layer.name), w);
    out.add(bias_name(layer.name), b.reshaped(bias_dims(conv.num_output)));
  }
  out.note = "transplanted from VGG, fusion seed " + std::to_string(options.seed);
  return out;
}

WeightStore random_weights(const NetSpec& spec, std::uint64_t seed) {
  const ShapeMap shapes = infer_shapes(spec);
  std::mt19937_64 rng(seed);
  WeightStore out;
  for (const auto& layer : spec.layers) {
    if (layer.kind != LayerKind::kConv) continue;
    const Dims& in = shapes.at(layer.bottoms[0]);
    const auto& conv = layer.conv();
    const Dims wdims{conv.num_output, in.c, conv.geometry.kernel_h,
                     conv.geometry.kernel_w};
    const double fan_in = static_cast<double>(in.c * wdims.h * wdims.w);
    out.add(weight_name(layer.name), gaussian_tensor(wdims, std::sqrt(2.0 / fan_in), rng));
    out.add(bias_name(layer.name), Tensor4(bias_dims(conv.num_output)));
  }
  return out;
}

WeightStore random_vgg16(std::uint64_t seed, const std::vector<ConvBlock>& blocks,
                         std::size_t in_channels) {
  std::mt19937_64 rng(seed);
  WeightStore out;
  std::size_t channels = in_channels;
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (std::size_t i = 0; i < blocks[b].convs; ++i) {
      const std::string name = "conv" + std::to_string(b + 1) + "_" + std::to_string(i + 1);
      const Dims wdims{blocks[b].channels, channels, 3, 3};
      out.add(weight_name(name),
              gaussian_tensor(wdims, std::sqrt(2.0 / static_cast<double>(channels * 9)), rng));
      out.add(bias_name(name), Tensor4(bias_dims(blocks[b].channels)));
      channels = blocks[b].channels;
    }
  }
  return out;
}

}  // namespace salicon
