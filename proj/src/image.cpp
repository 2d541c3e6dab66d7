#include "salicon/image.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace salicon {
namespace {

Error decode_error(const std::filesystem::path& path, const std::string& why) {
  return Error(ErrorKind::kDecode, "'" + path.string() + "': " + why);
}

std::vector<std::uint8_t> read_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::kIo, "cannot open image '" + path.string() + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

RawImage decode_png(const std::filesystem::path& path,
                    const std::vector<std::uint8_t>& bytes) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
    throw decode_error(path, image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    std::string message = image.message;
    png_image_free(&image);
    throw decode_error(path, message);
  }
  return RawImage(image.width, image.height, std::move(rgb));
}

// Binary netpbm: P6 (RGB) or P5 (gray), maxval <= 255.
RawImage decode_pnm(const std::filesystem::path& path,
                    const std::vector<std::uint8_t>& bytes) {
  const bool color = bytes[1] == '6';
  std::size_t pos = 2;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&](const char* what) {
    skip_space();
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      value = value * 10 + (bytes[pos++] - '0');
      if (++digits > 9) throw decode_error(path, std::string(what) + " too large");
    }
    if (digits == 0) throw decode_error(path, std::string("missing ") + what);
    return value;
  };
  const std::size_t width = number("width");
  const std::size_t height = number("height");
  const std::size_t maxval = number("maxval");
  if (width == 0 || height == 0) throw decode_error(path, "empty image");
  if (maxval == 0 || maxval > 255) {
    throw decode_error(path, "unsupported maxval " + std::to_string(maxval));
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw decode_error(path, "malformed header");
  }
  ++pos;
  const std::size_t channels = color ? 3 : 1;
  const std::size_t needed = width * height * channels;
  if (bytes.size() - pos < needed) throw decode_error(path, "truncated pixel data");

  std::vector<std::uint8_t> rgb(width * height * 3);
  for (std::size_t i = 0; i < width * height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      std::size_t v = bytes[pos + i * channels + (color ? c : 0)];
      if (v > maxval) throw decode_error(path, "sample exceeds maxval");
      if (maxval != 255) v = (v * 255 + maxval / 2) / maxval;
      rgb[i * 3 + c] = static_cast<std::uint8_t>(v);
    }
  }
  return RawImage(width, height, std::move(rgb));
}

void write_png(const std::filesystem::path& path, std::size_t width,
               std::size_t height, std::uint32_t format, const std::uint8_t* data) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorKind::kIo,
                "cannot write PNG '" + path.string() + "': " + image.message);
  }
}

}  // namespace

RawImage::RawImage(std::size_t w, std::size_t h, std::vector<std::uint8_t> rgb)
    : width(w), height(h), pixels(std::move(rgb)) {
  if (w == 0 || h == 0 || pixels.size() != w * h * 3) {
    throw Error(ErrorKind::kShape, "image buffer of " + std::to_string(pixels.size()) +
                                       " bytes does not fit " + std::to_string(w) +
                                       "x" + std::to_string(h) + " RGB");
  }
}

RawImage decode_image(const std::filesystem::path& path) {
  const auto bytes = read_bytes(path);
  static constexpr std::uint8_t kPngSignature[8] = {0x89, 'P', 'N', 'G',
                                                    '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(path, bytes);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '6' || bytes[1] == '5')) {
    return decode_pnm(path, bytes);
  }
  throw decode_error(path, "not a PNG or binary PPM/PGM file");
}

void write_png_rgb(const std::filesystem::path& path, const RawImage& image) {
  write_png(path, image.width, image.height, PNG_FORMAT_RGB, image.pixels.data());
}

void write_png_gray(const std::filesystem::path& path, std::size_t width,
                    std::size_t height, std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) {
    throw Error(ErrorKind::kShape, "gray buffer does not match image size");
  }
  write_png(path, width, height, PNG_FORMAT_GRAY, gray.data());
}

void write_ppm(const std::filesystem::path& path, const RawImage& image) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  out << "P6\n" << image.width << " " << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()),
            static_cast<std::streamsize>(image.pixels.size()));
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

NetworkInputs preprocess(const RawImage& image, const PreprocConfig& cfg) {
  Tensor4 planar(Dims{1, 3, image.height, image.width});
  const std::size_t plane = image.width * image.height;
  for (std::size_t c = 0; c < 3; ++c) {
    const std::size_t source = cfg.swap_rgb_to_bgr ? 2 - c : c;
    float* dst = planar.plane(0, c);
    for (std::size_t i = 0; i < plane; ++i) {
      dst[i] = static_cast<float>(image.pixels[i * 3 + source]);
    }
  }
  auto scaled = [&](layers::Extent2 hw) {
    Tensor4 t = layers::bilinear_resize_forward(planar, hw);
    for (std::size_t c = 0; c < 3; ++c) {
      const float mean = static_cast<float>(cfg.channel_means[c]);
      float* p = t.plane(0, c);
      for (std::size_t i = 0; i < hw.h * hw.w; ++i) p[i] -= mean;
    }
    return t;
  };
  return {scaled(cfg.fine_hw), scaled(cfg.coarse_hw)};
}

std::vector<std::uint8_t> SaliencyMap::to_gray8() const {
  std::vector<std::uint8_t> gray(values.size());
  std::transform(values.begin(), values.end(), gray.begin(), [](float s) {
    const double v = std::round(255.0 * std::clamp(static_cast<double>(s), 0.0, 1.0));
    return static_cast<std::uint8_t>(v);
  });
  return gray;
}

SaliencyMap postprocess(const Tensor4& logits, layers::Extent2 out_hw,
                        std::optional<double> threshold) {
  const Dims& d = logits.dims();
  if (d.n != 1 || d.c != 1) {
    throw Error(ErrorKind::kShape, "saliency logits must be 1x1xHxW, got " + to_string(d));
  }
  if (threshold && !(*threshold >= 0.0 && *threshold <= 1.0)) {
    throw Error(ErrorKind::kDomain, "threshold must lie in [0, 1]");
  }
  Tensor4 prob(d);
  for (std::size_t i = 0; i < logits.count(); ++i) {
    const double z = logits[i];
    const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    prob[i] = static_cast<float>(s);
  }
  Tensor4 resized = layers::bilinear_resize_forward(prob, out_hw);
  SaliencyMap map{out_hw.w, out_hw.h, resized.flatten()};
  for (float& v : map.values) {
    v = std::clamp(v, 0.0f, 1.0f);
    if (threshold && v < *threshold) v = 0.0f;
  }
  return map;
}

void save_saliency_png(const std::filesystem::path& path, const SaliencyMap& map) {
  write_png_gray(path, map.width, map.height, map.to_gray8());
}

void save_saliency_raw(const std::filesystem::path& path, const SaliencyMap& map) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::kIo, "cannot write '" + path.string() + "'");
  for (float v : map.values) {
    const auto bits = std::bit_cast<std::uint32_t>(v);
    const char bytes[4] = {static_cast<char>(bits & 0xff), static_cast<char>((bits >> 8) & 0xff),
                           static_cast<char>((bits >> 16) & 0xff),
                           static_cast<char>((bits >> 24) & 0xff)};
    out.write(bytes, 4);
  }
  if (!out) throw Error(ErrorKind::kIo, "failed writing '" + path.string() + "'");
}

Tensor4 fixation_tensor(const RawImage& image, layers::Extent2 loss_hw) {
  Tensor4 map(Dims{1, 1, image.height, image.width});
  for (std::size_t i = 0; i < image.width * image.height; ++i) {
    const float sum = static_cast<float>(image.pixels[i * 3]) +
                      static_cast<float>(image.pixels[i * 3 + 1]) +
                      static_cast<float>(image.pixels[i * 3 + 2]);
    map[i] = sum / 3.0f / 255.0f;
  }
  Tensor4 out = layers::bilinear_resize_forward(map, loss_hw);
  for (float& v : out.data()) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

Tensor4 load_fixation_map(const std::filesystem::path& path, layers::Extent2 loss_hw) {
  return fixation_tensor(decode_image(path), loss_hw);
}

}  // namespace salicon
