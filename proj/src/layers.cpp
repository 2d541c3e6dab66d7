#include "salicon/layers.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace salicon::layers {
namespace {

// im2col buffers are built a band of output rows at a time so the fine
// stream's early layers stay within a bounded scratch allocation.
constexpr std::size_t kColumnBudget = std::size_t{1} << 24;

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const float* a, std::size_t lda, const float* b,
          std::size_t ldb, float beta, float* c, std::size_t ldc) {
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n,
          std::size_t k, const double* a, std::size_t lda, const double* b,
          std::size_t ldb, double beta, double* c, std::size_t ldc) {
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
              trans_b ? CblasTrans : CblasNoTrans, static_cast<int>(m),
              static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(lda), b, static_cast<int>(ldb), beta, c,
              static_cast<int>(ldc));
}

struct ConvShape {
  std::size_t channels, height, width;
  std::size_t out_h, out_w;
  std::size_t patch;  // channels * kernel_h * kernel_w
};

bool is_pointwise(const ConvGeometry& g) {
  return g == ConvGeometry::pointwise();
}

std::size_t band_rows(const ConvShape& s) {
  const std::size_t per_row = std::max<std::size_t>(1, s.patch * s.out_w);
  return std::clamp<std::size_t>(kColumnBudget / per_row, 1, s.out_h);
}

// Column matrix for output rows [row0, row0 + rows): patch x (rows * out_w).
template <typename T>
void im2col(const T* image, const ConvShape& s, const ConvGeometry& g,
            std::size_t row0, std::size_t rows, T* col) {
  const std::size_t cols = rows * s.out_w;
  for (std::size_t c = 0; c < s.channels; ++c) {
    const T* plane = image + c * s.height * s.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        T* dst = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const auto y = static_cast<std::ptrdiff_t>((row0 + r) * g.stride_h + ki) -
                         static_cast<std::ptrdiff_t>(g.pad_h);
          T* out = dst + r * s.out_w;
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.height)) {
            std::fill(out, out + s.out_w, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(y) * s.width;
          for (std::size_t x = 0; x < s.out_w; ++x) {
            const auto xi = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            out[x] = (xi < 0 || xi >= static_cast<std::ptrdiff_t>(s.width))
                         ? T(0)
                         : src[xi];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvShape& s, const ConvGeometry& g,
                std::size_t row0, std::size_t rows, T* image) {
  const std::size_t cols = rows * s.out_w;
  for (std::size_t c = 0; c < s.channels; ++c) {
    T* plane = image + c * s.height * s.width;
    for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
        const T* src = col + ((c * g.kernel_h + ki) * g.kernel_w + kj) * cols;
        for (std::size_t r = 0; r < rows; ++r) {
          const auto y = static_cast<std::ptrdiff_t>((row0 + r) * g.stride_h + ki) -
                         static_cast<std::ptrdiff_t>(g.pad_h);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(s.height)) continue;
          T* dst = plane + static_cast<std::size_t>(y) * s.width;
          const T* in = src + r * s.out_w;
          for (std::size_t x = 0; x < s.out_w; ++x) {
            const auto xi = static_cast<std::ptrdiff_t>(x * g.stride_w + kj) -
                            static_cast<std::ptrdiff_t>(g.pad_w);
            if (xi >= 0 && xi < static_cast<std::ptrdiff_t>(s.width)) {
              dst[xi] += in[x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
ConvShape check_conv(const BasicTensor4<T>& input,
                     const BasicTensor4<T>& weights, const ConvGeometry& g) {
  const Dims& in = input.dims();
  const Dims& wd = weights.dims();
  if (wd.c != in.c) {
    throw Error(ErrorKind::kShape,
                "convolution expects " + std::to_string(wd.c) +
                    " input channels, got " + std::to_string(in.c));
  }
  if (wd.h != g.kernel_h || wd.w != g.kernel_w) {
    throw Error(ErrorKind::kShape, "weights " + to_string(wd) +
                                       " disagree with kernel " +
                                       std::to_string(g.kernel_h) + "x" +
                                       std::to_string(g.kernel_w));
  }
  const Dims out = conv_output_dims(in, wd.n, g);
  return {in.c, in.h, in.w, out.h, out.w, in.c * g.kernel_h * g.kernel_w};
}

struct Tap {
  std::size_t i0, i1;
  double t;
};

// Source taps along one axis for the half-pixel-center convention.
std::vector<Tap> interpolation_taps(std::size_t in, std::size_t out) {
  std::vector<Tap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  const double last = static_cast<double>(in - 1);
  for (std::size_t d = 0; d < out; ++d) {
    double src = (static_cast<double>(d) + 0.5) * scale - 0.5;
    src = std::clamp(src, 0.0, last);
    const auto i0 = static_cast<std::size_t>(std::floor(src));
    taps[d] = {i0, std::min(i0 + 1, in - 1), src - static_cast<double>(i0)};
  }
  return taps;
}

template <typename T>
T sigmoid(T z) {
  if (z >= 0) return T(1) / (T(1) + std::exp(-z));
  const T e = std::exp(z);
  return e / (T(1) + e);
}

}  // namespace

Dims conv_output_dims(const Dims& input, std::size_t out_channels,
                      const ConvGeometry& g) {
  if (g.kernel_h == 0 || g.kernel_w == 0 || g.stride_h == 0 ||
      g.stride_w == 0) {
    throw Error(ErrorKind::kShape, "convolution kernel and stride must be >= 1");
  }
  const std::size_t padded_h = input.h + 2 * g.pad_h;
  const std::size_t padded_w = input.w + 2 * g.pad_w;
  if (padded_h < g.kernel_h || padded_w < g.kernel_w) {
    throw Error(ErrorKind::kShape, "input " + to_string(input) +
                                       " is smaller than the kernel");
  }
  return {input.n, out_channels, (padded_h - g.kernel_h) / g.stride_h + 1,
          (padded_w - g.kernel_w) / g.stride_w + 1};
}

template <typename T>
BasicTensor4<T> conv2d_forward(const BasicTensor4<T>& input,
                               const BasicTensor4<T>& weights,
                               std::span<const T> bias, const ConvGeometry& g) {
  const ConvShape s = check_conv(input, weights, g);
  const std::size_t out_channels = weights.dims().n;
  if (bias.size() != out_channels) {
    throw Error(ErrorKind::kShape, "bias has " + std::to_string(bias.size()) +
                                       " entries for " +
                                       std::to_string(out_channels) +
                                       " output channels");
  }
  BasicTensor4<T> output(conv_output_dims(input.dims(), out_channels, g));
  const std::size_t out_plane = s.out_h * s.out_w;
  const bool pointwise = is_pointwise(g);
  const std::size_t rows_per_band = band_rows(s);
  std::vector<T> col(pointwise ? 0 : s.patch * rows_per_band * s.out_w);

  for (std::size_t n = 0; n < input.dims().n; ++n) {
    T* out = output.plane(n, 0);
    for (std::size_t o = 0; o < out_channels; ++o) {
      std::fill(out + o * out_plane, out + (o + 1) * out_plane, bias[o]);
    }
    const T* image = input.plane(n, 0);
    if (pointwise) {
      gemm(false, false, out_channels, out_plane, s.patch, weights.raw(),
           s.patch, image, out_plane, T(1), out, out_plane);
      continue;
    }
    for (std::size_t row0 = 0; row0 < s.out_h; row0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, s.out_h - row0);
      const std::size_t cols = rows * s.out_w;
      im2col(image, s, g, row0, rows, col.data());
      gemm(false, false, out_channels, cols, s.patch, weights.raw(), s.patch,
           col.data(), cols, T(1), out + row0 * s.out_w, out_plane);
    }
  }
  return output;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor4<T>& input,
                             const BasicTensor4<T>& weights,
                             const ConvGeometry& g,
                             const BasicTensor4<T>& grad_out,
                             bool want_input_grad) {
  const ConvShape s = check_conv(input, weights, g);
  const std::size_t out_channels = weights.dims().n;
  require_same_dims(grad_out.dims(),
                    conv_output_dims(input.dims(), out_channels, g),
                    "convolution grad_out");

  ConvGrads<T> grads{
      want_input_grad ? BasicTensor4<T>(input.dims()) : BasicTensor4<T>(),
      BasicTensor4<T>(weights.dims()), std::vector<T>(out_channels, T(0))};
  const std::size_t out_plane = s.out_h * s.out_w;
  const bool pointwise = is_pointwise(g);
  const std::size_t rows_per_band = band_rows(s);
  std::vector<T> col(pointwise ? 0 : s.patch * rows_per_band * s.out_w);
  std::vector<T> col_grad(want_input_grad && !pointwise ? col.size() : 0);

  for (std::size_t n = 0; n < input.dims().n; ++n) {
    const T* go = grad_out.plane(n, 0);
    for (std::size_t o = 0; o < out_channels; ++o) {
      double sum = 0.0;
      for (std::size_t i = 0; i < out_plane; ++i) sum += go[o * out_plane + i];
      grads.bias[o] += static_cast<T>(sum);
    }
    const T* image = input.plane(n, 0);
    if (pointwise) {
      gemm(false, true, out_channels, s.patch, out_plane, go, out_plane, image,
           out_plane, T(1), grads.weights.raw(), s.patch);
      if (want_input_grad) {
        gemm(true, false, s.patch, out_plane, out_channels, weights.raw(),
             s.patch, go, out_plane, T(1), grads.input.plane(n, 0), out_plane);
      }
      continue;
    }
    for (std::size_t row0 = 0; row0 < s.out_h; row0 += rows_per_band) {
      const std::size_t rows = std::min(rows_per_band, s.out_h - row0);
      const std::size_t cols = rows * s.out_w;
      const T* go_band = go + row0 * s.out_w;
      im2col(image, s, g, row0, rows, col.data());
      gemm(false, true, out_channels, s.patch, cols, go_band, out_plane,
           col.data(), cols, T(1), grads.weights.raw(), s.patch);
      if (want_input_grad) {
        gemm(true, false, s.patch, cols, out_channels, weights.raw(), s.patch,
             go_band, out_plane, T(0), col_grad.data(), cols);
        col2im_add(col_grad.data(), s, g, row0, rows, grads.input.plane(n, 0));
      }
    }
  }
  return grads;
}

template <typename T>
BasicTensor4<T> relu_forward(const BasicTensor4<T>& input) {
  BasicTensor4<T> out(input.dims());
  const T* in = input.raw();
  T* dst = out.raw();
  for (std::size_t i = 0; i < input.count(); ++i) {
    dst[i] = in[i] > T(0) ? in[i] : T(0);
  }
  return out;
}

template <typename T>
BasicTensor4<T> relu_backward(const BasicTensor4<T>& input,
                              const BasicTensor4<T>& grad_out) {
  require_same_dims(input.dims(), grad_out.dims(), "relu grad_out");
  BasicTensor4<T> grad(input.dims());
  const T* in = input.raw();
  const T* go = grad_out.raw();
  T* dst = grad.raw();
  for (std::size_t i = 0; i < input.count(); ++i) {
    dst[i] = in[i] > T(0) ? go[i] : T(0);
  }
  return grad;
}

Dims pool_output_dims(const Dims& input, const PoolParams& p) {
  if (p.window == 0 || p.stride == 0) {
    throw Error(ErrorKind::kShape, "pooling window and stride must be >= 1");
  }
  auto extent = [&](std::size_t in) {
    if (in <= p.window) return std::size_t{1};
    std::size_t out = (in - p.window + p.stride - 1) / p.stride + 1;
    // The last window must start inside the input.
    if ((out - 1) * p.stride >= in) --out;
    return out;
  };
  return {input.n, input.c, extent(input.h), extent(input.w)};
}

template <typename T>
PoolResult<T> maxpool_forward(const BasicTensor4<T>& input,
                              const PoolParams& p) {
  if (input.count() > std::numeric_limits<std::uint32_t>::max()) {
    throw Error(ErrorKind::kSize, "pooling input " + to_string(input.dims()) +
                                      " exceeds the argmax index range");
  }
  const Dims& in = input.dims();
  const Dims out_dims = pool_output_dims(in, p);
  PoolResult<T> result{BasicTensor4<T>(out_dims),
                       ArgmaxMap(out_dims.count())};
  T* out = result.output.raw();
  std::uint32_t* arg = result.argmax.data();
  std::size_t k = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const std::size_t base = input.offset(n, c, 0, 0);
      const T* plane = input.raw() + base;
      for (std::size_t oy = 0; oy < out_dims.h; ++oy) {
        const std::size_t y0 = oy * p.stride;
        const std::size_t y1 = std::min(y0 + p.window, in.h);
        for (std::size_t ox = 0; ox < out_dims.w; ++ox, ++k) {
          const std::size_t x0 = ox * p.stride;
          const std::size_t x1 = std::min(x0 + p.window, in.w);
          std::size_t best = y0 * in.w + x0;
          T best_value = plane[best];
          for (std::size_t y = y0; y < y1; ++y) {
            for (std::size_t x = x0; x < x1; ++x) {
              if (plane[y * in.w + x] > best_value) {
                best_value = plane[y * in.w + x];
                best = y * in.w + x;
              }
            }
          }
          out[k] = best_value;
          arg[k] = static_cast<std::uint32_t>(base + best);
        }
      }
    }
  }
  return result;
}

template <typename T>
BasicTensor4<T> maxpool_backward(const ArgmaxMap& argmax,
                                 const BasicTensor4<T>& grad_out,
                                 const Dims& in_dims) {
  if (argmax.size() != grad_out.count()) {
    throw Error(ErrorKind::kInternal,
                "argmax map has " + std::to_string(argmax.size()) +
                    " entries for a grad_out of " + to_string(grad_out.dims()));
  }
  BasicTensor4<T> grad(in_dims);
  const std::size_t limit = grad.count();
  for (std::size_t k = 0; k < argmax.size(); ++k) {
    if (argmax[k] >= limit) {
      throw Error(ErrorKind::kInternal, "argmax index " +
                                            std::to_string(argmax[k]) +
                                            " outside " + to_string(in_dims));
    }
    grad[argmax[k]] += grad_out[k];
  }
  return grad;
}

const char* to_string(InterpBackward mode) {
  return mode == InterpBackward::kAdjoint ? "adjoint" : "paper-resize";
}

InterpBackward parse_interp_backward(std::string_view text) {
  if (text == "adjoint") return InterpBackward::kAdjoint;
  if (text == "paper-resize") return InterpBackward::kPaperResize;
  throw Error(ErrorKind::kConfig, "unknown interpolation backward mode '" +
                                      std::string(text) + "'");
}

template <typename T>
BasicTensor4<T> bilinear_resize_forward(const BasicTensor4<T>& input,
                                        Extent2 out_hw) {
  const Dims& in = input.dims();
  if (out_hw.h == in.h && out_hw.w == in.w) return input;
  BasicTensor4<T> output(Dims{in.n, in.c, out_hw.h, out_hw.w});
  const auto ty = interpolation_taps(in.h, out_hw.h);
  const auto tx = interpolation_taps(in.w, out_hw.w);
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      const T* src = input.plane(n, c);
      T* dst = output.plane(n, c);
      for (std::size_t y = 0; y < out_hw.h; ++y) {
        const T* r0 = src + ty[y].i0 * in.w;
        const T* r1 = src + ty[y].i1 * in.w;
        const T wy = static_cast<T>(ty[y].t);
        for (std::size_t x = 0; x < out_hw.w; ++x) {
          const Tap& t = tx[x];
          const T wx = static_cast<T>(t.t);
          // Lerp form keeps constant planes exactly constant.
          const T top = r0[t.i0] + wx * (r0[t.i1] - r0[t.i0]);
          const T bottom = r1[t.i0] + wx * (r1[t.i1] - r1[t.i0]);
          dst[y * out_hw.w + x] = top + wy * (bottom - top);
        }
      }
    }
  }
  return output;
}

template <typename T>
BasicTensor4<T> bilinear_resize_backward(const BasicTensor4<T>& grad_out,
                                         Extent2 in_hw, InterpBackward mode) {
  if (mode == InterpBackward::kPaperResize) {
    return bilinear_resize_forward(grad_out, in_hw);
  }
  const Dims& out = grad_out.dims();
  if (out.h == in_hw.h && out.w == in_hw.w) return grad_out;
  BasicTensor4<T> grad(Dims{out.n, out.c, in_hw.h, in_hw.w});
  const auto ty = interpolation_taps(in_hw.h, out.h);
  const auto tx = interpolation_taps(in_hw.w, out.w);
  for (std::size_t n = 0; n < out.n; ++n) {
    for (std::size_t c = 0; c < out.c; ++c) {
      const T* go = grad_out.plane(n, c);
      T* dst = grad.plane(n, c);
      for (std::size_t y = 0; y < out.h; ++y) {
        T* r0 = dst + ty[y].i0 * in_hw.w;
        T* r1 = dst + ty[y].i1 * in_hw.w;
        const T wy1 = static_cast<T>(ty[y].t);
        const T wy0 = T(1) - wy1;
        for (std::size_t x = 0; x < out.w; ++x) {
          const Tap& t = tx[x];
          const T wx1 = static_cast<T>(t.t);
          const T wx0 = T(1) - wx1;
          const T g = go[y * out.w + x];
          r0[t.i0] += wy0 * wx0 * g;
          r0[t.i1] += wy0 * wx1 * g;
          r1[t.i0] += wy1 * wx0 * g;
          r1[t.i1] += wy1 * wx1 * g;
        }
      }
    }
  }
  return grad;
}

template <typename T>
BasicTensor4<T> concat_channels(const BasicTensor4<T>& a,
                                const BasicTensor4<T>& b) {
  const Dims& da = a.dims();
  const Dims& db = b.dims();
  if (da.n != db.n || da.h != db.h || da.w != db.w) {
    throw Error(ErrorKind::kShape, "cannot concatenate " + to_string(da) +
                                       " with " + to_string(db));
  }
  BasicTensor4<T> out(Dims{da.n, da.c + db.c, da.h, da.w});
  for (std::size_t n = 0; n < da.n; ++n) {
    std::copy(a.plane(n, 0), a.plane(n, 0) + da.c * da.plane(), out.plane(n, 0));
    std::copy(b.plane(n, 0), b.plane(n, 0) + db.c * db.plane(),
              out.plane(n, da.c));
  }
  return out;
}

template <typename T>
std::pair<BasicTensor4<T>, BasicTensor4<T>> concat_channels_backward(
    const BasicTensor4<T>& grad_out, std::size_t a_channels) {
  const Dims& d = grad_out.dims();
  if (a_channels == 0 || a_channels >= d.c) {
    throw Error(ErrorKind::kShape, "cannot split " + to_string(d) + " at " +
                                       std::to_string(a_channels) +
                                       " channels");
  }
  BasicTensor4<T> ga(Dims{d.n, a_channels, d.h, d.w});
  BasicTensor4<T> gb(Dims{d.n, d.c - a_channels, d.h, d.w});
  for (std::size_t n = 0; n < d.n; ++n) {
    const T* src = grad_out.plane(n, 0);
    std::copy(src, src + a_channels * d.plane(), ga.plane(n, 0));
    std::copy(src + a_channels * d.plane(), src + d.c * d.plane(),
              gb.plane(n, 0));
  }
  return {std::move(ga), std::move(gb)};
}

template <typename T>
LossResult<T> sigmoid_cross_entropy(const BasicTensor4<T>& logits,
                                    const BasicTensor4<T>& target) {
  require_same_dims(logits.dims(), target.dims(), "loss target");
  const std::size_t count = logits.count();
  LossResult<T> result{0.0, BasicTensor4<T>(logits.dims())};
  const double inv_n = 1.0 / static_cast<double>(count);
  double total = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    const double t = target[i];
    if (!(t >= 0.0 && t <= 1.0)) {
      throw Error(ErrorKind::kDomain, "target value " + std::to_string(t) +
                                          " at offset " + std::to_string(i) +
                                          " is outside [0, 1]");
    }
    const double z = logits[i];
    total += std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
    result.grad_logits[i] = static_cast<T>((sigmoid(z) - t) * inv_n);
  }
  result.loss = total * inv_n;
  return result;
}

#define SALICON_INSTANTIATE_LAYERS(T)                                          \
  template BasicTensor4<T> conv2d_forward(const BasicTensor4<T>&,             \
                                          const BasicTensor4<T>&,             \
                                          std::span<const T>,                 \
                                          const ConvGeometry&);               \
  template ConvGrads<T> conv2d_backward(const BasicTensor4<T>&,               \
                                        const BasicTensor4<T>&,               \
                                        const ConvGeometry&,                  \
                                        const BasicTensor4<T>&, bool);        \
  template BasicTensor4<T> relu_forward(const BasicTensor4<T>&);              \
  template BasicTensor4<T> relu_backward(const BasicTensor4<T>&,              \
                                         const BasicTensor4<T>&);             \
  template PoolResult<T> maxpool_forward(const BasicTensor4<T>&,              \
                                         const PoolParams&);                  \
  template BasicTensor4<T> maxpool_backward(                                  \
      const ArgmaxMap&, const BasicTensor4<T>&, const Dims&);                 \
  template BasicTensor4<T> bilinear_resize_forward(const BasicTensor4<T>&,    \
                                                   Extent2);                  \
  template BasicTensor4<T> bilinear_resize_backward(                          \
      const BasicTensor4<T>&, Extent2, InterpBackward);                       \
  template BasicTensor4<T> concat_channels(const BasicTensor4<T>&,            \
                                           const BasicTensor4<T>&);           \
  template std::pair<BasicTensor4<T>, BasicTensor4<T>>                        \
  concat_channels_backward(const BasicTensor4<T>&, std::size_t);              \
  template LossResult<T> sigmoid_cross_entropy(const BasicTensor4<T>&,        \
                                               const BasicTensor4<T>&);

SALICON_INSTANTIATE_LAYERS(float)
SALICON_INSTANTIATE_LAYERS(double)

#undef SALICON_INSTANTIATE_LAYERS

}  // namespace salicon::layers
