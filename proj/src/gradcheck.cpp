#include "salicon/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "salicon/network.hpp"
#include "salicon/weights.hpp"

namespace salicon::gradcheck {
namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

Tensor4 random_tensor(const Dims& dims, Rng& rng, float lo = -1.0f,
                      float hi = 1.0f) {
  std::uniform_real_distribution<float> u(lo, hi);
  Tensor4 t(dims);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

Tensor4d to_double(const Tensor4& t) { return tensor_cast<double>(t); }

double dot(const Tensor4d& a, const Tensor4& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.count(); ++i) s += a[i] * static_cast<double>(b[i]);
  return s;
}

// Perturbs every coordinate of `x` by +-eps and compares the central
// difference of `objective` against `analytic`.
template <typename F>
void compare(Entry& e, Tensor4d& x, std::span<const float> analytic,
             F&& objective, double eps) {
  for (std::size_t i = 0; i < x.count(); ++i) {
    const double saved = x[i];
    x[i] = saved + eps;
    const double up = objective();
    x[i] = saved - eps;
    const double down = objective();
    x[i] = saved;
    const double numeric = (up - down) / (2.0 * eps);
    e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], numeric));
    ++e.probes;
  }
}

std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t k) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (k + 1));
}

// Sign pattern of every ReLU output and every pooling argmax; a probe whose
// perturbation changes it straddles a kink.
std::vector<std::uint32_t> activation_pattern(const NetworkD& net) {
  std::vector<std::uint32_t> pattern;
  for (const auto& l : net.spec().layers) {
    if (l.kind == LayerKind::kRelu) {
      for (double v : net.blob(l.tops[0]).data()) pattern.push_back(v > 0.0);
    } else if (l.kind == LayerKind::kMaxPool) {
      const auto& am = net.pooling_argmax(l.name);
      pattern.insert(pattern.end(), am.begin(), am.end());
    }
  }
  return pattern;
}

}  // namespace

const char* to_string(Scale scale) {
  return scale == Scale::kTiny ? "tiny" : "small";
}

Scale parse_scale(std::string_view text) {
  if (text == "tiny") return Scale::kTiny;
  if (text == "small") return Scale::kSmall;
  throw Error(ErrorKind::kConfig, "unknown gradcheck scale '" + std::string(text) + "'");
}

TwoStreamConfig network_config(Scale scale) {
  TwoStreamConfig cfg = TwoStreamConfig::miniature(NetMode::kTraining);
  if (scale == Scale::kTiny) {
    cfg.fine_input = {1, 3, 12, 16};
    cfg.coarse_input = {1, 3, 6, 8};
    cfg.blocks = {{1, 3}, {1, 4}};
  }
  cfg.frozen_blocks = 0;
  return cfg;
}

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
  return std::abs(analytic - numeric) / scale;
}

bool Report::passed() const {
  for (const auto& e : layers) {
    if (!(e.max_rel_error < tolerance)) return false;
  }
  return end_to_end_adjoint.max_rel_error < tolerance;
}

Entry check_conv(std::uint64_t seed, std::size_t instances, double eps) {
  Entry e{"conv", instances};
  Rng rng(seed);
  for (std::size_t k = 0; k < instances; ++k) {
    layers::ConvGeometry g;
    const std::size_t kernel = pick(rng, 0, 1) ? 3 : 1;
    g.kernel_h = g.kernel_w = kernel;
    g.pad_h = g.pad_w = kernel == 3 ? pick(rng, 0, 1) : 0;
    g.stride_h = g.stride_w = pick(rng, 1, 2);
    const Dims in{1, pick(rng, 1, 3), pick(rng, 3, 6), pick(rng, 3, 6)};
    const std::size_t out_c = pick(rng, 1, 3);
    Tensor4 x = random_tensor(in, rng);
    Tensor4 w = random_tensor({out_c, in.c, kernel, kernel}, rng);
    Tensor4 b = random_tensor({1, 1, 1, out_c}, rng);
    Tensor4 r = random_tensor(layers::conv_output_dims(in, out_c, g), rng);
    auto grads = layers::conv2d_backward<float>(x, w, g, r);

    Tensor4d xd = to_double(x), wd = to_double(w), bd = to_double(b);
    auto objective = [&] {
      return dot(layers::conv2d_forward<double>(xd, wd, bd.data(), g), r);
    };
    compare(e, xd, grads.input.data(), objective, eps);
    compare(e, wd, grads.weights.data(), objective, eps);
    compare(e, bd, grads.bias, objective, eps);
  }
  return e;
}

Entry check_relu(std::uint64_t seed, std::size_t instances, double eps) {
  Entry e{"relu", instances};
  Rng rng(seed);
  std::uniform_real_distribution<float> magnitude(0.02f, 1.0f);
  for (std::size_t k = 0; k < instances; ++k) {
    const Dims dims{1, pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)};
    Tensor4 x(dims);
    for (auto& v : x.data()) v = (rng() & 1 ? 1.0f : -1.0f) * magnitude(rng);
    Tensor4 r = random_tensor(dims, rng);
    Tensor4 analytic = layers::relu_backward(x, r);
    Tensor4d xd = to_double(x);
    compare(e, xd, analytic.data(),
            [&] { return dot(layers::relu_forward(xd), r); }, eps);
  }
  return e;
}

Entry check_maxpool(std::uint64_t seed, std::size_t instances, double eps) {
  Entry e{"maxpool", instances};
  Rng rng(seed);
  for (std::size_t k = 0; k < instances; ++k) {
    const Dims dims{1, pick(rng, 1, 3), pick(rng, 1, 7), pick(rng, 1, 7)};
    // Distinct values spaced well beyond 2*eps so no probe reorders a window.
    std::vector<float> values(dims.count());
    std::iota(values.begin(), values.end(), 0.0f);
    std::shuffle(values.begin(), values.end(), rng);
    for (auto& v : values) v = v * 0.05f - 1.0f;
    Tensor4 x(dims, std::move(values));
    const layers::PoolParams p;
    auto pooled = layers::maxpool_forward(x, p);
    Tensor4 r = random_tensor(pooled.output.dims(), rng);
    Tensor4 analytic = layers::maxpool_backward(pooled.argmax, r, dims);
    Tensor4d xd = to_double(x);
    compare(e, xd, analytic.data(),
            [&] { return dot(layers::maxpool_forward(xd, p).output, r); }, eps);
  }
  return e;
}

Entry check_bilinear(std::uint64_t seed, std::size_t instances, double eps,
                     layers::InterpBackward mode) {
  Entry e{std::string("bilinear_resize[") + layers::to_string(mode) + "]", instances};
  Rng rng(seed);
  for (std::size_t k = 0; k < instances; ++k) {
    const Dims dims{1, pick(rng, 1, 2), pick(rng, 1, 6), pick(rng, 1, 6)};
    const layers::Extent2 out{pick(rng, 1, 9), pick(rng, 1, 9)};
    Tensor4 x = random_tensor(dims, rng);
    Tensor4 r = random_tensor({1, dims.c, out.h, out.w}, rng);
    Tensor4 analytic = layers::bilinear_resize_backward(r, {dims.h, dims.w}, mode);
    Tensor4d xd = to_double(x);
    compare(e, xd, analytic.data(),
            [&] { return dot(layers::bilinear_resize_forward(xd, out), r); }, eps);
  }
  return e;
}

Entry check_concat(std::uint64_t seed, std::size_t instances, double eps) {
  Entry e{"concat", instances};
  Rng rng(seed);
  for (std::size_t k = 0; k < instances; ++k) {
    const std::size_t h = pick(rng, 1, 4), w = pick(rng, 1, 4);
    Tensor4 a = random_tensor({1, pick(rng, 1, 3), h, w}, rng);
    Tensor4 b = random_tensor({1, pick(rng, 1, 3), h, w}, rng);
    Tensor4 r = random_tensor({1, a.dims().c + b.dims().c, h, w}, rng);
    auto [ga, gb] = layers::concat_channels_backward(r, a.dims().c);
    Tensor4d ad = to_double(a), bd = to_double(b);
    auto objective = [&] { return dot(layers::concat_channels(ad, bd), r); };
    compare(e, ad, ga.data(), objective, eps);
    compare(e, bd, gb.data(), objective, eps);
  }
  return e;
}

Entry check_loss(std::uint64_t seed, std::size_t instances, double eps) {
  Entry e{"sigmoid_cross_entropy", instances};
  Rng rng(seed);
  for (std::size_t k = 0; k < instances; ++k) {
    const Dims dims{1, 1, pick(rng, 1, 5), pick(rng, 1, 6)};
    Tensor4 z = random_tensor(dims, rng, -3.0f, 3.0f);
    Tensor4 t = random_tensor(dims, rng, 0.0f, 1.0f);
    auto analytic = layers::sigmoid_cross_entropy(z, t);
    Tensor4d zd = to_double(z), td = to_double(t);
    compare(e, zd, analytic.grad_logits.data(),
            [&] { return layers::sigmoid_cross_entropy(zd, td).loss; }, eps);
  }
  return e;
}

Entry check_end_to_end(Scale scale, layers::InterpBackward mode,
                       std::uint64_t seed, double eps) {
  Entry e{std::string("end_to_end[") + layers::to_string(mode) + "]", 1};
  const TwoStreamConfig cfg = network_config(scale);
  const NetSpec spec = build_two_stream_spec(cfg);
  const WeightStore weights = random_weights(spec, seed);
  const ShapeMap shapes = infer_shapes(spec);

  Rng rng(stream_seed(seed, 99));
  Network::BlobMap inputs;
  inputs.emplace(blobs::kFineInput, random_tensor(cfg.fine_input, rng));
  inputs.emplace(blobs::kCoarseInput, random_tensor(cfg.coarse_input, rng));
  inputs.emplace(blobs::kGroundTruth,
                 random_tensor(shapes.at(std::string(blobs::kGroundTruth)), rng, 0.0f, 1.0f));

  Network net(spec, weights, {true, mode});
  net.forward(inputs);
  net.backward();

  NetworkD dnet(spec, weights);
  NetworkD::BlobMap dinputs;
  for (const auto& [name, t] : inputs) dinputs.emplace(name, to_double(t));
  auto loss_at = [&](std::vector<std::uint32_t>* pattern) {
    dnet.forward(dinputs);
    if (pattern) *pattern = activation_pattern(dnet);
    return dnet.loss();
  };
  std::vector<std::uint32_t> base, probe;
  loss_at(&base);

  for (auto& [name, param] : dnet.params()) {
    const Tensor4& analytic = net.param_grad(name);
    for (std::size_t i = 0; i < param.count(); ++i) {
      const double saved = param[i];
      param[i] = saved + eps;
      const double up = loss_at(&probe);
      bool kink = probe != base;
      param[i] = saved - eps;
      const double down = loss_at(&probe);
      kink = kink || probe != base;
      param[i] = saved;
      if (kink) {
        ++e.skipped;
        continue;
      }
      const double numeric = (up - down) / (2.0 * eps);
      e.max_rel_error = std::max(e.max_rel_error, relative_error(analytic[i], numeric));
      ++e.probes;
    }
  }
  return e;
}

Report run(const Options& o) {
  Report report;
  report.tolerance = o.tolerance;
  report.layers.push_back(check_conv(stream_seed(o.seed, 0), o.instances, o.epsilon));
  report.layers.push_back(check_relu(stream_seed(o.seed, 1), o.instances, o.epsilon));
  report.layers.push_back(check_maxpool(stream_seed(o.seed, 2), o.instances, o.epsilon));
  report.layers.push_back(check_bilinear(stream_seed(o.seed, 3), o.instances, o.epsilon));
  report.layers.push_back(check_concat(stream_seed(o.seed, 4), o.instances, o.epsilon));
  report.layers.push_back(check_loss(stream_seed(o.seed, 5), o.instances, o.epsilon));
  report.end_to_end_adjoint = check_end_to_end(
      o.scale, layers::InterpBackward::kAdjoint, o.seed, o.epsilon);
  if (o.mode == layers::InterpBackward::kPaperResize) {
    report.has_paper_resize = true;
    report.end_to_end_paper_resize = check_end_to_end(
        o.scale, layers::InterpBackward::kPaperResize, o.seed, o.epsilon);
  }
  return report;
}

}  // namespace salicon::gradcheck
