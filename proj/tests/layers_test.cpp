#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <numeric>
#include <random>

#include "oracles.hpp"
#include "salicon/layers.hpp"

namespace salicon::layers {
namespace {

using oracle::pick;
using oracle::random_tensor;

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorKind::kInternal;
}

void expect_close_to_oracle(const Tensor4& got, const Tensor4d& want, double tol) {
  ASSERT_EQ(got.dims(), want.dims());
  for (std::size_t i = 0; i < got.count(); ++i) {
    ASSERT_NEAR(got[i], want[i], tol) << "at flat offset " << i;
  }
}

// --- convolution ------------------------------------------------------------

TEST(ConvTest, PointwiseScaling) {
  const Tensor4 x = Tensor4::filled({1, 1, 3, 3}, 1.0f);
  const Tensor4 w = Tensor4::filled({1, 1, 1, 1}, 2.0f);
  const std::vector<float> b{0.0f};
  const Tensor4 y = conv2d_forward<float>(x, w, b, ConvGeometry::pointwise());
  EXPECT_EQ(y, Tensor4::filled({1, 1, 3, 3}, 2.0f));
}

TEST(ConvTest, ZeroKernelGivesBias) {
  std::mt19937_64 rng(3);
  const Tensor4 x = random_tensor({1, 3, 5, 6}, rng);
  const Tensor4 w({2, 3, 3, 3});
  const std::vector<float> b{0.25f, -1.5f};
  const Tensor4 y = conv2d_forward<float>(x, w, b, ConvGeometry::same3x3());
  for (std::size_t i = 0; i < y.dims().plane(); ++i) {
    EXPECT_EQ(y.plane(0, 0)[i], 0.25f);
    EXPECT_EQ(y.plane(0, 1)[i], -1.5f);
  }
}

TEST(ConvTest, MatchesDirectLoopOracle) {
  std::mt19937_64 rng(4);
  const Tensor4 x = random_tensor({1, 2, 4, 4}, rng);
  const Tensor4 w = random_tensor({3, 2, 3, 3}, rng);
  const std::vector<float> b = random_tensor({1, 1, 1, 3}, rng).flatten();
  const auto g = ConvGeometry::same3x3();
  expect_close_to_oracle(conv2d_forward<float>(x, w, b, g), oracle::direct_conv(x, w, b, g),
                         1e-5);
}

TEST(ConvTest, MatchesOracleOnRandomGeometries) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 60; ++trial) {
    ConvGeometry g;
    g.kernel_h = pick(rng, 1, 3);
    g.kernel_w = pick(rng, 1, 3);
    g.pad_h = pick(rng, 0, g.kernel_h - 1);
    g.pad_w = pick(rng, 0, g.kernel_w - 1);
    g.stride_h = pick(rng, 1, 2);
    g.stride_w = pick(rng, 1, 2);
    const Dims in{pick(rng, 1, 2), pick(rng, 1, 4), pick(rng, 3, 9), pick(rng, 3, 9)};
    const std::size_t oc = pick(rng, 1, 5);
    const Tensor4 x = random_tensor(in, rng);
    const Tensor4 w = random_tensor({oc, in.c, g.kernel_h, g.kernel_w}, rng);
    const std::vector<float> b = random_tensor({1, 1, 1, oc}, rng).flatten();
    expect_close_to_oracle(conv2d_forward<float>(x, w, b, g), oracle::direct_conv(x, w, b, g),
                           1e-5);
  }
}

TEST(ConvTest, ChannelMismatchIsShapeError) {
  const Tensor4 x({1, 2, 4, 4});
  const Tensor4 w({1, 3, 3, 3});
  const std::vector<float> b{0.0f};
  EXPECT_EQ(kind_of([&] { conv2d_forward<float>(x, w, b, ConvGeometry::same3x3()); }),
            ErrorKind::kShape);
}

TEST(ConvTest, OutputDims) {
  EXPECT_EQ(conv_output_dims({1, 3, 10, 10}, 7, ConvGeometry::same3x3()),
            (Dims{1, 7, 10, 10}));
  ConvGeometry g;
  g.pad_h = g.pad_w = 0;
  g.stride_h = g.stride_w = 2;
  EXPECT_EQ(conv_output_dims({1, 3, 9, 8}, 2, g), (Dims{1, 2, 4, 3}));
}

TEST(ConvBackwardTest, ZeroCotangentGivesZeroGradients) {
  std::mt19937_64 rng(6);
  const Tensor4 x = random_tensor({1, 2, 5, 5}, rng);
  const Tensor4 w = random_tensor({3, 2, 3, 3}, rng);
  const auto grads =
      conv2d_backward<float>(x, w, ConvGeometry::same3x3(), Tensor4({1, 3, 5, 5}));
  EXPECT_EQ(grads.input, Tensor4(x.dims()));
  EXPECT_EQ(grads.weights, Tensor4(w.dims()));
  EXPECT_EQ(grads.bias, std::vector<float>(3, 0.0f));
}

TEST(ConvBackwardTest, PointwiseWeightGradientIsSpatialSum) {
  std::mt19937_64 rng(7);
  const Tensor4 x = random_tensor({1, 3, 4, 5}, rng);
  const Tensor4 w = random_tensor({2, 3, 1, 1}, rng);
  const auto grads = conv2d_backward<float>(x, w, ConvGeometry::pointwise(),
                                            Tensor4::filled({1, 2, 4, 5}, 1.0f));
  for (std::size_t o = 0; o < 2; ++o) {
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (std::size_t i = 0; i < x.dims().plane(); ++i) sum += x.plane(0, c)[i];
      EXPECT_NEAR(grads.weights.at(o, c, 0, 0), sum, 1e-5);
    }
    EXPECT_NEAR(grads.bias[o], 20.0, 1e-6);
  }
}

TEST(ConvBackwardTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    ConvGeometry g;
    g.kernel_h = g.kernel_w = pick(rng, 0, 1) ? 3 : 1;
    g.pad_h = g.pad_w = g.kernel_h == 3 ? pick(rng, 0, 1) : 0;
    g.stride_h = g.stride_w = pick(rng, 1, 2);
    const Dims in{1, pick(rng, 1, 3), pick(rng, 3, 6), pick(rng, 3, 6)};
    const std::size_t oc = pick(rng, 1, 3);
    const Tensor4 x = random_tensor(in, rng);
    const Tensor4 w = random_tensor({oc, in.c, g.kernel_h, g.kernel_w}, rng);
    const Tensor4 b = random_tensor({1, 1, 1, oc}, rng);
    const Tensor4 r = random_tensor(conv_output_dims(in, oc, g), rng);
    const auto grads = conv2d_backward<float>(x, w, g, r);

    Tensor4d xd = tensor_cast<double>(x), wd = tensor_cast<double>(w),
             bd = tensor_cast<double>(b);
    auto f = [&] { return oracle::dot(conv2d_forward<double>(xd, wd, bd.data(), g), r); };
    const auto nx = oracle::numeric_gradient(xd, f);
    const auto nw = oracle::numeric_gradient(wd, f);
    const auto nb = oracle::numeric_gradient(bd, f);
    for (std::size_t i = 0; i < nx.size(); ++i)
      worst = std::max(worst, oracle::relative_error(grads.input[i], nx[i]));
    for (std::size_t i = 0; i < nw.size(); ++i)
      worst = std::max(worst, oracle::relative_error(grads.weights[i], nw[i]));
    for (std::size_t i = 0; i < nb.size(); ++i)
      worst = std::max(worst, oracle::relative_error(grads.bias[i], nb[i]));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(ConvBackwardTest, GradOutShapeMismatch) {
  const Tensor4 x({1, 1, 4, 4});
  const Tensor4 w({1, 1, 3, 3});
  EXPECT_EQ(kind_of([&] {
              conv2d_backward<float>(x, w, ConvGeometry::same3x3(), Tensor4({1, 1, 3, 4}));
            }),
            ErrorKind::kShape);
}

// --- relu -------------------------------------------------------------------

TEST(ReluTest, Forward) {
  const Tensor4 x({1, 1, 1, 3}, {-1, 0, 2});
  EXPECT_EQ(relu_forward(x).flatten(), (std::vector<float>{0, 0, 2}));
}

TEST(ReluTest, BackwardSubgradientAtZeroIsZero) {
  const Tensor4 x({1, 1, 1, 3}, {-1, 0, 2});
  const Tensor4 g = Tensor4::filled({1, 1, 1, 3}, 5.0f);
  EXPECT_EQ(relu_backward(x, g).flatten(), (std::vector<float>{0, 0, 5}));
}

TEST(ReluTest, MatchesFiniteDifferencesAwayFromKink) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> mag(0.011f, 2.0f);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{1, pick(rng, 1, 3), pick(rng, 1, 5), pick(rng, 1, 5)};
    Tensor4 x(d);
    for (auto& v : x.data()) v = (rng() & 1 ? 1.0f : -1.0f) * mag(rng);
    const Tensor4 r = random_tensor(d, rng);
    const Tensor4 analytic = relu_backward(x, r);
    Tensor4d xd = tensor_cast<double>(x);
    const auto num = oracle::numeric_gradient(xd, [&] { return oracle::dot(relu_forward(xd), r); });
    for (std::size_t i = 0; i < num.size(); ++i)
      worst = std::max(worst, oracle::relative_error(analytic[i], num[i]));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(ReluTest, BackwardShapeMismatch) {
  EXPECT_EQ(kind_of([] { relu_backward(Tensor4({1, 1, 1, 3}), Tensor4({1, 1, 3, 1})); }),
            ErrorKind::kShape);
}

// --- max pooling ------------------------------------------------------------

TEST(MaxPoolTest, SingleWindow) {
  const Tensor4 x({1, 1, 2, 2}, {1, 2, 3, 4});
  const auto r = maxpool_forward(x, PoolParams{});
  EXPECT_EQ(r.output.flatten(), (std::vector<float>{4}));
  EXPECT_EQ(r.argmax, (ArgmaxMap{3}));
}

TEST(MaxPoolTest, CeilRounding) {
  EXPECT_EQ(pool_output_dims({1, 512, 75, 100}, PoolParams{}), (Dims{1, 512, 38, 50}));
  EXPECT_EQ(pool_output_dims({1, 512, 38, 50}, PoolParams{}), (Dims{1, 512, 19, 25}));
  EXPECT_EQ(pool_output_dims({1, 1, 1, 1}, PoolParams{}), (Dims{1, 1, 1, 1}));
  EXPECT_EQ(pool_output_dims({1, 1, 5, 7}, PoolParams{3, 2}), (Dims{1, 1, 2, 3}));
}

TEST(MaxPoolTest, MatchesLoopOracleExactly) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 30; ++trial) {
    const Dims d = trial == 0 ? Dims{1, 1, 5, 5}
                              : Dims{pick(rng, 1, 2), pick(rng, 1, 3), pick(rng, 1, 9),
                                     pick(rng, 1, 9)};
    const PoolParams p = trial % 3 == 2 ? PoolParams{3, 2} : PoolParams{};
    const Tensor4 x = random_tensor(d, rng);
    const auto got = maxpool_forward(x, p);
    const auto want = oracle::loop_maxpool(x, p.window, p.stride);
    ASSERT_EQ(got.output, want.output);
    ASSERT_EQ(got.argmax.size(), want.argmax.size());
    for (std::size_t i = 0; i < want.argmax.size(); ++i) ASSERT_EQ(got.argmax[i], want.argmax[i]);

    const Tensor4 g = random_tensor(got.output.dims(), rng);
    Tensor4 expect(d);
    for (std::size_t i = 0; i < g.count(); ++i) expect[want.argmax[i]] += g[i];
    ASSERT_EQ(maxpool_backward(got.argmax, g, d), expect);
  }
}

TEST(MaxPoolTest, BackwardConservesMassAtArgmax) {
  std::mt19937_64 rng(11);
  const Tensor4 x = random_tensor({1, 2, 7, 6}, rng);
  const auto r = maxpool_forward(x, PoolParams{3, 2});  // overlapping windows
  const Tensor4 g = random_tensor(r.output.dims(), rng, 0.0f, 1.0f);
  const Tensor4 back = maxpool_backward(r.argmax, g, x.dims());
  double in_mass = 0.0, out_mass = 0.0;
  for (float v : g.data()) out_mass += v;
  for (std::size_t i = 0; i < back.count(); ++i) {
    in_mass += back[i];
    if (back[i] != 0.0f) {
      EXPECT_NE(std::find(r.argmax.begin(), r.argmax.end(), i), r.argmax.end());
    }
  }
  EXPECT_NEAR(in_mass, out_mass, 1e-5);
}

TEST(MaxPoolTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(12);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{1, pick(rng, 1, 3), pick(rng, 1, 7), pick(rng, 1, 7)};
    std::vector<float> v(d.count());
    std::iota(v.begin(), v.end(), 0.0f);
    std::shuffle(v.begin(), v.end(), rng);
    for (auto& e : v) e *= 0.05f;
    const Tensor4 x(d, v);
    const auto fwd = maxpool_forward(x, PoolParams{});
    const Tensor4 r = random_tensor(fwd.output.dims(), rng);
    const Tensor4 analytic = maxpool_backward(fwd.argmax, r, d);
    Tensor4d xd = tensor_cast<double>(x);
    const auto num = oracle::numeric_gradient(
        xd, [&] { return oracle::dot(maxpool_forward(xd, PoolParams{}).output, r); });
    for (std::size_t i = 0; i < num.size(); ++i)
      worst = std::max(worst, oracle::relative_error(analytic[i], num[i]));
  }
  EXPECT_LT(worst, 1e-3);
}

TEST(MaxPoolTest, InconsistentArgmaxIsInternalError) {
  const Tensor4 g({1, 1, 1, 1}, {1.0f});
  EXPECT_EQ(kind_of([&] { maxpool_backward(ArgmaxMap{4}, g, {1, 1, 2, 2}); }),
            ErrorKind::kInternal);
  EXPECT_EQ(kind_of([&] { maxpool_backward(ArgmaxMap{0, 1}, g, {1, 1, 2, 2}); }),
            ErrorKind::kInternal);
}

// --- bilinear resize ---------------------------------------------------------

TEST(BilinearTest, IdentityResizeIsBitExact) {
  std::mt19937_64 rng(13);
  const Tensor4 x = random_tensor({1, 3, 7, 5}, rng);
  EXPECT_EQ(bilinear_resize_forward(x, {7, 5}), x);
  EXPECT_EQ(bilinear_resize_backward(x, {7, 5}), x);
}

TEST(BilinearTest, CoarsePoolToFineExtent) {
  const Tensor4 x({1, 512, 19, 25});
  EXPECT_EQ(bilinear_resize_forward(x, {38, 50}).dims(), (Dims{1, 512, 38, 50}));
}

TEST(BilinearTest, TwoByTwoUpsampleMatchesScalarOracle) {
  const Tensor4 x({1, 1, 2, 2}, {0, 1, 2, 3});
  const Tensor4 y = bilinear_resize_forward(x, {4, 4});
  // Values from the scalar oracle, frozen.
  const std::vector<float> frozen{0.0f, 0.25f, 0.75f, 1.0f,  0.5f, 0.75f, 1.25f, 1.5f,
                                  1.5f, 1.75f, 2.25f, 2.5f,  2.0f, 2.25f, 2.75f, 3.0f};
  EXPECT_EQ(y.flatten(), frozen);
  const std::vector<double> plane{0, 1, 2, 3};
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(y.at(0, 0, i, j), oracle::bilinear_at(plane, 2, 2, 4, 4, i, j), 1e-7);
}

TEST(BilinearTest, RandomResizesMatchScalarOracle) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t ih = pick(rng, 1, 7), iw = pick(rng, 1, 7);
    const std::size_t oh = pick(rng, 1, 11), ow = pick(rng, 1, 11);
    const Tensor4 x = random_tensor({1, 1, ih, iw}, rng);
    const Tensor4 y = bilinear_resize_forward(x, {oh, ow});
    std::vector<double> plane(x.data().begin(), x.data().end());
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        ASSERT_NEAR(y.at(0, 0, i, j), oracle::bilinear_at(plane, ih, iw, oh, ow, i, j), 1e-6);
  }
}

TEST(BilinearTest, ConstantPlaneStaysConstant) {
  const Tensor4 x = Tensor4::filled({1, 2, 3, 5}, 128.0f);
  const Tensor4 y = bilinear_resize_forward(x, {17, 9});
  for (float v : y.data()) ASSERT_EQ(v, 128.0f);
}

TEST(BilinearTest, Linearity) {
  std::mt19937_64 rng(15);
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{1, 2, pick(rng, 1, 8), pick(rng, 1, 8)};
    const Extent2 out{pick(rng, 1, 12), pick(rng, 1, 12)};
    const Tensor4 a = random_tensor(d, rng), b = random_tensor(d, rng);
    const float alpha = 0.7f, beta = -1.3f;
    Tensor4 mix = a;
    for (std::size_t i = 0; i < mix.count(); ++i) mix[i] = alpha * a[i] + beta * b[i];
    const Tensor4 lhs = bilinear_resize_forward(mix, out);
    const Tensor4 ra = bilinear_resize_forward(a, out), rb = bilinear_resize_forward(b, out);
    for (std::size_t i = 0; i < lhs.count(); ++i)
      ASSERT_NEAR(lhs[i], alpha * ra[i] + beta * rb[i], 1e-5);
  }
}

TEST(BilinearTest, AdjointInnerProductIdentity) {
  std::mt19937_64 rng(16);
  double worst = 0.0;
  for (int trial = 0; trial < 120; ++trial) {
    const std::size_t ih = pick(rng, 1, 12), iw = pick(rng, 1, 12);
    const std::size_t oh = pick(rng, 1, 20), ow = pick(rng, 1, 20);
    const Tensor4 x = random_tensor({1, 1, ih, iw}, rng);
    const Tensor4 y = random_tensor({1, 1, oh, ow}, rng);
    const Tensor4 rx = bilinear_resize_forward(x, {oh, ow});
    const Tensor4 rty = bilinear_resize_backward(y, {ih, iw});
    double lhs = 0.0, rhs = 0.0, nx = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < y.count(); ++i) lhs += double(rx[i]) * y[i], ny += double(y[i]) * y[i];
    for (std::size_t i = 0; i < x.count(); ++i) rhs += double(x[i]) * rty[i], nx += double(x[i]) * x[i];
    worst = std::max(worst, std::abs(lhs - rhs) / (std::sqrt(nx) * std::sqrt(ny)));

    // Transpose of the dense matrix oracle.
    const auto m = oracle::interpolation_matrix(ih, iw, oh, ow);
    for (std::size_t p = 0; p < ih * iw; ++p) {
      double s = 0.0;
      for (std::size_t q = 0; q < oh * ow; ++q) s += m[q * ih * iw + p] * y[q];
      ASSERT_NEAR(rty[p], s, 1e-5);
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(BilinearTest, BackwardOfZeroIsZero) {
  EXPECT_EQ(bilinear_resize_backward(Tensor4({1, 2, 6, 9}), {3, 4}), Tensor4({1, 2, 3, 4}));
}

TEST(BilinearTest, PaperResizeModeResizesTheGradient) {
  std::mt19937_64 rng(17);
  const Tensor4 g = random_tensor({1, 3, 38, 50}, rng);
  EXPECT_EQ(bilinear_resize_backward(g, {19, 25}, InterpBackward::kPaperResize),
            bilinear_resize_forward(g, {19, 25}));
  EXPECT_NE(bilinear_resize_backward(g, {19, 25}, InterpBackward::kPaperResize),
            bilinear_resize_backward(g, {19, 25}, InterpBackward::kAdjoint));
}

TEST(BilinearTest, ModeNames) {
  EXPECT_EQ(parse_interp_backward("adjoint"), InterpBackward::kAdjoint);
  EXPECT_EQ(parse_interp_backward("paper-resize"), InterpBackward::kPaperResize);
  EXPECT_STREQ(to_string(InterpBackward::kPaperResize), "paper-resize");
  EXPECT_EQ(kind_of([] { parse_interp_backward("nearest"); }), ErrorKind::kConfig);
}

// --- concat -----------------------------------------------------------------

TEST(ConcatTest, PoolBlobsGive1024Channels) {
  const Tensor4 a({1, 512, 38, 50}), b({1, 512, 38, 50});
  EXPECT_EQ(concat_channels(a, b).dims(), (Dims{1, 1024, 38, 50}));
}

TEST(ConcatTest, ZeroBlockIdentity) {
  std::mt19937_64 rng(18);
  const Tensor4 x = random_tensor({1, 4, 5, 6}, rng);
  const Tensor4 w = random_tensor({1, 4, 1, 1}, rng);
  Tensor4 w2({1, 8, 1, 1});
  for (std::size_t c = 0; c < 4; ++c) w2[c] = w[c];
  const std::vector<float> b{0.3f};
  const Tensor4 direct = conv2d_forward<float>(x, w, b, ConvGeometry::pointwise());
  const Tensor4 via = conv2d_forward<float>(concat_channels(x, Tensor4(x.dims())), w2, b,
                                            ConvGeometry::pointwise());
  for (std::size_t i = 0; i < direct.count(); ++i) EXPECT_NEAR(via[i], direct[i], 1e-6);
}

TEST(ConcatTest, BackwardSplitsExactly) {
  std::mt19937_64 rng(19);
  const Tensor4 a = random_tensor({1, 2, 3, 4}, rng), b = random_tensor({1, 3, 3, 4}, rng);
  const Tensor4 cat = concat_channels(a, b);
  auto [ga, gb] = concat_channels_backward(cat, 2);
  EXPECT_EQ(ga, a);
  EXPECT_EQ(gb, b);
}

TEST(ConcatTest, SpatialMismatchIsShapeError) {
  EXPECT_EQ(kind_of([] { concat_channels(Tensor4({1, 2, 3, 4}), Tensor4({1, 2, 3, 5})); }),
            ErrorKind::kShape);
}

// --- loss -------------------------------------------------------------------

TEST(LossTest, SymmetricPoint) {
  const auto r = sigmoid_cross_entropy(Tensor4({1, 1, 2, 3}), Tensor4::filled({1, 1, 2, 3}, 0.5f));
  EXPECT_NEAR(r.loss, 0.693147, 1e-6);
  for (float g : r.grad_logits.data()) EXPECT_EQ(g, 0.0f);
}

TEST(LossTest, StationaryWhenTargetIsSigmoid) {
  std::mt19937_64 rng(20);
  const Tensor4 z = random_tensor({1, 1, 4, 4}, rng, -3.0f, 3.0f);
  Tensor4 t(z.dims());
  for (std::size_t i = 0; i < z.count(); ++i) t[i] = 1.0f / (1.0f + std::exp(-z[i]));
  const auto r = sigmoid_cross_entropy(z, t);
  for (float g : r.grad_logits.data()) EXPECT_NEAR(g, 0.0f, 1e-8);
}

TEST(LossTest, MatchesFiniteDifferences) {
  std::mt19937_64 rng(21);
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Dims d{1, 1, pick(rng, 1, 5), pick(rng, 1, 6)};
    const Tensor4 z = random_tensor(d, rng, -4.0f, 4.0f);
    const Tensor4 t = random_tensor(d, rng, 0.0f, 1.0f);
    const auto r = sigmoid_cross_entropy(z, t);
    Tensor4d zd = tensor_cast<double>(z);
    const Tensor4d td = tensor_cast<double>(t);
    const auto num =
        oracle::numeric_gradient(zd, [&] { return sigmoid_cross_entropy(zd, td).loss; });
    for (std::size_t i = 0; i < num.size(); ++i)
      worst = std::max(worst, oracle::relative_error(r.grad_logits[i], num[i]));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(LossTest, StableForExtremeLogits) {
  const Tensor4 z({1, 1, 1, 2}, {-200.0f, 200.0f});
  const Tensor4 t({1, 1, 1, 2}, {1.0f, 0.0f});
  const auto r = sigmoid_cross_entropy(z, t);
  EXPECT_NEAR(r.loss, 200.0, 1e-9);
  EXPECT_TRUE(r.grad_logits.all_finite());
}

TEST(LossTest, TargetOutsideUnitIntervalIsDomainError) {
  EXPECT_EQ(kind_of([] {
              sigmoid_cross_entropy(Tensor4({1, 1, 1, 1}), Tensor4::filled({1, 1, 1, 1}, 1.5f));
            }),
            ErrorKind::kDomain);
}

}  // namespace
}  // namespace salicon::layers
