// Acceptance run: one PASS/FAIL line per criterion, each with its measured
// time. Exits non-zero when any criterion fails.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "oracles.hpp"
#include "salicon/gradcheck.hpp"
#include "salicon/image.hpp"
#include "salicon/layers.hpp"
#include "salicon/netspec.hpp"
#include "salicon/network.hpp"
#include "salicon/solver.hpp"
#include "salicon/threads.hpp"
#include "salicon/weights.hpp"
#include "toy.hpp"

namespace {

using namespace salicon;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool ok = true;
  std::ostringstream detail;

  void require(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void criterion(int id, const char* title, double limit_s, const std::function<void(Outcome&)>& body) {
  Outcome o;
  const auto t0 = Clock::now();
  try {
    body(o);
  } catch (const std::exception& e) {
    o.ok = false;
    o.detail << " [exception: " << e.what() << "]";
  }
  const double t = seconds(t0);
  if (t > limit_s) {
    o.ok = false;
    o.detail << " [over time limit " << limit_s << " s]";
  }
  failures += !o.ok;
  std::printf("criterion %d: %s  %-44s %7.2f s /%5.0f s %s\n", id, o.ok ? "PASS" : "FAIL", title,
              t, limit_s, o.detail.str().c_str());
  std::fflush(stdout);
}

void canonical_shapes(Outcome& o) {
  const auto t0 = Clock::now();
  const NetSpec spec = build_salicon_spec(NetMode::kInference);
  const ShapeMap s = infer_shapes(spec);
  const double infer_s = seconds(t0);
  o.require(infer_s < 1.0, "shape inference under 1 s");
  o.require(s.at("fine_scale") == Dims{1, 3, 1200, 1600}, "fine input");
  o.require(s.at("coarse_scale") == Dims{1, 3, 600, 800}, "coarse input");
  o.require(s.at("pool5") == Dims{1, 512, 38, 50}, "pool5");
  o.require(s.at("sec_pool5") == Dims{1, 512, 19, 25}, "sec_pool5");
  o.require(s.at("interpolated_data") == Dims{1, 512, 38, 50}, "interpolated_data");
  o.require(s.at("concat") == Dims{1, 1024, 38, 50}, "concat");
  o.require(s.at("saliency_map") == Dims{1, 1, 38, 50}, "saliency_map");

  Network net(spec, random_weights(spec, 1), {.retain_activations = false});
  std::mt19937_64 rng(1);
  Network::BlobMap in;
  in.emplace(blobs::kFineInput, oracle::random_tensor(s.at("fine_scale"), rng, -100.0f, 100.0f));
  in.emplace(blobs::kCoarseInput, oracle::random_tensor(s.at("coarse_scale"), rng, -100.0f, 100.0f));
  const auto t1 = Clock::now();
  const Tensor4& out = net.forward(std::move(in)).at(std::string(blobs::kSaliency));
  const double forward_s = seconds(t1);
  o.require(out.dims() == Dims{1, 1, 38, 50}, "forward output dims");
  o.require(out.all_finite(), "forward output finite");
  o.require(forward_s < 120.0, "full forward under 2 min");
  o.detail << "inference " << infer_s * 1e3 << " ms, full forward " << forward_s << " s";
}

void half_size_map(Outcome& o) {
  TwoStreamConfig cfg = TwoStreamConfig::vgg16(NetMode::kInference);
  cfg.fine_input = {1, 3, 600, 800};
  cfg.coarse_input = {1, 3, 300, 400};
  const Dims d = infer_shapes(build_two_stream_spec(cfg)).at("saliency_map");
  o.require(d == Dims{1, 1, 19, 25}, "600x800 input gives 19x25");
  o.detail << "saliency_map " << to_string(d);
}

void gradient_checks(Outcome& o) {
  gradcheck::Options opt;
  opt.scale = gradcheck::Scale::kSmall;
  opt.instances = 20;
  opt.seed = 1;
  const gradcheck::Report r = gradcheck::run(opt);
  double worst = 0.0;
  for (const auto& e : r.layers) {
    o.require(e.instances >= 20, e.check + " has 20 instances");
    worst = std::max(worst, e.max_rel_error);
  }
  worst = std::max(worst, r.end_to_end_adjoint.max_rel_error);
  o.require(r.passed(), "all checks under 1e-3");
  o.detail << r.layers.size() << " layer kinds + end-to-end, worst rel error " << worst;
}

void adjoint_identity(Outcome& o) {
  std::mt19937_64 rng(2);
  double worst = 0.0;
  const int pairs = 200;
  for (int k = 0; k < pairs; ++k) {
    const Dims in{1, oracle::pick(rng, 1, 3), oracle::pick(rng, 1, 40), oracle::pick(rng, 1, 40)};
    const layers::Extent2 out{oracle::pick(rng, 1, 80), oracle::pick(rng, 1, 80)};
    const Tensor4 x = oracle::random_tensor(in, rng);
    const Tensor4 y = oracle::random_tensor({1, in.c, out.h, out.w}, rng);
    const Tensor4 rx = layers::bilinear_resize_forward(x, out);
    const Tensor4 rty = layers::bilinear_resize_backward(y, {in.h, in.w});
    const double lhs = oracle::dot(rx, y), rhs = oracle::dot(rty, x);
    const double scale = std::sqrt(oracle::dot(x, x) * oracle::dot(y, y));
    worst = std::max(worst, std::abs(lhs - rhs) / scale);
  }
  o.require(worst < 1e-4, "normalized inner-product gap under 1e-4");
  o.detail << pairs << " pairs, worst gap " << worst;
}

void conv_oracle(Outcome& o) {
  std::mt19937_64 rng(3);
  double worst = 0.0;
  const int instances = 80;
  for (int k = 0; k < instances; ++k) {
    layers::ConvGeometry g;
    g.kernel_h = g.kernel_w = oracle::pick(rng, 1, 5);
    g.pad_h = g.pad_w = oracle::pick(rng, 0, g.kernel_h - 1);
    g.stride_h = g.stride_w = oracle::pick(rng, 1, 2);
    const Dims in{oracle::pick(rng, 1, 2), oracle::pick(rng, 1, 8), oracle::pick(rng, 5, 24),
                  oracle::pick(rng, 5, 24)};
    const std::size_t oc = oracle::pick(rng, 1, 16);
    const Tensor4 x = oracle::random_tensor(in, rng);
    const Tensor4 w = oracle::random_tensor({oc, in.c, g.kernel_h, g.kernel_w}, rng);
    const std::vector<float> b = oracle::random_tensor({1, 1, 1, oc}, rng).flatten();
    const Tensor4 got = layers::conv2d_forward<float>(x, w, b, g);
    const auto want = oracle::direct_conv(x, w, b, g);
    for (std::size_t i = 0; i < got.count(); ++i) {
      worst = std::max(worst, std::abs(got[i] - want[i]) / std::max(1.0, std::abs(want[i])));
    }
  }
  o.require(worst <= 1e-5, "max error within 1e-5");
  o.detail << instances << " instances, worst error " << worst;
}

void toy_training(Outcome& o) {
  const NetSpec spec = toy::spec();
  SolverConfig cfg;
  cfg.base_lr = 0.01;
  cfg.max_updates = 200;
  cfg.train_fraction = 1.0;
  const WeightStore w0 = toy::weights(spec, 0);
  const auto samples = toy::samples(spec, 0);

  Network net(spec, w0);
  const double before = toy::loss_of(net, samples[0]);
  const TrainReport r = train(net, samples, cfg);
  const double after = toy::loss_of(net, samples[0]);
  o.require(after <= 0.5 * before, "loss drops by half");

  std::size_t frozen = 0;
  for (const auto& [name, info] : net.param_info()) {
    if (info.lr_mult != 0.0) continue;
    ++frozen;
    o.require(r.weights.get(name) == w0.get(name), name + " unchanged");
  }
  o.require(frozen > 0, "frozen layers present");

  Network again(spec, w0);
  o.require(train(again, samples, cfg).weights == r.weights, "identical rerun");
  o.detail << "loss " << before << " -> " << after << " (" << 100.0 * (1.0 - after / before)
           << "% drop), " << frozen << " frozen tensors unchanged, rerun identical";
}

void weight_store(Outcome& o) {
  std::mt19937_64 rng(4);
  int round_trips = 0;
  for (int k = 0; k < 100; ++k) {
    WeightStore s;
    const std::size_t n = oracle::pick(rng, 1, 6);
    for (std::size_t i = 0; i < n; ++i) {
      const Dims d{oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 4), oracle::pick(rng, 1, 3),
                   oracle::pick(rng, 1, 3)};
      s.add("t" + std::to_string(k) + "_" + std::to_string(i), oracle::random_tensor(d, rng, -1e3f, 1e3f));
    }
    const auto bytes = encode_ntw1(s);
    round_trips += decode_ntw1(bytes) == s && encode_ntw1(decode_ntw1(bytes)) == bytes;
  }
  o.require(round_trips == 100, "100 round trips exact");

  const NetSpec spec = build_salicon_spec(NetMode::kInference);
  const WeightStore vgg = random_vgg16(4);
  const WeightStore t = transplant_vgg(vgg, spec, {.seed = 4});
  o.require(t.size() == 54, "54 entries");
  bool copies = true;
  for (const auto& name : vgg16_conv_names()) {
    for (const auto& p : {weight_name(name), bias_name(name)}) {
      const std::string sec = std::string(p).insert(0, blobs::kCoarsePrefix);
      copies = copies && t.get(p) == vgg.get(p) && t.get(sec) == vgg.get(p);
    }
  }
  o.require(copies, "both streams copy the source tensors");
  o.require(transplant_vgg(vgg, spec, {.seed = 4}) == t, "transplant deterministic");
  o.detail << round_trips << " NTW1 round trips, transplant " << t.size() << " entries";
}

void end_to_end_cli(Outcome& o) {
  const auto dir = oracle::scratch_dir("acceptance_cli");
  const NetSpec spec = build_salicon_spec(NetMode::kInference);
  WeightStore w = transplant_vgg(random_vgg16(8), spec, {.seed = 8});
  save_weights(w, dir / "model.ntw");
  std::mt19937_64 rng(8);
  std::vector<std::uint8_t> px(640 * 480 * 3);
  for (auto& v : px) v = static_cast<std::uint8_t>(rng());
  write_png_rgb(dir / "photo.png", RawImage(640, 480, std::move(px)));

  auto saliency = [&](const std::string& model, const std::string& out) {
    const std::string netspec = SALICON_SOURCE_DIR "/netspecs/salicon.netspec";
    const std::string image = (dir / "photo.png").string();
    const std::string args[] = {"salicon", "compute-saliency", "--model", model, "--netspec",
                                netspec, "--image", image, "--out", out};
    const char* argv[10];
    for (int i = 0; i < 10; ++i) argv[i] = args[i].c_str();
    std::ostringstream sink_out, sink_err;
    const int code = cli::run(10, argv, sink_out, sink_err);
    if (code != cli::kOk) o.detail << " [" << sink_err.str() << "]";
    return code;
  };

  o.require(saliency((dir / "model.ntw").string(), (dir / "map.png").string()) == cli::kOk,
            "exit code 0");
  const RawImage map = decode_image(dir / "map.png");
  o.require(map.width == 640 && map.height == 480, "640x480 output");

  w.set(weight_name(blobs::kFusionLayer), Tensor4({1, 1024, 1, 1}));
  w.set(bias_name(blobs::kFusionLayer), Tensor4({1, 1, 1, 1}));
  save_weights(w, dir / "zero.ntw");
  o.require(saliency((dir / "zero.ntw").string(), (dir / "zero.png").string()) == cli::kOk,
            "zero-fusion exit code 0");
  const RawImage flat = decode_image(dir / "zero.png");
  bool all_128 = flat.width == 640 && flat.height == 480;
  for (auto v : flat.pixels) all_128 = all_128 && v == 128;
  o.require(all_128, "zero fusion gives uniform 128");
  o.detail << "map " << map.width << "x" << map.height << ", zero fusion uniform 128";
}

}  // namespace

int main() {
  set_blas_threads(worker_count());
  criterion(1, "canonical shapes and full-size forward", 180, canonical_shapes);
  criterion(2, "600x800 input maps to 19x25", 1, half_size_map);
  criterion(3, "finite-difference gradient checks", 60, gradient_checks);
  criterion(4, "bilinear adjoint identity", 5, adjoint_identity);
  criterion(5, "convolution against direct loops", 30, conv_oracle);
  criterion(6, "toy fine-tuning", 60, toy_training);
  criterion(7, "NTW1 round trips and transplant", 10, weight_store);
  criterion(8, "compute-saliency end to end", 180, end_to_end_cli);
  std::printf("%d of 8 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
