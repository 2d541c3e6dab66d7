#include "cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <string>
#include <utility>
#include <vector>

#include "salicon/gradcheck.hpp"
#include "salicon/image.hpp"
#include "salicon/netspec.hpp"
#include "salicon/network.hpp"
#include "salicon/solver.hpp"
#include "salicon/threads.hpp"
#include "salicon/weights.hpp"

namespace salicon::cli {
namespace {

using Json = nlohmann::ordered_json;
using Config = std::vector<std::pair<std::string, std::string>>;

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return ec == std::errc() ? std::string(buf, end) : std::to_string(v);
}

std::string hw(layers::Extent2 e) {
  return std::to_string(e.h) + "x" + std::to_string(e.w);
}

void print_config(std::ostream& err, std::string_view command, const Config& cfg) {
  err << "salicon " << command << '\n';
  for (const auto& [key, value] : cfg) err << "  " << key << ": " << value << '\n';
}

const LayerSpec& input_layer(const NetSpec& spec, std::string_view blob) {
  for (const auto& l : spec.layers) {
    if (l.kind == LayerKind::kInput && l.tops[0] == blob) return l;
  }
  throw Error(ErrorKind::kInput,
              "netspec '" + spec.name + "' has no input blob '" + std::string(blob) + "'");
}

Dims input_dims(const NetSpec& spec, std::string_view blob) {
  return std::get<InputSpec>(input_layer(spec, blob).params).dims;
}

// The netspec minus its loss layer and any input nothing else reads, so a
// training spec can also drive inference.
NetSpec inference_view(const NetSpec& spec) {
  NetSpec view;
  view.name = spec.name;
  for (const auto& l : spec.layers) {
    if (l.kind != LayerKind::kLoss) view.layers.push_back(l);
  }
  std::erase_if(view.layers, [&](const LayerSpec& l) {
    if (l.kind != LayerKind::kInput) return false;
    for (const auto& other : view.layers) {
      for (const auto& b : other.bottoms) {
        if (b == l.tops[0]) return false;
      }
    }
    return true;
  });
  return view;
}

struct PreprocFlags {
  std::vector<double> means;
  bool no_swap = false;
};

void add_preproc_flags(CLI::App* cmd, PreprocFlags& flags) {
  cmd->add_option("--means", flags.means,
                  "Per-channel means in network input order (default VGG BGR)")
      ->expected(3);
  cmd->add_flag("--no-swap", flags.no_swap, "Keep RGB order instead of BGR");
}

PreprocConfig preproc_for(const NetSpec& spec, const PreprocFlags& flags) {
  PreprocConfig cfg;
  const Dims fine = input_dims(spec, blobs::kFineInput);
  const Dims coarse = input_dims(spec, blobs::kCoarseInput);
  if (fine.n != 1 || fine.c != 3 || coarse.n != 1 || coarse.c != 3) {
    throw Error(ErrorKind::kInput, "image inputs must be 1x3xHxW, got " +
                                       to_string(fine) + " and " + to_string(coarse));
  }
  cfg.fine_hw = {fine.h, fine.w};
  cfg.coarse_hw = {coarse.h, coarse.w};
  if (!flags.means.empty()) {
    for (std::size_t i = 0; i < 3; ++i) cfg.channel_means[i] = flags.means[i];
  }
  cfg.swap_rgb_to_bgr = !flags.no_swap;
  return cfg;
}

void describe_preproc(Config& cfg, const PreprocConfig& p) {
  cfg.emplace_back("channel_means", num(p.channel_means[0]) + " " +
                                        num(p.channel_means[1]) + " " +
                                        num(p.channel_means[2]));
  cfg.emplace_back("swap_rgb_to_bgr", p.swap_rgb_to_bgr ? "true" : "false");
  cfg.emplace_back("fine_hw", hw(p.fine_hw));
  cfg.emplace_back("coarse_hw", hw(p.coarse_hw));
}

Json preproc_json(const PreprocConfig& p) {
  return Json{{"channel_means", p.channel_means},
              {"swap_rgb_to_bgr", p.swap_rgb_to_bgr},
              {"fine_hw", {p.fine_hw.h, p.fine_hw.w}},
              {"coarse_hw", {p.coarse_hw.h, p.coarse_hw.w}}};
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

// ---------------------------------------------------------------------------

struct SaliencyArgs {
  std::string model, netspec, image, out, raw_out;
  double threshold = -1.0;
  PreprocFlags preproc;
  CLI::Option* threshold_opt = nullptr;
};

int compute_saliency(const SaliencyArgs& a, std::ostream& out, std::ostream& err) {
  const NetSpec spec = inference_view(load_netspec(a.netspec));
  const PreprocConfig pc = preproc_for(spec, a.preproc);
  std::optional<double> threshold;
  if (a.threshold_opt->count() > 0) threshold = a.threshold;

  Config cfg{{"model", a.model}, {"netspec", a.netspec}, {"image", a.image},
             {"out", a.out}, {"raw_out", a.raw_out.empty() ? "none" : a.raw_out},
             {"threshold", threshold ? num(*threshold) : "none"},
             {"threads", std::to_string(worker_count())}};
  describe_preproc(cfg, pc);
  print_config(err, "compute-saliency", cfg);

  const WeightStore weights = load_weights(a.model);
  const RawImage image = decode_image(a.image);
  Network net(spec, weights, {.retain_activations = false});

  const auto start = std::chrono::steady_clock::now();
  NetworkInputs in = preprocess(image, pc);
  Network::BlobMap inputs;
  inputs.emplace(blobs::kFineInput, std::move(in.fine));
  inputs.emplace(blobs::kCoarseInput, std::move(in.coarse));
  net.forward(std::move(inputs));
  const SaliencyMap map = postprocess(net.blob(blobs::kSaliency),
                                      {image.height, image.width}, threshold);
  err << "forward: " << std::fixed << std::setprecision(2) << seconds_since(start)
      << " s\n";

  save_saliency_png(a.out, map);
  if (!a.raw_out.empty()) save_saliency_raw(a.raw_out, map);
  out << "wrote " << a.out << " (" << map.width << "x" << map.height << ")\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string netspec, weights, images, fixations, out, progress, meta;
  double base_lr = 1e-7;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double budget_min = 150.0;
  std::uint64_t max_updates = 0;
  std::uint64_t seed = 0;
  double train_fraction = 0.8;
  std::string interp = "adjoint";
  std::size_t workers = 0;
  PreprocFlags preproc;
  CLI::Option* max_updates_opt = nullptr;
};

int train_command(const TrainArgs& a, std::ostream& out, std::ostream& err) {
  const NetSpec spec = load_netspec(a.netspec);
  if (!spec.has_loss()) {
    throw Error(ErrorKind::kInput, "netspec '" + a.netspec +
                                       "' has no loss layer; training needs a finetune spec");
  }
  const Dims gt = input_dims(spec, blobs::kGroundTruth);
  const layers::Extent2 loss_hw{gt.h, gt.w};
  const PreprocConfig pc = preproc_for(spec, a.preproc);

  SolverConfig sc;
  sc.base_lr = a.base_lr;
  sc.momentum = a.momentum;
  sc.weight_decay = a.weight_decay;
  sc.time_budget = std::chrono::duration<double>(a.budget_min * 60.0);
  if (a.max_updates_opt->count() > 0) sc.max_updates = a.max_updates;
  sc.rng_seed = a.seed;
  sc.train_fraction = a.train_fraction;
  sc.snapshot_path = a.out;
  sc.interp_backward = layers::parse_interp_backward(a.interp);
  sc.validate();

  const std::string progress_path = a.progress.empty() ? a.out + ".progress.csv" : a.progress;
  const std::string meta_path = a.meta.empty() ? a.out + ".meta.json" : a.meta;
  const std::size_t workers = a.workers == 0 ? worker_count() : a.workers;

  Config cfg{{"netspec", a.netspec}, {"weights", a.weights}, {"images", a.images},
             {"fixations", a.fixations}, {"out", a.out},
             {"progress", progress_path}, {"meta", meta_path},
             {"base_lr", num(sc.base_lr)}, {"momentum", num(sc.momentum)},
             {"weight_decay", num(sc.weight_decay)},
             {"time_budget_min", num(a.budget_min)},
             {"max_updates", sc.max_updates ? std::to_string(*sc.max_updates) : "none"},
             {"seed", std::to_string(sc.rng_seed)},
             {"train_fraction", num(sc.train_fraction)},
             {"interp_backward", layers::to_string(sc.interp_backward)},
             {"loss_hw", hw(loss_hw)}, {"workers", std::to_string(workers)}};
  describe_preproc(cfg, pc);
  print_config(err, "train", cfg);

  const WeightStore initial = load_weights(a.weights);
  Network net(spec, initial);
  DatasetReport dataset = build_dataset(a.images, a.fixations, pc, loss_hw, workers);
  for (const auto& f : dataset.skipped) {
    err << "warning: skipping unpaired file '" << f << "'\n";
  }
  err << "dataset: " << dataset.samples.size() << " pairs\n";

  Json meta{{"command", "train"},
            {"netspec", a.netspec},
            {"weights", a.weights},
            {"images", a.images},
            {"fixations", a.fixations},
            {"out", a.out},
            {"progress", progress_path},
            {"solver",
             {{"base_lr", sc.base_lr},
              {"momentum", sc.momentum},
              {"weight_decay", sc.weight_decay},
              {"time_budget_min", a.budget_min},
              {"max_updates", sc.max_updates ? Json(*sc.max_updates) : Json(nullptr)},
              {"rng_seed", sc.rng_seed},
              {"train_fraction", sc.train_fraction},
              {"interp_backward", layers::to_string(sc.interp_backward)}}},
            {"preprocess", preproc_json(pc)},
            {"loss_hw", {loss_hw.h, loss_hw.w}},
            {"workers", workers},
            {"dataset", {{"pairs", dataset.samples.size()}, {"skipped", dataset.skipped}}}};
  auto write_meta = [&] {
    std::ofstream f(meta_path);
    if (!f) throw Error(ErrorKind::kIo, "cannot write '" + meta_path + "'");
    f << meta.dump(2) << '\n';
  };

  std::ofstream progress(progress_path);
  if (!progress) throw Error(ErrorKind::kIo, "cannot write '" + progress_path + "'");
  auto sink = [&](const ProgressRecord& r) {
    progress << r.epoch << ',' << r.index << ',' << r.sample_id << ',' << num(r.loss)
             << '\n';
    progress.flush();
  };

  const auto start = std::chrono::steady_clock::now();
  try {
    const TrainReport report = train(net, dataset.samples, sc, sink);
    meta["split"] = {{"train", report.split.train.size()},
                     {"test", report.split.test.size()}};
    meta["result"] = {{"status", "completed"},
                      {"updates", report.updates},
                      {"epochs_started", report.epochs_started},
                      {"elapsed_s", seconds_since(start)}};
    write_meta();
    out << "wrote " << a.out << " after " << report.updates << " updates ("
        << report.epochs_started << " epochs started)\n";
    return kOk;
  } catch (const DivergenceError& d) {
    meta["result"] = {{"status", "diverged"},
                      {"epoch", d.epoch()},
                      {"index", d.index()},
                      {"sample_id", d.sample_id()},
                      {"loss", num(d.loss())},
                      {"elapsed_s", seconds_since(start)}};
    write_meta();
    err << "error: " << d.what() << "; pre-divergence weights saved to " << a.out << '\n';
    return kDiverged;
  }
}

// ---------------------------------------------------------------------------

struct TransplantArgs {
  std::string manifest, out, netspec;
  std::uint64_t seed = 0;
  double std_dev = 0.01;
  double bias = 0.0;
};

int transplant_command(const TransplantArgs& a, std::ostream& out, std::ostream& err) {
  print_config(err, "transplant",
               {{"vgg_manifest", a.manifest}, {"netspec", a.netspec.empty() ? "canonical" : a.netspec},
                {"seed", std::to_string(a.seed)}, {"std", num(a.std_dev)},
                {"bias", num(a.bias)}, {"out", a.out}});
  const NetSpec spec =
      a.netspec.empty() ? build_salicon_spec(NetMode::kInference) : load_netspec(a.netspec);
  const WeightStore vgg = import_raw(a.manifest);
  const WeightStore store = transplant_vgg(vgg, spec, {a.seed, a.std_dev, a.bias});
  save_weights(store, a.out);
  out << "wrote " << a.out << " (" << store.size() << " entries)\n";
  return kOk;
}

struct ImportArgs {
  std::string manifest, out;
};

int import_command(const ImportArgs& a, std::ostream& out, std::ostream& err) {
  print_config(err, "import-weights", {{"manifest", a.manifest}, {"out", a.out}});
  const WeightStore store = import_raw(a.manifest);
  save_weights(store, a.out);
  out << "wrote " << a.out << " (" << store.size() << " entries)\n";
  return kOk;
}

// ---------------------------------------------------------------------------

struct GradcheckArgs {
  std::string scale = "tiny";
  std::string mode = "adjoint";
  std::uint64_t seed = 0;
  std::size_t instances = 20;
};

void print_entry(std::ostream& out, const gradcheck::Entry& e, double tolerance) {
  out << std::left << std::setw(30) << e.check << std::right << std::setw(10)
      << e.instances << std::setw(8) << e.probes << std::setw(8) << e.skipped
      << std::setw(14) << std::scientific << std::setprecision(3) << e.max_rel_error
      << std::defaultfloat << (e.max_rel_error < tolerance ? "  ok" : "  FAIL") << '\n';
}

int gradcheck_command(const GradcheckArgs& a, std::ostream& out, std::ostream& err) {
  gradcheck::Options o;
  o.scale = gradcheck::parse_scale(a.scale);
  o.mode = layers::parse_interp_backward(a.mode);
  o.seed = a.seed;
  o.instances = a.instances;
  print_config(err, "gradcheck",
               {{"scale", a.scale}, {"mode", a.mode}, {"seed", std::to_string(a.seed)},
                {"instances", std::to_string(a.instances)}, {"epsilon", num(o.epsilon)},
                {"tolerance", num(o.tolerance)}});

  const auto start = std::chrono::steady_clock::now();
  const gradcheck::Report r = gradcheck::run(o);
  out << std::left << std::setw(30) << "check" << std::right << std::setw(10)
      << "instances" << std::setw(8) << "probes" << std::setw(8) << "skipped"
      << std::setw(14) << "max_rel_err" << '\n';
  for (const auto& e : r.layers) print_entry(out, e, r.tolerance);
  print_entry(out, r.end_to_end_adjoint, r.tolerance);
  if (r.has_paper_resize) {
    print_entry(out, r.end_to_end_paper_resize, r.tolerance);
    const double paper = r.end_to_end_paper_resize.max_rel_error;
    const double adjoint = r.end_to_end_adjoint.max_rel_error;
    out << "flag: paper-resize end-to-end error " << std::scientific << std::setprecision(3)
        << paper << (paper > adjoint ? " exceeds" : " does not exceed")
        << " adjoint error " << adjoint << std::defaultfloat << '\n';
  }
  out << "result: " << (r.passed() ? "PASS" : "FAIL") << " (tolerance " << num(r.tolerance)
      << ", " << std::fixed << std::setprecision(2) << seconds_since(start) << " s)\n"
      << std::defaultfloat;
  return r.passed() ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------------------

struct InspectArgs {
  std::string netspec, model, canonical;
  bool emit = false;
};

int inspect_command(const InspectArgs& a, std::ostream& out, std::ostream& err) {
  print_config(err, "inspect",
               {{"netspec", a.netspec.empty() ? "none" : a.netspec},
                {"canonical", a.canonical.empty() ? "none" : a.canonical},
                {"model", a.model.empty() ? "none" : a.model}});
  if (a.netspec.empty() == a.canonical.empty()) {
    throw Error(ErrorKind::kConfig, "give exactly one of --netspec and --canonical");
  }
  const NetSpec spec =
      a.netspec.empty()
          ? build_salicon_spec(a.canonical == "training" ? NetMode::kTraining
                                                         : NetMode::kInference)
          : load_netspec(a.netspec);
  if (a.emit) {
    out << format_netspec(spec);
    return kOk;
  }
  const ShapeMap shapes = infer_shapes(spec);
  out << "net " << spec.name << ": " << spec.layers.size() << " layers\n";
  std::size_t params = 0, frozen = 0;
  for (std::size_t k : topological_order(spec)) {
    const LayerSpec& l = spec.layers[k];
    out << std::left << std::setw(28) << l.name << std::setw(16) << to_string(l.kind)
        << std::setw(16) << to_string(shapes.at(l.tops[0]));
    if (l.has_parameters()) {
      const Dims in = shapes.at(l.bottoms[0]);
      const auto& c = l.conv();
      params += c.num_output * (in.c * c.geometry.kernel_h * c.geometry.kernel_w + 1);
      if (!l.trainable()) ++frozen;
      out << " lr_mult " << num(l.lr_mult) << "/" << num(l.lr_mult_bias) << " decay_mult "
          << num(l.decay_mult) << "/" << num(l.decay_mult_bias);
    }
    out << '\n' << std::right;
  }
  out << "parameters: " << params << " (" << frozen << " frozen conv layers)\n";
  if (!a.model.empty()) {
    const WeightStore store = load_weights(a.model);
    Network net(spec, store);
    out << "model " << a.model << ": " << store.size() << " tensors, compatible\n";
  }
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Two-stream saliency prediction and training", "salicon"};
  app.require_subcommand(1);

  SaliencyArgs sal;
  auto* cs = app.add_subcommand("compute-saliency", "Predict a saliency map for one image");
  cs->add_option("--model", sal.model, "NTW1 weights")->required();
  cs->add_option("--netspec", sal.netspec, "Network spec file")->required();
  cs->add_option("--image", sal.image, "PNG or PPM image")->required();
  cs->add_option("--out", sal.out, "Output grayscale PNG")->required();
  sal.threshold_opt = cs->add_option("--threshold", sal.threshold,
                                     "Zero out values below this level")
                          ->check(CLI::Range(0.0, 1.0));
  cs->add_option("--raw-out", sal.raw_out, "Also write raw little-endian f32 values");
  add_preproc_flags(cs, sal.preproc);

  TrainArgs tr;
  auto* tc = app.add_subcommand("train", "Fine-tune on image / fixation-map pairs");
  tc->add_option("--netspec", tr.netspec, "Training network spec")->required();
  tc->add_option("--weights", tr.weights, "Initial NTW1 weights")->required();
  tc->add_option("--images", tr.images, "Directory of images")->required();
  tc->add_option("--fixations", tr.fixations, "Directory of fixation maps")->required();
  tc->add_option("--out", tr.out, "Snapshot path (NTW1)")->required();
  tc->add_option("--base-lr", tr.base_lr, "Base learning rate")->capture_default_str();
  tc->add_option("--momentum", tr.momentum, "Momentum")->capture_default_str();
  tc->add_option("--weight-decay", tr.weight_decay, "Weight decay")->capture_default_str();
  tc->add_option("--time-budget-min", tr.budget_min, "Wall-clock budget in minutes")
      ->capture_default_str();
  tr.max_updates_opt = tc->add_option("--max-updates", tr.max_updates,
                                      "Stop after exactly this many updates");
  tc->add_option("--seed", tr.seed, "Seed for split and shuffling")->capture_default_str();
  tc->add_option("--train-fraction", tr.train_fraction, "Share of pairs used for training")
      ->capture_default_str();
  tc->add_option("--interp-backward", tr.interp, "Interpolation backward mode")
      ->check(CLI::IsMember({"adjoint", "paper-resize"}))
      ->capture_default_str();
  tc->add_option("--progress", tr.progress, "Progress CSV (default <out>.progress.csv)");
  tc->add_option("--meta", tr.meta, "Run metadata JSON (default <out>.meta.json)");
  tc->add_option("--workers", tr.workers, "Dataset preprocessing threads (0: auto)");
  add_preproc_flags(tc, tr.preproc);

  TransplantArgs tp;
  auto* tpc = app.add_subcommand("transplant", "Build two-stream weights from VGG-16 weights");
  tpc->add_option("--vgg-manifest", tp.manifest, "Raw-import manifest of VGG-16 tensors")
      ->required();
  tpc->add_option("--seed", tp.seed, "Seed for the fusion-layer Gaussian")
      ->capture_default_str();
  tpc->add_option("--std", tp.std_dev, "Fusion weight standard deviation")
      ->capture_default_str();
  tpc->add_option("--bias", tp.bias, "Fusion bias constant")->capture_default_str();
  tpc->add_option("--out", tp.out, "Output NTW1 file")->required();
  tpc->add_option("--netspec", tp.netspec, "Target spec (default canonical)");

  ImportArgs im;
  auto* ic = app.add_subcommand("import-weights", "Convert a raw manifest to NTW1");
  ic->add_option("--manifest", im.manifest, "Raw-import manifest")->required();
  ic->add_option("--out", im.out, "Output NTW1 file")->required();

  GradcheckArgs gc;
  auto* gcc = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  gcc->add_option("--scale", gc.scale, "Miniature network size")
      ->check(CLI::IsMember({"tiny", "small"}))
      ->capture_default_str();
  gcc->add_option("--mode", gc.mode, "Interpolation backward mode")
      ->check(CLI::IsMember({"adjoint", "paper-resize"}))
      ->capture_default_str();
  gcc->add_option("--seed", gc.seed, "Seed")->capture_default_str();
  gcc->add_option("--instances", gc.instances, "Random instances per layer kind")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  InspectArgs is;
  auto* isc = app.add_subcommand("inspect", "Print a network spec with inferred shapes");
  isc->add_option("--netspec", is.netspec, "Network spec file");
  isc->add_option("--canonical", is.canonical, "Use the built-in spec")
      ->check(CLI::IsMember({"inference", "training"}));
  isc->add_option("--model", is.model, "Check that NTW1 weights fit the netspec");
  isc->add_flag("--emit", is.emit, "Print the network in netspec text form");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kOk : kUsage;
  }

  set_blas_threads(worker_count());
  try {
    if (*cs) return compute_saliency(sal, out, err);
    if (*tc) return train_command(tr, out, err);
    if (*tpc) return transplant_command(tp, out, err);
    if (*ic) return import_command(im, out, err);
    if (*gcc) return gradcheck_command(gc, out, err);
    if (*isc) return inspect_command(is, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    switch (e.kind()) {
      case ErrorKind::kConfig: return kUsage;
      case ErrorKind::kDivergence: return kDiverged;
      default: return kInputError;
    }
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInputError;
  }
  return kUsage;
}

}  // namespace salicon::cli
