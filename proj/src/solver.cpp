#include "salicon/solver.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <exception>
#include <map>
#include <mutex>
#include <random>
#include <thread>

#include "salicon/threads.hpp"

namespace salicon {
namespace {

bool is_image_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// Stem -> file for every image in `dir`; later duplicates of a stem are
// reported as skipped.
std::map<std::string, std::filesystem::path> list_images(
    const std::filesystem::path& dir, std::vector<std::string>& skipped) {
  if (!std::filesystem::is_directory(dir)) {
    throw Error(ErrorKind::kIo, "'" + dir.string() + "' is not a directory");
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, std::filesystem::path> by_stem;
  for (const auto& f : files) {
    if (!by_stem.emplace(f.stem().string(), f).second) skipped.push_back(f.string());
  }
  return by_stem;
}

// Fisher-Yates with a plain modulo draw so the permutation for a seed does
// not depend on the standard library's distribution implementation.
void shuffle(std::vector<std::size_t>& ids, std::mt19937_64& rng) {
  for (std::size_t i = ids.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(ids[i - 1], ids[j]);
  }
}

constexpr std::uint64_t kEpochStream = 0x9e3779b97f4a7c15ULL;

}  // namespace

DatasetReport build_dataset(const std::filesystem::path& images_dir,
                            const std::filesystem::path& fixations_dir,
                            const PreprocConfig& cfg, layers::Extent2 loss_hw,
                            std::size_t workers) {
  DatasetReport report;
  const auto images = list_images(images_dir, report.skipped);
  const auto fixations = list_images(fixations_dir, report.skipped);

  std::vector<std::pair<std::filesystem::path, std::filesystem::path>> pairs;
  std::vector<std::string> ids;
  for (const auto& [stem, path] : images) {
    auto it = fixations.find(stem);
    if (it == fixations.end()) {
      report.skipped.push_back(path.string());
    } else {
      pairs.emplace_back(path, it->second);
      ids.push_back(stem);
    }
  }
  for (const auto& [stem, path] : fixations) {
    if (images.count(stem) == 0) report.skipped.push_back(path.string());
  }
  if (pairs.empty()) {
    throw Error(ErrorKind::kDataset, "no image in '" + images_dir.string() +
                                         "' has a fixation map in '" +
                                         fixations_dir.string() + "'");
  }

  report.samples.resize(pairs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < pairs.size(); i = next++) {
      try {
        auto inputs = preprocess(decode_image(pairs[i].first), cfg);
        report.samples[i] = FixationSample{ids[i], std::move(inputs.fine),
                                           std::move(inputs.coarse),
                                           load_fixation_map(pairs[i].second, loss_hw)};
      } catch (...) {
        std::lock_guard<std::mutex> lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads =
      std::min(pairs.size(), workers == 0 ? worker_count() : workers);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(work);
  work();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
  return report;
}

Split split_indices(std::size_t count, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw Error(ErrorKind::kConfig, "train fraction must lie in (0, 1]");
  }
  const auto n_train = static_cast<std::size_t>(
      std::floor(static_cast<double>(count) * train_fraction + 1e-9));
  if (n_train == 0) {
    throw Error(ErrorKind::kConfig, "train fraction " + std::to_string(train_fraction) +
                                        " of " + std::to_string(count) +
                                        " samples leaves no training data");
  }
  std::vector<std::size_t> ids(count);
  for (std::size_t i = 0; i < count; ++i) ids[i] = i;
  std::mt19937_64 rng(seed);
  shuffle(ids, rng);
  Split split;
  split.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(n_train), ids.end());
  return split;
}

void SolverConfig::validate() const {
  if (!(base_lr > 0.0) || !std::isfinite(base_lr)) {
    throw Error(ErrorKind::kConfig, "base_lr must be positive");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error(ErrorKind::kConfig, "momentum must lie in [0, 1)");
  }
  if (!(weight_decay >= 0.0)) {
    throw Error(ErrorKind::kConfig, "weight_decay must be >= 0");
  }
  if (!(time_budget.count() >= 0.0)) {
    throw Error(ErrorKind::kConfig, "time budget must be >= 0");
  }
  if (!(train_fraction > 0.0 && train_fraction <= 1.0)) {
    throw Error(ErrorKind::kConfig, "train fraction must lie in (0, 1]");
  }
}

void momentum_step(std::span<float> weights, std::span<const float> grad,
                   std::span<float> velocity, double lr, double momentum,
                   double decay) {
  if (grad.size() != weights.size() || velocity.size() != weights.size()) {
    throw Error(ErrorKind::kShape, "momentum step operands differ in length");
  }
  const auto m = static_cast<float>(momentum);
  const auto rate = static_cast<float>(lr);
  const auto wd = static_cast<float>(decay);
  for (std::size_t i = 0; i < weights.size(); ++i) {
    velocity[i] = m * velocity[i] - rate * (grad[i] + wd * weights[i]);
    weights[i] += velocity[i];
  }
}

TrainReport train(Network& net, const std::vector<FixationSample>& samples,
                  const SolverConfig& cfg, const ProgressSink& sink) {
  cfg.validate();
  if (!net.spec().has_loss()) {
    throw Error(ErrorKind::kConfig, "training needs a network spec with a loss layer");
  }
  if (!net.options().retain_activations) {
    throw Error(ErrorKind::kConfig, "training needs retained activations");
  }
  if (samples.empty()) throw Error(ErrorKind::kDataset, "no training samples");
  net.set_interp_backward(cfg.interp_backward);

  TrainReport report;
  report.split = split_indices(samples.size(), cfg.train_fraction, cfg.rng_seed);

  std::map<std::string, Tensor4, std::less<>> velocity;
  for (const auto& [name, info] : net.param_info()) {
    if (info.lr_mult > 0.0) velocity.emplace(name, Tensor4(net.param(name).dims()));
  }

  auto snapshot = [&] {
    if (!cfg.snapshot_path.empty()) save_weights(net.export_weights(), cfg.snapshot_path);
  };
  const auto start = std::chrono::steady_clock::now();
  auto budget_spent = [&] {
    if (cfg.max_updates) return report.updates >= *cfg.max_updates;
    return std::chrono::steady_clock::now() - start >= cfg.time_budget;
  };

  std::mt19937_64 epoch_rng(cfg.rng_seed ^ kEpochStream);
  std::vector<std::size_t> order = report.split.train;
  while (!budget_spent()) {
    const std::size_t epoch = report.epochs_started++;
    shuffle(order, epoch_rng);
    for (std::size_t index = 0; index < order.size(); ++index) {
      if (budget_spent()) break;
      const FixationSample& sample = samples[order[index]];
      Network::BlobMap inputs;
      inputs.emplace(blobs::kFineInput, sample.fine);
      inputs.emplace(blobs::kCoarseInput, sample.coarse);
      inputs.emplace(blobs::kGroundTruth, sample.target);
      net.forward(std::move(inputs));
      const double loss = net.loss();
      if (!std::isfinite(loss)) {
        snapshot();
        throw DivergenceError(epoch, index, sample.id, loss);
      }
      net.backward();
      for (auto& [name, v] : velocity) {
        const auto& info = net.param_info().at(name);
        momentum_step(net.params().at(name).data(), net.param_grad(name).data(),
                      v.data(), cfg.base_lr * info.lr_mult, cfg.momentum,
                      cfg.weight_decay * info.decay_mult);
      }
      ++report.updates;
      if (sink) sink({epoch, index, sample.id, loss});
    }
  }
  snapshot();
  report.weights = net.export_weights();
  return report;
}

}  // namespace salicon
