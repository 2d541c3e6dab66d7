#ifndef SALICON_SOLVER_HPP_
#define SALICON_SOLVER_HPP_

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "salicon/image.hpp"
#include "salicon/layers.hpp"
#include "salicon/network.hpp"
#include "salicon/tensor.hpp"
#include "salicon/weights.hpp"

namespace salicon {

// One preprocessed training pair, held in memory at both input scales.
struct FixationSample {
  std::string id;
  Tensor4 fine;
  Tensor4 coarse;
  Tensor4 target;  // (1, 1, loss_h, loss_w), values in [0, 1]
};

struct DatasetReport {
  std::vector<FixationSample> samples;  // sorted by id
  std::vector<std::string> skipped;     // files without a partner
};

// Pairs files of both directories by base name (extension ignored) and
// preprocesses every pair on a worker pool. Throws kDataset when nothing
// pairs up.
DatasetReport build_dataset(const std::filesystem::path& images_dir,
                            const std::filesystem::path& fixations_dir,
                            const PreprocConfig& cfg, layers::Extent2 loss_hw,
                            std::size_t workers = 0);

struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

// Seeded shuffle of [0, count) then a prefix/suffix cut at
// floor(count * train_fraction). Throws kConfig for an empty train set.
Split split_indices(std::size_t count, double train_fraction, std::uint64_t seed);

struct SolverConfig {
  double base_lr = 1e-7;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::chrono::duration<double> time_budget = std::chrono::minutes(150);
  // When set, the run stops after exactly this many updates instead of
  // watching the clock.
  std::optional<std::uint64_t> max_updates;
  std::uint64_t rng_seed = 0;
  double train_fraction = 0.8;
  std::filesystem::path snapshot_path;  // empty: no snapshot
  layers::InterpBackward interp_backward = layers::InterpBackward::kAdjoint;

  void validate() const;
};

struct ProgressRecord {
  std::size_t epoch;
  std::size_t index;  // position within the epoch
  std::string sample_id;
  double loss;
};

using ProgressSink = std::function<void(const ProgressRecord&)>;

struct TrainReport {
  WeightStore weights;
  std::uint64_t updates = 0;
  std::size_t epochs_started = 0;
  Split split;
};

// Heavy-ball update of one parameter tensor:
//   v <- momentum * v - lr * (g + decay * w);  w <- w + v
void momentum_step(std::span<float> weights, std::span<const float> grad,
                   std::span<float> velocity, double lr, double momentum,
                   double decay);

// Single-sample SGD until the budget runs out. Per epoch the train ids are
// reshuffled; each sample gets its own forward, backward and update.
// Parameters with a zero learning-rate multiplier are never touched. The
// snapshot is written on expiry and before a DivergenceError propagates.
TrainReport train(Network& net, const std::vector<FixationSample>& samples,
                  const SolverConfig& cfg, const ProgressSink& sink = {});

}  // namespace salicon

#endif  // SALICON_SOLVER_HPP_
