#ifndef SALICON_GRADCHECK_HPP_
#define SALICON_GRADCHECK_HPP_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "salicon/layers.hpp"
#include "salicon/netspec.hpp"

// Central finite-difference checks of every backward kernel and of the whole
// two-stream graph at miniature scale. Analytic gradients come from the
// float kernels; numeric ones from the same forward code run in double.
namespace salicon::gradcheck {

enum class Scale {
  kTiny,   // 1x3x12x16 / 1x3x6x8 inputs, two one-conv blocks
  kSmall,  // 1x3x24x32 / 1x3x12x16 inputs, two one-conv blocks
};
const char* to_string(Scale scale);
Scale parse_scale(std::string_view text);

// Two-stream config used by the end-to-end check; every layer trainable.
TwoStreamConfig network_config(Scale scale);

struct Options {
  Scale scale = Scale::kTiny;
  layers::InterpBackward mode = layers::InterpBackward::kAdjoint;
  std::uint64_t seed = 0;
  double epsilon = 1e-3;
  std::size_t instances = 20;  // random instances per layer kind
  double tolerance = 1e-3;
};

// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

struct Entry {
  std::string check;
  std::size_t instances = 0;
  std::size_t probes = 0;   // coordinates compared
  std::size_t skipped = 0;  // probes whose +-eps step switched a ReLU or pool
  double max_rel_error = 0.0;
};

struct Report {
  std::vector<Entry> layers;
  Entry end_to_end_adjoint;
  // Present only when the requested mode is paper-resize.
  bool has_paper_resize = false;
  Entry end_to_end_paper_resize;
  double tolerance = 1e-3;

  // Every layer check and the adjoint end-to-end check are within tolerance.
  bool passed() const;
};

Report run(const Options& options);

// Per-layer suites, exposed for callers that only want one of them.
Entry check_conv(std::uint64_t seed, std::size_t instances, double eps);
Entry check_relu(std::uint64_t seed, std::size_t instances, double eps);
Entry check_maxpool(std::uint64_t seed, std::size_t instances, double eps);
Entry check_bilinear(std::uint64_t seed, std::size_t instances, double eps,
                     layers::InterpBackward mode = layers::InterpBackward::kAdjoint);
Entry check_concat(std::uint64_t seed, std::size_t instances, double eps);
Entry check_loss(std::uint64_t seed, std::size_t instances, double eps);
// Every parameter of the miniature two-stream net.
Entry check_end_to_end(Scale scale, layers::InterpBackward mode,
                       std::uint64_t seed, double eps);

}  // namespace salicon::gradcheck

#endif  // SALICON_GRADCHECK_HPP_
