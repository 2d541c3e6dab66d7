#ifndef SALICON_ERROR_HPP_
#define SALICON_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace salicon {

enum class ErrorKind {
  kSize,        // zero or overflowing tensor extent
  kShape,       // dimension mismatch between operands
  kDomain,      // value outside the accepted range
  kGraph,       // malformed layer graph (cycle, dangling bottom, duplicate)
  kState,       // operation called in the wrong order
  kInput,       // missing or mis-shaped network input / parameter
  kFormat,      // malformed file contents
  kIo,          // file could not be opened, read or written
  kDecode,      // image decoding failure
  kTransplant,  // source weights lack a required layer
  kDataset,     // no usable training pairs
  kConfig,      // invalid configuration value
  kNumeric,     // NaN or Inf encountered
  kDivergence,  // training loss became non-finite
  kInternal,
};

const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + message),
        kind_(kind),
        message_(message) {}

  ErrorKind kind() const { return kind_; }
  // The message without the "<kind> error: " prefix.
  const std::string& message() const { return message_; }

 private:
  ErrorKind kind_;
  std::string message_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(std::size_t epoch, std::size_t index, std::string sample_id,
                  double loss);

  std::size_t epoch() const { return epoch_; }
  std::size_t index() const { return index_; }
  const std::string& sample_id() const { return sample_id_; }
  double loss() const { return loss_; }

 private:
  std::size_t epoch_;
  std::size_t index_;
  std::string sample_id_;
  double loss_;
};

}  // namespace salicon

#endif  // SALICON_ERROR_HPP_
