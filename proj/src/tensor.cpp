#include "salicon/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>

namespace salicon {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kSize: return "size";
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kDomain: return "domain";
    case ErrorKind::kGraph: return "graph";
    case ErrorKind::kState: return "state";
    case ErrorKind::kInput: return "input";
    case ErrorKind::kFormat: return "format";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kDecode: return "decode";
    case ErrorKind::kTransplant: return "transplant";
    case ErrorKind::kDataset: return "dataset";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kDivergence: return "divergence";
    case ErrorKind::kInternal: return "internal";
  }
  return "unknown";
}

DivergenceError::DivergenceError(std::size_t epoch, std::size_t index,
                                 std::string sample_id, double loss)
    : Error(ErrorKind::kDivergence,
            "non-finite loss " + std::to_string(loss) + " at epoch " +
                std::to_string(epoch) + ", sample " + std::to_string(index) +
                " ('" + sample_id + "')"),
      epoch_(epoch),
      index_(index),
      sample_id_(std::move(sample_id)),
      loss_(loss) {}

std::size_t Dims::count() const {
  std::size_t total = 1;
  for (std::size_t d : as_array()) {
    if (d == 0) {
      throw Error(ErrorKind::kSize, "zero extent in " + to_string(*this));
    }
    if (total > std::numeric_limits<std::size_t>::max() / d) {
      throw Error(ErrorKind::kSize, "element count overflows for " +
                                        to_string(*this));
    }
    total *= d;
  }
  // Keep byte counts representable too.
  if (total > std::numeric_limits<std::size_t>::max() / sizeof(double)) {
    throw Error(ErrorKind::kSize, "element count overflows for " +
                                      to_string(*this));
  }
  return total;
}

std::string to_string(const Dims& dims) {
  return std::to_string(dims.n) + "x" + std::to_string(dims.c) + "x" +
         std::to_string(dims.h) + "x" + std::to_string(dims.w);
}

void require_same_dims(const Dims& a, const Dims& b, std::string_view what) {
  if (!(a == b)) {
    throw Error(ErrorKind::kShape, std::string(what) + ": " + to_string(a) +
                                       " vs " + to_string(b));
  }
}

template <typename T>
BasicTensor4<T>::BasicTensor4(const Dims& dims, std::vector<T> data)
    : dims_(dims), data_(std::move(data)) {
  if (data_.size() != dims_.count()) {
    throw Error(ErrorKind::kSize, "buffer of " + std::to_string(data_.size()) +
                                      " elements does not fit " +
                                      to_string(dims_));
  }
}

template <typename T>
void BasicTensor4<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
BasicTensor4<T> BasicTensor4<T>::reshaped(const Dims& dims) const& {
  return BasicTensor4(dims, data_);
}

template <typename T>
BasicTensor4<T> BasicTensor4<T>::reshaped(const Dims& dims) && {
  return BasicTensor4(dims, std::move(data_));
}

template <typename T>
bool BasicTensor4<T>::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](T v) { return std::isfinite(v); });
}

template <typename T>
void BasicTensor4<T>::assert_finite(std::string_view what) const {
  auto it = std::find_if(data_.begin(), data_.end(),
                         [](T v) { return !std::isfinite(v); });
  if (it != data_.end()) {
    throw Error(ErrorKind::kNumeric,
                std::string(what) + " holds a non-finite value at offset " +
                    std::to_string(it - data_.begin()));
  }
}

template <typename T>
BasicTensor4<T>& saxpy_inplace(BasicTensor4<T>& target,
                               const BasicTensor4<T>& source, T alpha) {
  require_same_dims(target.dims(), source.dims(), "saxpy operands");
  T* dst = target.raw();
  const T* src = source.raw();
  const std::size_t count = target.count();
  for (std::size_t i = 0; i < count; ++i) dst[i] += alpha * src[i];
  return target;
}

template class BasicTensor4<float>;
template class BasicTensor4<double>;
template Tensor4& saxpy_inplace(Tensor4&, const Tensor4&, float);
template Tensor4d& saxpy_inplace(Tensor4d&, const Tensor4d&, double);

}  // namespace salicon
