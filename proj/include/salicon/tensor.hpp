#ifndef SALICON_TENSOR_HPP_
#define SALICON_TENSOR_HPP_

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "salicon/error.hpp"

namespace salicon {

// Extents of a rank-4 blob in (n, c, h, w) order.
struct Dims {
  std::size_t n = 1;
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  // Product of the extents; throws kSize on a zero extent or overflow.
  std::size_t count() const;
  std::size_t plane() const { return h * w; }
  std::array<std::size_t, 4> as_array() const { return {n, c, h, w}; }

  friend bool operator==(const Dims&, const Dims&) = default;
};

std::string to_string(const Dims& dims);

// Dense row-major (n, c, h, w) array, w fastest. Value semantics; the flat
// buffer always holds exactly dims().count() elements.
template <typename T>
class BasicTensor4 {
 public:
  using value_type = T;

  BasicTensor4() : dims_{1, 1, 1, 1}, data_(1, T(0)) {}
  explicit BasicTensor4(const Dims& dims, T value = T(0))
      : dims_(dims), data_(dims.count(), value) {}
  BasicTensor4(const Dims& dims, std::vector<T> data);

  static BasicTensor4 filled(const Dims& dims, T value) {
    return BasicTensor4(dims, value);
  }
  static BasicTensor4 zeros(const Dims& dims) { return BasicTensor4(dims); }

  const Dims& dims() const { return dims_; }
  std::size_t count() const { return data_.size(); }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t h,
                     std::size_t w) const {
    return ((n * dims_.c + c) * dims_.h + h) * dims_.w + w;
  }
  T& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[offset(n, c, h, w)];
  }
  const T& at(std::size_t n, std::size_t c, std::size_t h,
              std::size_t w) const {
    return data_[offset(n, c, h, w)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  // Pointer to the (n, c) plane of h*w elements.
  T* plane(std::size_t n, std::size_t c) { return raw() + offset(n, c, 0, 0); }
  const T* plane(std::size_t n, std::size_t c) const {
    return raw() + offset(n, c, 0, 0);
  }

  void fill(T value);

  // Same data, new extents; the element count must be unchanged.
  BasicTensor4 reshaped(const Dims& dims) const&;
  BasicTensor4 reshaped(const Dims& dims) &&;
  std::vector<T> flatten() const { return data_; }

  bool all_finite() const;
  // Throws kNumeric naming `what` and the first offending offset.
  void assert_finite(std::string_view what) const;

  friend bool operator==(const BasicTensor4&, const BasicTensor4&) = default;

 private:
  Dims dims_;
  std::vector<T> data_;
};

using Tensor4 = BasicTensor4<float>;
using Tensor4d = BasicTensor4<double>;

// target += alpha * source, elementwise. Returns target.
template <typename T>
BasicTensor4<T>& saxpy_inplace(BasicTensor4<T>& target,
                               const BasicTensor4<T>& source, T alpha);

template <typename To, typename From>
BasicTensor4<To> tensor_cast(const BasicTensor4<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor4<To>(t.dims(), std::move(out));
}

void require_same_dims(const Dims& a, const Dims& b, std::string_view what);

extern template class BasicTensor4<float>;
extern template class BasicTensor4<double>;

}  // namespace salicon

#endif  // SALICON_TENSOR_HPP_
