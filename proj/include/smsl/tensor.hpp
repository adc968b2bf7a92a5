#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

namespace smsl {

// Error taxonomy. Every failure surfaced by the library derives from Error so
// callers can catch one type; the subtypes map onto the CLI reason codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* reason() const noexcept { return "error"; }
};

class DimensionError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "dimension"; }
};

class UnsupportedResizeError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "unsupported_resize"; }
};

class ConfigError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "config"; }
};

class NumericError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "numeric"; }
};

class ContractError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "contract"; }
};

class UnsupportedOpError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "unsupported_op"; }
};

class IoError : public Error {
 public:
  using Error::Error;
  const char* reason() const noexcept override { return "io"; }
};

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t volume(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

/// Feature-map geometry: channels, height, width.
struct Shape3 {
  std::size_t c = 1;
  std::size_t h = 1;
  std::size_t w = 1;

  Shape3() = default;
  Shape3(std::size_t c_, std::size_t h_, std::size_t w_) : c(c_), h(h_), w(w_) {
    if (c == 0 || h == 0 || w == 0) {
      throw DimensionError("Shape3 extents must be >= 1");
    }
  }

  Shape to_shape() const { return {c, h, w}; }
  std::size_t plane() const { return h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

template <typename T>
constexpr DType dtype_of() {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                "smsl tensors hold float or double");
  return std::is_same_v<T, float> ? DType::F32 : DType::F64;
}

inline const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "f64"; }

/// Dense row-major tensor. Extents are all >= 1 and the element count always
/// equals the product of the extents. Values are finite; constructors and
/// kernels reject NaN/Inf with NumericError.
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>);

 public:
  using value_type = T;

  Tensor() : shape_{1}, data_(1, T{0}) {}

  explicit Tensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(volume(shape_), fill);
    if (!std::isfinite(fill)) throw NumericError("non-finite fill value");
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (data_.size() != volume(shape_)) {
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + to_string(shape_));
    }
    require_finite("tensor construction");
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, T v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }
  static Tensor vector(std::initializer_list<T> v) {
    return Tensor(Shape{v.size()}, std::vector<T>(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::initializer_list<T> v) {
    return Tensor(Shape{rows, cols}, std::vector<T>(v));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<const T> data() const noexcept { return data_; }
  std::span<T> mutable_data() noexcept { return data_; }

  T operator[](std::size_t i) const { return data_[i]; }
  T& operator[](std::size_t i) { return data_[i]; }

  T at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  T at(std::size_t c, std::size_t i, std::size_t j) const {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }
  T& at(std::size_t c, std::size_t i, std::size_t j) {
    return data_[(c * shape_[1] + i) * shape_[2] + j];
  }

  /// Interprets a rank-3 tensor as [C, H, W].
  Shape3 shape3() const {
    if (rank() != 3) throw DimensionError("expected rank-3 [C,H,W], got " + to_string(shape_));
    return Shape3(shape_[0], shape_[1], shape_[2]);
  }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor<U>(shape_, std::move(out));
  }

  void require_finite(const char* where) const {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      if (!std::isfinite(data_[i])) {
        throw NumericError(std::string("non-finite value at flat index ") + std::to_string(i) +
                           " in " + where);
      }
    }
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    if (shape_.empty()) throw DimensionError("tensor rank must be >= 1");
    for (auto e : shape_) {
      if (e == 0) throw DimensionError("tensor extents must be >= 1, got " + to_string(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Bitwise equality, including the sign of zero.
template <typename T>
bool bit_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) return false;
  auto x = a.data();
  auto y = b.data();
  return std::equal(x.begin(), x.end(), y.begin(), [](T p, T q) {
    return std::memcmp(&p, &q, sizeof(T)) == 0;
  });
}

}  // namespace smsl
