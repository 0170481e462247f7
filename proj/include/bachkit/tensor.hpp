#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bachkit/error.hpp"

namespace bachkit {

/// Four extents. Image-like tensors use {group, height, width, channels};
/// convolution kernels use {3, 3, in, out}. Row-major, last axis innermost.
struct Extents {
  std::array<std::size_t, 4> dims{1, 1, 1, 1};

  constexpr Extents() = default;
  constexpr Extents(std::size_t a, std::size_t b, std::size_t c, std::size_t d)
      : dims{a, b, c, d} {}

  constexpr std::size_t operator[](std::size_t i) const { return dims[i]; }
  constexpr std::size_t count() const {
    return dims[0] * dims[1] * dims[2] * dims[3];
  }
  constexpr std::size_t groups() const { return dims[0]; }
  constexpr std::size_t height() const { return dims[1]; }
  constexpr std::size_t width() const { return dims[2]; }
  constexpr std::size_t channels() const { return dims[3]; }

  friend constexpr bool operator==(const Extents&, const Extents&) = default;
};

std::string to_string(const Extents& e);

template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Extents extents, T fill = T{0})
      : extents_(extents), data_(extents.count(), fill) {}
  BasicTensor(Extents extents, std::vector<T> data)
      : extents_(extents), data_(std::move(data)) {
    if (data_.size() != extents_.count()) {
      fail(ErrorKind::Shape, "tensor data length " +
                                 std::to_string(data_.size()) +
                                 " does not match extents " +
                                 to_string(extents_));
    }
  }

  /// H×W×C tensor (group extent 1).
  static BasicTensor image(std::size_t h, std::size_t w, std::size_t c,
                           T fill = T{0}) {
    return BasicTensor(Extents{1, h, w, c}, fill);
  }

  const Extents& extents() const noexcept { return extents_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t offset(std::size_t g, std::size_t y, std::size_t x,
                     std::size_t c) const noexcept {
    return ((g * extents_[1] + y) * extents_[2] + x) * extents_[3] + c;
  }
  T& at(std::size_t g, std::size_t y, std::size_t x, std::size_t c) {
    return data_[offset(g, y, x, c)];
  }
  const T& at(std::size_t g, std::size_t y, std::size_t x,
              std::size_t c) const {
    return data_[offset(g, y, x, c)];
  }

  /// Copy of group slice `g` as a single-group tensor.
  BasicTensor slice(std::size_t g) const {
    const std::size_t n = extents_[1] * extents_[2] * extents_[3];
    BasicTensor out(Extents{1, extents_[1], extents_[2], extents_[3]});
    std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(g * n), n,
                out.data_.begin());
    return out;
  }

  bool all_finite() const noexcept {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const BasicTensor&, const BasicTensor&) = default;

 private:
  Extents extents_{0, 0, 0, 0};
  std::vector<T> data_;
};

using Tensor = BasicTensor<double>;
using TensorF = BasicTensor<float>;

template <typename T>
void require_finite(const BasicTensor<T>& t, const char* op) {
  if (!t.all_finite()) {
    fail(ErrorKind::Numeric, std::string("non-finite value produced by ") + op);
  }
}

template <typename T>
void require_same_extents(const BasicTensor<T>& a, const BasicTensor<T>& b,
                          const char* op) {
  if (a.extents() != b.extents()) {
    fail(ErrorKind::Shape, std::string(op) + ": extents " +
                               to_string(a.extents()) + " vs " +
                               to_string(b.extents()));
  }
}

Tensor stack_groups(std::span<const Tensor> slices);

/// Tensor dump: 4 little-endian uint64 extents, then little-endian float64
/// values in row-major order, channels innermost.
std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const unsigned char> bytes);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace bachkit
