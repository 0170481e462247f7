#pragma once

// Little-endian byte packing shared by the cache sidecar writer and reader.

#include <cstdint>
#include <span>
#include <vector>

#include "bachkit/error.hpp"

namespace bachkit::detail {

class ByteWriter {
 public:
  template <typename U>
  void put(U v) {
    auto u = static_cast<std::uint64_t>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) bytes_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  void put_bytes(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    if (pos_ + sizeof(U) > bytes_.size()) fail(ErrorKind::Io, "truncated binary record");
    std::uint64_t u = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) u |= std::uint64_t{bytes_[pos_ + i]} << (8 * i);
    pos_ += sizeof(U);
    return static_cast<U>(u);
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace bachkit::detail
