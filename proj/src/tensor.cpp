#include "bachkit/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

namespace bachkit {

std::string to_string(const Extents& e) {
  return "[" + std::to_string(e[0]) + "x" + std::to_string(e[1]) + "x" +
         std::to_string(e[2]) + "x" + std::to_string(e[3]) + "]";
}

Tensor stack_groups(std::span<const Tensor> slices) {
  if (slices.empty()) fail(ErrorKind::Shape, "stack_groups: no slices");
  const Extents& e = slices.front().extents();
  std::size_t groups = 0;
  for (const Tensor& s : slices) {
    if (s.extents()[1] != e[1] || s.extents()[2] != e[2] ||
        s.extents()[3] != e[3]) {
      fail(ErrorKind::Shape, "stack_groups: mismatched slice extents " +
                                 to_string(s.extents()) + " vs " +
                                 to_string(e));
    }
    groups += s.extents()[0];
  }
  std::vector<double> data;
  data.reserve(groups * e[1] * e[2] * e[3]);
  for (const Tensor& s : slices) {
    data.insert(data.end(), s.values().begin(), s.values().end());
  }
  return Tensor(Extents{groups, e[1], e[2], e[3]}, std::move(data));
}

namespace {

void put_u64(std::vector<unsigned char>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint64_t get_u64(std::span<const unsigned char> in, std::size_t pos) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= std::uint64_t{in[pos + i]} << (8 * i);
  return v;
}

}  // namespace

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  std::vector<unsigned char> out;
  out.reserve(32 + 8 * t.size());
  for (std::size_t i = 0; i < 4; ++i) put_u64(out, t.extents()[i]);
  for (double v : t.values()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Tensor decode_tensor(std::span<const unsigned char> bytes) {
  if (bytes.size() < 32) fail(ErrorKind::Io, "tensor dump shorter than header");
  Extents e{get_u64(bytes, 0), get_u64(bytes, 8), get_u64(bytes, 16),
            get_u64(bytes, 24)};
  const std::size_t n = e.count();
  if (bytes.size() != 32 + 8 * n) {
    fail(ErrorKind::Io, "tensor dump length does not match header " +
                            to_string(e));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = std::bit_cast<double>(get_u64(bytes, 32 + 8 * i));
  }
  return Tensor(e, std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  const auto bytes = encode_tensor(t);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot read " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_tensor(bytes);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_extents(a, b, "max_abs_diff");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace bachkit
