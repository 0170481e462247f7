#pragma once

// Dense compute kernels over BasicTensor. Every forward op here has a matching
// backward used by GradTape; all are pure and safe to call concurrently.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "bachkit/tensor.hpp"

namespace bachkit::kernel {

inline constexpr double kDefaultNormEpsilon = 1e-5;

/// 3×3, stride 1, zero padding 1. kernel extents {3, 3, in, out}, bias {1, 1, 1, out}.
template <typename T>
struct BasicConvParams {
  BasicTensor<T> kernel;
  BasicTensor<T> bias;

  static BasicConvParams zeros(std::size_t in, std::size_t out) {
    return {BasicTensor<T>(Extents{3, 3, in, out}),
            BasicTensor<T>(Extents{1, 1, 1, out})};
  }

  /// Center tap 1 on the diagonal; passes the input through unchanged.
  static BasicConvParams identity(std::size_t channels) {
    auto p = zeros(channels, channels);
    for (std::size_t c = 0; c < channels; ++c) p.kernel.at(1, 1, c, c) = T{1};
    return p;
  }

  template <typename Rng>
  static BasicConvParams uniform(std::size_t in, std::size_t out, T bound,
                                 Rng& rng) {
    auto p = zeros(in, out);
    std::uniform_real_distribution<T> dist(-bound, bound);
    for (auto& v : p.kernel.values()) v = dist(rng);
    for (auto& v : p.bias.values()) v = dist(rng);
    return p;
  }

  std::size_t in_channels() const { return kernel.extents()[2]; }
  std::size_t out_channels() const { return kernel.extents()[3]; }

  friend bool operator==(const BasicConvParams&, const BasicConvParams&) = default;
};

using ConvParams = BasicConvParams<double>;

template <typename T>
void check_conv_params(const BasicConvParams<T>& p) {
  const Extents& k = p.kernel.extents();
  if (k[0] != 3 || k[1] != 3) {
    fail(ErrorKind::Shape, "conv2d: kernel must be 3x3, got " + to_string(k));
  }
  if (p.bias.extents() != Extents{1, 1, 1, k[3]}) {
    fail(ErrorKind::Shape, "conv2d: bias extents " + to_string(p.bias.extents()) +
                               " do not match " + std::to_string(k[3]) +
                               " output channels");
  }
}

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicConvParams<T>& p) {
  check_conv_params(p);
  const Extents& e = input.extents();
  const std::size_t cin = p.in_channels();
  const std::size_t cout = p.out_channels();
  if (e.channels() != cin) {
    fail(ErrorKind::Shape, "conv2d: input has " + std::to_string(e.channels()) +
                               " channels, kernel expects " + std::to_string(cin));
  }
  const std::size_t n = e.groups(), h = e.height(), w = e.width();
  BasicTensor<T> out(Extents{n, h, w, cout});
  const T* kd = p.kernel.data();
  const T* bd = p.bias.data();
  for (std::size_t g = 0; g < n; ++g) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        T* o = &out.at(g, y, x, 0);
        std::copy_n(bd, cout, o);
        for (std::size_t ky = 0; ky < 3; ++ky) {
          if ((y == 0 && ky == 0) || (y + 1 == h && ky == 2)) continue;
          const std::size_t iy = y + ky - 1;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            if ((x == 0 && kx == 0) || (x + 1 == w && kx == 2)) continue;
            const std::size_t ix = x + kx - 1;
            const T* in = &input.at(g, iy, ix, 0);
            const T* wk = kd + (ky * 3 + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T v = in[ci];
              if (v == T{0}) continue;
              const T* wrow = wk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += v * wrow[co];
            }
          }
        }
      }
    }
  }
  require_finite(out, "conv2d");
  return out;
}

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicConvParams<T> params;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicConvParams<T>& p,
                             const BasicTensor<T>& grad_out) {
  const Extents& e = input.extents();
  const std::size_t cin = p.in_channels();
  const std::size_t cout = p.out_channels();
  const std::size_t n = e.groups(), h = e.height(), w = e.width();
  if (grad_out.extents() != Extents{n, h, w, cout}) {
    fail(ErrorKind::Shape, "conv2d_backward: gradient extents " +
                               to_string(grad_out.extents()));
  }
  ConvGrads<T> g{BasicTensor<T>(e), BasicConvParams<T>::zeros(cin, cout)};
  const T* kd = p.kernel.data();
  T* dk = g.params.kernel.data();
  T* db = g.params.bias.data();
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const T* dy = &grad_out.at(b, y, x, 0);
        for (std::size_t co = 0; co < cout; ++co) db[co] += dy[co];
        for (std::size_t ky = 0; ky < 3; ++ky) {
          if ((y == 0 && ky == 0) || (y + 1 == h && ky == 2)) continue;
          const std::size_t iy = y + ky - 1;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            if ((x == 0 && kx == 0) || (x + 1 == w && kx == 2)) continue;
            const std::size_t ix = x + kx - 1;
            const T* in = &input.at(b, iy, ix, 0);
            T* dx = &g.input.at(b, iy, ix, 0);
            const std::size_t tap = (ky * 3 + kx) * cin * cout;
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const T* wrow = kd + tap + ci * cout;
              T* dwrow = dk + tap + ci * cout;
              const T v = in[ci];
              T acc{0};
              for (std::size_t co = 0; co < cout; ++co) {
                dwrow[co] += v * dy[co];
                acc += wrow[co] * dy[co];
              }
              dx[ci] += acc;
            }
          }
        }
      }
    }
  }
  return g;
}

enum class ElementwiseOp { Relu, Add, Mul };

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  BasicTensor<T> out = a;
  for (auto& v : out.values()) v = std::max(v, T{0});
  return out;
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_extents(a, b, "add");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  require_finite(out, "add");
  return out;
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_extents(a, b, "mul");
  BasicTensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  require_finite(out, "mul");
  return out;
}

template <typename T>
BasicTensor<T> elementwise(ElementwiseOp op, const BasicTensor<T>& a,
                           const BasicTensor<T>* b = nullptr) {
  if (op == ElementwiseOp::Relu) return relu(a);
  if (b == nullptr) fail(ErrorKind::Shape, "elementwise: binary op needs two operands");
  return op == ElementwiseOp::Add ? add(a, *b) : mul(a, *b);
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  BasicTensor<T> out = a;
  for (auto& v : out.values()) v = std::tanh(v);
  return out;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  BasicTensor<T> out = a;
  for (auto& v : out.values()) v = T{1} / (T{1} + std::exp(-v));
  return out;
}

/// Mean over the leading (group) axis: {m, H, W, C} -> {1, H, W, C}.
/// Each element is lo + Σ(v - lo)/m over its sorted values, so the result is
/// bitwise independent of group order and equal groups return their value.
template <typename T>
BasicTensor<T> group_mean(const BasicTensor<T>& input) {
  const Extents& e = input.extents();
  const std::size_t m = e.groups();
  if (m == 0) fail(ErrorKind::Shape, "group_mean: empty group");
  const std::size_t slice = e.height() * e.width() * e.channels();
  BasicTensor<T> out(Extents{1, e.height(), e.width(), e.channels()});
  std::vector<T> column(m);
  for (std::size_t i = 0; i < slice; ++i) {
    for (std::size_t g = 0; g < m; ++g) column[g] = input.data()[g * slice + i];
    std::sort(column.begin(), column.end());
    T spread{0};
    for (std::size_t g = 1; g < m; ++g) spread += column[g] - column[0];
    out[i] = column[0] + spread / static_cast<T>(m);
  }
  return out;
}

/// Nearest-neighbour resampling between extents related by an integer factor
/// (either direction) per spatial axis.
template <typename T>
BasicTensor<T> nearest_resize(const BasicTensor<T>& input, std::size_t out_h,
                              std::size_t out_w) {
  const Extents& e = input.extents();
  const std::size_t h = e.height(), w = e.width();
  auto integral = [](std::size_t a, std::size_t b) {
    return a > 0 && b > 0 && (a % b == 0 || b % a == 0);
  };
  if (!integral(out_h, h) || !integral(out_w, w)) {
    fail(ErrorKind::Shape, "nearest_resize: " + to_string(e) + " to " +
                               std::to_string(out_h) + "x" + std::to_string(out_w) +
                               " is not an integer ratio");
  }
  BasicTensor<T> out(Extents{e.groups(), out_h, out_w, e.channels()});
  for (std::size_t g = 0; g < e.groups(); ++g) {
    for (std::size_t y = 0; y < out_h; ++y) {
      const std::size_t sy = y * h / out_h;
      for (std::size_t x = 0; x < out_w; ++x) {
        const std::size_t sx = x * w / out_w;
        std::copy_n(&input.at(g, sy, sx, 0), e.channels(), &out.at(g, y, x, 0));
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> nearest_resize_backward(const Extents& input_extents,
                                       const BasicTensor<T>& grad_out) {
  const Extents& o = grad_out.extents();
  const std::size_t h = input_extents.height(), w = input_extents.width();
  BasicTensor<T> dx(input_extents);
  for (std::size_t g = 0; g < o.groups(); ++g) {
    for (std::size_t y = 0; y < o.height(); ++y) {
      const std::size_t sy = y * h / o.height();
      for (std::size_t x = 0; x < o.width(); ++x) {
        const std::size_t sx = x * w / o.width();
        const T* src = &grad_out.at(g, y, x, 0);
        T* dst = &dx.at(g, sy, sx, 0);
        for (std::size_t c = 0; c < o.channels(); ++c) dst[c] += src[c];
      }
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> nearest_upsample(const BasicTensor<T>& input, std::size_t factor) {
  if (factor == 0) fail(ErrorKind::Parameter, "nearest_upsample: factor must be >= 1");
  return nearest_resize(input, input.extents().height() * factor,
                        input.extents().width() * factor);
}

/// 2×2 average pooling with stride 2; spatial extents must be even.
template <typename T>
BasicTensor<T> avg_pool2(const BasicTensor<T>& input) {
  const Extents& e = input.extents();
  if (e.height() % 2 != 0 || e.width() % 2 != 0) {
    fail(ErrorKind::Shape, "avg_pool2: odd spatial extents " + to_string(e));
  }
  BasicTensor<T> out(Extents{e.groups(), e.height() / 2, e.width() / 2, e.channels()});
  for (std::size_t g = 0; g < e.groups(); ++g) {
    for (std::size_t y = 0; y < e.height(); ++y) {
      for (std::size_t x = 0; x < e.width(); ++x) {
        const T* src = &input.at(g, y, x, 0);
        T* dst = &out.at(g, y / 2, x / 2, 0);
        for (std::size_t c = 0; c < e.channels(); ++c) dst[c] += src[c] * T{0.25};
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> avg_pool2_backward(const Extents& input_extents,
                                  const BasicTensor<T>& grad_out) {
  BasicTensor<T> dx(input_extents);
  for (std::size_t g = 0; g < input_extents.groups(); ++g) {
    for (std::size_t y = 0; y < input_extents.height(); ++y) {
      for (std::size_t x = 0; x < input_extents.width(); ++x) {
        const T* src = &grad_out.at(g, y / 2, x / 2, 0);
        T* dst = &dx.at(g, y, x, 0);
        for (std::size_t c = 0; c < input_extents.channels(); ++c) {
          dst[c] = src[c] * T{0.25};
        }
      }
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> concat_channels(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  const Extents& ea = a.extents();
  const Extents& eb = b.extents();
  if (ea[0] != eb[0] || ea[1] != eb[1] || ea[2] != eb[2]) {
    fail(ErrorKind::Shape, "concat_channels: " + to_string(ea) + " vs " + to_string(eb));
  }
  const std::size_t ca = ea.channels(), cb = eb.channels();
  BasicTensor<T> out(Extents{ea[0], ea[1], ea[2], ca + cb});
  const std::size_t pixels = ea[0] * ea[1] * ea[2];
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * ca, ca, out.data() + p * (ca + cb));
    std::copy_n(b.data() + p * cb, cb, out.data() + p * (ca + cb) + ca);
  }
  return out;
}

/// Channels [begin, begin + count) of every pixel.
template <typename T>
BasicTensor<T> slice_channels(const BasicTensor<T>& a, std::size_t begin,
                              std::size_t count) {
  const Extents& e = a.extents();
  if (begin + count > e.channels()) {
    fail(ErrorKind::Shape, "slice_channels: range exceeds " + to_string(e));
  }
  BasicTensor<T> out(Extents{e[0], e[1], e[2], count});
  const std::size_t pixels = e[0] * e[1] * e[2];
  for (std::size_t p = 0; p < pixels; ++p) {
    std::copy_n(a.data() + p * e.channels() + begin, count, out.data() + p * count);
  }
  return out;
}

template <typename T>
struct Normalized {
  BasicTensor<T> output;
  std::vector<T> mean;  // per (group, channel)
  std::vector<T> var;
};

/// Per-group, per-channel standardisation over all spatial positions using the
/// population variance: (x - mean) / sqrt(var + epsilon).
template <typename T>
Normalized<T> channel_normalize(const BasicTensor<T>& input,
                                T epsilon = T(kDefaultNormEpsilon)) {
  const Extents& e = input.extents();
  const std::size_t hw = e.height() * e.width();
  const std::size_t c = e.channels();
  if (hw == 0) fail(ErrorKind::Shape, "channel_normalize: empty spatial extent");
  if (!(epsilon > T{0})) fail(ErrorKind::Parameter, "channel_normalize: epsilon must be > 0");
  Normalized<T> r{BasicTensor<T>(e), std::vector<T>(e.groups() * c),
                  std::vector<T>(e.groups() * c)};
  for (std::size_t g = 0; g < e.groups(); ++g) {
    const T* src = input.data() + g * hw * c;
    T* mean = r.mean.data() + g * c;
    T* var = r.var.data() + g * c;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) mean[k] += src[p * c + k];
    }
    for (std::size_t k = 0; k < c; ++k) mean[k] /= static_cast<T>(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const T d = src[p * c + k] - mean[k];
        var[k] += d * d;
      }
    }
    std::vector<T> inv_std(c);
    for (std::size_t k = 0; k < c; ++k) {
      var[k] /= static_cast<T>(hw);
      inv_std[k] = T{1} / std::sqrt(var[k] + epsilon);
    }
    T* dst = r.output.data() + g * hw * c;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        dst[p * c + k] = (src[p * c + k] - mean[k]) * inv_std[k];
      }
    }
  }
  require_finite(r.output, "channel_normalize");
  return r;
}

template <typename T>
BasicTensor<T> channel_normalize_backward(const Normalized<T>& forward, T epsilon,
                                          const BasicTensor<T>& grad_out) {
  const BasicTensor<T>& xhat = forward.output;
  const Extents& e = xhat.extents();
  const std::size_t hw = e.height() * e.width();
  const std::size_t c = e.channels();
  BasicTensor<T> dx(e);
  std::vector<T> sum_dy(c), sum_dy_xhat(c);
  for (std::size_t g = 0; g < e.groups(); ++g) {
    std::fill(sum_dy.begin(), sum_dy.end(), T{0});
    std::fill(sum_dy_xhat.begin(), sum_dy_xhat.end(), T{0});
    const std::size_t base = g * hw * c;
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const T dy = grad_out[base + p * c + k];
        sum_dy[k] += dy;
        sum_dy_xhat[k] += dy * xhat[base + p * c + k];
      }
    }
    const T n = static_cast<T>(hw);
    for (std::size_t p = 0; p < hw; ++p) {
      for (std::size_t k = 0; k < c; ++k) {
        const T inv_std = T{1} / std::sqrt(forward.var[g * c + k] + epsilon);
        const std::size_t i = base + p * c + k;
        dx[i] = inv_std / n * (n * grad_out[i] - sum_dy[k] - xhat[i] * sum_dy_xhat[k]);
      }
    }
  }
  return dx;
}

}  // namespace bachkit::kernel
