#pragma once

// Two interchangeable graph executors for the network blocks:
//   Eval     - forward only, values are plain tensors.
//   GradTape - records every op and its saved activations so a scalar loss can
//              be differentiated with respect to inputs and parameters.
// Network code is written once as templates over the executor.

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "bachkit/kernel.hpp"
#include "bachkit/tensor.hpp"

namespace bachkit {

using kernel::ConvParams;

class Eval {
 public:
  using Value = Tensor;

  Tensor input(const Tensor& t) const { return t; }
  Tensor param(const Tensor& t) const { return t; }

  Tensor conv2d(const Tensor& x, const ConvParams& p) const { return kernel::conv2d(x, p); }
  Tensor relu(const Tensor& x) const { return kernel::relu(x); }
  Tensor add(const Tensor& a, const Tensor& b) const { return kernel::add(a, b); }
  Tensor mul(const Tensor& a, const Tensor& b) const { return kernel::mul(a, b); }
  Tensor tanh(const Tensor& x) const { return kernel::tanh(x); }
  Tensor sigmoid(const Tensor& x) const { return kernel::sigmoid(x); }
  Tensor group_mean(const std::vector<Tensor>& xs) const {
    return kernel::group_mean(stack_groups(xs));
  }
  Tensor nearest_resize(const Tensor& x, std::size_t h, std::size_t w) const {
    return kernel::nearest_resize(x, h, w);
  }
  Tensor avg_pool2(const Tensor& x) const { return kernel::avg_pool2(x); }
  Tensor concat_channels(const Tensor& a, const Tensor& b) const {
    return kernel::concat_channels(a, b);
  }
  Tensor channel_normalize(const Tensor& x, double epsilon) const {
    return kernel::channel_normalize(x, epsilon).output;
  }
  const Extents& extents(const Tensor& x) const { return x.extents(); }
};

class GradTape {
 public:
  struct Var {
    std::size_t id = 0;
  };
  using Value = Var;

  GradTape() = default;
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  /// Constant leaf; no gradient is accumulated for it.
  Var input(const Tensor& t);
  /// Leaf whose gradient is wanted.
  Var variable(const Tensor& t);
  /// Parameter leaf keyed by the tensor's address; repeated calls with the same
  /// tensor return the same node so shared weights accumulate one gradient.
  Var param(const Tensor& t);

  Var conv2d(Var x, const ConvParams& p);
  Var conv2d(Var x, Var kernel, Var bias);
  Var relu(Var x);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var x, double factor);
  Var tanh(Var x);
  Var sigmoid(Var x);
  /// Elementwise log(sigmoid(x)), or log(1 - sigmoid(x)) when `complement`.
  Var log_sigmoid(Var x, bool complement = false);
  Var group_mean(const std::vector<Var>& xs);
  Var nearest_resize(Var x, std::size_t h, std::size_t w);
  Var avg_pool2(Var x);
  Var concat_channels(Var a, Var b);
  Var channel_normalize(Var x, double epsilon);

  /// Scalar reductions (result extents {1,1,1,1}).
  Var sum(Var x);
  Var mean(Var x);
  Var weighted_sum(Var x, const Tensor& weights);
  Var l1_mean(Var x, const Tensor& target);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  const Extents& extents(Var v) const { return nodes_[v.id].value.extents(); }
  double scalar(Var v) const;

  /// Reverse pass from a scalar node. May be called once per tape.
  void backward(Var loss);

  /// Gradient of a node after backward(); zeros if it received none.
  Tensor grad(Var v) const;
  /// Gradient of a parameter registered with param(); nullptr if untouched.
  const Tensor* grad_of(const Tensor& param) const;

  /// Smallest |pre-activation| seen by any relu on this tape.
  double min_relu_margin() const noexcept { return min_relu_margin_; }
  /// Relu (group, channel) slices with no positive input so far.
  std::size_t dead_relu_channels() const noexcept { return dead_relu_channels_; }
  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::function<void(GradTape&, std::size_t)> backward;
  };

  Var push(Tensor value, bool requires_grad,
           std::function<void(GradTape&, std::size_t)> backward = {});
  bool needs(Var v) const { return nodes_[v.id].requires_grad; }
  void accumulate(Var v, const Tensor& g);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor*, std::size_t> params_;
  double min_relu_margin_ = std::numeric_limits<double>::infinity();
  std::size_t dead_relu_channels_ = 0;
  bool backward_done_ = false;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  double min_relu_margin = std::numeric_limits<double>::infinity();
  std::size_t dead_relu_channels = 0;
  std::size_t coordinates = 0;
};

/// Minimum distance from a relu kink accepted for a grad-check sample point.
inline constexpr double kReluKinkMargin = 1e-4;

using ScalarFunction = std::function<GradTape::Var(GradTape&, GradTape::Var)>;
using ParamLoss = std::function<GradTape::Var(GradTape&)>;

/// Compares the tape gradient of f at `point` with central differences:
/// max over coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point, double eps);

/// Same comparison for every coordinate of every tensor in `params`; the loss
/// must reference them through GradTape::param. Tensors are restored on return.
GradCheckResult grad_check_params(const ParamLoss& loss, std::span<Tensor* const> params,
                                  double eps);

}  // namespace bachkit
