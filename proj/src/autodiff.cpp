#include "bachkit/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace bachkit {

namespace {

Tensor scalar_tensor(double v) { return Tensor(Extents{1, 1, 1, 1}, v); }

double stable_log_sigmoid(double x) {
  return -(std::max(-x, 0.0) + std::log1p(std::exp(-std::abs(x))));
}

double logistic(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

GradTape::Var GradTape::push(Tensor value, bool requires_grad,
                             std::function<void(GradTape&, std::size_t)> backward) {
  nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad,
                        requires_grad ? std::move(backward) : nullptr});
  return Var{nodes_.size() - 1};
}

void GradTape::accumulate(Var v, const Tensor& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

GradTape::Var GradTape::input(const Tensor& t) { return push(t, false); }

GradTape::Var GradTape::variable(const Tensor& t) { return push(t, true); }

GradTape::Var GradTape::param(const Tensor& t) {
  if (auto it = params_.find(&t); it != params_.end()) return Var{it->second};
  Var v = push(t, true);
  params_.emplace(&t, v.id);
  return v;
}

GradTape::Var GradTape::conv2d(Var x, const ConvParams& p) {
  return conv2d(x, param(p.kernel), param(p.bias));
}

GradTape::Var GradTape::conv2d(Var x, Var k, Var b) {
  ConvParams p{value(k), value(b)};
  Tensor out = kernel::conv2d(value(x), p);
  const bool rg = needs(x) || needs(k) || needs(b);
  return push(std::move(out), rg, [x, k, b](GradTape& t, std::size_t self) {
    ConvParams params{t.value(k), t.value(b)};
    auto g = kernel::conv2d_backward(t.value(x), params, t.upstream(self));
    t.accumulate(x, g.input);
    t.accumulate(k, g.params.kernel);
    t.accumulate(b, g.params.bias);
  });
}

GradTape::Var GradTape::relu(Var x) {
  const Tensor& in = value(x);
  for (double v : in.values()) min_relu_margin_ = std::min(min_relu_margin_, std::abs(v));
  const Extents& e = in.extents();
  const std::size_t pixels = e.height() * e.width();
  for (std::size_t g = 0; g < e.groups(); ++g) {
    for (std::size_t c = 0; c < e.channels(); ++c) {
      bool active = false;
      for (std::size_t p = 0; p < pixels && !active; ++p) active = in[(g * pixels + p) * e.channels() + c] > 0.0;
      if (!active) ++dead_relu_channels_;
    }
  }
  return push(kernel::relu(value(x)), needs(x), [x](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    const Tensor& in = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (!(in[i] > 0.0)) g[i] = 0.0;
    }
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::add(Var a, Var b) {
  return push(kernel::add(value(a), value(b)), needs(a) || needs(b),
              [a, b](GradTape& t, std::size_t self) {
                t.accumulate(a, t.upstream(self));
                t.accumulate(b, t.upstream(self));
              });
}

GradTape::Var GradTape::sub(Var a, Var b) {
  require_same_extents(value(a), value(b), "sub");
  Tensor out = value(a);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= value(b)[i];
  return push(std::move(out), needs(a) || needs(b), [a, b](GradTape& t, std::size_t self) {
    t.accumulate(a, t.upstream(self));
    Tensor g = t.upstream(self);
    for (auto& v : g.values()) v = -v;
    t.accumulate(b, g);
  });
}

GradTape::Var GradTape::mul(Var a, Var b) {
  return push(kernel::mul(value(a), value(b)), needs(a) || needs(b),
              [a, b](GradTape& t, std::size_t self) {
                const Tensor& up = t.upstream(self);
                if (t.needs(a)) t.accumulate(a, kernel::mul(up, t.value(b)));
                if (t.needs(b)) t.accumulate(b, kernel::mul(up, t.value(a)));
              });
}

GradTape::Var GradTape::scale(Var x, double factor) {
  Tensor out = value(x);
  for (auto& v : out.values()) v *= factor;
  return push(std::move(out), needs(x), [x, factor](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    for (auto& v : g.values()) v *= factor;
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::tanh(Var x) {
  return push(kernel::tanh(value(x)), needs(x), [x](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    const Tensor& y = t.value(Var{self});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= 1.0 - y[i] * y[i];
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::sigmoid(Var x) {
  Tensor out = value(x);
  for (auto& v : out.values()) v = logistic(v);
  return push(std::move(out), needs(x), [x](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    const Tensor& y = t.value(Var{self});
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= y[i] * (1.0 - y[i]);
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::log_sigmoid(Var x, bool complement) {
  const double sign = complement ? -1.0 : 1.0;
  Tensor out = value(x);
  for (auto& v : out.values()) v = stable_log_sigmoid(sign * v);
  require_finite(out, "log_sigmoid");
  return push(std::move(out), needs(x), [x, sign](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    const Tensor& in = t.value(x);
    // d/dx log sigmoid(s x) = s * sigmoid(-s x)
    for (std::size_t i = 0; i < g.size(); ++i) g[i] *= sign * logistic(-sign * in[i]);
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::group_mean(const std::vector<Var>& xs) {
  if (xs.empty()) fail(ErrorKind::Shape, "group_mean: empty group");
  std::vector<Tensor> slices;
  slices.reserve(xs.size());
  bool rg = false;
  for (Var v : xs) {
    slices.push_back(value(v));
    rg = rg || needs(v);
  }
  Tensor out = kernel::group_mean(stack_groups(slices));
  return push(std::move(out), rg, [xs](GradTape& t, std::size_t self) {
    Tensor g = t.upstream(self);
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (auto& v : g.values()) v *= inv;
    for (Var v : xs) t.accumulate(v, g);
  });
}

GradTape::Var GradTape::nearest_resize(Var x, std::size_t h, std::size_t w) {
  return push(kernel::nearest_resize(value(x), h, w), needs(x),
              [x](GradTape& t, std::size_t self) {
                t.accumulate(x, kernel::nearest_resize_backward(t.extents(x), t.upstream(self)));
              });
}

GradTape::Var GradTape::avg_pool2(Var x) {
  return push(kernel::avg_pool2(value(x)), needs(x), [x](GradTape& t, std::size_t self) {
    t.accumulate(x, kernel::avg_pool2_backward(t.extents(x), t.upstream(self)));
  });
}

GradTape::Var GradTape::concat_channels(Var a, Var b) {
  return push(kernel::concat_channels(value(a), value(b)), needs(a) || needs(b),
              [a, b](GradTape& t, std::size_t self) {
                const std::size_t ca = t.extents(a).channels();
                const std::size_t cb = t.extents(b).channels();
                const Tensor& up = t.upstream(self);
                if (t.needs(a)) t.accumulate(a, kernel::slice_channels(up, 0, ca));
                if (t.needs(b)) t.accumulate(b, kernel::slice_channels(up, ca, cb));
              });
}

GradTape::Var GradTape::channel_normalize(Var x, double epsilon) {
  auto fwd = std::make_shared<kernel::Normalized<double>>(
      kernel::channel_normalize(value(x), epsilon));
  Tensor out = fwd->output;
  return push(std::move(out), needs(x), [x, fwd, epsilon](GradTape& t, std::size_t self) {
    t.accumulate(x, kernel::channel_normalize_backward(*fwd, epsilon, t.upstream(self)));
  });
}

GradTape::Var GradTape::sum(Var x) {
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  return push(scalar_tensor(s), needs(x), [x](GradTape& t, std::size_t self) {
    t.accumulate(x, Tensor(t.extents(x), t.upstream(self)[0]));
  });
}

GradTape::Var GradTape::mean(Var x) {
  const double n = static_cast<double>(value(x).size());
  double s = 0.0;
  for (double v : value(x).values()) s += v;
  return push(scalar_tensor(s / n), needs(x), [x, n](GradTape& t, std::size_t self) {
    t.accumulate(x, Tensor(t.extents(x), t.upstream(self)[0] / n));
  });
}

GradTape::Var GradTape::weighted_sum(Var x, const Tensor& weights) {
  require_same_extents(value(x), weights, "weighted_sum");
  double s = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += weights[i] * value(x)[i];
  return push(scalar_tensor(s), needs(x), [x, weights](GradTape& t, std::size_t self) {
    Tensor g = weights;
    const double up = t.upstream(self)[0];
    for (auto& v : g.values()) v *= up;
    t.accumulate(x, g);
  });
}

GradTape::Var GradTape::l1_mean(Var x, const Tensor& target) {
  require_same_extents(value(x), target, "l1_mean");
  const double n = static_cast<double>(target.size());
  double s = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) s += std::abs(value(x)[i] - target[i]);
  return push(scalar_tensor(s / n), needs(x), [x, target, n](GradTape& t, std::size_t self) {
    const double up = t.upstream(self)[0] / n;
    Tensor g(t.extents(x));
    const Tensor& in = t.value(x);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double d = in[i] - target[i];
      g[i] = d > 0 ? up : (d < 0 ? -up : 0.0);
    }
    t.accumulate(x, g);
  });
}

double GradTape::scalar(Var v) const {
  const Tensor& t = value(v);
  if (t.size() != 1) fail(ErrorKind::Shape, "scalar: node is not a scalar " + to_string(t.extents()));
  return t[0];
}

void GradTape::backward(Var loss) {
  if (backward_done_) fail(ErrorKind::Parameter, "backward called twice on one tape");
  backward_done_ = true;
  (void)scalar(loss);
  if (!needs(loss)) return;
  nodes_[loss.id].grad = scalar_tensor(1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.backward && !n.grad.empty()) {
      auto fn = n.backward;
      fn(*this, i);
    }
  }
}

Tensor GradTape::grad(Var v) const {
  const Node& n = nodes_[v.id];
  return n.grad.empty() ? Tensor(n.value.extents()) : n.grad;
}

const Tensor* GradTape::grad_of(const Tensor& param) const {
  auto it = params_.find(&param);
  if (it == params_.end()) return nullptr;
  const Node& n = nodes_[it->second];
  return n.grad.empty() ? nullptr : &n.grad;
}

namespace {

void check_eps(double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    fail(ErrorKind::Parameter, "grad_check: eps must lie in [1e-7, 1e-3]");
  }
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

double finite_or_throw(double v) {
  if (!std::isfinite(v)) fail(ErrorKind::Numeric, "grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const ScalarFunction& f, const Tensor& point, double eps) {
  check_eps(eps);
  GradCheckResult r;
  Tensor analytic;
  {
    GradTape tape;
    auto x = tape.variable(point);
    auto loss = f(tape, x);
    finite_or_throw(tape.scalar(loss));
    tape.backward(loss);
    analytic = tape.grad(x);
    r.min_relu_margin = tape.min_relu_margin();
    r.dead_relu_channels = tape.dead_relu_channels();
  }
  auto eval = [&](const Tensor& p) {
    GradTape tape;
    auto x = tape.input(p);
    return finite_or_throw(tape.scalar(f(tape, x)));
  };
  Tensor probe = point;
  for (std::size_t i = 0; i < point.size(); ++i) {
    probe[i] = point[i] + eps;
    const double up = eval(probe);
    probe[i] = point[i] - eps;
    const double down = eval(probe);
    probe[i] = point[i];
    const double numeric = (up - down) / (2.0 * eps);
    r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[i], numeric));
  }
  r.coordinates = point.size();
  return r;
}

GradCheckResult grad_check_params(const ParamLoss& loss, std::span<Tensor* const> params,
                                  double eps) {
  check_eps(eps);
  GradCheckResult r;
  std::vector<Tensor> analytic;
  {
    GradTape tape;
    auto l = loss(tape);
    finite_or_throw(tape.scalar(l));
    tape.backward(l);
    for (Tensor* p : params) {
      const Tensor* g = tape.grad_of(*p);
      analytic.push_back(g ? *g : Tensor(p->extents()));
    }
    r.min_relu_margin = tape.min_relu_margin();
    r.dead_relu_channels = tape.dead_relu_channels();
  }
  auto eval = [&] {
    GradTape tape;
    return finite_or_throw(tape.scalar(loss(tape)));
  };
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double orig = p[i];
      p[i] = orig + eps;
      const double up = eval();
      p[i] = orig - eps;
      const double down = eval();
      p[i] = orig;
      const double numeric = (up - down) / (2.0 * eps);
      r.max_relative_error = std::max(r.max_relative_error, relative_error(analytic[k][i], numeric));
      ++r.coordinates;
    }
  }
  return r;
}

}  // namespace bachkit
