#include "rcan/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace rcan {

namespace {

template <typename T>
T sigmoid_scalar(T x) {
  T y;
  if (x >= T(0)) {
    y = T(1) / (T(1) + std::exp(-x));
  } else {
    const T e = std::exp(x);
    y = e / (T(1) + e);
  }
  // Keep the open interval for large |x| where the float result would round
  // to exactly 0 or 1.
  constexpr T lo = std::numeric_limits<T>::min();
  constexpr T hi = T(1) - std::numeric_limits<T>::epsilon() / T(2);
  return std::clamp(y, lo, hi);
}

enum class Broadcast { kSame, kChannel };

Broadcast broadcast_rule(const Shape& a, const Shape& b) {
  if (a == b) return Broadcast::kSame;
  if (a.size() == 5 && b.size() == 5 && b[1] == a[1] && b[2] == 1 && b[3] == 1 && b[4] == 1 &&
      (b[0] == 1 || b[0] == a[0])) {
    return Broadcast::kChannel;
  }
  fail(ErrorCode::kBroadcastError, "cannot combine " + shape_str(a) + " with " + shape_str(b));
}

}  // namespace

template <typename T>
Tensor<T> map_unary(const Tensor<T>& t, UnaryFn fn) {
  const auto x = t.data();
  std::vector<T> y(x.size());
  const T alpha = static_cast<T>(fn.alpha);
  switch (fn.kind) {
    case UnaryKind::kSigmoid:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = sigmoid_scalar(x[i]);
      break;
    case UnaryKind::kRelu:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
      break;
    case UnaryKind::kNegate:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = -x[i];
      break;
    case UnaryKind::kScale:
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = alpha * x[i];
      break;
  }

  const char* kind = "unary";
  BackwardFn<T> backward;
  if (common_tape<T>({&t}) != nullptr) {
    switch (fn.kind) {
      case UnaryKind::kSigmoid: {
        kind = "sigmoid";
        auto saved = std::make_shared<std::vector<T>>(y);
        backward = [saved](std::span<const T> g, GradSink<T>& sink) {
          auto& gx = sink.grad(0);
          const auto& s = *saved;
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * s[i] * (T(1) - s[i]);
        };
        break;
      }
      case UnaryKind::kRelu: {
        kind = "relu";
        Tensor<T> in = t.detach();
        backward = [in](std::span<const T> g, GradSink<T>& sink) {
          auto& gx = sink.grad(0);
          const auto x = in.data();
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += x[i] > T(0) ? g[i] : T(0);
        };
        break;
      }
      case UnaryKind::kNegate:
        kind = "negate";
        backward = [](std::span<const T> g, GradSink<T>& sink) {
          auto& gx = sink.grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] -= g[i];
        };
        break;
      case UnaryKind::kScale:
        kind = "scale";
        backward = [alpha](std::span<const T> g, GradSink<T>& sink) {
          auto& gx = sink.grad(0);
          for (std::size_t i = 0; i < g.size(); ++i) gx[i] += alpha * g[i];
        };
        break;
    }
  }
  return make_result<T>(kind, t.shape(), std::move(y), {&t}, std::move(backward));
}

template <typename T>
Tensor<T> zip_binary(const Tensor<T>& a, const Tensor<T>& b, BinaryKind kind) {
  const Broadcast rule = broadcast_rule(a.shape(), b.shape());
  const auto x = a.data();
  const auto z = b.data();
  std::vector<T> y(x.size());

  // Channel broadcast: b holds one value per (batch, channel) or per channel.
  const std::int64_t channels = rule == Broadcast::kChannel ? a.dim(1) : 0;
  const std::int64_t spatial = rule == Broadcast::kChannel ? a.dim(2) * a.dim(3) * a.dim(4) : 0;
  const bool per_batch = rule == Broadcast::kChannel && b.dim(0) != 1;
  auto b_index = [&](std::int64_t plane) -> std::size_t {
    return static_cast<std::size_t>(per_batch ? plane : plane % channels);
  };

  if (rule == Broadcast::kSame) {
    if (kind == BinaryKind::kAdd) {
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + z[i];
    } else {
      for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] * z[i];
    }
  } else {
    const std::int64_t planes = a.dim(0) * channels;
    for (std::int64_t p = 0; p < planes; ++p) {
      const T bv = z[b_index(p)];
      const std::size_t base = static_cast<std::size_t>(p * spatial);
      if (kind == BinaryKind::kAdd) {
        for (std::int64_t i = 0; i < spatial; ++i) y[base + i] = x[base + i] + bv;
      } else {
        for (std::int64_t i = 0; i < spatial; ++i) y[base + i] = x[base + i] * bv;
      }
    }
  }

  BackwardFn<T> backward;
  if (common_tape<T>({&a, &b}) != nullptr) {
    Tensor<T> sa = a.detach();
    Tensor<T> sb = b.detach();
    backward = [sa, sb, kind, rule, channels, spatial, per_batch](std::span<const T> g, GradSink<T>& sink) {
      const auto x = sa.data();
      const auto z = sb.data();
      if (sink.wants(0)) {
        auto& ga = sink.grad(0);
        if (kind == BinaryKind::kAdd) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        } else if (rule == Broadcast::kSame) {
          for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * z[i];
        } else {
          const std::int64_t planes = static_cast<std::int64_t>(g.size()) / spatial;
          for (std::int64_t p = 0; p < planes; ++p) {
            const T bv = z[static_cast<std::size_t>(per_batch ? p : p % channels)];
            const std::size_t base = static_cast<std::size_t>(p * spatial);
            for (std::int64_t i = 0; i < spatial; ++i) ga[base + i] += g[base + i] * bv;
          }
        }
      }
      if (sink.wants(1)) {
        auto& gb = sink.grad(1);
        if (rule == Broadcast::kSame) {
          if (kind == BinaryKind::kAdd) {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
          } else {
            for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * x[i];
          }
        } else {
          // Sum-reduce over the broadcast axes, in a fixed order.
          const std::int64_t planes = static_cast<std::int64_t>(g.size()) / spatial;
          for (std::int64_t p = 0; p < planes; ++p) {
            const std::size_t base = static_cast<std::size_t>(p * spatial);
            double acc = 0.0;
            if (kind == BinaryKind::kAdd) {
              for (std::int64_t i = 0; i < spatial; ++i) acc += static_cast<double>(g[base + i]);
            } else {
              for (std::int64_t i = 0; i < spatial; ++i) {
                acc += static_cast<double>(g[base + i]) * static_cast<double>(x[base + i]);
              }
            }
            gb[static_cast<std::size_t>(per_batch ? p : p % channels)] += static_cast<T>(acc);
          }
        }
      }
    };
  }
  return make_result<T>(kind == BinaryKind::kAdd ? "add" : "mul", a.shape(), std::move(y), {&a, &b},
                        std::move(backward));
}

template <typename T>
Tensor<T> sum(const Tensor<T>& t) {
  double acc = 0.0;
  for (T v : t.data()) acc += static_cast<double>(v);
  BackwardFn<T> backward = [](std::span<const T> g, GradSink<T>& sink) {
    auto& gx = sink.grad(0);
    for (auto& v : gx) v += g[0];
  };
  return make_result<T>("sum", Shape{1}, {static_cast<T>(acc)}, {&t}, std::move(backward));
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() == 5 && b.rank() == 5, ErrorCode::kShapeMismatch, "concat_channels needs 5-D tensors");
  require(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3) && a.dim(4) == b.dim(4),
          ErrorCode::kShapeMismatch, "cannot concatenate " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::int64_t n = a.dim(0);
  const std::size_t block_a = static_cast<std::size_t>(a.size() / n);
  const std::size_t block_b = static_cast<std::size_t>(b.size() / n);
  std::vector<T> y;
  y.reserve(a.size() + b.size());
  for (std::int64_t i = 0; i < n; ++i) {
    auto xa = a.data().subspan(i * block_a, block_a);
    auto xb = b.data().subspan(i * block_b, block_b);
    y.insert(y.end(), xa.begin(), xa.end());
    y.insert(y.end(), xb.begin(), xb.end());
  }
  Shape shape{n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3), a.dim(4)};
  BackwardFn<T> backward = [n, block_a, block_b](std::span<const T> g, GradSink<T>& sink) {
    const std::size_t stride = block_a + block_b;
    if (sink.wants(0)) {
      auto& ga = sink.grad(0);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < block_a; ++j) ga[i * block_a + j] += g[i * stride + j];
      }
    }
    if (sink.wants(1)) {
      auto& gb = sink.grad(1);
      for (std::int64_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < block_b; ++j) gb[i * block_b + j] += g[i * stride + block_a + j];
      }
    }
  };
  return make_result<T>("concat", std::move(shape), std::move(y), {&a, &b}, std::move(backward));
}

GradCheckReport grad_check(const DifferentiableOp& op, std::span<const Tensor64> inputs, double eps) {
  require(eps >= 1e-7 && eps <= 1e-3, ErrorCode::kInvalidArgument,
          "grad_check step must lie in [1e-7, 1e-3], got " + std::to_string(eps));

  Tape<double> tape;
  std::vector<Tensor64> watched;
  watched.reserve(inputs.size());
  for (const auto& in : inputs) watched.push_back(tape.variable(in));
  const Tensor64 loss = op(watched);
  require(loss.size() == 1, ErrorCode::kNotScalar, "grad_check op must reduce to a scalar");
  const Gradients<double> grads = tape.backward(loss);

  GradCheckReport report;
  std::vector<Tensor64> probe(inputs.begin(), inputs.end());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    std::vector<double> analytic(inputs[k].size(), 0.0);
    if (grads.has(watched[k])) {
      const Tensor64 g = grads.of(watched[k]);
      analytic.assign(g.data().begin(), g.data().end());
    }
    std::vector<double> base(inputs[k].data().begin(), inputs[k].data().end());
    for (std::size_t j = 0; j < base.size(); ++j) {
      auto eval = [&](double delta) {
        std::vector<double> v = base;
        v[j] += delta;
        probe[k] = inputs[k].with_data(std::move(v));
        const double f = op(probe).item();
        if (!std::isfinite(f)) fail(ErrorCode::kNonFiniteOutput, "perturbed evaluation is not finite");
        return f;
      };
      const double numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
      const double a = analytic[j];
      const double err = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      report.max_rel_error = std::max(report.max_rel_error, err);
      ++report.coordinates;
    }
    probe[k] = inputs[k];
  }
  return report;
}

#define RCAN_INSTANTIATE(T)                                                         \
  template Tensor<T> map_unary<T>(const Tensor<T>&, UnaryFn);                       \
  template Tensor<T> zip_binary<T>(const Tensor<T>&, const Tensor<T>&, BinaryKind); \
  template Tensor<T> sum<T>(const Tensor<T>&);                                      \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);

RCAN_INSTANTIATE(float)
RCAN_INSTANTIATE(double)
#undef RCAN_INSTANTIATE

}  // namespace rcan
