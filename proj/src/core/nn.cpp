#include "rcan/nn.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "rcan/parallel.hpp"

namespace rcan {

namespace {

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

// Output positions o in [lo, hi) whose tap o*s + k - p lands inside [0, in).
struct Range {
  std::int64_t lo;
  std::int64_t hi;
};
Range valid_range(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t s, std::int64_t p) {
  const std::int64_t lo = std::max<std::int64_t>(0, -floor_div(k - p, s));
  const std::int64_t hi = std::min<std::int64_t>(out, floor_div(in - 1 + p - k, s) + 1);
  return {lo, std::max(lo, hi)};
}

// Fixed-order dot product with eight double lanes; b is read at stride sb.
template <typename T>
double dot(const T* a, const T* b, std::int64_t n, std::int64_t sb) {
  double lanes[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::int64_t i = 0;
  if (sb == 1) {
    for (; i + 8 <= n; i += 8) {
      for (int j = 0; j < 8; ++j) lanes[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    }
  }
  double tail = 0.0;
  for (; i < n; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i * sb]);
  return ((lanes[0] + lanes[1]) + (lanes[2] + lanes[3])) + ((lanes[4] + lanes[5]) + (lanes[6] + lanes[7])) + tail;
}

template <typename T>
double plain_sum(const T* a, std::int64_t n) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += static_cast<double>(a[i]);
  return acc;
}

void require_5d(const Shape& s, const char* what) {
  require(s.size() == 5, ErrorCode::kShapeMismatch, std::string(what) + " expects a 5-D tensor, got " + shape_str(s));
}

struct ConvGeometry {
  std::int64_t n, ic, oc;
  Triple in, out, k, s, p;
  std::int64_t in_size() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_size() const { return out[0] * out[1] * out[2]; }
  std::int64_t k_size() const { return k[0] * k[1] * k[2]; }
};

template <typename T>
void conv_forward(const ConvGeometry& g, const T* x, const T* w, const T* bias, T* y) {
  const std::int64_t is = g.in_size(), os = g.out_size(), ks = g.k_size();
  parallel_for(g.n * g.oc, [&](std::int64_t plane) {
    const std::int64_t n = plane / g.oc, oc = plane % g.oc;
    T* out = y + plane * os;
    std::fill(out, out + os, bias != nullptr ? bias[oc] : T(0));
    for (std::int64_t ic = 0; ic < g.ic; ++ic) {
      const T* xin = x + (n * g.ic + ic) * is;
      const T* wk = w + (oc * g.ic + ic) * ks;
      for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
        const Range rd = valid_range(g.in[0], g.out[0], kd, g.s[0], g.p[0]);
        for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
          const Range rh = valid_range(g.in[1], g.out[1], kh, g.s[1], g.p[1]);
          for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
            const Range rw = valid_range(g.in[2], g.out[2], kw, g.s[2], g.p[2]);
            const T wv = wk[(kd * g.k[1] + kh) * g.k[2] + kw];
            const std::int64_t len = rw.hi - rw.lo;
            if (len <= 0) continue;
            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
              const std::int64_t id = od * g.s[0] + kd - g.p[0];
              for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::int64_t ih = oh * g.s[1] + kh - g.p[1];
                T* orow = out + (od * g.out[1] + oh) * g.out[2] + rw.lo;
                const T* xrow = xin + (id * g.in[1] + ih) * g.in[2] + rw.lo * g.s[2] + kw - g.p[2];
                if (g.s[2] == 1) {
                  for (std::int64_t i = 0; i < len; ++i) orow[i] += wv * xrow[i];
                } else {
                  for (std::int64_t i = 0; i < len; ++i) orow[i] += wv * xrow[i * g.s[2]];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv_backward_input(const ConvGeometry& g, const T* gy, const T* w, T* gx) {
  const std::int64_t is = g.in_size(), os = g.out_size(), ks = g.k_size();
  parallel_for(g.n * g.ic, [&](std::int64_t plane) {
    const std::int64_t n = plane / g.ic, ic = plane % g.ic;
    T* gin = gx + plane * is;
    for (std::int64_t oc = 0; oc < g.oc; ++oc) {
      const T* gout = gy + (n * g.oc + oc) * os;
      const T* wk = w + (oc * g.ic + ic) * ks;
      for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
        const Range rd = valid_range(g.in[0], g.out[0], kd, g.s[0], g.p[0]);
        for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
          const Range rh = valid_range(g.in[1], g.out[1], kh, g.s[1], g.p[1]);
          for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
            const Range rw = valid_range(g.in[2], g.out[2], kw, g.s[2], g.p[2]);
            const T wv = wk[(kd * g.k[1] + kh) * g.k[2] + kw];
            const std::int64_t len = rw.hi - rw.lo;
            if (len <= 0) continue;
            for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
              const std::int64_t id = od * g.s[0] + kd - g.p[0];
              for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                const std::int64_t ih = oh * g.s[1] + kh - g.p[1];
                const T* grow = gout + (od * g.out[1] + oh) * g.out[2] + rw.lo;
                T* xrow = gin + (id * g.in[1] + ih) * g.in[2] + rw.lo * g.s[2] + kw - g.p[2];
                if (g.s[2] == 1) {
                  for (std::int64_t i = 0; i < len; ++i) xrow[i] += wv * grow[i];
                } else {
                  for (std::int64_t i = 0; i < len; ++i) xrow[i * g.s[2]] += wv * grow[i];
                }
              }
            }
          }
        }
      }
    }
  });
}

template <typename T>
void conv_backward_weight(const ConvGeometry& g, const T* gy, const T* x, T* gw, T* gb) {
  const std::int64_t is = g.in_size(), os = g.out_size();
  parallel_for(g.oc, [&](std::int64_t oc) {
    if (gb != nullptr) {
      double acc = 0.0;
      for (std::int64_t n = 0; n < g.n; ++n) acc += plain_sum(gy + (n * g.oc + oc) * os, os);
      gb[oc] += static_cast<T>(acc);
    }
    if (gw == nullptr) return;
    for (std::int64_t ic = 0; ic < g.ic; ++ic) {
      for (std::int64_t kd = 0; kd < g.k[0]; ++kd) {
        const Range rd = valid_range(g.in[0], g.out[0], kd, g.s[0], g.p[0]);
        for (std::int64_t kh = 0; kh < g.k[1]; ++kh) {
          const Range rh = valid_range(g.in[1], g.out[1], kh, g.s[1], g.p[1]);
          for (std::int64_t kw = 0; kw < g.k[2]; ++kw) {
            const Range rw = valid_range(g.in[2], g.out[2], kw, g.s[2], g.p[2]);
            const std::int64_t len = rw.hi - rw.lo;
            double acc = 0.0;
            if (len > 0) {
              for (std::int64_t n = 0; n < g.n; ++n) {
                const T* gout = gy + (n * g.oc + oc) * os;
                const T* xin = x + (n * g.ic + ic) * is;
                for (std::int64_t od = rd.lo; od < rd.hi; ++od) {
                  const std::int64_t id = od * g.s[0] + kd - g.p[0];
                  for (std::int64_t oh = rh.lo; oh < rh.hi; ++oh) {
                    const std::int64_t ih = oh * g.s[1] + kh - g.p[1];
                    const T* grow = gout + (od * g.out[1] + oh) * g.out[2] + rw.lo;
                    const T* xrow = xin + (id * g.in[1] + ih) * g.in[2] + rw.lo * g.s[2] + kw - g.p[2];
                    acc += dot(grow, xrow, len, g.s[2]);
                  }
                }
              }
            }
            gw[((oc * g.ic + ic) * g.k[0] + kd) * g.k[1] * g.k[2] + kh * g.k[2] + kw] += static_cast<T>(acc);
          }
        }
      }
    }
  });
}

}  // namespace

Triple ConvSpec::output_extent(const Triple& in) const {
  Triple out{};
  for (int a = 0; a < 3; ++a) out[a] = floor_div(in[a] + 2 * padding[a] - kernel[a], stride[a]) + 1;
  return out;
}

template <typename T>
ChannelDescriptor<T>::ChannelDescriptor(Tensor<T> v) : values(std::move(v)) {
  require(values.rank() == 5 && values.dim(2) == 1 && values.dim(3) == 1 && values.dim(4) == 1,
          ErrorCode::kShapeMismatch, "channel descriptor must be NxCx1x1x1, got " + shape_str(values.shape()));
}

template <typename T>
Tensor<T> conv3d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>* bias) {
  require_5d(x.shape(), "conv3d");
  require(x.dim(1) == spec.in_channels, ErrorCode::kShapeMismatch,
          "conv3d input has " + std::to_string(x.dim(1)) + " channels, the conv expects " +
              std::to_string(spec.in_channels));
  require(weights.shape() == spec.weight_shape(), ErrorCode::kShapeMismatch,
          "conv3d weights " + shape_str(weights.shape()) + " != " + shape_str(spec.weight_shape()));
  for (int a = 0; a < 3; ++a) {
    require(spec.stride[a] >= 1 && spec.padding[a] >= 0 && spec.kernel[a] >= 1, ErrorCode::kInvalidArgument,
            "conv3d stride/padding/kernel out of range");
  }
  require(spec.has_bias == (bias != nullptr), ErrorCode::kShapeMismatch, "conv3d bias presence differs from its ConvSpec");
  if (bias != nullptr) {
    require(bias->shape() == Shape{spec.out_channels}, ErrorCode::kShapeMismatch, "conv3d bias must have shape [out]");
  }
  const Triple in{x.dim(2), x.dim(3), x.dim(4)};
  const Triple out = spec.output_extent(in);
  require(out[0] >= 1 && out[1] >= 1 && out[2] >= 1, ErrorCode::kOutputCollapsed,
          "conv3d output extent below 1 for input " + shape_str(x.shape()));

  const ConvGeometry g{x.dim(0), spec.in_channels, spec.out_channels, in, out, spec.kernel, spec.stride, spec.padding};
  Shape shape{g.n, g.oc, out[0], out[1], out[2]};
  std::vector<T> y(static_cast<std::size_t>(numel(shape)));
  conv_forward(g, x.ptr(), weights.ptr(), bias != nullptr ? bias->ptr() : nullptr, y.data());

  BackwardFn<T> backward;
  if (common_tape<T>({&x, &weights, bias}) != nullptr) {
    Tensor<T> sx = x.detach();
    Tensor<T> sw = weights.detach();
    const bool has_bias = bias != nullptr;
    backward = [g, sx, sw, has_bias](std::span<const T> gy, GradSink<T>& sink) {
      if (sink.wants(0)) conv_backward_input(g, gy.data(), sw.ptr(), sink.grad(0).data());
      const bool want_w = sink.wants(1);
      const bool want_b = has_bias && sink.wants(2);
      if (want_w || want_b) {
        conv_backward_weight(g, gy.data(), sx.ptr(), want_w ? sink.grad(1).data() : nullptr,
                             want_b ? sink.grad(2).data() : nullptr);
      }
    };
  }
  return make_result<T>("conv3d", std::move(shape), std::move(y), {&x, &weights, bias}, std::move(backward));
}

template <typename T>
Tensor<T> conv_transpose3d(const Tensor<T>& x, const ConvSpec& spec, const Tensor<T>& weights, const Tensor<T>* bias) {
  require_5d(x.shape(), "conv_transpose3d");
  require(x.dim(1) == spec.in_channels, ErrorCode::kShapeMismatch, "conv_transpose3d channel count differs from spec");
  require(weights.shape() == spec.transpose_weight_shape(), ErrorCode::kShapeMismatch,
          "conv_transpose3d weights " + shape_str(weights.shape()) + " != " +
              shape_str(spec.transpose_weight_shape()));
  for (int a = 0; a < 3; ++a) {
    require(spec.padding[a] == 0 && spec.stride[a] >= 1 && spec.kernel[a] >= 1, ErrorCode::kInvalidArgument,
            "conv_transpose3d supports zero padding and positive stride/kernel only");
  }
  require(spec.has_bias == (bias != nullptr), ErrorCode::kShapeMismatch,
          "conv_transpose3d bias presence differs from its ConvSpec");
  if (bias != nullptr) {
    require(bias->shape() == Shape{spec.out_channels}, ErrorCode::kShapeMismatch, "bias must have shape [out]");
  }

  const std::int64_t n = x.dim(0), ic_n = spec.in_channels, oc_n = spec.out_channels;
  const Triple in{x.dim(2), x.dim(3), x.dim(4)};
  const Triple k = spec.kernel, s = spec.stride;
  Triple out{};
  for (int a = 0; a < 3; ++a) out[a] = (in[a] - 1) * s[a] + k[a];
  const std::int64_t is = in[0] * in[1] * in[2], os = out[0] * out[1] * out[2], ks = k[0] * k[1] * k[2];

  Shape shape{n, oc_n, out[0], out[1], out[2]};
  std::vector<T> y(static_cast<std::size_t>(numel(shape)));
  const T* xp = x.ptr();
  const T* wp = weights.ptr();
  const T* bp = bias != nullptr ? bias->ptr() : nullptr;
  parallel_for(n * oc_n, [&](std::int64_t plane) {
    const std::int64_t b = plane / oc_n, oc = plane % oc_n;
    T* o = y.data() + plane * os;
    std::fill(o, o + os, bp != nullptr ? bp[oc] : T(0));
    for (std::int64_t ic = 0; ic < ic_n; ++ic) {
      const T* xin = xp + (b * ic_n + ic) * is;
      const T* wk = wp + (ic * oc_n + oc) * ks;
      for (std::int64_t a = 0; a < k[0]; ++a)
        for (std::int64_t bb = 0; bb < k[1]; ++bb)
          for (std::int64_t c = 0; c < k[2]; ++c) {
            const T wv = wk[(a * k[1] + bb) * k[2] + c];
            for (std::int64_t id = 0; id < in[0]; ++id)
              for (std::int64_t ih = 0; ih < in[1]; ++ih) {
                const T* xrow = xin + (id * in[1] + ih) * in[2];
                T* orow = o + ((id * s[0] + a) * out[1] + ih * s[1] + bb) * out[2] + c;
                for (std::int64_t iw = 0; iw < in[2]; ++iw) orow[iw * s[2]] += wv * xrow[iw];
              }
          }
    }
  });

  BackwardFn<T> backward;
  if (common_tape<T>({&x, &weights, bias}) != nullptr) {
    Tensor<T> sx = x.detach();
    Tensor<T> sw = weights.detach();
    const bool has_bias = bias != nullptr;
    backward = [=](std::span<const T> gy, GradSink<T>& sink) {
      const T* g = gy.data();
      if (sink.wants(0)) {
        T* gx = sink.grad(0).data();
        const T* w = sw.ptr();
        parallel_for(n * ic_n, [&](std::int64_t plane) {
          const std::int64_t b = plane / ic_n, ic = plane % ic_n;
          T* gin = gx + plane * is;
          for (std::int64_t oc = 0; oc < oc_n; ++oc) {
            const T* gout = g + (b * oc_n + oc) * os;
            const T* wk = w + (ic * oc_n + oc) * ks;
            for (std::int64_t a = 0; a < k[0]; ++a)
              for (std::int64_t bb = 0; bb < k[1]; ++bb)
                for (std::int64_t c = 0; c < k[2]; ++c) {
                  const T wv = wk[(a * k[1] + bb) * k[2] + c];
                  for (std::int64_t id = 0; id < in[0]; ++id)
                    for (std::int64_t ih = 0; ih < in[1]; ++ih) {
                      T* xrow = gin + (id * in[1] + ih) * in[2];
                      const T* grow = gout + ((id * s[0] + a) * out[1] + ih * s[1] + bb) * out[2] + c;
                      for (std::int64_t iw = 0; iw < in[2]; ++iw) xrow[iw] += wv * grow[iw * s[2]];
                    }
                }
          }
        });
      }
      if (sink.wants(1)) {
        T* gw = sink.grad(1).data();
        const T* xv = sx.ptr();
        parallel_for(ic_n, [&](std::int64_t ic) {
          for (std::int64_t oc = 0; oc < oc_n; ++oc)
            for (std::int64_t a = 0; a < k[0]; ++a)
              for (std::int64_t bb = 0; bb < k[1]; ++bb)
                for (std::int64_t c = 0; c < k[2]; ++c) {
                  double acc = 0.0;
                  for (std::int64_t b = 0; b < n; ++b) {
                    const T* xin = xv + (b * ic_n + ic) * is;
                    const T* gout = g + (b * oc_n + oc) * os;
                    for (std::int64_t id = 0; id < in[0]; ++id)
                      for (std::int64_t ih = 0; ih < in[1]; ++ih) {
                        const T* xrow = xin + (id * in[1] + ih) * in[2];
                        const T* grow = gout + ((id * s[0] + a) * out[1] + ih * s[1] + bb) * out[2] + c;
                        acc += dot(xrow, grow, in[2], s[2]);
                      }
                  }
                  gw[((ic * oc_n + oc) * k[0] + a) * k[1] * k[2] + bb * k[2] + c] += static_cast<T>(acc);
                }
        });
      }
      if (has_bias && sink.wants(2)) {
        auto& gb = sink.grad(2);
        for (std::int64_t oc = 0; oc < oc_n; ++oc) {
          double acc = 0.0;
          for (std::int64_t b = 0; b < n; ++b) acc += plain_sum(g + (b * oc_n + oc) * os, os);
          gb[oc] += static_cast<T>(acc);
        }
      }
    };
  }
  return make_result<T>("conv_transpose3d", std::move(shape), std::move(y), {&x, &weights, bias}, std::move(backward));
}

template <typename T>
Tensor<T> max_pool3d(const Tensor<T>& x) {
  require_5d(x.shape(), "max_pool3d");
  const std::int64_t D = x.dim(2), H = x.dim(3), W = x.dim(4);
  require(D % 2 == 0 && H % 2 == 0 && W % 2 == 0, ErrorCode::kOddExtent,
          "max_pool3d needs even spatial extents, got " + shape_str(x.shape()));
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t od = D / 2, oh = H / 2, ow = W / 2;
  const std::int64_t is = D * H * W, os = od * oh * ow;
  Shape shape{x.dim(0), x.dim(1), od, oh, ow};
  std::vector<T> y(static_cast<std::size_t>(planes * os));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
  const T* xp = x.ptr();
  parallel_for(planes, [&](std::int64_t p) {
    const T* in = xp + p * is;
    for (std::int64_t d = 0; d < od; ++d)
      for (std::int64_t h = 0; h < oh; ++h)
        for (std::int64_t w = 0; w < ow; ++w) {
          std::int64_t best = -1;
          T best_v = T(0);
          for (std::int64_t a = 0; a < 2; ++a)
            for (std::int64_t b = 0; b < 2; ++b)
              for (std::int64_t c = 0; c < 2; ++c) {
                const std::int64_t idx = ((2 * d + a) * H + 2 * h + b) * W + 2 * w + c;
                if (best < 0 || in[idx] > best_v) {
                  best = idx;
                  best_v = in[idx];
                }
              }
          const std::int64_t o = p * os + (d * oh + h) * ow + w;
          y[o] = best_v;
          (*argmax)[o] = p * is + best;
        }
  });
  BackwardFn<T> backward = [argmax](std::span<const T> g, GradSink<T>& sink) {
    auto& gx = sink.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  };
  return make_result<T>("max_pool3d", std::move(shape), std::move(y), {&x}, std::move(backward));
}

template <typename T>
ChannelDescriptor<T> global_max_pool(const Tensor<T>& x) {
  require_5d(x.shape(), "global_max_pool");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  std::vector<T> y(static_cast<std::size_t>(planes));
  auto argmax = std::make_shared<std::vector<std::int64_t>>(y.size());
  const T* xp = x.ptr();
  for (std::int64_t p = 0; p < planes; ++p) {
    const T* in = xp + p * spatial;
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < spatial; ++i) {
      if (in[i] > in[best]) best = i;
    }
    y[p] = in[best];
    (*argmax)[p] = p * spatial + best;
  }
  BackwardFn<T> backward = [argmax](std::span<const T> g, GradSink<T>& sink) {
    auto& gx = sink.grad(0);
    for (std::size_t i = 0; i < g.size(); ++i) gx[(*argmax)[i]] += g[i];
  };
  return ChannelDescriptor<T>(make_result<T>("global_max_pool", Shape{x.dim(0), x.dim(1), 1, 1, 1}, std::move(y), {&x},
                                             std::move(backward)));
}

template <typename T>
ChannelDescriptor<T> global_avg_pool(const Tensor<T>& x) {
  require_5d(x.shape(), "global_avg_pool");
  const std::int64_t planes = x.dim(0) * x.dim(1);
  const std::int64_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  std::vector<T> y(static_cast<std::size_t>(planes));
  // Summing in sorted order makes the mean bitwise invariant under any
  // permutation of the voxels within a channel.
  std::vector<T> sorted(static_cast<std::size_t>(spatial));
  for (std::int64_t p = 0; p < planes; ++p) {
    std::copy(x.ptr() + p * spatial, x.ptr() + (p + 1) * spatial, sorted.begin());
    // NaN breaks the ordering; the sum is NaN either way.
    if (all_finite<T>(sorted)) std::sort(sorted.begin(), sorted.end());
    y[p] = static_cast<T>(plain_sum(sorted.data(), spatial) / static_cast<double>(spatial));
  }
  BackwardFn<T> backward = [spatial](std::span<const T> g, GradSink<T>& sink) {
    auto& gx = sink.grad(0);
    const T inv = static_cast<T>(1.0 / static_cast<double>(spatial));
    for (std::size_t p = 0; p < g.size(); ++p) {
      const T v = g[p] * inv;
      T* row = gx.data() + p * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) row[i] += v;
    }
  };
  return ChannelDescriptor<T>(make_result<T>("global_avg_pool", Shape{x.dim(0), x.dim(1), 1, 1, 1}, std::move(y), {&x},
                                             std::move(backward)));
}

template <typename T>
ChannelDescriptor<T> conv1d_channel(const ChannelDescriptor<T>& d, const Tensor<T>& weights) {
  require(weights.rank() == 1, ErrorCode::kShapeMismatch, "conv1d_channel weights must be a 1-D vector");
  const std::int64_t k = weights.dim(0);
  require(k % 2 == 1, ErrorCode::kEvenKernel, "conv1d_channel kernel length must be odd, got " + std::to_string(k));
  const Tensor<T>& x = d.values;
  const std::int64_t n = x.dim(0), c = x.dim(1), half = (k - 1) / 2;
  const T* xp = x.ptr();
  const T* wp = weights.ptr();
  std::vector<T> y(x.size(), T(0));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t ch = 0; ch < c; ++ch) {
      T acc = T(0);
      for (std::int64_t j = 0; j < k; ++j) {
        const std::int64_t src = ch + j - half;
        if (src >= 0 && src < c) acc += wp[j] * xp[b * c + src];
      }
      y[b * c + ch] = acc;
    }
  Tensor<T> sx = x.detach();
  Tensor<T> sw = weights.detach();
  BackwardFn<T> backward = [sx, sw, n, c, k, half](std::span<const T> g, GradSink<T>& sink) {
    const T* xp = sx.ptr();
    const T* wp = sw.ptr();
    if (sink.wants(0)) {
      auto& gx = sink.grad(0);
      for (std::int64_t b = 0; b < n; ++b)
        for (std::int64_t ch = 0; ch < c; ++ch)
          for (std::int64_t j = 0; j < k; ++j) {
            const std::int64_t src = ch + j - half;
            if (src >= 0 && src < c) gx[b * c + src] += wp[j] * g[b * c + ch];
          }
    }
    if (sink.wants(1)) {
      auto& gw = sink.grad(1);
      for (std::int64_t j = 0; j < k; ++j) {
        T acc = T(0);
        for (std::int64_t b = 0; b < n; ++b)
          for (std::int64_t ch = 0; ch < c; ++ch) {
            const std::int64_t src = ch + j - half;
            if (src >= 0 && src < c) acc += g[b * c + ch] * xp[b * c + src];
          }
        gw[j] += acc;
      }
    }
  };
  return ChannelDescriptor<T>(make_result<T>("conv1d_channel", x.shape(), std::move(y), {&x, &weights},
                                             std::move(backward)));
}

template <typename T>
Tensor<T> group_norm(const Tensor<T>& x, std::int64_t groups, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps) {
  require_5d(x.shape(), "group_norm");
  const std::int64_t n = x.dim(0), c = x.dim(1);
  require(groups >= 1 && c % groups == 0, ErrorCode::kIndivisibleGroups,
          std::to_string(c) + " channels do not split into " + std::to_string(groups) + " groups");
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, ErrorCode::kShapeMismatch,
          "group_norm gamma/beta must have shape [C]");
  const std::int64_t spatial = x.dim(2) * x.dim(3) * x.dim(4);
  const std::int64_t cpg = c / groups;
  const std::int64_t m = cpg * spatial;

  std::vector<T> y(x.size());
  auto xhat = std::make_shared<std::vector<T>>(x.size());
  auto rstd = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n * groups));
  const T* xp = x.ptr();
  const T* gp = gamma.ptr();
  const T* bp = beta.ptr();
  parallel_for(n * groups, [&](std::int64_t slab) {
    const std::int64_t b = slab / groups, grp = slab % groups;
    const std::int64_t base = (b * c + grp * cpg) * spatial;
    const double mean = plain_sum(xp + base, m) / static_cast<double>(m);
    double var = 0.0;
    for (std::int64_t i = 0; i < m; ++i) {
      const double dv = static_cast<double>(xp[base + i]) - mean;
      var += dv * dv;
    }
    var /= static_cast<double>(m);
    const double r = 1.0 / std::sqrt(var + eps);
    (*rstd)[slab] = r;
    for (std::int64_t ci = 0; ci < cpg; ++ci) {
      const std::int64_t ch = grp * cpg + ci;
      const std::int64_t off = base + ci * spatial;
      for (std::int64_t i = 0; i < spatial; ++i) {
        const T xh = static_cast<T>((static_cast<double>(xp[off + i]) - mean) * r);
        (*xhat)[off + i] = xh;
        y[off + i] = gp[ch] * xh + bp[ch];
      }
    }
  });

  Tensor<T> sg = gamma.detach();
  BackwardFn<T> backward = [=](std::span<const T> g, GradSink<T>& sink) {
    const auto& xh = *xhat;
    const T* gam = sg.ptr();
    if (sink.wants(0)) {
      T* gx = sink.grad(0).data();
      parallel_for(n * groups, [&](std::int64_t slab) {
        const std::int64_t b = slab / groups, grp = slab % groups;
        const std::int64_t base = (b * c + grp * cpg) * spatial;
        double s1 = 0.0, s2 = 0.0;
        for (std::int64_t ci = 0; ci < cpg; ++ci) {
          const double gm = static_cast<double>(gam[grp * cpg + ci]);
          const std::int64_t off = base + ci * spatial;
          for (std::int64_t i = 0; i < spatial; ++i) {
            const double dxh = static_cast<double>(g[off + i]) * gm;
            s1 += dxh;
            s2 += dxh * static_cast<double>(xh[off + i]);
          }
        }
        const double r = (*rstd)[slab];
        const double inv_m = 1.0 / static_cast<double>(m);
        for (std::int64_t ci = 0; ci < cpg; ++ci) {
          const double gm = static_cast<double>(gam[grp * cpg + ci]);
          const std::int64_t off = base + ci * spatial;
          for (std::int64_t i = 0; i < spatial; ++i) {
            const double dxh = static_cast<double>(g[off + i]) * gm;
            gx[off + i] += static_cast<T>(r * (dxh - s1 * inv_m - static_cast<double>(xh[off + i]) * s2 * inv_m));
          }
        }
      });
    }
    const bool want_gamma = sink.wants(1), want_beta = sink.wants(2);
    if (want_gamma || want_beta) {
      T* gg = want_gamma ? sink.grad(1).data() : nullptr;
      T* gb = want_beta ? sink.grad(2).data() : nullptr;
      for (std::int64_t ch = 0; ch < c; ++ch) {
        double acc_g = 0.0, acc_b = 0.0;
        for (std::int64_t b = 0; b < n; ++b) {
          const std::int64_t off = (b * c + ch) * spatial;
          acc_g += dot(g.data() + off, xh.data() + off, spatial, 1);
          acc_b += plain_sum(g.data() + off, spatial);
        }
        if (gg != nullptr) gg[ch] += static_cast<T>(acc_g);
        if (gb != nullptr) gb[ch] += static_cast<T>(acc_b);
      }
    }
  };
  return make_result<T>("group_norm", x.shape(), std::move(y), {&x, &gamma, &beta}, std::move(backward));
}

#define RCAN_INSTANTIATE(T)                                                                                   \
  template struct ChannelDescriptor<T>;                                                                       \
  template Tensor<T> conv3d<T>(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>*);        \
  template Tensor<T> conv_transpose3d<T>(const Tensor<T>&, const ConvSpec&, const Tensor<T>&, const Tensor<T>*); \
  template Tensor<T> max_pool3d<T>(const Tensor<T>&);                                                         \
  template ChannelDescriptor<T> global_max_pool<T>(const Tensor<T>&);                                         \
  template ChannelDescriptor<T> global_avg_pool<T>(const Tensor<T>&);                                         \
  template ChannelDescriptor<T> conv1d_channel<T>(const ChannelDescriptor<T>&, const Tensor<T>&);             \
  template Tensor<T> group_norm<T>(const Tensor<T>&, std::int64_t, const Tensor<T>&, const Tensor<T>&, double);

RCAN_INSTANTIATE(float)
RCAN_INSTANTIATE(double)
#undef RCAN_INSTANTIATE

}  // namespace rcan
