#include "advdev/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <numeric>

namespace advdev {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;
using MatrixMap = Eigen::Map<RowMatrix>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw Error(fmt::format("{}: shape mismatch {} vs {}", op, shape_to_string(a.shape()),
                            shape_to_string(b.shape())));
  }
}

}  // namespace

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  for (auto e : shape_) {
    if (e == 0) throw Error("tensor extents must be positive: " + shape_to_string(shape_));
  }
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : Tensor(Adopt{}, std::move(shape), Buffer(data.begin(), data.end())) {}

Tensor::Tensor(Adopt, Shape shape, Buffer data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (auto e : shape_) {
    if (e == 0) throw Error("tensor extents must be positive: " + shape_to_string(shape_));
  }
  if (shape_size(shape_) != data_.size()) {
    throw Error(fmt::format("tensor shape {} holds {} values, got {}", shape_to_string(shape_),
                            shape_size(shape_), data_.size()));
  }
}

Tensor Tensor::reshaped(Shape shape) const {
  return Tensor(Adopt{}, std::move(shape), data_);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void require_finite(const Tensor& t, const char* op) {
  if (!t.all_finite()) throw Error(fmt::format("{}: non-finite value in result", op));
}

ConvGeometry conv_geometry(const Shape& input, const Shape& weights, std::size_t stride,
                           std::size_t pad) {
  if (input.size() != 3) throw Error("conv2d: input must be CHW, got " + shape_to_string(input));
  if (weights.size() != 4 || weights[2] != weights[3]) {
    throw Error("conv2d: weights must be OutC x InC x K x K, got " + shape_to_string(weights));
  }
  if (weights[1] != input[0]) {
    throw Error(fmt::format("conv2d: input has {} channels, weights expect {}", input[0],
                            weights[1]));
  }
  if (stride == 0) throw Error("conv2d: stride must be positive");
  ConvGeometry g{input[0], input[1], input[2], weights[0], weights[2], stride, pad, 0, 0};
  const std::size_t span_h = input[1] + 2 * pad;
  const std::size_t span_w = input[2] + 2 * pad;
  if (span_h < g.kernel || span_w < g.kernel) {
    throw Error(fmt::format("conv2d: kernel {} exceeds padded extent of {} (pad {})", g.kernel,
                            shape_to_string(input), pad));
  }
  g.out_h = (span_h - g.kernel) / stride + 1;
  g.out_w = (span_w - g.kernel) / stride + 1;
  return g;
}

Buffer im2col(const Tensor& input, const ConvGeometry& g) {
  const std::size_t q = g.positions();
  Buffer cols(g.patch() * q, 0.0);
  const double* src = input.data();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        double* row = cols.data() + ((c * g.kernel + kh) * g.kernel + kw) * q;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          const double* in_row = src + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            row[oh * g.out_w + ow] = in_row[iw];
          }
        }
      }
    }
  }
  return cols;
}

void col2im(std::span<const double> cols, const ConvGeometry& g, Tensor& input_grad) {
  const std::size_t q = g.positions();
  double* dst = input_grad.data();
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    for (std::size_t kh = 0; kh < g.kernel; ++kh) {
      for (std::size_t kw = 0; kw < g.kernel; ++kw) {
        const double* row = cols.data() + ((c * g.kernel + kh) * g.kernel + kw) * q;
        for (std::size_t oh = 0; oh < g.out_h; ++oh) {
          const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* out_row = dst + (c * g.in_h + static_cast<std::size_t>(ih)) * g.in_w;
          for (std::size_t ow = 0; ow < g.out_w; ++ow) {
            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride + kw) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.in_w)) continue;
            out_row[iw] += row[oh * g.out_w + ow];
          }
        }
      }
    }
  }
}

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              std::size_t pad) {
  const ConvGeometry g = conv_geometry(input.shape(), weights.shape(), stride, pad);
  if (bias.rank() != 1 || bias.size() != g.out_channels) {
    throw Error(fmt::format("conv2d: bias must have {} entries", g.out_channels));
  }
  const Buffer cols = im2col(input, g);
  Tensor out({g.out_channels, g.out_h, g.out_w});
  MatrixMap o(out.data(), static_cast<Eigen::Index>(g.out_channels),
              static_cast<Eigen::Index>(g.positions()));
  ConstMatrixMap w(weights.data(), static_cast<Eigen::Index>(g.out_channels),
                   static_cast<Eigen::Index>(g.patch()));
  ConstMatrixMap x(cols.data(), static_cast<Eigen::Index>(g.patch()),
                   static_cast<Eigen::Index>(g.positions()));
  o.noalias() = w * x;
  for (std::size_t c = 0; c < g.out_channels; ++c) o.row(static_cast<Eigen::Index>(c)).array() += bias[c];
  require_finite(out, "conv2d");
  return out;
}

Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias) {
  if (weights.rank() != 2 || weights.dim(1) != input.size()) {
    throw Error(fmt::format("dense: weights {} do not accept input of {} values",
                            shape_to_string(weights.shape()), input.size()));
  }
  const std::size_t m = weights.dim(0);
  if (bias.rank() != 1 || bias.size() != m) {
    throw Error(fmt::format("dense: bias must have {} entries", m));
  }
  Tensor out({m});
  ConstMatrixMap w(weights.data(), static_cast<Eigen::Index>(m),
                   static_cast<Eigen::Index>(input.size()));
  Eigen::Map<const Eigen::VectorXd> x(input.data(), static_cast<Eigen::Index>(input.size()));
  Eigen::Map<const Eigen::VectorXd> b(bias.data(), static_cast<Eigen::Index>(m));
  Eigen::Map<Eigen::VectorXd> o(out.data(), static_cast<Eigen::Index>(m));
  o.noalias() = w * x;
  o += b;
  require_finite(out, "dense");
  return out;
}

Tensor relu(const Tensor& x) {
  require_finite(x, "relu");
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  require_finite(out, "add");
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 3) throw Error("global_avg_pool: input must be CHW");
  const std::size_t area = x.dim(1) * x.dim(2);
  Tensor out({x.dim(0)});
  for (std::size_t c = 0; c < x.dim(0); ++c) {
    double s = 0.0;
    for (std::size_t i = 0; i < area; ++i) s += x[c * area + i];
    out[c] = s / static_cast<double>(area);
  }
  require_finite(out, "global_avg_pool");
  return out;
}

Tensor softmax(const Tensor& logits) {
  if (logits.size() == 0) throw Error("softmax: empty input");
  const auto v = logits.values();
  const double mx = *std::max_element(v.begin(), v.end());
  Tensor out({logits.size()});
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& p : out.values()) p /= total;
  require_finite(out, "softmax");
  return out;
}

double cross_entropy(const Tensor& logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error(fmt::format("cross_entropy: label {} outside [0, {})", label, logits.size()));
  }
  const auto v = logits.values();
  const double mx = *std::max_element(v.begin(), v.end());
  double total = 0.0;
  for (double z : v) total += std::exp(z - mx);
  const double loss = mx + std::log(total) - v[label];
  if (!std::isfinite(loss)) throw Error("cross_entropy: non-finite loss");
  return loss;
}

Tensor sign(const Tensor& x) {
  require_finite(x, "sign");
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor clip(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw Error(fmt::format("clip: lower bound {} exceeds upper bound {}", lo, hi));
  Tensor out = x;
  for (double& v : out.values()) v = std::clamp(v, lo, hi);
  require_finite(out, "clip");
  return out;
}

Tensor clip_ball(const Tensor& x, const Tensor& center, double radius) {
  require_same_shape(x, center, "clip_ball");
  if (radius < 0.0) throw Error("clip_ball: negative radius");
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::clamp(out[i], center[i] - radius, center[i] + radius);
  }
  require_finite(out, "clip_ball");
  return out;
}

Tensor one_hot(std::size_t index, std::size_t classes) {
  if (index >= classes) throw Error("one_hot: index out of range");
  Tensor out({classes});
  out[index] = 1.0;
  return out;
}

std::size_t argmax(std::span<const double> v) {
  if (v.empty()) throw Error("argmax: empty input");
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

double l2_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "l2_distance");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

double linf_distance(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_distance");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace advdev
