#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace advdev {

/// Raised for contract violations on user-supplied data (shapes, ranges, formats).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

/// Storage aligned for Eigen's vector kernels. Their reduction order depends on the
/// start address, so unaligned buffers would make results vary between runs.
using Buffer = std::vector<double, Eigen::aligned_allocator<double>>;

std::size_t shape_size(const Shape& shape);
std::string shape_to_string(const Shape& shape);

/// Dense row-major array of doubles. Images are CHW.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }

  std::span<const double> values() const { return data_; }
  std::span<double> values() { return data_; }
  const double* data() const { return data_.data(); }
  double* data() { return data_.data(); }

  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  /// CHW element access.
  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }
  double& at(std::size_t c, std::size_t h, std::size_t w) {
    return data_[(c * shape_[1] + h) * shape_[2] + w];
  }

  Tensor reshaped(Shape shape) const;
  bool all_finite() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  struct Adopt {};
  Tensor(Adopt, Shape shape, Buffer data);

  Shape shape_;
  Buffer data_;
};

/// Throws advdev::Error naming `op` if any value is NaN or infinite.
void require_finite(const Tensor& t, const char* op);

// Pure kernels. Every one validates shapes and returns a finite result or throws.

struct ConvGeometry {
  std::size_t in_channels, in_h, in_w;
  std::size_t out_channels, kernel, stride, pad;
  std::size_t out_h, out_w;

  std::size_t patch() const { return in_channels * kernel * kernel; }
  std::size_t positions() const { return out_h * out_w; }
};

ConvGeometry conv_geometry(const Shape& input, const Shape& weights, std::size_t stride,
                           std::size_t pad);

/// Unfolds `input` into a (C*K*K) x (outH*outW) row-major matrix.
Buffer im2col(const Tensor& input, const ConvGeometry& g);
/// Adds the columns back into an input-shaped gradient (adjoint of im2col).
void col2im(std::span<const double> cols, const ConvGeometry& g, Tensor& input_grad);

Tensor conv2d(const Tensor& input, const Tensor& weights, const Tensor& bias, std::size_t stride,
              std::size_t pad);
/// W.x + b with x flattened in row-major order.
Tensor dense(const Tensor& input, const Tensor& weights, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor global_avg_pool(const Tensor& x);
Tensor softmax(const Tensor& logits);
double cross_entropy(const Tensor& logits, std::size_t label);
Tensor sign(const Tensor& x);
Tensor clip(const Tensor& x, double lo, double hi);
/// Elementwise clamp into [center - radius, center + radius].
Tensor clip_ball(const Tensor& x, const Tensor& center, double radius);
Tensor one_hot(std::size_t index, std::size_t classes);
/// Lowest index among maximal entries.
std::size_t argmax(std::span<const double> v);

double l2_distance(const Tensor& a, const Tensor& b);
double linf_distance(const Tensor& a, const Tensor& b);

}  // namespace advdev
