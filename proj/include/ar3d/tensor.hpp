#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ar3d {

using Shape = std::vector<std::size_t>;

/// Raised for every contract violation (bad shapes, malformed files, bad config).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string shape_str(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Dense row-major float array. Shape is never empty and every dim is >= 1.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0f) {}
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Same data under a different shape with identical element count.
  Tensor reshaped(Shape shape) const;

  void fill(float value);

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Convolution geometry: odd kernel extents, stride 1, "same" zero padding.
struct ConvGeom {
  std::array<std::size_t, 3> kernel{3, 3, 3};  // kT, kH, kW

  void validate() const;
  std::size_t pad(std::size_t axis) const { return (kernel[axis] - 1) / 2; }
  bool operator==(const ConvGeom&) const = default;
};

struct ConvGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

/// Output [Cout,T,H,W]. Accumulates in double.
Tensor conv3d_forward(const Tensor& input, const Tensor& weights, const Tensor& bias,
                      const ConvGeom& geom);

ConvGrads conv3d_backward(const Tensor& input, const Tensor& weights, const ConvGeom& geom,
                          const Tensor& grad_out);

/// Records, for every pooled cell, the flat index of the input element that won.
struct PoolIndex {
  Shape input_shape;
  Shape output_shape;
  std::vector<std::uint32_t> argmax;
};

struct PoolResult {
  Tensor output;
  PoolIndex index;
};

/// Disjoint 2x2x2 max pooling over [C,T,H,W]; odd trailing planes are dropped.
PoolResult maxpool3d_forward(const Tensor& input);
Tensor maxpool3d_backward(const PoolIndex& index, const Tensor& grad_out);

struct DenseGrads {
  Tensor input;
  Tensor weights;
  Tensor bias;
};

Tensor dense_forward(const Tensor& input, const Tensor& weights, const Tensor& bias);
DenseGrads dense_backward(const Tensor& input, const Tensor& weights, const Tensor& grad_out);

Tensor relu(const Tensor& input);
/// Gradient passes only where input > 0 (zero subgradient at 0).
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct SoftmaxXent {
  double loss = 0.0;
  std::vector<double> probs;
  Tensor grad_logits;
};

SoftmaxXent softmax_cross_entropy(const Tensor& logits, std::size_t target);

/// Max-shifted softmax computed in double.
std::vector<double> softmax(std::span<const float> logits);

}  // namespace ar3d
