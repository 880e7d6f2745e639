#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace noc {

/// Raised when operand extents disagree. The message names the offending
/// dimension and both extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised by checked tensor construction when a value is NaN or infinite.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Raised on malformed serialized tensors.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::size_t shape_volume(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. Maps are laid out C x H x W, conv kernels
/// Cout x Cin x Kh x Kw.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor zeros_like(const Tensor& other) { return Tensor(other.shape_); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  // Rank-3 accessors (C x H x W).
  float& at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }
  float at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
  }

  /// Same data, new shape of equal volume.
  Tensor reshaped(Shape shape) const;

  void fill(float v);

  /// Throws NonFiniteError if any value is NaN/Inf.
  void check_finite(const char* what = "tensor") const;

  bool operator==(const Tensor& other) const = default;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws ShapeError unless a and b have identical shapes.
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

float max_abs_diff(const Tensor& a, const Tensor& b);

// Binary format: "NOCT", u32 rank, u32 extents[rank], f32 data (all little-endian).
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);
/// Reads only the shape header of a tensor blob.
Shape peek_tensor_shape(const std::filesystem::path& path);

}  // namespace noc
