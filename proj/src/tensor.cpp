#include "noc/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace noc {

namespace {

constexpr char kMagic[4] = {'N', 'O', 'C', 'T'};

static_assert(sizeof(float) == 4);

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xffu);
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("tensor blob truncated in header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

Shape read_header(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0)
    throw FormatError("bad tensor magic (expected NOCT)");
  const std::uint32_t rank = get_u32(in);
  if (rank > 16) throw FormatError("tensor rank " + std::to_string(rank) + " out of range");
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(in);
  return shape;
}

}  // namespace

std::size_t shape_volume(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  if (shape.empty()) os << "scalar";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill)
    : shape_(std::move(shape)), data_(shape_volume(shape_), fill) {
#ifdef NOC_CHECKED_TENSORS
  if (!std::isfinite(fill)) throw NonFiniteError("non-finite fill value");
#endif
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_volume(shape_) != data_.size())
    throw ShapeError("tensor shape " + shape_string(shape_) + " has volume " +
                     std::to_string(shape_volume(shape_)) + " but data length is " +
                     std::to_string(data_.size()));
#ifdef NOC_CHECKED_TENSORS
  check_finite();
#endif
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size())
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_string(shape_));
  return shape_[axis];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_volume(shape) != data_.size())
    throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

void Tensor::fill(float v) { std::fill(data_.begin(), data_.end(), v); }

void Tensor::check_finite(const char* what) const {
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw NonFiniteError(std::string(what) + ": non-finite value at flat index " + std::to_string(i));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "max_abs_diff");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (float v : t.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  if (!out) throw std::runtime_error("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  Shape shape = read_header(in);
  std::vector<float> data(shape_volume(shape));
  for (auto& v : data) {
    unsigned char b[4];
    if (!in.read(reinterpret_cast<char*>(b), 4)) throw FormatError("tensor blob truncated in data");
    const std::uint32_t bits = static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
                               (static_cast<std::uint32_t>(b[2]) << 16) |
                               (static_cast<std::uint32_t>(b[3]) << 24);
    v = std::bit_cast<float>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(in);
}

Shape peek_tensor_shape(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in);
}

}  // namespace noc
