#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <sstream>

#include "suites.hpp"

using namespace noc;
using namespace noc::testing;

namespace {

// Direct six-loop cross-correlation.
Tensor conv_naive(const Tensor& x, const ConvParams& p) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t k = p.kernel_h(), cout = p.out_channels();
  const std::size_t oh = conv_output_extent(h, k, p.stride, p.padding, p.dilation, "h");
  const std::size_t ow = conv_output_extent(w, k, p.stride, p.padding, p.dilation, "w");
  Tensor out({cout, oh, ow});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t oy = 0; oy < oh; ++oy)
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double s = p.bias[o];
        for (std::size_t c = 0; c < cin; ++c)
          for (std::size_t ky = 0; ky < k; ++ky)
            for (std::size_t kx = 0; kx < k; ++kx) {
              const long y = static_cast<long>(oy * p.stride + ky * p.dilation) - static_cast<long>(p.padding);
              const long xx = static_cast<long>(ox * p.stride + kx * p.dilation) - static_cast<long>(p.padding);
              if (y < 0 || xx < 0 || y >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
              s += static_cast<double>(p.kernel[((o * cin + c) * k + ky) * k + kx]) * x.at(c, y, xx);
            }
        out.at(o, oy, ox) = static_cast<float>(s);
      }
  return out;
}

}  // namespace

TEST_CASE("tensor construction and shape errors") {
  Tensor t({2, 3, 4}, 1.5f);
  CHECK(t.size() == 24);
  CHECK(t.dim(2) == 4);
  CHECK_THROWS_AS(t.dim(3), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>(3)), ShapeError);
  CHECK_THROWS_AS(t.reshaped({5, 5}), ShapeError);
  CHECK(t.reshaped({24}).shape() == Shape{24});
  CHECK_THROWS_AS(require_same_shape(t, Tensor({2, 3}), "op"), ShapeError);
  try {
    require_same_shape(t, Tensor({2, 3}), "myop");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("myop") != std::string::npos);
  }
}

TEST_CASE("non-finite values are rejected") {
  CHECK_THROWS_AS(Tensor({2}, std::numeric_limits<float>::infinity()), NonFiniteError);
  Tensor t({3});
  t[1] = std::nanf("");
  CHECK_THROWS_AS(t.check_finite(), NonFiniteError);
#ifdef NOC_CHECKED_TENSORS
  CHECK_THROWS_AS(Tensor({2}, std::vector<float>{1.0f, std::nanf("")}), NonFiniteError);
#endif
}

TEST_CASE("tensor blob round trip and malformed blobs") {
  Rng rng(3);
  const Tensor t = random_tensor({2, 5, 3}, rng);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 4) == "NOCT");
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 30 * 4);
  std::stringstream in(bytes);
  CHECK(read_tensor(in) == t);

  std::stringstream bad_magic("NOPE" + bytes.substr(4));
  CHECK_THROWS_AS(read_tensor(bad_magic), FormatError);
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  CHECK_THROWS_AS(read_tensor(truncated), FormatError);
  std::stringstream short_header(bytes.substr(0, 6));
  CHECK_THROWS_AS(read_tensor(short_header), FormatError);

  const auto path = std::filesystem::temp_directory_path() / "noc_tensor_test.noct";
  save_tensor(path, t);
  CHECK(load_tensor(path) == t);
  CHECK(peek_tensor_shape(path) == t.shape());
  std::filesystem::remove(path);
  CHECK_THROWS(load_tensor(path));
}

TEST_CASE("conv matches the direct loop") {
  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    Rng rng(seed);
    ConvParams p;
    const std::size_t cin = pick(rng, 1, 4), cout = pick(rng, 1, 4), k = pick(rng, 1, 3);
    p.stride = pick(rng, 1, 3);
    p.dilation = pick(rng, 1, 3);
    p.padding = pick(rng, 0, 3);
    p.kernel = random_tensor({cout, cin, k, k}, rng);
    p.bias = random_tensor({cout}, rng);
    const Tensor x = random_tensor({cin, pick(rng, 8, 12), pick(rng, 8, 12)}, rng);
    const Tensor a = conv2d_forward(x, p), b = conv_naive(x, p);
    REQUIRE(a.shape() == b.shape());
    CHECK(max_abs_diff(a, b) < 1e-5f);
  }
}

TEST_CASE("conv shape errors") {
  ConvParams p;
  p.kernel = Tensor({2, 3, 3, 3});
  p.bias = Tensor({2});
  CHECK_THROWS_AS(conv2d_forward(Tensor({2, 8, 8}), p), ShapeError);
  p.dilation = 4;
  CHECK_THROWS_AS(conv2d_forward(Tensor({3, 8, 8}), p), ShapeError);
  p.dilation = 1;
  p.bias = Tensor({3});
  CHECK_THROWS_AS(conv2d_forward(Tensor({3, 8, 8}), p), ShapeError);
  CHECK(conv_output_extent(7, 3, 2, 1, 1, "h") == 4);
  CHECK(conv_output_extent(9, 3, 1, 0, 2, "h") == 5);
  CHECK_THROWS_AS(conv_output_extent(2, 3, 1, 0, 1, "h"), ShapeError);
  CHECK_THROWS_AS(fc_forward(Tensor({4}), Tensor({2, 5}), Tensor({2})), ShapeError);
}

TEST_CASE("finite differences, every layer, 20+ seeds") {
  SuiteResult conv, fc, rl, xent, mx, pool;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    grad_conv(seed, conv);
    grad_fc(seed, fc);
    grad_relu(seed, rl);
    grad_xent(seed, xent);
    grad_max(seed, mx);
    grad_maxpool(seed, pool);
  }
  CHECK_MESSAGE(conv.ok(), conv.first_failure);
  CHECK_MESSAGE(fc.ok(), fc.first_failure);
  CHECK_MESSAGE(rl.ok(), rl.first_failure);
  CHECK_MESSAGE(xent.ok(), xent.first_failure);
  CHECK_MESSAGE(mx.ok(), mx.first_failure);
  CHECK_MESSAGE(pool.ok(), pool.first_failure);
}

TEST_CASE("conv with dilation is covered by the gradient seeds") {
  std::size_t dilated = 0;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) {
    Rng rng(seed);
    pick(rng, 1, 3), pick(rng, 1, 3), pick(rng, 0, 1), pick(rng, 1, 2);
    dilated += pick(rng, 1, 3) > 1;
  }
  CHECK(dilated >= 5);
}

TEST_CASE("relu subgradient at zero is zero") {
  const Tensor x({3}, std::vector<float>{-1.0f, 0.0f, 2.0f});
  const Tensor g = relu_backward(x, Tensor({3}, 1.0f));
  CHECK(g[0] == 0.0f);
  CHECK(g[1] == 0.0f);
  CHECK(g[2] == 1.0f);
}

TEST_CASE("softmax xent is stable and validates the label") {
  const Tensor big({3}, std::vector<float>{1000.0f, 0.0f, -1000.0f});
  const auto r = softmax_xent(big, 0);
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(0.0).epsilon(1e-9));
  const auto r2 = softmax_xent(big, 2);
  CHECK(r2.loss == doctest::Approx(2000.0));
  double s = 0.0;
  for (float v : r2.d_logits.data()) s += v;
  CHECK(std::abs(s) < 1e-6);
  CHECK_THROWS_AS(softmax_xent(big, 3), std::out_of_range);
  const auto p = softmax(Tensor({4}, 2.0f));
  for (double v : p) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("elementwise max ties route to the first operand") {
  const Tensor a({2}, std::vector<float>{1.0f, 3.0f});
  const Tensor b({2}, std::vector<float>{1.0f, 4.0f});
  const auto [ga, gb] = elementwise_max_backward(a, b, Tensor({2}, std::vector<float>{5.0f, 7.0f}));
  CHECK(ga[0] == 5.0f);
  CHECK(gb[0] == 0.0f);
  CHECK(ga[1] == 0.0f);
  CHECK(gb[1] == 7.0f);
  CHECK(elementwise_max(a, b)[1] == 4.0f);
  CHECK_THROWS_AS(elementwise_max(a, Tensor({3})), ShapeError);
}

TEST_CASE("maxpool ties pick the smallest index") {
  const Tensor x({1, 2, 2}, 1.0f);
  const auto r = maxpool2d_forward(x, 2, 2);
  CHECK(r.argmax[0] == 0);
  const Tensor g = maxpool2d_backward(x.shape(), r.argmax, Tensor({1, 1, 1}, 3.0f));
  CHECK(g[0] == 3.0f);
  CHECK(g[1] == 0.0f);
}
