#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "suites.hpp"

using namespace noc;
using namespace noc::testing;

namespace {

FeaturePyramid fake_pyramid(const std::vector<double>& scales) {
  FeaturePyramid p;
  for (double s : scales) p.levels.push_back({s, Tensor({1, 1, 1}), 4});
  return p;
}

}  // namespace

TEST_CASE("regions") {
  const Region r = make_region(1, 2, 5, 4);
  CHECK(r.area() == 8.0);
  CHECK_THROWS_AS(make_region(3, 0, 3, 4), std::invalid_argument);
  CHECK_THROWS_AS(make_region(0, 5, 3, 4), std::invalid_argument);
  const Region c = clip_region({-2, -1, 20, 7}, 10, 5);
  CHECK(c == Region{0, 0, 10, 5});
  CHECK_FALSE(clip_region({12, 0, 15, 3}, 10, 5).valid());
}

TEST_CASE("backbone geometry") {
  Rng rng(1);
  const Backbone b = make_backbone({3, {4, 6, 8}, 0.0}, rng);
  CHECK(b.stride() == 4);
  CHECK(b.channels() == 8);
  CHECK(b.in_channels() == 3);
  const Tensor out = b.forward(Tensor({3, 20, 16}, 0.5f));
  CHECK(out.shape() == Shape{8, 5, 4});
  CHECK(b.output_extent(20) == 5);
  CHECK_FALSE(b.output_extent(b.min_input_extent() - 1).has_value());
  CHECK(b.output_extent(b.min_input_extent()).has_value());
  CHECK_THROWS(make_backbone({3, {}, 0.0}, rng));
}

TEST_CASE("backbone backward matches finite differences") {
  SuiteResult r;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng rng(seed);
    Backbone b = make_backbone({2, {3, 3}, 0.0}, rng);
    Tensor img = random_tensor({2, 8, 8}, rng);
    const BackboneTrace tr = backbone_forward_traced(b, img);
    CHECK(tr.output == b.forward(img));
    const Tensor w = random_tensor(tr.output.shape(), rng);
    const auto grads = backbone_backward(b, tr, w);
    auto loss = [&] { return weighted_sum(b.forward(img), w); };
    for (std::size_t i = 0; i < b.layers.size(); ++i) {
      if (auto* conv = std::get_if<ConvLayer>(&b.layers[i])) {
        r.absorb(check_gradient(conv->params.kernel, grads[i].d_weights, loss, rng, 30), 1e-3, "kernel");
        r.absorb(check_gradient(conv->params.bias, grads[i].d_bias, loss, rng, 30), 1e-3, "bias");
      }
    }
  }
  CHECK_MESSAGE(r.ok(), r.first_failure);
}

TEST_CASE("a trous output on the coarse grid equals the original") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) CHECK(atrous_gap(seed) <= 1e-5);
  Rng rng(4);
  const Backbone b = make_backbone({3, {4, 4, 4}, 0.0}, rng);
  const Backbone t = atrous_transform(b);
  CHECK(t.stride() == b.stride() / 2);
  const Backbone single = make_backbone({3, {4}, 0.0}, rng);
  CHECK_THROWS_AS(atrous_transform(single), std::invalid_argument);
}

TEST_CASE("backbone save and load") {
  Rng rng(9);
  const Backbone b = atrous_transform(make_backbone({3, {4, 5, 6}, 0.0}, rng));
  const auto dir = std::filesystem::temp_directory_path() / "noc_backbone_test";
  std::filesystem::remove_all(dir);
  save_backbone(dir, b);
  const Backbone c = load_backbone(dir);
  const Tensor img = random_tensor({3, 17, 13}, rng);
  CHECK(b.forward(img) == c.forward(img));
  CHECK(c.stride() == b.stride());
  std::filesystem::remove_all(dir);
  CHECK_THROWS(load_backbone(dir));
}

TEST_CASE("bilinear resize") {
  const Tensor flat({2, 5, 7}, 0.3f);
  const Tensor r = resize_bilinear(flat, 11, 3);
  CHECK(r.shape() == Shape{2, 11, 3});
  for (float v : r.data()) CHECK(v == doctest::Approx(0.3f));
  Rng rng(2);
  const Tensor img = random_tensor({1, 6, 6}, rng);
  CHECK(resize_bilinear(img, 6, 6) == img);
  CHECK_THROWS_AS(resize_bilinear(img, 0, 3), ShapeError);
  CHECK(crop_resize(img, {0, 0, 6, 6}, 6) == img);
  CHECK_THROWS(crop_resize(img, {7, 7, 9, 9}, 4));
}

TEST_CASE("build_pyramid validation and shapes") {
  Rng rng(5);
  const Backbone b = make_backbone({3, {4, 4}, 0.0}, rng);
  const Tensor img = random_tensor({3, 32, 24}, rng);
  const FeaturePyramid p = build_pyramid(img, b, {0.5, 1.0, 1.5});
  REQUIRE(p.levels.size() == 3);
  CHECK(p.levels[1].map.shape() == Shape{4, 16, 12});
  CHECK(p.levels[2].map.dim(1) == 24);
  CHECK(p.source_h == 32);
  CHECK_THROWS(build_pyramid(img, b, {}));
  CHECK_THROWS(build_pyramid(img, b, {1.0, 1.0}));
  CHECK_THROWS(build_pyramid(img, b, {2.0, 1.0}));
  CHECK_THROWS(build_pyramid(img, b, {-1.0}));
  CHECK_THROWS(build_pyramid(img, b, {0.01}));
}

TEST_CASE("scale selection against brute force") {
  const FeaturePyramid p = fake_pyramid({0.5, 1.0, 1.5, 2.0, 3.0});
  Rng rng(6);
  for (int i = 0; i < 500; ++i) {
    const double w = std::uniform_real_distribution<double>(2, 100)(rng);
    const double h = std::uniform_real_distribution<double>(2, 100)(rng);
    const Region r{0, 0, w, h};
    std::size_t best = 0;
    for (std::size_t k = 0; k < p.levels.size(); ++k)
      if (std::abs(p.levels[k].scale * std::sqrt(w * h) - 48) <
          std::abs(p.levels[best].scale * std::sqrt(w * h) - 48))
        best = k;
    CHECK(select_scale(r, p, 48) == best);
    const auto [lo, hi] = select_adjacent_scales(r, p, 48);
    CHECK(hi == lo + 1);
    CHECK((lo == best || hi == best));
  }
  // side 32: scale 1 gives 32, scale 2 gives 64, both 16 from 48 -> lower wins
  const FeaturePyramid two = fake_pyramid({1.0, 2.0});
  CHECK(select_scale({0, 0, 32, 32}, two, 48) == 0);
  CHECK(select_adjacent_scales({0, 0, 4, 4}, p, 48) == std::pair<std::size_t, std::size_t>{3, 4});
  CHECK(select_adjacent_scales({0, 0, 400, 400}, p, 48) == std::pair<std::size_t, std::size_t>{0, 1});
  // best is level 1 (side 48); neighbours at 24 and 72 are tied -> lower pair
  CHECK(select_adjacent_scales({0, 0, 48, 48}, p, 48) == std::pair<std::size_t, std::size_t>{0, 1});
  CHECK_THROWS(select_adjacent_scales({0, 0, 4, 4}, fake_pyramid({1.0}), 48));
  CHECK_THROWS(select_scale({0, 0, 4, 4}, FeaturePyramid{}, 48));
}

TEST_CASE("region projection rounds outward and clips") {
  const MapWindow w = project_region({3, 5, 9, 13}, 4, 10, 10);
  CHECK(w.x0 == 0);
  CHECK(w.y0 == 1);
  CHECK(w.x1 == 3);
  CHECK(w.y1 == 4);
  const MapWindow c = project_region({-8, -8, 100, 100}, 4, 6, 7);
  CHECK(c.x0 == 0);
  CHECK(c.x1 == 7);
  CHECK(c.y1 == 6);
}

TEST_CASE("roi pooling equals the brute-force oracle on a 9x9 map") {
  const RoiOracleResult r = roi_oracle_exhaustive(11, {1, 2, 3, 6, 7});
  CHECK(r.regions == 2 * 5 * 45 * 45);
  CHECK_MESSAGE(r.mismatches == 0, r.first);
}

TEST_CASE("roi pooling errors and ties") {
  const Tensor map({1, 4, 4}, 2.0f);
  const PooledFeature p = roi_pool(map, {0, 0, 4, 4}, 1, 2);
  CHECK(p.argmax == std::vector<std::uint32_t>{0, 2, 8, 10});
  try {
    roi_pool(map, {20, 20, 30, 30}, 1, 2);
    FAIL("expected RoiPoolError");
  } catch (const RoiPoolError& e) {
    CHECK(e.stride == 1.0);
    CHECK(e.region.x1 == 20);
  }
  CHECK_THROWS(roi_pool(map, {0, 0, 4, 4}, 1, 0));
  CHECK_THROWS_AS(roi_pool_backward(p, Tensor({1, 3, 3}), map.shape()), ShapeError);
}

TEST_CASE("roi pooling gradient at untied points") {
  SuiteResult r;
  for (std::uint64_t seed = 1; seed <= 24; ++seed) grad_roi(seed, r);
  CHECK_MESSAGE(r.ok(), r.first_failure);
}

TEST_CASE("roi_pool_level scales the region into level coordinates") {
  Rng rng(8);
  PyramidLevel level{2.0, random_tensor({2, 10, 10}, rng), 2};
  const Region img_region{1, 1, 7, 9};
  const PooledFeature a = roi_pool_level(level, img_region, 3);
  const PooledFeature b = roi_pool(level.map, {2, 2, 14, 18}, 2, 3);
  CHECK(a.data == b.data);
  CHECK(a.argmax == b.argmax);
}
