#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "suites.hpp"
#include "noc/train.hpp"

using namespace noc;
using namespace noc::testing;

namespace {

// Two-level pyramid of random maps; stride 2, 16x16 cells.
FeaturePyramid toy_pyramid(Rng& rng) {
  FeaturePyramid p;
  p.source_h = p.source_w = 32;
  p.levels.push_back({1.0, random_tensor({3, 16, 16}, rng, 0, 1), 2});
  p.levels.push_back({1.5, random_tensor({3, 24, 24}, rng, 0, 1), 2});
  return p;
}

std::vector<TrainImage> toy_images(const std::vector<FeaturePyramid>& pyrs, Rng& rng) {
  std::vector<TrainImage> out;
  for (const auto& p : pyrs) {
    TrainImage t;
    t.pyramid = &p;
    for (int k = 0; k < 6; ++k) {
      LabeledProposal lp;
      const double x = std::uniform_real_distribution<double>(0, 20)(rng);
      const double y = std::uniform_real_distribution<double>(0, 20)(rng);
      lp.region = {x, y, x + 10, y + 10};
      lp.label = static_cast<std::size_t>(k % 3);  // 2 == background
      t.rois.push_back(lp);
    }
    out.push_back(t);
  }
  return out;
}

double brute_svm_1d(const std::vector<std::vector<double>>& x, const std::vector<int>& y, double C) {
  double best = 1e300;
  for (double w = -6; w <= 6; w += 0.01)
    for (double b = -3; b <= 3; b += 0.01) best = std::min(best, svm_primal_objective({w}, b, x, y, C));
  return best;
}

}  // namespace

TEST_CASE("iou") {
  CHECK(iou({0, 0, 2, 2}, {1, 1, 3, 3}) == doctest::Approx(1.0 / 7.0));
  CHECK(iou({0, 0, 2, 2}, {0, 0, 2, 2}) == 1.0);
  CHECK(iou({0, 0, 1, 1}, {1, 0, 2, 1}) == 0.0);
  CHECK(iou({0, 0, 1, 1}, {5, 5, 6, 6}) == 0.0);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    std::uniform_real_distribution<double> u(0, 10);
    const double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const Region r{a, b, a + 1 + c, b + 1 + d};
    const Region s{c, d, c + 1 + a, d + 1 + b};
    CHECK(iou(r, s) == doctest::Approx(iou(s, r)));
    CHECK(iou(r, s) >= 0.0);
    CHECK(iou(r, s) <= 1.0);
  }
}

TEST_CASE("label assignment thresholds") {
  const std::vector<GroundTruth> gts{{0, 1, {0, 0, 10, 10}}, {0, 0, {20, 20, 30, 30}}};
  const std::vector<Region> props{{0, 0, 10, 10}, {0, 0, 10, 6}, {0, 0, 10, 3}, {50, 50, 60, 60}, {21, 20, 31, 30}};
  const auto l = assign_labels(props, gts, 2);
  CHECK(l[0].label == 1);
  CHECK(l[0].matched_gt == 0u);
  CHECK(l[1].label == 1);  // iou 0.6
  CHECK(l[2].ignored);  // iou exactly 0.3 sits in the ignored band [0.3, 0.5)
  CHECK(l[3].label == 2);
  CHECK_FALSE(l[3].matched_gt.has_value());
  CHECK(l[4].label == 0);
  const auto mid = assign_labels({{0, 0, 10, 4}}, gts, 2);
  CHECK(mid[0].ignored);
  CHECK_THROWS(assign_labels(props, gts, 2, 0.3, 0.5));
}

TEST_CASE("label ties go to the lower category regardless of gt order") {
  const Region box{0, 0, 10, 10};
  const std::vector<GroundTruth> a{{0, 3, box}, {0, 1, box}};
  const std::vector<GroundTruth> b{{0, 1, box}, {0, 3, box}};
  CHECK(assign_labels({box}, a, 4)[0].label == 1);
  CHECK(assign_labels({box}, b, 4)[0].label == 1);
}

TEST_CASE("pool_inputs picks one or two scales") {
  Rng rng(2);
  const FeaturePyramid p = toy_pyramid(rng);
  const PoolingConfig cfg{3, 16.0};
  const RoiInputs one = pool_inputs(p, {0, 0, 12, 12}, cfg, false);
  CHECK(one.a.shape() == Shape{3, 3, 3});
  CHECK_FALSE(one.b.has_value());
  const RoiInputs two = pool_inputs(p, {0, 0, 12, 12}, cfg, true);
  REQUIRE(two.b.has_value());
  CHECK(two.a == roi_pool_level(p.levels[0], {0, 0, 12, 12}, 3).data);
  CHECK(*two.b == roi_pool_level(p.levels[1], {0, 0, 12, 12}, 3).data);
}

TEST_CASE("sgd overfits a tiny set and is deterministic") {
  Rng rng(3);
  std::vector<FeaturePyramid> pyrs;
  for (int i = 0; i < 2; ++i) pyrs.push_back(toy_pyramid(rng));
  const auto images = toy_images(pyrs, rng);
  TrainConfig cfg;
  cfg.base_lr = 0.05;
  cfg.epochs = 150;
  cfg.rois_per_image = 6;
  cfg.positive_fraction = 0.5;
  cfg.weight_decay = 0.0;
  const PoolingConfig pool{3, 16.0};
  Rng init(4);
  const NocNet start = build_noc(parse_spec("f32-f3", 2), {3, 3, 3}, GaussianInit{0.0, 0.0}, init);
  NocNet a = start, b = start;
  const TrainResult ra = sgd_train(a, images, pool, cfg);
  const TrainResult rb = sgd_train(b, images, pool, cfg);
  CHECK(ra.loss_curve == rb.loss_curve);
  for (std::size_t l = 0; l < a.layers.size(); ++l) CHECK(a.layers[l].weights() == b.layers[l].weights());
  CHECK(ra.loss_curve.size() == cfg.epochs + 1);
  CHECK(ra.loss_curve.front() > 0.5);
  CHECK(ra.loss_curve.back() < 0.1);

  NocNet mo = build_noc(parse_spec("mo-f32-f3", 2), {3, 3, 3}, GaussianInit{0.0, 0.0}, init);
  const TrainResult rm = sgd_train(mo, images, pool, cfg);
  CHECK(rm.loss_curve.back() < rm.loss_curve.front());

  TrainConfig bad = cfg;
  bad.positive_fraction = 1.0;
  CHECK_THROWS(sgd_train(a, images, pool, bad));
  CHECK_THROWS(sgd_train(a, {}, pool, cfg));
}

TEST_CASE("divergence is reported") {
  Rng rng(5);
  std::vector<FeaturePyramid> pyrs{toy_pyramid(rng)};
  auto images = toy_images(pyrs, rng);
  TrainConfig cfg;
  cfg.base_lr = 1e6;
  cfg.epochs = 20;
  Rng init(6);
  NocNet net = build_noc(parse_spec("f64-f64-f3", 2), {3, 3, 3}, GaussianInit{0.0, 0.0}, init);
  CHECK_THROWS_AS(sgd_train(net, images, {3, 16.0}, cfg), TrainingDivergedError);
}

TEST_CASE("svm reaches the primal optimum on 1-d problems") {
  for (std::uint64_t seed = 1; seed <= 6; ++seed) {
    Rng rng(seed);
    std::vector<Tensor> f;
    std::vector<std::size_t> labels;
    std::vector<std::vector<double>> x;
    std::vector<int> y;
    for (int i = 0; i < 14; ++i) {
      const bool pos = i % 2 == 0;
      const double v = std::normal_distribution<double>(pos ? 1.0 : -0.5, 0.8)(rng);
      f.push_back(Tensor({1}, static_cast<float>(v)));
      labels.push_back(pos ? 0 : 1);
      x.push_back({static_cast<double>(static_cast<float>(v))});
      y.push_back(pos ? 1 : -1);
    }
    SvmConfig cfg;
    cfg.tolerance = 1e-8;
    cfg.max_epochs = 100000;
    cfg.target_norm = 0;
    const SvmHead h = train_svm(f, labels, 2, cfg);
    const double got = svm_primal_objective(h.weights[0], h.bias[0], x, y, cfg.C);
    const double best = brute_svm_1d(x, y, cfg.C);
    CHECK(got <= best + 1e-6);
    CHECK(got >= best - 0.05);
  }
}

TEST_CASE("svm: duplicated samples at C/2 give the same solution; dual decreases") {
  Rng rng(7);
  std::vector<Tensor> f;
  std::vector<std::size_t> labels;
  for (int i = 0; i < 40; ++i) {
    f.push_back(random_tensor({5}, rng));
    labels.push_back(f.back()[0] + 0.3f * f.back()[1] > 0 ? 0 : 1);
  }
  SvmConfig cfg;
  cfg.C = 2.0;
  cfg.tolerance = 1e-9;
  cfg.max_epochs = 200000;
  cfg.target_norm = 0;
  SvmTrace trace;
  const SvmHead one = train_svm(f, labels, 2, cfg, &trace);
  bool monotone = true;
  for (const auto& curve : trace.dual_objective)
    for (std::size_t k = 1; k < curve.size(); ++k) monotone = monotone && curve[k] <= curve[k - 1] + 1e-12;
  CHECK(monotone);

  auto f2 = f;
  f2.insert(f2.end(), f.begin(), f.end());
  auto l2 = labels;
  l2.insert(l2.end(), labels.begin(), labels.end());
  SvmConfig half = cfg;
  half.C = 1.0;
  const SvmHead two = train_svm(f2, l2, 2, half);
  for (std::size_t j = 0; j < 5; ++j) CHECK(two.weights[0][j] == doctest::Approx(one.weights[0][j]).epsilon(1e-4));
  CHECK(two.bias[0] == doctest::Approx(one.bias[0]).epsilon(1e-4));
}

TEST_CASE("svm omits categories without positives and validates input") {
  std::vector<Tensor> f{Tensor({2}, 1.0f), Tensor({2}, -1.0f)};
  SvmTrace tr;
  const SvmHead h = train_svm(f, {0, 3}, 3, {}, &tr);
  CHECK(h.present[0]);
  CHECK_FALSE(h.present[1]);
  CHECK_FALSE(h.present[2]);
  CHECK(tr.warnings.size() == 2);
  CHECK_THROWS(h.decision(1, f[0]));
  CHECK_THROWS(train_svm({}, {}, 2, {}));
  CHECK_THROWS(train_svm(f, {0}, 2, {}));
  SvmConfig c0;
  c0.C = 0;
  CHECK_THROWS(train_svm(f, {0, 1}, 2, c0));
  CHECK_THROWS_AS(h.decision(0, Tensor({3})), ShapeError);
}

TEST_CASE("box encoding round trip and ridge regression") {
  const Region p{10, 10, 30, 20}, g{12, 8, 34, 24};
  const Region back = decode_box(encode_box(g, p), p);
  CHECK(back.x1 == doctest::Approx(g.x1));
  CHECK(back.y2 == doctest::Approx(g.y2));

  // Targets that are an exact linear function of the features.
  Rng rng(8);
  std::vector<Tensor> feats;
  std::vector<Region> props, gts;
  std::vector<std::size_t> cats;
  for (int i = 0; i < 60; ++i) {
    const Tensor f = random_tensor({3}, rng);
    const Region pr{20, 20, 40, 40};
    const BoxDeltas d{0.1 * f[0], -0.05 * f[1], 0.2 * f[2], 0.05};
    feats.push_back(f);
    props.push_back(pr);
    gts.push_back(decode_box(d, pr));
    cats.push_back(0);
  }
  const BBoxRegressor reg = train_bbox_regressor(feats, props, gts, cats, 2, 1e-6);
  CHECK(reg.present[0]);
  CHECK_FALSE(reg.present[1]);
  const BoxDeltas d = reg.predict(0, feats[5]);
  CHECK(d.dx == doctest::Approx(0.1 * feats[5][0]).epsilon(1e-4));
  CHECK(d.dw == doctest::Approx(0.2 * feats[5][2]).epsilon(1e-4));
  const Region moved = apply_bbox(reg, 0, feats[5], props[5], 64, 64);
  CHECK(moved.x1 == doctest::Approx(gts[5].x1).epsilon(1e-3));
  // category without a model leaves the box alone
  CHECK(apply_bbox(reg, 1, feats[5], props[5], 64, 64) == props[5]);
  CHECK_THROWS(train_bbox_regressor(feats, props, gts, cats, 2, 0.0));
}

TEST_CASE("region scoring in both modes") {
  Rng rng(9);
  const FeaturePyramid p = toy_pyramid(rng);
  Rng init(10);
  const NocNet net = build_noc(parse_spec("f8-f3", 2), {3, 3, 3}, GaussianInit{0.0, 0.0}, init);
  const std::vector<Region> regions{{0, 0, 10, 10}, {5, 5, 25, 25}};
  const PoolingConfig pool{3, 16.0};
  const auto soft = score_regions(net, nullptr, p, regions, 7, pool, ScoreMode::Softmax);
  REQUIRE(soft.size() == 2);
  CHECK(soft[0].size() == 2);
  CHECK(soft[1][0].image_id == 7);
  CHECK_THROWS(score_regions(net, nullptr, p, regions, 7, pool, ScoreMode::Svm));
  std::vector<Tensor> f;
  for (const auto& r : regions) f.push_back(head_feature(net, pool_inputs(p, r, pool, false)));
  const SvmHead svm = train_svm(f, {0, 1}, 2, {});
  const auto hard = score_regions(net, &svm, p, regions, 7, pool, ScoreMode::Svm);
  CHECK(hard[0][0].score == doctest::Approx(svm.decision(0, f[0])));
}
