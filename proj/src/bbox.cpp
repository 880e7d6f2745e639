#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "noc/train.hpp"

namespace noc {

namespace {

// Largest log-scale change allowed when decoding (a 1000/16 size ratio).
const double kMaxLogScale = std::log(1000.0 / 16.0);

}  // namespace

BoxDeltas encode_box(const Region& target, const Region& proposal) {
  const double pw = proposal.width(), ph = proposal.height();
  const double px = proposal.x1 + 0.5 * pw, py = proposal.y1 + 0.5 * ph;
  const double gw = target.width(), gh = target.height();
  const double gx = target.x1 + 0.5 * gw, gy = target.y1 + 0.5 * gh;
  return {(gx - px) / pw, (gy - py) / ph, std::log(gw / pw), std::log(gh / ph)};
}

Region decode_box(const BoxDeltas& d, const Region& proposal) {
  const double pw = proposal.width(), ph = proposal.height();
  const double px = proposal.x1 + 0.5 * pw, py = proposal.y1 + 0.5 * ph;
  const double cx = px + d.dx * pw, cy = py + d.dy * ph;
  const double w = pw * std::exp(std::min(d.dw, kMaxLogScale));
  const double h = ph * std::exp(std::min(d.dh, kMaxLogScale));
  return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
}

BoxDeltas BBoxRegressor::predict(std::size_t category, const Tensor& feature) const {
  if (category >= weights.size() || !present[category]) return {};
  if (feature.size() != dim)
    throw ShapeError("BBoxRegressor: feature has " + std::to_string(feature.size()) + " entries, expected " +
                     std::to_string(dim));
  const auto& w = weights[category];
  double out[4];
  for (std::size_t k = 0; k < 4; ++k) {
    const double* row = w.data() + k * (dim + 1);
    double acc = row[dim];
    for (std::size_t j = 0; j < dim; ++j) acc += row[j] * feature[j];
    out[k] = acc;
  }
  return {out[0], out[1], out[2], out[3]};
}

BBoxRegressor train_bbox_regressor(const std::vector<Tensor>& features, const std::vector<Region>& proposals,
                                   const std::vector<Region>& matched_gt, const std::vector<std::size_t>& categories,
                                   std::size_t n_categories, double lambda) {
  const std::size_t n = features.size();
  if (proposals.size() != n || matched_gt.size() != n || categories.size() != n)
    throw std::invalid_argument("train_bbox_regressor: input lists differ in length");
  if (!(lambda > 0)) throw std::invalid_argument("train_bbox_regressor: lambda must be positive");
  BBoxRegressor reg;
  reg.lambda = lambda;
  reg.dim = n ? features[0].size() : 0;
  reg.weights.assign(n_categories, {});
  reg.present.assign(n_categories, false);
  const std::size_t d1 = reg.dim + 1;

  for (std::size_t c = 0; c < n_categories; ++c) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < n; ++i)
      if (categories[i] == c) rows.push_back(i);
    if (rows.empty()) continue;
    Eigen::MatrixXd X(rows.size(), d1);
    Eigen::MatrixXd T(rows.size(), 4);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const std::size_t i = rows[r];
      if (features[i].size() != reg.dim) throw ShapeError("train_bbox_regressor: features differ in length");
      for (std::size_t j = 0; j < reg.dim; ++j) X(r, j) = features[i][j];
      X(r, reg.dim) = 1.0;
      const BoxDeltas t = encode_box(matched_gt[i], proposals[i]);
      T.row(r) << t.dx, t.dy, t.dw, t.dh;
    }
    // Solve in whichever space is smaller (primal d1 x d1 or dual n x n).
    Eigen::MatrixXd W;  // d1 x 4
    if (rows.size() < d1) {
      Eigen::MatrixXd K = X * X.transpose();
      K.diagonal().array() += lambda;
      W = X.transpose() * K.ldlt().solve(T);
    } else {
      Eigen::MatrixXd A = X.transpose() * X;
      A.diagonal().array() += lambda;
      W = A.ldlt().solve(X.transpose() * T);
    }
    auto& w = reg.weights[c];
    w.resize(4 * d1);
    for (std::size_t k = 0; k < 4; ++k)
      for (std::size_t j = 0; j < d1; ++j) w[k * d1 + j] = W(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(k));
    reg.present[c] = true;
  }
  return reg;
}

Region apply_bbox(const BBoxRegressor& reg, std::size_t category, const Tensor& feature, const Region& proposal,
                  double image_w, double image_h) {
  const Region moved = clip_region(decode_box(reg.predict(category, feature), proposal), image_w, image_h);
  if (moved.valid()) return moved;
  return clip_region(proposal, image_w, image_h);
}

}  // namespace noc
