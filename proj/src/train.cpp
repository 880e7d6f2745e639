#include "noc/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace noc {

double iou(const Region& a, const Region& b) {
  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0 || iy <= 0) return 0.0;
  const double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

std::vector<LabeledProposal> assign_labels(const std::vector<Region>& proposals,
                                           const std::vector<GroundTruth>& ground_truth, std::size_t n_categories,
                                           double pos_thresh, double neg_thresh) {
  if (!(0.0 <= neg_thresh && neg_thresh <= pos_thresh && pos_thresh <= 1.0))
    throw std::invalid_argument("assign_labels: need 0 <= neg_thresh <= pos_thresh <= 1");
  std::vector<LabeledProposal> out;
  out.reserve(proposals.size());
  for (const auto& p : proposals) {
    LabeledProposal lp;
    lp.region = p;
    lp.label = n_categories;
    double best = 0.0;
    for (std::size_t g = 0; g < ground_truth.size(); ++g) {
      const double v = iou(p, ground_truth[g].region);
      // Ties resolve to the lower category, then lower index, so the result
      // does not depend on ground-truth order.
      if (v > best || (v == best && v > 0.0 && lp.matched_gt &&
                       ground_truth[g].category < ground_truth[*lp.matched_gt].category)) {
        best = v;
        lp.matched_gt = g;
      }
    }
    lp.iou = best;
    if (lp.matched_gt && best >= pos_thresh) {
      lp.label = ground_truth[*lp.matched_gt].category;
    } else if (best < neg_thresh) {
      lp.label = n_categories;
    } else {
      lp.ignored = true;
    }
    out.push_back(lp);
  }
  return out;
}

RoiInputs pool_inputs(const FeaturePyramid& pyramid, const Region& region, const PoolingConfig& pooling, bool dual) {
  RoiInputs in;
  if (dual) {
    const auto [lo, hi] = select_adjacent_scales(region, pyramid, pooling.target_extent);
    in.a = roi_pool_level(pyramid.levels[lo], region, pooling.m).data;
    in.b = roi_pool_level(pyramid.levels[hi], region, pooling.m).data;
  } else {
    const std::size_t s = select_scale(region, pyramid, pooling.target_extent);
    in.a = roi_pool_level(pyramid.levels[s], region, pooling.m).data;
  }
  return in;
}

void TrainConfig::validate() const {
  if (!(positive_fraction > 0.0 && positive_fraction < 1.0))
    throw std::invalid_argument("positive_fraction must be in (0, 1)");
  if (images_per_batch == 0 || rois_per_image == 0) throw std::invalid_argument("empty minibatch configuration");
  if (base_lr < 0.0) throw std::invalid_argument("learning rate must be non-negative");
}

std::vector<std::pair<std::size_t, std::size_t>> probe_subset(const std::vector<TrainImage>& images,
                                                              std::size_t max_rois) {
  std::vector<std::pair<std::size_t, std::size_t>> all;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t r = 0; r < images[i].rois.size(); ++r)
      if (!images[i].rois[r].ignored) all.emplace_back(i, r);
  if (max_rois == 0 || all.size() <= max_rois) return all;
  std::vector<std::pair<std::size_t, std::size_t>> out;
  out.reserve(max_rois);
  for (std::size_t k = 0; k < max_rois; ++k) out.push_back(all[(k * all.size()) / max_rois]);
  return out;
}

double mean_loss(const NocNet& net, const std::vector<TrainImage>& images, const PoolingConfig& pooling,
                 const std::vector<std::pair<std::size_t, std::size_t>>& which) {
  if (which.empty()) return 0.0;
  double total = 0.0;
  for (const auto& [i, r] : which) {
    const auto& roi = images[i].rois[r];
    const RoiInputs in = pool_inputs(*images[i].pyramid, roi.region, pooling, net.has_maxout());
    total += softmax_xent(noc_forward(net, in.a, in.second()).logits, roi.label).loss;
  }
  return total / static_cast<double>(which.size());
}

TrainResult sgd_train(NocNet& net, const std::vector<TrainImage>& images, const PoolingConfig& pooling,
                      const TrainConfig& config) {
  config.validate();
  if (images.empty()) throw std::invalid_argument("sgd_train: empty dataset");
  const bool dual = net.has_maxout();

  std::vector<std::vector<std::size_t>> pos(images.size()), neg(images.size());
  std::size_t n_rois = 0;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (!images[i].pyramid) throw std::invalid_argument("sgd_train: image without pyramid");
    for (std::size_t r = 0; r < images[i].rois.size(); ++r) {
      const auto& roi = images[i].rois[r];
      if (roi.ignored) continue;
      (roi.label < net.spec.n_categories ? pos[i] : neg[i]).push_back(r);
      ++n_rois;
    }
  }
  if (n_rois == 0) throw std::invalid_argument("sgd_train: no labelled RoIs");

  Rng rng(config.seed);
  const auto probe = probe_subset(images, config.probe_rois);
  TrainResult result;
  result.loss_curve.push_back(mean_loss(net, images, pooling, probe));

  NocGrads velocity = zero_grads(net);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);
  const auto pos_quota =
      static_cast<std::size_t>(std::floor(config.positive_fraction * static_cast<double>(config.rois_per_image) + 0.5));

  double lr = config.base_lr;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    if (std::find(config.lr_decay_epochs.begin(), config.lr_decay_epochs.end(), epoch) !=
        config.lr_decay_epochs.end())
      lr *= config.lr_gamma;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    std::size_t epoch_count = 0;

    for (std::size_t start = 0; start < order.size(); start += config.images_per_batch) {
      const std::size_t end = std::min(order.size(), start + config.images_per_batch);
      NocGrads batch = zero_grads(net);
      std::size_t batch_count = 0;
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t img = order[k];
        std::vector<std::size_t> p = pos[img], n = neg[img];
        std::shuffle(p.begin(), p.end(), rng);
        std::shuffle(n.begin(), n.end(), rng);
        p.resize(std::min(p.size(), pos_quota));
        n.resize(std::min(n.size(), config.rois_per_image - p.size()));
        p.insert(p.end(), n.begin(), n.end());
        for (std::size_t r : p) {
          const auto& roi = images[img].rois[r];
          const RoiInputs in = pool_inputs(*images[img].pyramid, roi.region, pooling, dual);
          const NocForward fwd = noc_forward(net, in.a, in.second());
          const XentResult xe = softmax_xent(fwd.logits, roi.label);
          batch_loss += xe.loss;
          const NocGrads g = noc_backward(net, fwd.cache, xe.d_logits);
          for (std::size_t l = 0; l < net.layers.size(); ++l) {
            auto bw = batch.d_weights[l].data();
            const auto gw = g.d_weights[l].data();
            for (std::size_t i = 0; i < bw.size(); ++i) bw[i] += gw[i];
            auto bb = batch.d_bias[l].data();
            const auto gb = g.d_bias[l].data();
            for (std::size_t i = 0; i < bb.size(); ++i) bb[i] += gb[i];
          }
          ++batch_count;
        }
      }
      if (batch_count == 0) continue;
      ++result.steps;
      if (!std::isfinite(batch_loss)) {
        std::ostringstream os;
        os << "training diverged at step " << result.steps << " (lr " << lr << ")";
        throw TrainingDivergedError(os.str(), result.steps, lr);
      }
      epoch_loss += batch_loss;
      epoch_count += batch_count;

      const double scale = 1.0 / static_cast<double>(batch_count);
      auto step = [&](Tensor& param, Tensor& vel, const Tensor& grad) {
        for (std::size_t i = 0; i < param.size(); ++i) {
          const double g = grad[i] * scale + config.weight_decay * param[i];
          vel[i] = static_cast<float>(config.momentum * vel[i] - lr * g);
          param[i] += vel[i];
        }
      };
      for (std::size_t l = 0; l < net.layers.size(); ++l) {
        step(net.layers[l].weights(), velocity.d_weights[l], batch.d_weights[l]);
        step(net.layers[l].bias(), velocity.d_bias[l], batch.d_bias[l]);
      }
    }
    result.epoch_train_loss.push_back(epoch_count ? epoch_loss / static_cast<double>(epoch_count) : 0.0);
    const double probe_loss = mean_loss(net, images, pooling, probe);
    if (!std::isfinite(probe_loss)) {
      std::ostringstream os;
      os << "training diverged after epoch " << epoch << " (step " << result.steps << ", lr " << lr << ")";
      throw TrainingDivergedError(os.str(), result.steps, lr);
    }
    result.loss_curve.push_back(probe_loss);
  }
  return result;
}

Tensor head_feature(const NocNet& net, const RoiInputs& in) {
  if (net.spec.fc_count() >= 2) return extract_features(net, in.a, in.second());
  if (in.b) return elementwise_max(in.a, *in.b).reshaped({in.a.size()});
  return in.a.reshaped({in.a.size()});
}

std::vector<std::vector<Detection>> score_regions(const NocNet& net, const SvmHead* svm,
                                                  const FeaturePyramid& pyramid, const std::vector<Region>& regions,
                                                  std::size_t image_id, const PoolingConfig& pooling,
                                                  ScoreMode mode) {
  const std::size_t n = net.spec.n_categories;
  if (mode == ScoreMode::Svm && !svm) throw std::invalid_argument("score_regions: SVM mode without an SVM head");
  if (mode == ScoreMode::Svm && svm->n_categories() != n)
    throw std::invalid_argument("score_regions: SVM head category count does not match the network");
  std::vector<std::vector<Detection>> out(n);
  for (const auto& r : regions) {
    const RoiInputs in = pool_inputs(pyramid, r, pooling, net.has_maxout());
    if (mode == ScoreMode::Svm) {
      const Tensor f = head_feature(net, in);
      for (std::size_t c = 0; c < n; ++c)
        if (svm->present[c]) out[c].push_back({image_id, c, r, svm->decision(c, f)});
    } else {
      const auto p = softmax(noc_forward(net, in.a, in.second()).logits);
      for (std::size_t c = 0; c < n; ++c) out[c].push_back({image_id, c, r, p[c]});
    }
  }
  return out;
}

}  // namespace noc
