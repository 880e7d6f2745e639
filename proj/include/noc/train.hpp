#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "noc/boxes.hpp"
#include "noc/noc_arch.hpp"
#include "noc/pyramid.hpp"

namespace noc {

// ---------------------------------------------------------------------------
// Proposal labelling
// ---------------------------------------------------------------------------

struct LabeledProposal {
  Region region;
  /// Category index, or `background` (== n_categories) for negatives.
  std::size_t label = 0;
  std::optional<std::size_t> matched_gt;
  double iou = 0.0;
  bool ignored = false;
};

/// Labels each proposal by its max-IoU ground truth: that category when
/// IoU >= pos_thresh, background when IoU < neg_thresh, ignored otherwise.
std::vector<LabeledProposal> assign_labels(const std::vector<Region>& proposals,
                                           const std::vector<GroundTruth>& ground_truth, std::size_t n_categories,
                                           double pos_thresh = 0.5, double neg_thresh = 0.3);

// ---------------------------------------------------------------------------
// RoI inputs
// ---------------------------------------------------------------------------

struct PoolingConfig {
  std::size_t m = 6;
  double target_extent = 64.0;
};

/// RoI-pooled input(s) for one region: the best single scale, or the two
/// adjacent scales (lower scale first) for maxout nets.
struct RoiInputs {
  Tensor a;
  std::optional<Tensor> b;

  const Tensor* second() const { return b ? &*b : nullptr; }
};

RoiInputs pool_inputs(const FeaturePyramid& pyramid, const Region& region, const PoolingConfig& pooling,
                      bool dual);

// ---------------------------------------------------------------------------
// SGD training
// ---------------------------------------------------------------------------

struct TrainImage {
  const FeaturePyramid* pyramid = nullptr;
  std::vector<LabeledProposal> rois;  // ignored proposals are skipped
};

struct TrainConfig {
  double base_lr = 0.01;
  std::vector<std::size_t> lr_decay_epochs;  // lr *= lr_gamma at each listed epoch
  double lr_gamma = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t images_per_batch = 2;
  std::size_t rois_per_image = 64;
  double positive_fraction = 0.25;
  std::size_t epochs = 8;
  std::size_t probe_rois = 1024;  ///< size of the fixed loss-probe subset
  std::uint64_t seed = 1;

  void validate() const;
};

struct TrainResult {
  /// Mean loss on a fixed probe subset of the labelled RoIs: entry 0 before
  /// any update, entry e after epoch e.
  std::vector<double> loss_curve;
  /// Mean minibatch loss seen during each epoch.
  std::vector<double> epoch_train_loss;
  std::size_t steps = 0;
};

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(const std::string& msg, std::size_t step, double lr)
      : std::runtime_error(msg), step(step), lr(lr) {}
  std::size_t step;
  double lr;
};

TrainResult sgd_train(NocNet& net, const std::vector<TrainImage>& images, const PoolingConfig& pooling,
                      const TrainConfig& config);

/// Mean softmax cross-entropy over the given RoIs.
double mean_loss(const NocNet& net, const std::vector<TrainImage>& images, const PoolingConfig& pooling,
                 const std::vector<std::pair<std::size_t, std::size_t>>& which);

/// The deterministic probe subset used for TrainResult::loss_curve.
std::vector<std::pair<std::size_t, std::size_t>> probe_subset(const std::vector<TrainImage>& images,
                                                              std::size_t max_rois);

// ---------------------------------------------------------------------------
// Post-hoc linear SVMs
// ---------------------------------------------------------------------------

struct SvmConfig {
  double C = 1.0;
  double tolerance = 1e-4;  ///< stop when the projected-gradient gap falls below this
  std::size_t max_epochs = 2000;
  /// Rescale features so their mean L2 norm is this value (0 disables).
  double target_norm = 1.0;
  std::uint64_t seed = 1;  ///< coordinate visiting order
};

/// One-vs-all linear SVM heads. Decision value = w . (scale * x) + b.
struct SvmHead {
  std::vector<std::vector<double>> weights;  // per category, empty if omitted
  std::vector<double> bias;
  std::vector<bool> present;
  double C = 1.0;
  double feature_scale = 1.0;

  std::size_t n_categories() const { return weights.size(); }
  double decision(std::size_t category, const Tensor& feature) const;
};

struct SvmTrace {
  /// Dual objective 1/2 a'Qa - sum(a) after each pass, per category.
  std::vector<std::vector<double>> dual_objective;
  std::vector<std::string> warnings;
};

/// Trains one L2-regularized hinge-loss SVM per category by dual coordinate
/// descent (coordinates visited in a seeded random order each pass); the bias is an extra constant feature (regularized). Samples
/// with label c are positives of c and every other sample a negative.
/// Categories without positives are omitted with a warning.
SvmHead train_svm(const std::vector<Tensor>& features, const std::vector<std::size_t>& labels,
                  std::size_t n_categories, const SvmConfig& config, SvmTrace* trace = nullptr);

/// 1/2 |(w, b)|^2 + C * sum hinge for one binary problem (y in {-1, +1}),
/// using the raw (unscaled) features.
double svm_primal_objective(const std::vector<double>& w, double b, const std::vector<std::vector<double>>& x,
                            const std::vector<int>& y, double C);

// ---------------------------------------------------------------------------
// Bounding-box regression
// ---------------------------------------------------------------------------

struct BoxDeltas {
  double dx = 0, dy = 0, dw = 0, dh = 0;
};

BoxDeltas encode_box(const Region& target, const Region& proposal);
Region decode_box(const BoxDeltas& d, const Region& proposal);

struct BBoxRegressor {
  /// Per category, 4 x (dim + 1) row-major (last column multiplies 1).
  std::vector<std::vector<double>> weights;
  std::vector<bool> present;
  std::size_t dim = 0;
  double lambda = 1.0;

  BoxDeltas predict(std::size_t category, const Tensor& feature) const;
};

/// Closed-form ridge regression per category on (feature, proposal -> gt)
/// pairs. All coefficients, including the constant term, are penalized.
BBoxRegressor train_bbox_regressor(const std::vector<Tensor>& features, const std::vector<Region>& proposals,
                                   const std::vector<Region>& matched_gt, const std::vector<std::size_t>& categories,
                                   std::size_t n_categories, double lambda);

/// Applies the predicted deltas and clips to the image. Falls back to the
/// clipped proposal if the moved box leaves the image.
Region apply_bbox(const BBoxRegressor& reg, std::size_t category, const Tensor& feature, const Region& proposal,
                  double image_w, double image_h);

// ---------------------------------------------------------------------------
// Scoring
// ---------------------------------------------------------------------------

enum class ScoreMode { Svm, Softmax };

/// Feature used by post-hoc heads: the second-to-last fc activations, or
/// the flattened RoI feature for single-fc nets.
Tensor head_feature(const NocNet& net, const RoiInputs& in);

/// Scores every region for every category (one list per category).
std::vector<std::vector<Detection>> score_regions(const NocNet& net, const SvmHead* svm,
                                                  const FeaturePyramid& pyramid, const std::vector<Region>& regions,
                                                  std::size_t image_id, const PoolingConfig& pooling,
                                                  ScoreMode mode = ScoreMode::Svm);

}  // namespace noc
