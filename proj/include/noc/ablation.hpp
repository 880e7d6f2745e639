#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "noc/config.hpp"
#include "noc/eval.hpp"
#include "noc/noc_arch.hpp"
#include "noc/pyramid.hpp"
#include "noc/synth.hpp"
#include "noc/train.hpp"

namespace noc {

/// One row of the comparison matrix.
struct ExperimentEntry {
  std::string label;
  std::string spec;
  std::string init = "gaussian";  // or "identity:<donor label>"
  std::vector<double> scales;     // empty: the settings' scales
  std::string head = "svm";       // "svm" or "softmax"
  std::string split = "large";    // "small" or "large"
  bool bbox = false;

  bool maxout(std::size_t n_categories) const;
  std::optional<std::string> donor() const;
};

/// Metric names understood in `metrics`: map (AP at IoU 0.5), ap75, coco,
/// and the diagnosis fractions cor_frac, loc_frac, sim_frac, oth_frac,
/// bg_frac.
struct ExperimentMatrix {
  std::vector<ExperimentEntry> entries;
  std::vector<std::string> metrics{"map"};
  bool per_category = false;  // add per-category rows for AP metrics

  /// Reads `[entry:<label>]` sections in file order plus `[matrix]`
  /// options. Throws ConfigError for unparsable specs, unknown donors and
  /// unknown metrics.
  static ExperimentMatrix from_config(const Config& cfg, std::size_t n_categories);
  void validate(std::size_t n_categories) const;
};

struct AblationSettings {
  JitterConfig train_proposals;
  JitterConfig test_proposals;
  BackboneSpec backbone;
  bool train_backbone = true;
  BackboneTrainConfig backbone_train;
  std::uint64_t backbone_seed = 7;
  /// Fresh backbone (and pyramids) per seed instead of one shared backbone.
  bool backbone_per_seed = false;
  std::vector<double> scales{1.0, 1.5, 2.0};
  /// Subtract each image's per-channel mean before the backbone.
  bool center_images = true;
  PoolingConfig pooling;
  TrainConfig train;
  GaussianInit gaussian;
  SvmConfig svm;
  double nms_iou = 0.3;
  double bbox_lambda = 1.0;
  std::size_t threads = 1;

  static AblationSettings from_config(const Config& cfg);
};

/// Per-seed shared state: backbone, pyramids of every image at the union of
/// all entry scales, and the jittered proposals.
struct SeedContext {
  std::uint64_t seed = 0;
  const Dataset* dataset = nullptr;
  std::shared_ptr<const Backbone> backbone;
  std::shared_ptr<const std::vector<FeaturePyramid>> pyramids;  // parallel to dataset images
  std::vector<std::vector<Region>> proposals;                  // parallel to dataset images
  std::vector<double> scales;
};

std::shared_ptr<const Backbone> prepare_backbone(const Dataset& ds, const AblationSettings& s, std::uint64_t seed);
std::shared_ptr<const std::vector<FeaturePyramid>> prepare_pyramids(const Dataset& ds, const Backbone& b,
                                                                    const std::vector<double>& scales, bool center);
/// Copy of the image with each channel's mean removed.
Tensor center_channels(const Tensor& image);
SeedContext prepare_seed(const Dataset& ds, const AblationSettings& s, std::uint64_t seed,
                         std::shared_ptr<const Backbone> backbone,
                         std::shared_ptr<const std::vector<FeaturePyramid>> pyramids, const std::vector<double>& scales);

struct EntryRun {
  std::string label;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double map = 0.0, ap75 = 0.0, coco = 0.0;
  std::map<std::size_t, double> ap_per_category;
  ErrorBreakdown breakdown;
  TrainResult training;
  std::vector<std::string> warnings;
};

/// Trained artifacts of one entry (kept for identity donors and the CLI).
struct EntryModel {
  NocNet net;
  SvmHead svm;
  std::optional<BBoxRegressor> bbox;
  std::vector<Detection> detections;  // test split, after NMS
};

/// Trains and evaluates one entry. `donors` maps labels to already-trained
/// nets of the same seed.
EntryRun run_entry(const ExperimentEntry& entry, const SeedContext& ctx, const AblationSettings& s,
                   const std::map<std::string, const NocNet*>& donors, EntryModel* model = nullptr);

struct AblationResult {
  std::vector<EntryRun> runs;  // seed-major, matrix order
  std::vector<MetricRow> rows;
  std::vector<NamedBreakdown> breakdowns;
};

/// Runs every entry for every seed (seeds in parallel, up to
/// settings.threads) and aggregates mean and sample sd over successful seeds.
/// A failing entry is recorded in its EntryRun and does not stop the run.
AblationResult run_ablation(const ExperimentMatrix& matrix, const Dataset& ds, const AblationSettings& s,
                            const std::vector<std::uint64_t>& seeds);

/// results.csv, breakdown.json and per_seed.csv under `dir`.
void write_ablation(const std::filesystem::path& dir, const AblationResult& result);

/// Worker count from NOC_THREADS (default 1).
std::size_t threads_from_env();

nlohmann::json svm_to_json(const SvmHead& svm);

}  // namespace noc
