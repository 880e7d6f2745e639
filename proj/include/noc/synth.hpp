#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "noc/boxes.hpp"
#include "noc/config.hpp"
#include "noc/eval.hpp"
#include "noc/rng.hpp"

namespace noc {

/// Synthetic detection task. Categories come in similar pairs (2k, 2k+1)
/// whose shapes differ only in a detail: square / rounded square, disk /
/// ring, triangle / truncated triangle.
struct SynthConfig {
  std::size_t image_size = 64;
  std::size_t n_categories = 6;
  std::size_t min_objects = 1;
  std::size_t max_objects = 3;
  double min_object_size = 14.0;
  double max_object_size = 30.0;
  double noise = 0.06;
  std::size_t clutter = 2;  ///< max distractor strokes per image
  std::size_t n_train_small = 80;
  std::size_t n_train_large = 240;
  std::size_t n_test = 120;
  std::size_t max_retries = 200;
  std::uint64_t seed = 1;

  void validate() const;
};

SynthConfig synth_config_from(const Config& cfg, const SynthConfig& defaults = {});

struct JitterConfig {
  std::size_t per_gt = 12;
  std::size_t background = 12;
  double translate_sigma = 0.22;  ///< center shift, in units of box size
  double scale_sigma = 0.25;      ///< log-scale noise
  double background_max_iou = 0.3;
};

JitterConfig jitter_config_from(const Config& cfg, const JitterConfig& defaults = {},
                                const std::string& section = "proposals");

struct ImageEntry {
  std::size_t id = 0;
  std::string blob;   // path relative to the manifest directory
  std::string split;  // "train" or "test"
  bool small = false;  // member of the small training split
  std::size_t height = 0, width = 0;
  std::vector<GroundTruth> objects;
};

struct DatasetManifest {
  int version = 1;
  std::vector<std::string> category_names;
  SimilarityMap similarity;
  std::vector<ImageEntry> images;

  std::vector<GroundTruth> ground_truth(const std::string& split) const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<Tensor> images;  // parallel to manifest.images
};

struct RenderedImage {
  Tensor image;
  std::vector<GroundTruth> objects;
  std::vector<Tensor> coverage;  // per object, H x W in [0, 1]
};

/// Draws one image with its objects. Throws std::runtime_error when an
/// object cannot be placed after max_retries attempts.
RenderedImage render_image(const SynthConfig& cfg, std::size_t image_id, Rng& rng);

/// Category names and their similar-pair map.
std::vector<std::string> category_names(std::size_t n_categories);
SimilarityMap similar_pairs(std::size_t n_categories);

/// Deterministic in-memory dataset: train images (the first n_train_small
/// form the small split) followed by test images.
Dataset generate_dataset(const SynthConfig& cfg);

/// Writes `<dir>/manifest.json` and `<dir>/blobs/*.noct`.
DatasetManifest write_dataset(const Dataset& ds, const std::filesystem::path& dir);

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
/// Loads and validates a manifest: every blob must exist with a matching
/// shape header.
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Gaussian-perturbed copies of each gt box plus uniform background boxes
/// (IoU < background_max_iou with every gt); all clipped and validity
/// filtered.
std::vector<Region> jitter_proposals(const std::vector<Region>& gt_boxes, const JitterConfig& cfg, double image_w,
                                     double image_h, double min_size, double max_size, Rng& rng);

}  // namespace noc
