#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "noc/layers.hpp"
#include "noc/rng.hpp"
#include "noc/tensor.hpp"

namespace noc {

// ---------------------------------------------------------------------------
// Regions
// ---------------------------------------------------------------------------

/// Axis-aligned box in image pixels, [x1, x2) x [y1, y2).
struct Region {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }

  bool operator==(const Region&) const = default;
};

std::string to_string(const Region& r);

/// Clips to [0, width] x [0, height]. The result may be invalid (empty).
Region clip_region(const Region& r, double width, double height);

/// Throws std::invalid_argument unless the region is valid.
Region make_region(double x1, double y1, double x2, double y2);

// ---------------------------------------------------------------------------
// Backbone
// ---------------------------------------------------------------------------

struct ConvLayer {
  ConvParams params;
  bool relu = true;
};

struct PoolLayer {
  std::size_t kernel = 2;
  std::size_t stride = 2;
  std::size_t dilation = 1;
};

using BackboneLayer = std::variant<ConvLayer, PoolLayer>;

/// Shared, region-independent conv stack.
struct Backbone {
  std::vector<BackboneLayer> layers;

  /// Product of layer strides.
  std::size_t stride() const;
  std::size_t channels() const;
  std::size_t in_channels() const;

  /// Spatial output extent for a given input extent, or nullopt if the input
  /// is too small to produce at least one output cell.
  std::optional<std::size_t> output_extent(std::size_t in) const;
  /// Smallest input extent with a non-empty output.
  std::size_t min_input_extent() const;

  Tensor forward(const Tensor& image) const;
};

struct BackboneSpec {
  std::size_t in_channels = 3;
  /// Conv widths between pools: {16, 32, 32} gives conv-pool-conv-pool-conv.
  std::vector<std::size_t> widths{16, 32, 32};
  double sigma = 0.0;  ///< 0 selects sqrt(2 / fan_in)
};

/// 3x3 pad-1 convs (ReLU) separated by 2x2 stride-2 max pools.
Backbone make_backbone(const BackboneSpec& spec, Rng& rng);

/// Per-layer activations kept for backpropagation through the backbone.
struct BackboneTrace {
  std::vector<Tensor> inputs;  // input to each layer
  std::vector<Tensor> pre_relu;  // conv output before ReLU (empty for pools)
  std::vector<std::vector<std::uint32_t>> argmax;
  Tensor output;
};

BackboneTrace backbone_forward_traced(const Backbone& b, const Tensor& image);

/// Returns per-layer gradients (conv layers only; pools get empty LayerGrads).
std::vector<LayerGrad> backbone_backward(const Backbone& b, const BackboneTrace& trace, const Tensor& d_output);

/// Converts the last stride-2 layer to stride 1 and doubles the dilation (and
/// conv padding) of every later layer, so the output sampled every other cell
/// reproduces the original output. Throws std::invalid_argument when no
/// stride-2 layer exists.
Backbone atrous_transform(const Backbone& b);

/// Backbone checkpoint: `<dir>/backbone.json` plus one tensor blob per array.
void save_backbone(const std::filesystem::path& dir, const Backbone& b);
Backbone load_backbone(const std::filesystem::path& dir);

struct BackboneTrainConfig {
  std::size_t patch_size = 24;
  std::size_t epochs = 3;
  std::size_t batch = 16;
  double lr = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  std::uint64_t seed = 1;
};

/// Briefly trains the backbone as a patch classifier (global average pooling
/// followed by a linear softmax layer). Patches are C x P x P. Returns the mean
/// loss per epoch.
std::vector<double> train_backbone_patches(Backbone& b, const std::vector<Tensor>& patches,
                                           const std::vector<std::size_t>& labels, std::size_t n_classes,
                                           const BackboneTrainConfig& cfg);

// ---------------------------------------------------------------------------
// Pyramid and RoI pooling
// ---------------------------------------------------------------------------

/// Bilinear resize with half-pixel centers.
Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w);

/// Crops `region` from the image and resizes it to size x size.
Tensor crop_resize(const Tensor& image, const Region& region, std::size_t size);

struct PyramidLevel {
  double scale = 1.0;
  Tensor map;
  std::size_t stride = 1;
};

struct FeaturePyramid {
  std::vector<PyramidLevel> levels;
  std::size_t source_h = 0;
  std::size_t source_w = 0;
};

/// Resizes the image to floor(scale * extent) for each scale and runs the
/// backbone. Scales must be non-empty, strictly increasing and positive.
FeaturePyramid build_pyramid(const Tensor& image, const Backbone& backbone, const std::vector<double>& scales);

/// Level whose scaled region side sqrt(area) * scale is closest to
/// `target_extent`; ties go to the smaller scale.
std::size_t select_scale(const Region& region, const FeaturePyramid& pyramid, double target_extent);

/// Best level paired with its nearer neighbour (by the same distance),
/// returned in increasing order. Throws for single-level pyramids.
std::pair<std::size_t, std::size_t> select_adjacent_scales(const Region& region, const FeaturePyramid& pyramid,
                                                           double target_extent);

class RoiPoolError : public std::invalid_argument {
 public:
  RoiPoolError(const std::string& msg, Region region, double stride)
      : std::invalid_argument(msg), region(region), stride(stride) {}
  Region region;
  double stride;
};

struct PooledFeature {
  Tensor data;                          // C x m x m
  std::vector<std::uint32_t> argmax;    // flat index into the source map
};

/// Map-space window of a region: start = floor(x1 / stride), end =
/// ceil(x2 / stride), clipped to the map.
struct MapWindow {
  std::size_t x0, y0, x1, y1;
};
MapWindow project_region(const Region& region, double stride, std::size_t map_h, std::size_t map_w);

/// Max-pools the projected region into an m x m grid. Bin i of a window of
/// width w spans [floor(i*w/m), ceil((i+1)*w/m)). Ties pick the smallest flat
/// index.
PooledFeature roi_pool(const Tensor& map, const Region& region, double stride, std::size_t m);

/// Region in pyramid-level coordinates (image region scaled by level scale),
/// pooled from that level.
PooledFeature roi_pool_level(const PyramidLevel& level, const Region& image_region, std::size_t m);

Tensor roi_pool_backward(const PooledFeature& pooled, const Tensor& d_pooled, const Shape& map_shape);

}  // namespace noc
