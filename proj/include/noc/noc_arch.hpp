#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "noc/layers.hpp"
#include "noc/rng.hpp"
#include "noc/tensor.hpp"

namespace noc {

// ---------------------------------------------------------------------------
// Architecture strings, e.g. "c256-mo-c256-f4096-f4096-f21"
// ---------------------------------------------------------------------------

enum class TokenKind { Conv, Maxout, Fc };

struct NocToken {
  TokenKind kind;
  std::size_t width = 0;  // unused for Maxout

  bool operator==(const NocToken&) const = default;
};

struct NocSpec {
  std::vector<NocToken> tokens;
  std::size_t n_categories = 0;

  bool has_maxout() const;
  /// Number of weight layers preceding the maxout token (0 when absent).
  std::size_t maxout_position() const;
  std::size_t conv_count() const;
  std::size_t fc_count() const;
  /// The same architecture without its maxout token.
  NocSpec without_maxout() const;
};

enum class ParseErrorKind { Empty, UnknownToken, BadWidth, MultipleMaxout, ConvAfterFc, NoFc, FcAfterOutput, WrongFinalWidth };

class SpecParseError : public std::invalid_argument {
 public:
  SpecParseError(ParseErrorKind kind, std::size_t position, const std::string& msg)
      : std::invalid_argument(msg), kind(kind), position(position) {}
  ParseErrorKind kind;
  std::size_t position;  // 1-based token index
};

/// Parses and validates an architecture string. The last fc width must be
/// n_categories + 1; a trailing "mo" is the maxout-on-output variant.
NocSpec parse_spec(std::string_view text, std::size_t n_categories);
std::string render_spec(const NocSpec& spec);

// ---------------------------------------------------------------------------
// Networks
// ---------------------------------------------------------------------------

enum class LayerKind { Conv, Fc };

/// One weight layer. Conv layers are 3x3, stride 1, pad 1 (shape preserving).
/// Fc layers keep their Out x In matrix in `params.kernel`; the stride,
/// padding and dilation fields are unused for them.
struct NocLayer {
  LayerKind kind = LayerKind::Fc;
  ConvParams params;
  bool relu = true;

  const Tensor& weights() const { return params.kernel; }
  Tensor& weights() { return params.kernel; }
  const Tensor& bias() const { return params.bias; }
  Tensor& bias() { return params.bias; }
};

/// A sigma <= 0 selects fan-in scaled initialization.
struct GaussianInit {
  double sigma_conv = 0.01;
  double sigma_fc = 0.01;
};

struct NocNet;

/// Copies the donor's fc layers and sets every conv layer to the per-channel
/// delta kernel, so the new net initially computes the donor's function.
struct IdentityExtend {
  const NocNet* donor = nullptr;
};

using InitMode = std::variant<GaussianInit, IdentityExtend>;

/// Instantiated NoC. Layers before the maxout point exist once and are run on
/// both scale pathways, so both pathways read the same weight storage.
struct NocNet {
  NocSpec spec;
  Shape input_shape;  // C x m x m
  std::vector<NocLayer> layers;
  std::string init_provenance;

  bool has_maxout() const { return spec.has_maxout(); }
  /// Leading layers replicated across the two pathways (0 without maxout and
  /// for maxout on the input).
  std::size_t dual_prefix_len() const { return has_maxout() ? spec.maxout_position() : 0; }
  std::size_t output_width() const { return layers.back().weights().dim(0); }
  std::size_t parameter_count() const;
  /// Distinct trainable arrays (weights and biases).
  std::size_t trainable_array_count() const;
  /// The layer used by pathway `path` (0 or 1) at depth `index`.
  const NocLayer& pathway_layer(std::size_t path, std::size_t index) const;
};

class InitError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

NocNet build_noc(const NocSpec& spec, const Shape& input_shape, const InitMode& init, Rng& rng);

/// Activations kept by forward for backward.
struct NocCache {
  struct Step {
    Tensor input;
    Tensor pre;  // pre-activation output
  };
  std::vector<Step> path_a;  // prefix layers on pathway a
  std::vector<Step> path_b;  // prefix layers on pathway b
  Tensor merge_a, merge_b;   // operands of the maxout
  std::vector<Step> tail;    // layers after the merge (or all layers)
  std::size_t layer_count = 0;
  std::size_t prefix = 0;
  bool merged = false;
};

struct NocForward {
  Tensor logits;
  NocCache cache;
};

class NocInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// pooled_b must be given iff the net has a maxout token.
NocForward noc_forward(const NocNet& net, const Tensor& pooled_a, const Tensor* pooled_b = nullptr);

struct NocGrads {
  std::vector<Tensor> d_weights;  // one per layer, same order as NocNet::layers
  std::vector<Tensor> d_bias;
  Tensor d_pooled_a;
  Tensor d_pooled_b;  // empty without maxout
};

NocGrads zero_grads(const NocNet& net);

/// Shared prefix layers accumulate the gradient of both pathways.
NocGrads noc_backward(const NocNet& net, const NocCache& cache, const Tensor& d_logits);

/// Post-ReLU activations of the second-to-last fc layer. When that layer sits
/// before the maxout (maxout on the output), the two pathways' features are
/// merged by elementwise max. Throws std::invalid_argument for 1fc nets.
Tensor extract_features(const NocNet& net, const Tensor& pooled_a, const Tensor* pooled_b = nullptr);

/// Checkpoint: `<dir>/noc.json` (spec string, shapes, init provenance) plus
/// tensor blobs.
void save_noc(const std::filesystem::path& dir, const NocNet& net);
NocNet load_noc(const std::filesystem::path& dir);

}  // namespace noc
