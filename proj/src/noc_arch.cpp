#include "noc/noc_arch.hpp"

#include <cmath>

#include <algorithm>
#include <charconv>
#include <fstream>

#include <nlohmann/json.hpp>

namespace noc {

bool NocSpec::has_maxout() const {
  return std::any_of(tokens.begin(), tokens.end(), [](const NocToken& t) { return t.kind == TokenKind::Maxout; });
}

std::size_t NocSpec::maxout_position() const {
  std::size_t n = 0;
  for (const auto& t : tokens) {
    if (t.kind == TokenKind::Maxout) return n;
    ++n;
  }
  return 0;
}

std::size_t NocSpec::conv_count() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const NocToken& t) { return t.kind == TokenKind::Conv; }));
}

std::size_t NocSpec::fc_count() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const NocToken& t) { return t.kind == TokenKind::Fc; }));
}

NocSpec NocSpec::without_maxout() const {
  NocSpec s = *this;
  std::erase_if(s.tokens, [](const NocToken& t) { return t.kind == TokenKind::Maxout; });
  return s;
}

NocSpec parse_spec(std::string_view text, std::size_t n_categories) {
  if (text.empty()) throw SpecParseError(ParseErrorKind::Empty, 0, "empty architecture string");
  NocSpec spec;
  spec.n_categories = n_categories;
  bool seen_fc = false, seen_mo = false;
  std::size_t pos = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t end = std::min(text.find('-', start), text.size());
    const std::string_view tok = text.substr(start, end - start);
    ++pos;
    auto fail = [&](ParseErrorKind kind, const std::string& why) {
      throw SpecParseError(kind, pos, "token " + std::to_string(pos) + " '" + std::string(tok) + "': " + why);
    };
    if (tok == "mo") {
      if (seen_mo) fail(ParseErrorKind::MultipleMaxout, "at most one maxout is allowed");
      seen_mo = true;
      spec.tokens.push_back({TokenKind::Maxout, 0});
    } else if (tok.size() >= 2 && (tok[0] == 'c' || tok[0] == 'f')) {
      std::size_t width = 0;
      const auto digits = tok.substr(1);
      const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), width);
      if (ec != std::errc() || ptr != digits.data() + digits.size()) fail(ParseErrorKind::UnknownToken, "unknown token");
      if (width == 0) fail(ParseErrorKind::BadWidth, "width must be positive");
      if (tok[0] == 'c') {
        if (seen_fc) fail(ParseErrorKind::ConvAfterFc, "conv layer after an fc layer");
        spec.tokens.push_back({TokenKind::Conv, width});
      } else {
        seen_fc = true;
        spec.tokens.push_back({TokenKind::Fc, width});
      }
    } else {
      fail(ParseErrorKind::UnknownToken, "unknown token");
    }
    if (end == text.size()) break;
    start = end + 1;
  }

  if (!seen_fc) throw SpecParseError(ParseErrorKind::NoFc, pos, "architecture needs at least one fc layer");
  // Locate the output layer: the last fc. Only a maxout may follow it.
  std::size_t last_fc = 0;
  for (std::size_t i = 0; i < spec.tokens.size(); ++i)
    if (spec.tokens[i].kind == TokenKind::Fc) last_fc = i;
  for (std::size_t i = last_fc + 1; i < spec.tokens.size(); ++i)
    if (spec.tokens[i].kind != TokenKind::Maxout)
      throw SpecParseError(ParseErrorKind::FcAfterOutput, i + 1, "only 'mo' may follow the output layer");
  if (spec.tokens[last_fc].width != n_categories + 1)
    throw SpecParseError(ParseErrorKind::WrongFinalWidth, last_fc + 1,
                         "token " + std::to_string(last_fc + 1) + ": output width " +
                             std::to_string(spec.tokens[last_fc].width) + " must be n_categories + 1 = " +
                             std::to_string(n_categories + 1));
  return spec;
}

std::string render_spec(const NocSpec& spec) {
  std::string out;
  for (const auto& t : spec.tokens) {
    if (!out.empty()) out += '-';
    switch (t.kind) {
      case TokenKind::Conv: out += "c" + std::to_string(t.width); break;
      case TokenKind::Fc: out += "f" + std::to_string(t.width); break;
      case TokenKind::Maxout: out += "mo"; break;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

std::size_t NocNet::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights().size() + l.bias().size();
  return n;
}

std::size_t NocNet::trainable_array_count() const { return layers.size() * 2; }

const NocLayer& NocNet::pathway_layer(std::size_t path, std::size_t index) const {
  if (path > 1) throw std::out_of_range("pathway must be 0 or 1");
  if (path == 1 && index >= dual_prefix_len())
    throw std::out_of_range("layer " + std::to_string(index) + " is not replicated on the second pathway");
  return layers.at(index);
}

namespace {

Tensor delta_kernel(std::size_t channels) {
  Tensor k({channels, channels, 3, 3});
  for (std::size_t c = 0; c < channels; ++c) k[((c * channels + c) * 3 + 1) * 3 + 1] = 1.0f;
  return k;
}

}  // namespace

NocNet build_noc(const NocSpec& spec, const Shape& input_shape, const InitMode& init, Rng& rng) {
  if (input_shape.size() != 3 || input_shape[1] == 0 || input_shape[2] == 0)
    throw ShapeError("build_noc: input shape must be C x m x m with m >= 1, got " + shape_string(input_shape));
  NocNet net;
  net.spec = spec;
  net.input_shape = input_shape;

  const auto* ext = std::get_if<IdentityExtend>(&init);
  const auto* gauss = std::get_if<GaussianInit>(&init);
  std::vector<const NocLayer*> donor_fc;
  if (ext) {
    if (!ext->donor) throw InitError("IdentityExtend needs a donor network");
    const NocNet& donor = *ext->donor;
    if (donor.spec.conv_count() != 0) throw InitError("IdentityExtend donor must be an fc-only NoC");
    if (donor.input_shape != input_shape)
      throw InitError("IdentityExtend donor input " + shape_string(donor.input_shape) + " differs from " +
                      shape_string(input_shape));
    for (const auto& l : donor.layers) donor_fc.push_back(&l);
    if (donor_fc.size() != spec.fc_count())
      throw InitError("IdentityExtend: donor has " + std::to_string(donor_fc.size()) + " fc layers, spec has " +
                      std::to_string(spec.fc_count()));
    net.init_provenance = "identity-extend:" + render_spec(donor.spec);
  } else {
    net.init_provenance = "gaussian:" + std::to_string(gauss->sigma_conv) + "," + std::to_string(gauss->sigma_fc);
  }

  std::size_t channels = input_shape[0];
  std::size_t flat = shape_volume(input_shape);
  std::size_t fc_seen = 0;
  const std::size_t n_fc = spec.fc_count();
  for (const auto& tok : spec.tokens) {
    if (tok.kind == TokenKind::Maxout) continue;
    NocLayer layer;
    if (tok.kind == TokenKind::Conv) {
      layer.kind = LayerKind::Conv;
      layer.params.stride = 1;
      layer.params.padding = 1;
      layer.params.dilation = 1;
      layer.params.bias = Tensor({tok.width});
      if (ext) {
        if (tok.width != channels)
          throw InitError("IdentityExtend: conv width " + std::to_string(tok.width) +
                          " must equal its input channels " + std::to_string(channels));
        layer.params.kernel = delta_kernel(channels);
      } else {
        const double sd = gauss->sigma_conv > 0 ? gauss->sigma_conv : std::sqrt(2.0 / static_cast<double>(channels * 9));
        layer.params.kernel = gaussian_tensor({tok.width, channels, 3, 3}, sd, rng);
      }
      channels = tok.width;
      flat = channels * input_shape[1] * input_shape[2];
    } else {
      layer.kind = LayerKind::Fc;
      layer.relu = ++fc_seen < n_fc;
      if (ext) {
        const NocLayer& d = *donor_fc[fc_seen - 1];
        if (d.weights().shape() != Shape{tok.width, flat})
          throw InitError("IdentityExtend: donor fc " + std::to_string(fc_seen) + " has shape " +
                          shape_string(d.weights().shape()) + ", expected " + shape_string({tok.width, flat}));
        layer.params.kernel = d.weights();
        layer.params.bias = d.bias();
      } else {
        // sigma <= 0: fan-in scaling (gain 2 before a ReLU, 1 on the output layer)
        const double gain = layer.relu ? 2.0 : 1.0;
        const double sd = gauss->sigma_fc > 0 ? gauss->sigma_fc : std::sqrt(gain / static_cast<double>(flat));
        layer.params.kernel = gaussian_tensor({tok.width, flat}, sd, rng);
        layer.params.bias = Tensor({tok.width});
      }
      flat = tok.width;
    }
    net.layers.push_back(std::move(layer));
  }
  return net;
}

namespace {

Tensor apply_layer(const NocLayer& layer, const Tensor& x, Tensor* pre_out) {
  Tensor pre = layer.kind == LayerKind::Conv ? conv2d_forward(x, layer.params)
                                             : fc_forward(x, layer.params.kernel, layer.params.bias);
  Tensor out = layer.relu ? relu(pre) : pre;
  if (pre_out) *pre_out = std::move(pre);
  return out;
}

Tensor run_steps(const NocNet& net, std::size_t begin, std::size_t end, Tensor x, std::vector<NocCache::Step>* steps) {
  for (std::size_t i = begin; i < end; ++i) {
    NocCache::Step s;
    s.input = x;
    x = apply_layer(net.layers[i], x, &s.pre);
    if (steps) steps->push_back(std::move(s));
  }
  return x;
}

void check_inputs(const NocNet& net, const Tensor& a, const Tensor* b) {
  if (net.has_maxout() && !b)
    throw NocInputError("NoC '" + render_spec(net.spec) + "' has a maxout and needs a second pooled input");
  if (!net.has_maxout() && b)
    throw NocInputError("NoC '" + render_spec(net.spec) + "' has no maxout but got a second pooled input");
  if (a.shape() != net.input_shape)
    throw ShapeError("NoC input shape " + shape_string(a.shape()) + " but net expects " +
                     shape_string(net.input_shape));
  if (b && b->shape() != net.input_shape)
    throw ShapeError("NoC second input shape " + shape_string(b->shape()) + " but net expects " +
                     shape_string(net.input_shape));
}

}  // namespace

NocForward noc_forward(const NocNet& net, const Tensor& pooled_a, const Tensor* pooled_b) {
  check_inputs(net, pooled_a, pooled_b);
  NocForward f;
  NocCache& c = f.cache;
  c.layer_count = net.layers.size();
  Tensor x;
  if (net.has_maxout()) {
    c.merged = true;
    c.prefix = net.dual_prefix_len();
    c.merge_a = run_steps(net, 0, c.prefix, pooled_a, &c.path_a);
    c.merge_b = run_steps(net, 0, c.prefix, *pooled_b, &c.path_b);
    x = elementwise_max(c.merge_a, c.merge_b);
  } else {
    x = pooled_a;
  }
  f.logits = run_steps(net, c.prefix, net.layers.size(), std::move(x), &c.tail);
  return f;
}

NocGrads zero_grads(const NocNet& net) {
  NocGrads g;
  for (const auto& l : net.layers) {
    g.d_weights.emplace_back(l.weights().shape());
    g.d_bias.emplace_back(l.bias().shape());
  }
  return g;
}

namespace {

void accumulate(Tensor& into, const Tensor& g) {
  for (std::size_t i = 0; i < into.size(); ++i) into[i] += g[i];
}

Tensor backprop_steps(const NocNet& net, std::size_t begin, const std::vector<NocCache::Step>& steps, Tensor d,
                      NocGrads& grads) {
  for (std::size_t k = steps.size(); k-- > 0;) {
    const std::size_t i = begin + k;
    const NocLayer& layer = net.layers[i];
    if (layer.relu) d = relu_backward(steps[k].pre, d);
    LayerGrad g = layer.kind == LayerKind::Conv ? conv2d_backward(steps[k].input, layer.params, d)
                                                : fc_backward(steps[k].input, layer.params.kernel, d);
    accumulate(grads.d_weights[i], g.d_weights);
    accumulate(grads.d_bias[i], g.d_bias);
    d = std::move(g.d_input);
  }
  return d;
}

}  // namespace

NocGrads noc_backward(const NocNet& net, const NocCache& cache, const Tensor& d_logits) {
  if (cache.layer_count != net.layers.size() || cache.merged != net.has_maxout() ||
      cache.prefix != net.dual_prefix_len() || cache.tail.size() != net.layers.size() - cache.prefix)
    throw std::invalid_argument("noc_backward: cache does not match the network topology");
  if (d_logits.size() != net.output_width())
    throw ShapeError("noc_backward: d_logits has " + std::to_string(d_logits.size()) + " entries, net outputs " +
                     std::to_string(net.output_width()));
  NocGrads grads = zero_grads(net);
  Tensor d = d_logits;
  if (!cache.tail.empty()) d = d.reshaped(cache.tail.back().pre.shape());
  d = backprop_steps(net, cache.prefix, cache.tail, std::move(d), grads);
  if (!cache.merged) {
    grads.d_pooled_a = std::move(d);
    return grads;
  }
  d = d.reshaped(cache.merge_a.shape());
  auto [da, db] = elementwise_max_backward(cache.merge_a, cache.merge_b, d);
  grads.d_pooled_a = backprop_steps(net, 0, cache.path_a, std::move(da), grads);
  grads.d_pooled_b = backprop_steps(net, 0, cache.path_b, std::move(db), grads);
  return grads;
}

Tensor extract_features(const NocNet& net, const Tensor& pooled_a, const Tensor* pooled_b) {
  std::vector<std::size_t> fc_layers;
  for (std::size_t i = 0; i < net.layers.size(); ++i)
    if (net.layers[i].kind == LayerKind::Fc) fc_layers.push_back(i);
  if (fc_layers.size() < 2)
    throw std::invalid_argument("extract_features: '" + render_spec(net.spec) +
                                "' has a single fc layer; use the RoI features or logits instead");
  check_inputs(net, pooled_a, pooled_b);
  const std::size_t target = fc_layers[fc_layers.size() - 2];
  const std::size_t prefix = net.dual_prefix_len();
  if (!net.has_maxout()) return run_steps(net, 0, target + 1, pooled_a, nullptr);
  if (target < prefix) {
    return elementwise_max(run_steps(net, 0, target + 1, pooled_a, nullptr),
                           run_steps(net, 0, target + 1, *pooled_b, nullptr));
  }
  Tensor merged = elementwise_max(run_steps(net, 0, prefix, pooled_a, nullptr),
                                  run_steps(net, 0, prefix, *pooled_b, nullptr));
  return run_steps(net, prefix, target + 1, std::move(merged), nullptr);
}

void save_noc(const std::filesystem::path& dir, const NocNet& net) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["spec"] = render_spec(net.spec);
  j["n_categories"] = net.spec.n_categories;
  j["input_shape"] = net.input_shape;
  j["init"] = net.init_provenance;
  j["flatten"] = "row-major CxHxW";
  j["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    const auto& l = net.layers[i];
    const std::string w = "noc_layer" + std::to_string(i) + "_weights.noct";
    const std::string b = "noc_layer" + std::to_string(i) + "_bias.noct";
    save_tensor(dir / w, l.weights());
    save_tensor(dir / b, l.bias());
    j["layers"].push_back({{"kind", l.kind == LayerKind::Conv ? "conv" : "fc"},
                           {"relu", l.relu},
                           {"weights", w},
                           {"weights_shape", l.weights().shape()},
                           {"bias", b}});
  }
  std::ofstream(dir / "noc.json") << j.dump(2) << "\n";
}

NocNet load_noc(const std::filesystem::path& dir) {
  std::ifstream in(dir / "noc.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "noc.json").string());
  const auto j = nlohmann::json::parse(in);
  NocNet net;
  net.spec = parse_spec(j.at("spec").get<std::string>(), j.at("n_categories").get<std::size_t>());
  net.input_shape = j.at("input_shape").get<Shape>();
  net.init_provenance = j.value("init", "");
  for (const auto& l : j.at("layers")) {
    NocLayer layer;
    layer.kind = l.at("kind").get<std::string>() == "conv" ? LayerKind::Conv : LayerKind::Fc;
    layer.relu = l.at("relu");
    layer.params.stride = 1;
    layer.params.padding = 1;
    layer.params.dilation = 1;
    layer.params.kernel = load_tensor(dir / l.at("weights").get<std::string>());
    layer.params.bias = load_tensor(dir / l.at("bias").get<std::string>());
    net.layers.push_back(std::move(layer));
  }
  const std::size_t expected = net.spec.conv_count() + net.spec.fc_count();
  if (net.layers.size() != expected)
    throw std::runtime_error("noc.json lists " + std::to_string(net.layers.size()) + " layers but spec '" +
                             render_spec(net.spec) + "' needs " + std::to_string(expected));
  return net;
}

}  // namespace noc
