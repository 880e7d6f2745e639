#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "noc/pyramid.hpp"

namespace noc {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

std::size_t layer_stride(const BackboneLayer& l) {
  return std::visit(overloaded{[](const ConvLayer& c) { return c.params.stride; },
                               [](const PoolLayer& p) { return p.stride; }},
                    l);
}

}  // namespace

std::size_t Backbone::stride() const {
  std::size_t s = 1;
  for (const auto& l : layers) s *= layer_stride(l);
  return s;
}

std::size_t Backbone::channels() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (const auto* c = std::get_if<ConvLayer>(&*it)) return c->params.out_channels();
  return in_channels();
}

std::size_t Backbone::in_channels() const {
  for (const auto& l : layers)
    if (const auto* c = std::get_if<ConvLayer>(&l)) return c->params.in_channels();
  throw std::logic_error("backbone has no conv layer");
}

std::optional<std::size_t> Backbone::output_extent(std::size_t in) const {
  std::size_t n = in;
  for (const auto& l : layers) {
    std::size_t k, s, pad, d;
    if (const auto* c = std::get_if<ConvLayer>(&l)) {
      k = c->params.kernel_h();
      s = c->params.stride;
      pad = c->params.padding;
      d = c->params.dilation;
    } else {
      const auto& p = std::get<PoolLayer>(l);
      k = p.kernel;
      s = p.stride;
      pad = 0;
      d = p.dilation;
    }
    const std::size_t eff = (k - 1) * d + 1;
    if (n + 2 * pad < eff) return std::nullopt;
    n = (n + 2 * pad - eff) / s + 1;
  }
  return n;
}

std::size_t Backbone::min_input_extent() const {
  std::size_t n = 1;
  while (!output_extent(n)) ++n;
  return n;
}

Tensor Backbone::forward(const Tensor& image) const {
  Tensor x = image;
  for (const auto& l : layers) {
    if (const auto* c = std::get_if<ConvLayer>(&l)) {
      x = conv2d_forward(x, c->params);
      if (c->relu) x = relu(x);
    } else {
      const auto& p = std::get<PoolLayer>(l);
      x = maxpool2d_forward(x, p.kernel, p.stride, p.dilation).output;
    }
  }
  return x;
}

Backbone make_backbone(const BackboneSpec& spec, Rng& rng) {
  if (spec.widths.empty()) throw std::invalid_argument("backbone needs at least one conv width");
  Backbone b;
  std::size_t cin = spec.in_channels;
  for (std::size_t i = 0; i < spec.widths.size(); ++i) {
    if (i > 0) b.layers.emplace_back(PoolLayer{});
    const std::size_t cout = spec.widths[i];
    const double sigma = spec.sigma > 0 ? spec.sigma : std::sqrt(2.0 / static_cast<double>(cin * 9));
    ConvLayer c;
    c.params.stride = 1;
    c.params.padding = 1;
    c.params.dilation = 1;
    c.params.kernel = gaussian_tensor({cout, cin, 3, 3}, sigma, rng);
    c.params.bias = Tensor({cout});
    b.layers.emplace_back(std::move(c));
    cin = cout;
  }
  return b;
}

BackboneTrace backbone_forward_traced(const Backbone& b, const Tensor& image) {
  BackboneTrace t;
  Tensor x = image;
  for (const auto& l : b.layers) {
    t.inputs.push_back(x);
    if (const auto* c = std::get_if<ConvLayer>(&l)) {
      Tensor pre = conv2d_forward(x, c->params);
      x = c->relu ? relu(pre) : pre;
      t.pre_relu.push_back(std::move(pre));
      t.argmax.emplace_back();
    } else {
      const auto& p = std::get<PoolLayer>(l);
      auto r = maxpool2d_forward(x, p.kernel, p.stride, p.dilation);
      x = std::move(r.output);
      t.pre_relu.emplace_back();
      t.argmax.push_back(std::move(r.argmax));
    }
  }
  t.output = std::move(x);
  return t;
}

std::vector<LayerGrad> backbone_backward(const Backbone& b, const BackboneTrace& trace, const Tensor& d_output) {
  std::vector<LayerGrad> grads(b.layers.size());
  Tensor d = d_output;
  for (std::size_t i = b.layers.size(); i-- > 0;) {
    if (const auto* c = std::get_if<ConvLayer>(&b.layers[i])) {
      if (c->relu) d = relu_backward(trace.pre_relu[i], d);
      grads[i] = conv2d_backward(trace.inputs[i], c->params, d);
      d = grads[i].d_input;
    } else {
      d = maxpool2d_backward(trace.inputs[i].shape(), trace.argmax[i], d);
      grads[i].d_input = d;
    }
  }
  return grads;
}

Backbone atrous_transform(const Backbone& b) {
  std::optional<std::size_t> last;
  for (std::size_t i = 0; i < b.layers.size(); ++i)
    if (layer_stride(b.layers[i]) == 2) last = i;
  if (!last) throw std::invalid_argument("atrous_transform: backbone has no stride-2 layer");

  Backbone out = b;
  std::visit([](auto& l) {
    if constexpr (std::is_same_v<std::decay_t<decltype(l)>, ConvLayer>)
      l.params.stride = 1;
    else
      l.stride = 1;
  }, out.layers[*last]);
  for (std::size_t i = *last + 1; i < out.layers.size(); ++i) {
    std::visit(overloaded{[](ConvLayer& c) {
                            c.params.dilation *= 2;
                            c.params.padding *= 2;
                          },
                          [](PoolLayer& p) { p.dilation *= 2; }},
               out.layers[i]);
  }
  return out;
}

void save_backbone(const std::filesystem::path& dir, const Backbone& b) {
  std::filesystem::create_directories(dir);
  nlohmann::json j;
  j["stride"] = b.stride();
  j["channels"] = b.channels();
  j["layers"] = nlohmann::json::array();
  for (std::size_t i = 0; i < b.layers.size(); ++i) {
    nlohmann::json l;
    if (const auto* c = std::get_if<ConvLayer>(&b.layers[i])) {
      const std::string kname = "backbone_conv" + std::to_string(i) + "_kernel.noct";
      const std::string bname = "backbone_conv" + std::to_string(i) + "_bias.noct";
      save_tensor(dir / kname, c->params.kernel);
      save_tensor(dir / bname, c->params.bias);
      l = {{"type", "conv"},          {"stride", c->params.stride}, {"padding", c->params.padding},
           {"dilation", c->params.dilation}, {"relu", c->relu},          {"kernel", kname},
           {"bias", bname}};
    } else {
      const auto& p = std::get<PoolLayer>(b.layers[i]);
      l = {{"type", "maxpool"}, {"kernel", p.kernel}, {"stride", p.stride}, {"dilation", p.dilation}};
    }
    j["layers"].push_back(l);
  }
  std::ofstream(dir / "backbone.json") << j.dump(2) << "\n";
}

Backbone load_backbone(const std::filesystem::path& dir) {
  std::ifstream in(dir / "backbone.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "backbone.json").string());
  const auto j = nlohmann::json::parse(in);
  Backbone b;
  for (const auto& l : j.at("layers")) {
    const auto type = l.at("type").get<std::string>();
    if (type == "conv") {
      ConvLayer c;
      c.params.stride = l.at("stride");
      c.params.padding = l.at("padding");
      c.params.dilation = l.at("dilation");
      c.relu = l.at("relu");
      c.params.kernel = load_tensor(dir / l.at("kernel").get<std::string>());
      c.params.bias = load_tensor(dir / l.at("bias").get<std::string>());
      b.layers.emplace_back(std::move(c));
    } else if (type == "maxpool") {
      b.layers.emplace_back(PoolLayer{l.at("kernel"), l.at("stride"), l.at("dilation")});
    } else {
      throw std::runtime_error("unknown backbone layer type '" + type + "'");
    }
  }
  if (j.contains("stride") && j.at("stride").get<std::size_t>() != b.stride())
    throw std::runtime_error("backbone.json stride does not match its layers");
  return b;
}

std::vector<double> train_backbone_patches(Backbone& b, const std::vector<Tensor>& patches,
                                           const std::vector<std::size_t>& labels, std::size_t n_classes,
                                           const BackboneTrainConfig& cfg) {
  if (patches.size() != labels.size() || patches.empty())
    throw std::invalid_argument("train_backbone_patches: need matching non-empty patches and labels");
  Rng rng(cfg.seed);
  const std::size_t ch = b.channels();
  Tensor head_w = gaussian_tensor({n_classes, ch}, 0.01, rng);
  Tensor head_b({n_classes});

  // Momentum buffers: one pair per conv layer plus the head.
  std::vector<Tensor> vel_k(b.layers.size()), vel_b(b.layers.size());
  for (std::size_t i = 0; i < b.layers.size(); ++i)
    if (const auto* c = std::get_if<ConvLayer>(&b.layers[i])) {
      vel_k[i] = Tensor::zeros_like(c->params.kernel);
      vel_b[i] = Tensor::zeros_like(c->params.bias);
    }
  Tensor vel_hw = Tensor::zeros_like(head_w), vel_hb = Tensor::zeros_like(head_b);

  auto sgd = [&](Tensor& param, Tensor& vel, const std::vector<double>& grad, double scale) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      const double g = grad[i] * scale + cfg.weight_decay * param[i];
      vel[i] = static_cast<float>(cfg.momentum * vel[i] - cfg.lr * g);
      param[i] += vel[i];
    }
  };

  std::vector<std::size_t> order(patches.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<double> curve;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t end = std::min(order.size(), start + cfg.batch);
      std::vector<std::vector<double>> gk(b.layers.size()), gb(b.layers.size());
      for (std::size_t i = 0; i < b.layers.size(); ++i)
        if (const auto* c = std::get_if<ConvLayer>(&b.layers[i])) {
          gk[i].assign(c->params.kernel.size(), 0.0);
          gb[i].assign(c->params.bias.size(), 0.0);
        }
      std::vector<double> ghw(head_w.size(), 0.0), ghb(head_b.size(), 0.0);

      for (std::size_t s = start; s < end; ++s) {
        const std::size_t idx = order[s];
        const BackboneTrace trace = backbone_forward_traced(b, patches[idx]);
        const Tensor& fmap = trace.output;
        const std::size_t hw = fmap.dim(1) * fmap.dim(2);
        Tensor pooled({ch});
        for (std::size_t c = 0; c < ch; ++c) {
          double acc = 0.0;
          for (std::size_t k = 0; k < hw; ++k) acc += fmap[c * hw + k];
          pooled[c] = static_cast<float>(acc / static_cast<double>(hw));
        }
        const Tensor logits = fc_forward(pooled, head_w, head_b);
        const XentResult xe = softmax_xent(logits, labels[idx]);
        epoch_loss += xe.loss;
        const LayerGrad hg = fc_backward(pooled, head_w, xe.d_logits);
        for (std::size_t i = 0; i < ghw.size(); ++i) ghw[i] += hg.d_weights[i];
        for (std::size_t i = 0; i < ghb.size(); ++i) ghb[i] += hg.d_bias[i];
        Tensor d_map(fmap.shape());
        for (std::size_t c = 0; c < ch; ++c)
          for (std::size_t k = 0; k < hw; ++k)
            d_map[c * hw + k] = static_cast<float>(hg.d_input[c] / static_cast<double>(hw));
        const auto grads = backbone_backward(b, trace, d_map);
        for (std::size_t i = 0; i < b.layers.size(); ++i) {
          if (gk[i].empty()) continue;
          for (std::size_t k = 0; k < gk[i].size(); ++k) gk[i][k] += grads[i].d_weights[k];
          for (std::size_t k = 0; k < gb[i].size(); ++k) gb[i][k] += grads[i].d_bias[k];
        }
      }
      const double scale = 1.0 / static_cast<double>(end - start);
      for (std::size_t i = 0; i < b.layers.size(); ++i)
        if (auto* c = std::get_if<ConvLayer>(&b.layers[i])) {
          sgd(c->params.kernel, vel_k[i], gk[i], scale);
          sgd(c->params.bias, vel_b[i], gb[i], scale);
        }
      sgd(head_w, vel_hw, ghw, scale);
      sgd(head_b, vel_hb, ghb, scale);
    }
    const double mean = epoch_loss / static_cast<double>(patches.size());
    if (!std::isfinite(mean))
      throw std::runtime_error("backbone training diverged at epoch " + std::to_string(epoch) +
                               " (lr " + std::to_string(cfg.lr) + ")");
    curve.push_back(mean);
  }
  return curve;
}

}  // namespace noc
