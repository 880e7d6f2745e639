#include "noc/pyramid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace noc {

std::string to_string(const Region& r) {
  std::ostringstream os;
  os << "[" << r.x1 << ", " << r.y1 << ", " << r.x2 << ", " << r.y2 << "]";
  return os.str();
}

Region clip_region(const Region& r, double width, double height) {
  return {std::clamp(r.x1, 0.0, width), std::clamp(r.y1, 0.0, height), std::clamp(r.x2, 0.0, width),
          std::clamp(r.y2, 0.0, height)};
}

Region make_region(double x1, double y1, double x2, double y2) {
  Region r{x1, y1, x2, y2};
  if (!r.valid() || !std::isfinite(r.area())) throw std::invalid_argument("invalid region " + to_string(r));
  return r;
}

Tensor resize_bilinear(const Tensor& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear: image must be C x H x W");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (out_h == 0 || out_w == 0) throw ShapeError("resize_bilinear: empty output size");
  if (out_h == h && out_w == w) return image;
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);

  // Precompute horizontal taps.
  std::vector<std::size_t> x0(out_w), x1(out_w);
  std::vector<double> fx(out_w);
  for (std::size_t x = 0; x < out_w; ++x) {
    const double src = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
    x0[x] = static_cast<std::size_t>(std::floor(src));
    x1[x] = std::min(x0[x] + 1, w - 1);
    fx[x] = src - static_cast<double>(x0[x]);
  }
  Tensor out({c, out_h, out_w});
  for (std::size_t y = 0; y < out_h; ++y) {
    const double src = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(src));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = src - static_cast<double>(y0);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = image.at(ch, y0, x0[x]) * (1 - fx[x]) + image.at(ch, y0, x1[x]) * fx[x];
        const double bot = image.at(ch, y1, x0[x]) * (1 - fx[x]) + image.at(ch, y1, x1[x]) * fx[x];
        out.at(ch, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

Tensor crop_resize(const Tensor& image, const Region& region, std::size_t size) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  const Region r = clip_region(region, static_cast<double>(w), static_cast<double>(h));
  if (!r.valid()) throw std::invalid_argument("crop_resize: region " + to_string(region) + " is outside the image");
  Tensor out({c, size, size});
  const double sx = r.width() / static_cast<double>(size);
  const double sy = r.height() / static_cast<double>(size);
  for (std::size_t y = 0; y < size; ++y) {
    const double src_y = std::clamp(r.y1 + (static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const auto y0 = static_cast<std::size_t>(std::floor(src_y));
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double fy = src_y - static_cast<double>(y0);
    for (std::size_t x = 0; x < size; ++x) {
      const double src_x =
          std::clamp(r.x1 + (static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const auto x0 = static_cast<std::size_t>(std::floor(src_x));
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double fx = src_x - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double top = image.at(ch, y0, x0) * (1 - fx) + image.at(ch, y0, x1) * fx;
        const double bot = image.at(ch, y1, x0) * (1 - fx) + image.at(ch, y1, x1) * fx;
        out.at(ch, y, x) = static_cast<float>(top * (1 - fy) + bot * fy);
      }
    }
  }
  return out;
}

FeaturePyramid build_pyramid(const Tensor& image, const Backbone& backbone, const std::vector<double>& scales) {
  if (image.rank() != 3) throw ShapeError("build_pyramid: image must be C x H x W");
  if (scales.empty()) throw std::invalid_argument("build_pyramid: no scales given");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0.0)) throw std::invalid_argument("build_pyramid: scales must be positive");
    if (i > 0 && !(scales[i] > scales[i - 1]))
      throw std::invalid_argument("build_pyramid: scales must be strictly increasing");
  }
  FeaturePyramid pyr;
  pyr.source_h = image.dim(1);
  pyr.source_w = image.dim(2);
  const std::size_t footprint = backbone.min_input_extent();
  for (double s : scales) {
    const auto h = static_cast<std::size_t>(std::floor(s * static_cast<double>(pyr.source_h)));
    const auto w = static_cast<std::size_t>(std::floor(s * static_cast<double>(pyr.source_w)));
    if (h < footprint || w < footprint)
      throw std::invalid_argument("build_pyramid: scale " + std::to_string(s) + " gives a " + std::to_string(h) +
                                  "x" + std::to_string(w) + " image, smaller than the backbone footprint " +
                                  std::to_string(footprint));
    PyramidLevel level;
    level.scale = s;
    level.stride = backbone.stride();
    level.map = backbone.forward(resize_bilinear(image, h, w));
    pyr.levels.push_back(std::move(level));
  }
  return pyr;
}

namespace {

double scale_distance(const Region& region, double scale, double target) {
  return std::fabs(scale * std::sqrt(region.area()) - target);
}

}  // namespace

std::size_t select_scale(const Region& region, const FeaturePyramid& pyramid, double target_extent) {
  if (pyramid.levels.empty()) throw std::invalid_argument("select_scale: empty pyramid");
  std::size_t best = 0;
  double best_d = scale_distance(region, pyramid.levels[0].scale, target_extent);
  for (std::size_t i = 1; i < pyramid.levels.size(); ++i) {
    const double d = scale_distance(region, pyramid.levels[i].scale, target_extent);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::pair<std::size_t, std::size_t> select_adjacent_scales(const Region& region, const FeaturePyramid& pyramid,
                                                           double target_extent) {
  const std::size_t n = pyramid.levels.size();
  if (n < 2)
    throw std::invalid_argument(
        "select_adjacent_scales: pyramid has a single level; use single-scale mode (select_scale)");
  const std::size_t best = select_scale(region, pyramid, target_extent);
  if (best == 0) return {0, 1};
  if (best == n - 1) return {n - 2, n - 1};
  const double below = scale_distance(region, pyramid.levels[best - 1].scale, target_extent);
  const double above = scale_distance(region, pyramid.levels[best + 1].scale, target_extent);
  return above < below ? std::pair{best, best + 1} : std::pair{best - 1, best};
}

MapWindow project_region(const Region& region, double stride, std::size_t map_h, std::size_t map_w) {
  auto lo = [&](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::floor(v / stride), 0.0, static_cast<double>(limit)));
  };
  auto hi = [&](double v, std::size_t limit) {
    return static_cast<std::size_t>(std::clamp(std::ceil(v / stride), 0.0, static_cast<double>(limit)));
  };
  return {lo(region.x1, map_w), lo(region.y1, map_h), hi(region.x2, map_w), hi(region.y2, map_h)};
}

PooledFeature roi_pool(const Tensor& map, const Region& region, double stride, std::size_t m) {
  if (map.rank() != 3) throw ShapeError("roi_pool: map must be C x H x W");
  if (m == 0) throw std::invalid_argument("roi_pool: m must be positive");
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const MapWindow win = project_region(region, stride, h, w);
  if (win.x1 <= win.x0 || win.y1 <= win.y0)
    throw RoiPoolError("roi_pool: region " + to_string(region) + " projects to an empty window at stride " +
                           std::to_string(stride),
                       region, stride);
  const std::size_t ww = win.x1 - win.x0, wh = win.y1 - win.y0;

  PooledFeature out;
  out.data = Tensor({c, m, m});
  out.argmax.resize(c * m * m);
  const auto src = map.data();
  for (std::size_t by = 0; by < m; ++by) {
    const std::size_t ys = win.y0 + (by * wh) / m;
    const std::size_t ye = win.y0 + ((by + 1) * wh + m - 1) / m;
    for (std::size_t bx = 0; bx < m; ++bx) {
      const std::size_t xs = win.x0 + (bx * ww) / m;
      const std::size_t xe = win.x0 + ((bx + 1) * ww + m - 1) / m;
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (ch * h + ys) * w + xs;
        float best_v = src[best];
        for (std::size_t y = ys; y < ye; ++y) {
          for (std::size_t x = xs; x < xe; ++x) {
            const std::size_t idx = (ch * h + y) * w + x;
            if (src[idx] > best_v) {
              best_v = src[idx];
              best = idx;
            }
          }
        }
        const std::size_t o = (ch * m + by) * m + bx;
        out.data[o] = best_v;
        out.argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return out;
}

PooledFeature roi_pool_level(const PyramidLevel& level, const Region& image_region, std::size_t m) {
  const Region scaled{image_region.x1 * level.scale, image_region.y1 * level.scale, image_region.x2 * level.scale,
                      image_region.y2 * level.scale};
  return roi_pool(level.map, scaled, static_cast<double>(level.stride), m);
}

Tensor roi_pool_backward(const PooledFeature& pooled, const Tensor& d_pooled, const Shape& map_shape) {
  require_same_shape(pooled.data, d_pooled, "roi_pool_backward");
  const std::size_t volume = shape_volume(map_shape);
  Tensor d_map(map_shape);
  for (std::size_t i = 0; i < pooled.argmax.size(); ++i) {
    if (pooled.argmax[i] >= volume)
      throw ShapeError("roi_pool_backward: recorded index " + std::to_string(pooled.argmax[i]) +
                       " outside map of shape " + shape_string(map_shape));
    d_map[pooled.argmax[i]] += d_pooled[i];
  }
  return d_map;
}

}  // namespace noc
