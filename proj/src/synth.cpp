#include "noc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace noc {

void SynthConfig::validate() const {
  if (n_categories == 0) throw ConfigError("synth: n_categories must be positive");
  if (min_objects == 0 || max_objects < min_objects) throw ConfigError("synth: need 1 <= min_objects <= max_objects");
  if (!(min_object_size > 2.0) || max_object_size < min_object_size)
    throw ConfigError("synth: need 2 < min_object_size <= max_object_size");
  if (max_object_size > static_cast<double>(image_size) - 2.0)
    throw ConfigError("synth: max_object_size does not fit in the image");
  if (n_train_small > n_train_large) throw ConfigError("synth: the small split cannot exceed the large split");
  if (noise < 0) throw ConfigError("synth: noise must be non-negative");
}

SynthConfig synth_config_from(const Config& cfg, const SynthConfig& d) {
  SynthConfig s;
  s.image_size = cfg.get_size("synth.image_size", d.image_size);
  s.n_categories = cfg.get_size("synth.n_categories", d.n_categories);
  s.min_objects = cfg.get_size("synth.min_objects", d.min_objects);
  s.max_objects = cfg.get_size("synth.max_objects", d.max_objects);
  s.min_object_size = cfg.get_double("synth.min_object_size", d.min_object_size);
  s.max_object_size = cfg.get_double("synth.max_object_size", d.max_object_size);
  s.noise = cfg.get_double("synth.noise", d.noise);
  s.clutter = cfg.get_size("synth.clutter", d.clutter);
  s.n_train_small = cfg.get_size("synth.n_train_small", d.n_train_small);
  s.n_train_large = cfg.get_size("synth.n_train_large", d.n_train_large);
  s.n_test = cfg.get_size("synth.n_test", d.n_test);
  s.max_retries = cfg.get_size("synth.max_retries", d.max_retries);
  s.seed = static_cast<std::uint64_t>(cfg.get_size("synth.seed", d.seed));
  s.validate();
  return s;
}

JitterConfig jitter_config_from(const Config& cfg, const JitterConfig& d, const std::string& section) {
  JitterConfig j;
  j.per_gt = cfg.get_size(section + ".per_gt", d.per_gt);
  j.background = cfg.get_size(section + ".background", d.background);
  j.translate_sigma = cfg.get_double(section + ".translate_sigma", d.translate_sigma);
  j.scale_sigma = cfg.get_double(section + ".scale_sigma", d.scale_sigma);
  j.background_max_iou = cfg.get_double(section + ".background_max_iou", d.background_max_iou);
  if (j.per_gt == 0) throw ConfigError(section + ".per_gt must be >= 1");
  return j;
}

std::vector<GroundTruth> DatasetManifest::ground_truth(const std::string& split) const {
  std::vector<GroundTruth> out;
  for (const auto& e : images)
    if (e.split == split) out.insert(out.end(), e.objects.begin(), e.objects.end());
  return out;
}

std::vector<std::string> category_names(std::size_t n_categories) {
  static const char* kNames[] = {"square", "rounded_square", "disk", "ring", "triangle", "truncated_triangle"};
  std::vector<std::string> out;
  for (std::size_t c = 0; c < n_categories; ++c)
    out.push_back(c < 6 ? kNames[c] : std::string(kNames[c % 6]) + "_" + std::to_string(c / 6));
  return out;
}

SimilarityMap similar_pairs(std::size_t n_categories) {
  SimilarityMap m;
  for (std::size_t c = 0; c < n_categories; ++c) {
    m[c];
    const std::size_t partner = c ^ 1u;
    if (partner < n_categories) m[c].insert(partner);
  }
  return m;
}

namespace {

// u, v in [0, 1]: normalized position inside the object's box.
bool shape_contains(std::size_t category, double u, double v) {
  const double du = u - 0.5, dv = v - 0.5;
  switch (category % 6) {
    case 0:
      return true;
    case 1: {
      constexpr double r = 0.3;
      const double cu = std::clamp(u, r, 1 - r), cv = std::clamp(v, r, 1 - r);
      return (u - cu) * (u - cu) + (v - cv) * (v - cv) <= r * r;
    }
    case 2:
      return du * du + dv * dv <= 0.25;
    case 3: {
      const double d2 = du * du + dv * dv;
      return d2 <= 0.25 && d2 >= 0.2 * 0.2;
    }
    case 4:
      return v >= 2.0 * std::fabs(du);
    default:
      return v >= 2.0 * std::fabs(du) && v >= 0.3;
  }
}

struct Color {
  double c[3];
};

Color random_color(Rng& rng, const Color& avoid) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Color col{};
  for (int attempt = 0; attempt < 100; ++attempt) {
    double diff = 0.0;
    for (int k = 0; k < 3; ++k) {
      col.c[k] = u(rng);
      diff += std::fabs(col.c[k] - avoid.c[k]);
    }
    if (diff / 3.0 >= 0.3) break;
  }
  return col;
}

}  // namespace

RenderedImage render_image(const SynthConfig& cfg, std::size_t image_id, Rng& rng) {
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  RenderedImage out;
  out.image = Tensor({3, n, n});

  // Background: per-channel base level plus a linear gradient.
  Color base{};
  double grad[3][2];
  for (int k = 0; k < 3; ++k) {
    base.c[k] = 0.25 + 0.5 * u01(rng);
    grad[k][0] = (u01(rng) - 0.5) * 0.3;
    grad[k][1] = (u01(rng) - 0.5) * 0.3;
  }
  std::vector<double> img(3 * n * n);
  for (int k = 0; k < 3; ++k)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x)
        img[(k * n + y) * n + x] = base.c[k] + grad[k][0] * (static_cast<double>(x) / size - 0.5) +
                                   grad[k][1] * (static_cast<double>(y) / size - 0.5);

  auto paint = [&](const std::vector<double>& coverage, const Color& col) {
    for (int k = 0; k < 3; ++k)
      for (std::size_t i = 0; i < n * n; ++i) {
        double& p = img[k * n * n + i];
        p = p * (1.0 - coverage[i]) + col.c[k] * coverage[i];
      }
  };

  // Distractor strokes.
  std::uniform_int_distribution<std::size_t> n_clutter(0, cfg.clutter);
  const std::size_t strokes = cfg.clutter ? n_clutter(rng) : 0;
  for (std::size_t s = 0; s < strokes; ++s) {
    const double x0 = u01(rng) * size, y0 = u01(rng) * size;
    const double ang = u01(rng) * 2.0 * M_PI, len = 6.0 + 10.0 * u01(rng);
    const double x1 = x0 + std::cos(ang) * len, y1 = y0 + std::sin(ang) * len;
    std::vector<double> cov(n * n, 0.0);
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        const double px = static_cast<double>(x) + 0.5, py = static_cast<double>(y) + 0.5;
        const double vx = x1 - x0, vy = y1 - y0;
        const double t = std::clamp(((px - x0) * vx + (py - y0) * vy) / (vx * vx + vy * vy), 0.0, 1.0);
        const double dx = px - (x0 + t * vx), dy = py - (y0 + t * vy);
        cov[y * n + x] = std::clamp(1.5 - std::sqrt(dx * dx + dy * dy), 0.0, 1.0);
      }
    paint(cov, random_color(rng, base));
  }

  std::uniform_int_distribution<std::size_t> n_obj(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<std::size_t> cat_dist(0, cfg.n_categories - 1);
  const std::size_t count = n_obj(rng);
  std::vector<Region> placed;
  for (std::size_t o = 0; o < count; ++o) {
    const std::size_t category = cat_dist(rng);
    Region box;
    bool ok = false;
    for (std::size_t attempt = 0; attempt < cfg.max_retries && !ok; ++attempt) {
      const double s = cfg.min_object_size + (cfg.max_object_size - cfg.min_object_size) * u01(rng);
      const double aspect = std::exp((u01(rng) - 0.5) * 2.0 * std::log(1.3));
      const double w = std::round(std::min(s * std::sqrt(aspect), size - 2.0));
      const double h = std::round(std::min(s / std::sqrt(aspect), size - 2.0));
      const double x = std::floor(u01(rng) * (size - w + 1.0));
      const double y = std::floor(u01(rng) * (size - h + 1.0));
      box = {x, y, x + w, y + h};
      ok = std::none_of(placed.begin(), placed.end(), [&](const Region& p) {
        return box.x1 < p.x2 + 2 && p.x1 < box.x2 + 2 && box.y1 < p.y2 + 2 && p.y1 < box.y2 + 2;
      });
    }
    if (!ok)
      throw std::runtime_error("render_image: could not place object " + std::to_string(o) + " of image " +
                               std::to_string(image_id) + " after " + std::to_string(cfg.max_retries) + " attempts");
    placed.push_back(box);

    constexpr int kSub = 4;
    std::vector<double> cov(n * n, 0.0);
    for (std::size_t y = static_cast<std::size_t>(box.y1); y < static_cast<std::size_t>(box.y2); ++y)
      for (std::size_t x = static_cast<std::size_t>(box.x1); x < static_cast<std::size_t>(box.x2); ++x) {
        int hits = 0;
        for (int sy = 0; sy < kSub; ++sy)
          for (int sx = 0; sx < kSub; ++sx) {
            const double px = static_cast<double>(x) + (sx + 0.5) / kSub;
            const double py = static_cast<double>(y) + (sy + 0.5) / kSub;
            hits += shape_contains(category, (px - box.x1) / box.width(), (py - box.y1) / box.height());
          }
        cov[y * n + x] = static_cast<double>(hits) / (kSub * kSub);
      }
    paint(cov, random_color(rng, base));
    Tensor c({n, n});
    for (std::size_t i = 0; i < n * n; ++i) c[i] = static_cast<float>(cov[i]);
    out.coverage.push_back(std::move(c));
    out.objects.push_back({image_id, category, box});
  }

  std::normal_distribution<double> noise(0.0, cfg.noise > 0 ? cfg.noise : 1.0);
  for (std::size_t i = 0; i < img.size(); ++i)
    out.image[i] = static_cast<float>(img[i] + (cfg.noise > 0 ? noise(rng) : 0.0));
  return out;
}

Dataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.manifest.category_names = category_names(cfg.n_categories);
  ds.manifest.similarity = similar_pairs(cfg.n_categories);
  const std::size_t total = cfg.n_train_large + cfg.n_test;
  for (std::size_t id = 0; id < total; ++id) {
    Rng rng(derive_seed(cfg.seed, id));
    RenderedImage r = render_image(cfg, id, rng);
    ImageEntry e;
    e.id = id;
    char name[32];
    std::snprintf(name, sizeof name, "blobs/%06zu.noct", id);
    e.blob = name;
    e.split = id < cfg.n_train_large ? "train" : "test";
    e.small = id < cfg.n_train_small;
    e.height = cfg.image_size;
    e.width = cfg.image_size;
    e.objects = std::move(r.objects);
    ds.manifest.images.push_back(std::move(e));
    ds.images.push_back(std::move(r.image));
  }
  return ds;
}

nlohmann::json manifest_to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["version"] = m.version;
  j["categories"] = m.category_names;
  nlohmann::json sim = nlohmann::json::object();
  for (const auto& [c, others] : m.similarity) {
    std::vector<std::string> names;
    for (auto o : others) names.push_back(m.category_names.at(o));
    sim[m.category_names.at(c)] = names;
  }
  j["similarity"] = sim;
  j["images"] = nlohmann::json::array();
  for (const auto& e : m.images) {
    nlohmann::json objs = nlohmann::json::array();
    for (const auto& o : e.objects)
      objs.push_back({{"category", o.category},
                      {"x1", o.region.x1},
                      {"y1", o.region.y1},
                      {"x2", o.region.x2},
                      {"y2", o.region.y2}});
    j["images"].push_back({{"id", e.id},
                           {"blob", e.blob},
                           {"split", e.split},
                           {"small", e.small},
                           {"height", e.height},
                           {"width", e.width},
                           {"objects", objs}});
  }
  return j;
}

DatasetManifest manifest_from_json(const nlohmann::json& j) {
  DatasetManifest m;
  m.version = j.at("version");
  m.category_names = j.at("categories").get<std::vector<std::string>>();
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(m.category_names.begin(), m.category_names.end(), name);
    if (it == m.category_names.end()) throw FormatError("manifest: unknown category '" + name + "'");
    return static_cast<std::size_t>(it - m.category_names.begin());
  };
  for (const auto& [name, others] : j.at("similarity").items()) {
    auto& set = m.similarity[index_of(name)];
    for (const auto& o : others) set.insert(index_of(o.get<std::string>()));
  }
  for (const auto& e : j.at("images")) {
    ImageEntry entry;
    entry.id = e.at("id");
    entry.blob = e.at("blob");
    entry.split = e.at("split");
    entry.small = e.value("small", false);
    entry.height = e.at("height");
    entry.width = e.at("width");
    for (const auto& o : e.at("objects")) {
      GroundTruth g;
      g.image_id = entry.id;
      g.category = o.at("category");
      if (g.category >= m.category_names.size()) throw FormatError("manifest: category index out of range");
      g.region = make_region(o.at("x1"), o.at("y1"), o.at("x2"), o.at("y2"));
      entry.objects.push_back(g);
    }
    m.images.push_back(std::move(entry));
  }
  return m;
}

DatasetManifest write_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir / "blobs");
  for (std::size_t i = 0; i < ds.images.size(); ++i) save_tensor(dir / ds.manifest.images[i].blob, ds.images[i]);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "manifest.json").string());
  out << manifest_to_json(ds.manifest).dump(2) << '\n';
  return ds.manifest;
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw std::runtime_error("cannot open manifest " + manifest_path.string());
  DatasetManifest m;
  try {
    m = manifest_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed manifest " + manifest_path.string() + ": " + e.what());
  }
  const auto root = manifest_path.parent_path();
  for (const auto& e : m.images) {
    const auto blob = root / e.blob;
    if (!std::filesystem::exists(blob)) throw FormatError("manifest references missing blob " + blob.string());
    const Shape s = peek_tensor_shape(blob);
    if (s.size() != 3 || s[1] != e.height || s[2] != e.width)
      throw FormatError("blob " + blob.string() + " has shape " + shape_string(s) + ", manifest says " +
                        std::to_string(e.height) + "x" + std::to_string(e.width));
  }
  return m;
}

Dataset load_dataset(const std::filesystem::path& manifest_path) {
  Dataset ds;
  ds.manifest = load_manifest(manifest_path);
  for (const auto& e : ds.manifest.images) ds.images.push_back(load_tensor(manifest_path.parent_path() / e.blob));
  return ds;
}

std::vector<Region> jitter_proposals(const std::vector<Region>& gt_boxes, const JitterConfig& cfg, double image_w,
                                     double image_h, double min_size, double max_size, Rng& rng) {
  if (cfg.per_gt == 0) throw std::invalid_argument("jitter_proposals: per_gt must be >= 1");
  std::vector<Region> out;
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (const auto& g : gt_boxes) {
    for (std::size_t k = 0; k < cfg.per_gt; ++k) {
      const double cx = g.x1 + 0.5 * g.width() + gauss(rng) * cfg.translate_sigma * g.width();
      const double cy = g.y1 + 0.5 * g.height() + gauss(rng) * cfg.translate_sigma * g.height();
      const double w = g.width() * std::exp(gauss(rng) * cfg.scale_sigma);
      const double h = g.height() * std::exp(gauss(rng) * cfg.scale_sigma);
      const Region r = clip_region({cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h}, image_w, image_h);
      if (r.width() >= 2.0 && r.height() >= 2.0) out.push_back(r);
    }
  }
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::size_t made = 0;
  for (std::size_t attempt = 0; attempt < 50 * cfg.background && made < cfg.background; ++attempt) {
    const double s = 0.5 * min_size + (1.5 * max_size - 0.5 * min_size) * u01(rng);
    const double aspect = std::exp((u01(rng) - 0.5) * 2.0 * std::log(1.5));
    const double w = std::min(s * std::sqrt(aspect), image_w), h = std::min(s / std::sqrt(aspect), image_h);
    const double x = u01(rng) * (image_w - w), y = u01(rng) * (image_h - h);
    const Region r{x, y, x + w, y + h};
    if (r.width() < 2.0 || r.height() < 2.0) continue;
    const bool clear = std::all_of(gt_boxes.begin(), gt_boxes.end(),
                                   [&](const Region& g) { return iou(r, g) < cfg.background_max_iou; });
    if (!clear) continue;
    out.push_back(r);
    ++made;
  }
  return out;
}

}  // namespace noc
