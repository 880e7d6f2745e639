#include "noc/ablation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

namespace noc {

namespace {

const std::vector<std::string> kMetrics{"map", "ap75", "coco", "cor_frac", "loc_frac", "sim_frac", "oth_frac", "bg_frac"};

// Stable string hash for seed derivation (std::hash is implementation defined).
std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

void check_scales(const std::vector<double>& scales, const std::string& where) {
  if (scales.empty()) throw ConfigError(where + ": scales must not be empty");
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (!(scales[i] > 0)) throw ConfigError(where + ": scales must be positive");
    if (i && !(scales[i] > scales[i - 1])) throw ConfigError(where + ": scales must be strictly increasing");
  }
}

// Sub-pyramid with the requested scales; every scale must exist in `full`.
FeaturePyramid select_levels(const FeaturePyramid& full, const std::vector<double>& scales) {
  FeaturePyramid out;
  out.source_h = full.source_h;
  out.source_w = full.source_w;
  for (double s : scales) {
    const auto it = std::find_if(full.levels.begin(), full.levels.end(),
                                 [&](const PyramidLevel& l) { return std::fabs(l.scale - s) < 1e-12; });
    if (it == full.levels.end()) throw std::invalid_argument("scale " + fmt(s) + " missing from the pyramid cache");
    out.levels.push_back(*it);
  }
  return out;
}

double metric_value(const EntryRun& r, const std::string& metric) {
  if (metric == "map") return r.map;
  if (metric == "ap75") return r.ap75;
  if (metric == "coco") return r.coco;
  for (std::size_t k = 0; k < 5; ++k) {
    std::string name = kErrorTypeNames[k];
    std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
    if (metric == name + "_frac") return r.breakdown.fractions[k];
  }
  throw std::invalid_argument("unknown metric " + metric);
}

MetricRow aggregate(const std::string& experiment, const std::string& category, const std::string& metric,
                    const std::vector<double>& values) {
  MetricRow row{experiment, category, metric, std::nan(""), 0.0, values.size()};
  if (values.empty()) return row;
  double sum = 0.0;
  for (double v : values) sum += v;
  row.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - row.mean) * (v - row.mean);
    row.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return row;
}

}  // namespace

bool ExperimentEntry::maxout(std::size_t n_categories) const { return parse_spec(spec, n_categories).has_maxout(); }

std::optional<std::string> ExperimentEntry::donor() const {
  if (init.rfind("identity:", 0) == 0) return init.substr(9);
  return std::nullopt;
}

void ExperimentMatrix::validate(std::size_t n_categories) const {
  if (entries.empty()) throw ConfigError("experiment matrix has no entries");
  std::set<std::string> seen;
  for (const auto& e : entries) {
    const std::string where = "entry '" + e.label + "'";
    if (!seen.insert(e.label).second) throw ConfigError("duplicate " + where);
    NocSpec spec;
    try {
      spec = parse_spec(e.spec, n_categories);
    } catch (const SpecParseError& err) {
      throw ConfigError(where + ": " + err.what());
    }
    if (e.init != "gaussian" && !e.donor()) throw ConfigError(where + ": init must be gaussian or identity:<label>");
    if (const auto d = e.donor(); d && !seen.count(*d) ) throw ConfigError(where + ": donor '" + *d + "' must be an earlier entry");
    if (e.head != "svm" && e.head != "softmax") throw ConfigError(where + ": head must be svm or softmax");
    if (e.split != "small" && e.split != "large") throw ConfigError(where + ": split must be small or large");
    if (!e.scales.empty()) check_scales(e.scales, where);
    if (spec.has_maxout() && !e.scales.empty() && e.scales.size() < 2)
      throw ConfigError(where + ": maxout needs at least two scales");
  }
  if (metrics.empty()) throw ConfigError("matrix.metrics must not be empty");
  for (const auto& m : metrics)
    if (std::find(kMetrics.begin(), kMetrics.end(), m) == kMetrics.end()) throw ConfigError("unknown metric '" + m + "'");
}

ExperimentMatrix ExperimentMatrix::from_config(const Config& cfg, std::size_t n_categories) {
  ExperimentMatrix m;
  for (const auto& section : cfg.sections()) {
    if (section.rfind("entry:", 0) != 0) continue;
    ExperimentEntry e;
    e.label = section.substr(6);
    if (e.label.empty()) throw ConfigError("entry section without a label");
    e.spec = cfg.require_string(section + ".spec");
    e.init = cfg.get_string(section + ".init", e.init);
    e.scales = cfg.get_doubles(section + ".scales", {});
    e.head = cfg.get_string(section + ".head", e.head);
    e.split = cfg.get_string(section + ".split", e.split);
    e.bbox = cfg.get_bool(section + ".bbox", e.bbox);
    m.entries.push_back(std::move(e));
  }
  if (cfg.has("matrix.metrics")) {
    m.metrics.clear();
    std::stringstream ss(cfg.get_string("matrix.metrics", ""));
    std::string item;
    while (std::getline(ss, item, ',')) {
      item.erase(0, item.find_first_not_of(" \t"));
      item.erase(item.find_last_not_of(" \t") + 1);
      if (!item.empty()) m.metrics.push_back(item);
    }
  }
  m.per_category = cfg.get_bool("matrix.per_category", m.per_category);
  m.validate(n_categories);
  return m;
}

AblationSettings AblationSettings::from_config(const Config& cfg) {
  AblationSettings s;
  s.train_proposals = jitter_config_from(cfg, s.train_proposals, "proposals");
  s.test_proposals = jitter_config_from(cfg, s.train_proposals, "test_proposals");

  s.backbone.widths = cfg.get_sizes("backbone.widths", s.backbone.widths);
  if (s.backbone.widths.empty()) throw ConfigError("backbone.widths must not be empty");
  s.backbone.sigma = cfg.get_double("backbone.sigma", s.backbone.sigma);
  s.train_backbone = cfg.get_bool("backbone.train", s.train_backbone);
  s.backbone_seed = cfg.get_size("backbone.seed", s.backbone_seed);
  s.backbone_per_seed = cfg.get_bool("backbone.per_seed", s.backbone_per_seed);
  auto& bt = s.backbone_train;
  bt.patch_size = cfg.get_size("backbone.patch_size", bt.patch_size);
  bt.epochs = cfg.get_size("backbone.epochs", bt.epochs);
  bt.batch = cfg.get_size("backbone.batch", bt.batch);
  bt.lr = cfg.get_double("backbone.lr", bt.lr);
  bt.momentum = cfg.get_double("backbone.momentum", bt.momentum);
  bt.weight_decay = cfg.get_double("backbone.weight_decay", bt.weight_decay);

  s.scales = cfg.get_doubles("pyramid.scales", s.scales);
  check_scales(s.scales, "pyramid.scales");
  s.center_images = cfg.get_bool("pyramid.center", s.center_images);
  s.pooling.m = cfg.get_size("pyramid.m", s.pooling.m);
  s.pooling.target_extent = cfg.get_double("pyramid.target_extent", s.pooling.target_extent);
  if (s.pooling.m == 0) throw ConfigError("pyramid.m must be positive");

  auto& t = s.train;
  t.base_lr = cfg.get_double("train.base_lr", t.base_lr);
  t.lr_decay_epochs = cfg.get_sizes("train.lr_decay_epochs", t.lr_decay_epochs);
  t.lr_gamma = cfg.get_double("train.lr_gamma", t.lr_gamma);
  t.momentum = cfg.get_double("train.momentum", t.momentum);
  t.weight_decay = cfg.get_double("train.weight_decay", t.weight_decay);
  t.images_per_batch = cfg.get_size("train.images_per_batch", t.images_per_batch);
  t.rois_per_image = cfg.get_size("train.rois_per_image", t.rois_per_image);
  t.positive_fraction = cfg.get_double("train.positive_fraction", t.positive_fraction);
  t.epochs = cfg.get_size("train.epochs", t.epochs);
  t.probe_rois = cfg.get_size("train.probe_rois", t.probe_rois);
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("train: ") + e.what());
  }

  s.gaussian.sigma_conv = cfg.get_double("init.sigma_conv", s.gaussian.sigma_conv);
  s.gaussian.sigma_fc = cfg.get_double("init.sigma_fc", s.gaussian.sigma_fc);

  s.svm.C = cfg.get_double("svm.C", s.svm.C);
  s.svm.tolerance = cfg.get_double("svm.tolerance", s.svm.tolerance);
  s.svm.max_epochs = cfg.get_size("svm.max_epochs", s.svm.max_epochs);
  s.svm.target_norm = cfg.get_double("svm.target_norm", s.svm.target_norm);
  if (!(s.svm.C > 0)) throw ConfigError("svm.C must be positive");

  s.nms_iou = cfg.get_double("eval.nms_iou", s.nms_iou);
  s.bbox_lambda = cfg.get_double("bbox.lambda", s.bbox_lambda);
  s.threads = cfg.get_size("run.threads", threads_from_env());
  if (s.threads == 0) s.threads = 1;
  return s;
}

std::size_t threads_from_env() {
  const char* v = std::getenv("NOC_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const long n = std::strtol(v, &end, 10);
  if (*end || n < 1) return 1;
  return static_cast<std::size_t>(n);
}

Tensor center_channels(const Tensor& image) {
  if (image.rank() != 3) throw ShapeError("center_channels: expected C x H x W, got " + shape_string(image.shape()));
  Tensor out = image;
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < image.dim(0); ++c) {
    double sum = 0.0;
    for (std::size_t i = 0; i < plane; ++i) sum += image[c * plane + i];
    const double mean = plane ? sum / static_cast<double>(plane) : 0.0;
    for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = static_cast<float>(image[c * plane + i] - mean);
  }
  return out;
}

std::shared_ptr<const Backbone> prepare_backbone(const Dataset& ds, const AblationSettings& s, std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0xbacc));
  BackboneSpec spec = s.backbone;
  spec.in_channels = ds.images.empty() ? 3 : ds.images.front().dim(0);
  auto b = std::make_shared<Backbone>(make_backbone(spec, rng));
  if (!s.train_backbone) return b;

  // Patch classification: gt crops labelled by category plus background crops.
  const std::size_t n_cat = ds.manifest.category_names.size();
  const std::size_t p = s.backbone_train.patch_size;
  std::vector<Tensor> patches;
  std::vector<std::size_t> labels;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& e = ds.manifest.images[i];
    if (e.split != "train") continue;
    const Tensor image = s.center_images ? center_channels(ds.images[i]) : ds.images[i];
    for (const auto& g : e.objects) {
      patches.push_back(crop_resize(image, g.region, p));
      labels.push_back(g.category);
    }
    const double w = static_cast<double>(e.width), h = static_cast<double>(e.height);
    for (int attempt = 0; attempt < 20; ++attempt) {
      const double side = std::min({w, h, 12.0 + 20.0 * u01(rng)});
      const double x = u01(rng) * (w - side), y = u01(rng) * (h - side);
      const Region r{x, y, x + side, y + side};
      if (std::all_of(e.objects.begin(), e.objects.end(), [&](const GroundTruth& g) { return iou(r, g.region) < 0.1; })) {
        patches.push_back(crop_resize(image, r, p));
        labels.push_back(n_cat);
        break;
      }
    }
  }
  BackboneTrainConfig cfg = s.backbone_train;
  cfg.seed = derive_seed(seed, 0xbacd);
  train_backbone_patches(*b, patches, labels, n_cat + 1, cfg);
  return b;
}

std::shared_ptr<const std::vector<FeaturePyramid>> prepare_pyramids(const Dataset& ds, const Backbone& b,
                                                                    const std::vector<double>& scales, bool center) {
  auto out = std::make_shared<std::vector<FeaturePyramid>>(ds.images.size());
  for (std::size_t i = 0; i < ds.images.size(); ++i)
    (*out)[i] = build_pyramid(center ? center_channels(ds.images[i]) : ds.images[i], b, scales);
  return out;
}

SeedContext prepare_seed(const Dataset& ds, const AblationSettings& s, std::uint64_t seed,
                         std::shared_ptr<const Backbone> backbone,
                         std::shared_ptr<const std::vector<FeaturePyramid>> pyramids, const std::vector<double>& scales) {
  SeedContext ctx;
  ctx.seed = seed;
  ctx.dataset = &ds;
  ctx.backbone = std::move(backbone);
  ctx.pyramids = std::move(pyramids);
  ctx.scales = scales;

  double min_side = 1e300, max_side = 0.0;
  for (const auto& e : ds.manifest.images)
    for (const auto& g : e.objects) {
      min_side = std::min(min_side, std::sqrt(g.region.area()));
      max_side = std::max(max_side, std::sqrt(g.region.area()));
    }
  if (max_side == 0.0) min_side = max_side = 8.0;

  for (const auto& e : ds.manifest.images) {
    Rng rng(derive_seed(seed, 0x10000 + e.id));
    std::vector<Region> gts;
    for (const auto& g : e.objects) gts.push_back(g.region);
    const JitterConfig& jc = e.split == "train" ? s.train_proposals : s.test_proposals;
    ctx.proposals.push_back(jitter_proposals(gts, jc, static_cast<double>(e.width), static_cast<double>(e.height),
                                             min_side, max_side, rng));
  }
  return ctx;
}

EntryRun run_entry(const ExperimentEntry& entry, const SeedContext& ctx, const AblationSettings& s,
                   const std::map<std::string, const NocNet*>& donors, EntryModel* model) {
  EntryRun run;
  run.label = entry.label;
  run.seed = ctx.seed;
  const Dataset& ds = *ctx.dataset;
  const std::size_t n_cat = ds.manifest.category_names.size();
  const NocSpec spec = parse_spec(entry.spec, n_cat);

  const std::vector<double>& scales = entry.scales.empty() ? s.scales : entry.scales;
  if (spec.has_maxout() && scales.size() < 2) throw std::invalid_argument("maxout needs at least two scales");
  std::vector<FeaturePyramid> local;
  const std::vector<FeaturePyramid>* pyr = ctx.pyramids.get();
  if (scales != ctx.scales) {
    for (const auto& p : *ctx.pyramids) local.push_back(select_levels(p, scales));
    pyr = &local;
  }

  // Training set.
  std::vector<TrainImage> train;
  std::vector<std::size_t> train_ids;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& e = ds.manifest.images[i];
    if (e.split != "train" || (entry.split == "small" && !e.small)) continue;
    std::vector<Region> props = ctx.proposals[i];
    for (const auto& g : e.objects) props.push_back(g.region);
    train.push_back({&(*pyr)[i], assign_labels(props, e.objects, n_cat)});
    train_ids.push_back(i);
  }
  if (train.empty()) throw std::invalid_argument("no training images in split '" + entry.split + "'");

  const Shape input_shape{ctx.backbone->channels(), s.pooling.m, s.pooling.m};
  Rng rng(derive_seed(ctx.seed, fnv1a(entry.label)));
  InitMode init = s.gaussian;
  if (const auto d = entry.donor()) {
    const auto it = donors.find(*d);
    if (it == donors.end() || !it->second) throw std::invalid_argument("donor '" + *d + "' was not trained");
    init = IdentityExtend{it->second};
  }
  NocNet net = build_noc(spec, input_shape, init, rng);

  TrainConfig tc = s.train;
  tc.seed = derive_seed(ctx.seed, fnv1a(entry.label) ^ 0x5eed);
  run.training = sgd_train(net, train, s.pooling, tc);

  const bool dual = net.has_maxout();
  SvmHead svm;
  std::optional<BBoxRegressor> bbox;
  if (entry.head == "svm" || entry.bbox) {
    std::vector<Tensor> feats, reg_feats;
    std::vector<std::size_t> labels, reg_cats;
    std::vector<Region> reg_props, reg_gts;
    for (std::size_t k = 0; k < train.size(); ++k) {
      const auto& e = ds.manifest.images[train_ids[k]];
      const FeaturePyramid& p = *train[k].pyramid;
      if (entry.head == "svm") {
        for (const auto& g : e.objects) {
          feats.push_back(head_feature(net, pool_inputs(p, g.region, s.pooling, dual)));
          labels.push_back(g.category);
        }
      }
      for (const auto& lp : train[k].rois) {
        if (lp.ignored) continue;
        if (lp.label == n_cat) {
          if (entry.head != "svm") continue;
          feats.push_back(head_feature(net, pool_inputs(p, lp.region, s.pooling, dual)));
          labels.push_back(n_cat);
        } else if (entry.bbox) {
          reg_feats.push_back(head_feature(net, pool_inputs(p, lp.region, s.pooling, dual)));
          reg_cats.push_back(lp.label);
          reg_props.push_back(lp.region);
          reg_gts.push_back(e.objects[*lp.matched_gt].region);
        }
      }
    }
    if (entry.head == "svm") {
      SvmTrace trace;
      SvmConfig sc = s.svm;
      sc.seed = derive_seed(ctx.seed, fnv1a(entry.label) ^ 0x5f3);
      svm = train_svm(feats, labels, n_cat, sc, &trace);
      run.warnings = trace.warnings;
    }
    if (entry.bbox) bbox = train_bbox_regressor(reg_feats, reg_props, reg_gts, reg_cats, n_cat, s.bbox_lambda);
  }

  // Test-split scoring.
  std::vector<Detection> dets;
  for (std::size_t i = 0; i < ds.images.size(); ++i) {
    const auto& e = ds.manifest.images[i];
    if (e.split != "test") continue;
    const FeaturePyramid& p = (*pyr)[i];
    for (const auto& r : ctx.proposals[i]) {
      const RoiInputs in = pool_inputs(p, r, s.pooling, dual);
      std::optional<Tensor> f;
      if (entry.head == "svm" || bbox) f = head_feature(net, in);
      std::vector<double> prob;
      if (entry.head == "softmax") prob = softmax(noc_forward(net, in.a, in.second()).logits);
      for (std::size_t c = 0; c < n_cat; ++c) {
        double score;
        if (entry.head == "svm") {
          if (!svm.present[c]) continue;
          score = svm.decision(c, *f);
        } else {
          score = prob[c];
        }
        const Region box =
            bbox ? apply_bbox(*bbox, c, *f, r, static_cast<double>(e.width), static_cast<double>(e.height)) : r;
        dets.push_back({e.id, c, box, score});
      }
    }
  }
  dets = nms_grouped(dets, s.nms_iou);

  const auto gts = ds.manifest.ground_truth("test");
  const ApResult ap50 = ap_at(dets, gts, 0.5);
  run.map = ap50.mean;
  run.ap_per_category = ap50.per_category;
  run.ap75 = ap_at(dets, gts, 0.75).mean;
  run.coco = coco_ap(dets, gts).ap;
  run.breakdown = diagnose(dets, gts, ds.manifest.similarity, n_cat);
  run.ok = true;
  if (model) {
    model->net = std::move(net);
    model->svm = std::move(svm);
    model->bbox = std::move(bbox);
    model->detections = std::move(dets);
  }
  return run;
}

AblationResult run_ablation(const ExperimentMatrix& matrix, const Dataset& ds, const AblationSettings& s,
                            const std::vector<std::uint64_t>& seeds) {
  const std::size_t n_cat = ds.manifest.category_names.size();
  matrix.validate(n_cat);
  if (seeds.empty()) throw std::invalid_argument("run_ablation: no seeds");

  // Union of all scales, so one pyramid cache serves every entry.
  std::set<double> scale_set(s.scales.begin(), s.scales.end());
  for (const auto& e : matrix.entries) scale_set.insert(e.scales.begin(), e.scales.end());
  const std::vector<double> all_scales(scale_set.begin(), scale_set.end());

  std::shared_ptr<const Backbone> shared_backbone;
  std::shared_ptr<const std::vector<FeaturePyramid>> shared_pyramids;
  if (!s.backbone_per_seed) {
    shared_backbone = prepare_backbone(ds, s, s.backbone_seed);
    shared_pyramids = prepare_pyramids(ds, *shared_backbone, all_scales, s.center_images);
  }

  std::vector<std::vector<EntryRun>> per_seed(seeds.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t k = next++; k < seeds.size(); k = next++) {
      const std::uint64_t seed = seeds[k];
      auto& runs = per_seed[k];
      SeedContext ctx;
      std::string setup_error;
      try {
        auto b = shared_backbone ? shared_backbone : prepare_backbone(ds, s, seed);
        auto p = shared_pyramids ? shared_pyramids : prepare_pyramids(ds, *b, all_scales, s.center_images);
        ctx = prepare_seed(ds, s, seed, b, p, all_scales);
      } catch (const std::exception& e) {
        setup_error = std::string("seed setup failed: ") + e.what();
      }
      std::map<std::string, EntryModel> models;
      for (const auto& entry : matrix.entries) {
        EntryRun run;
        run.label = entry.label;
        run.seed = seed;
        if (!setup_error.empty()) {
          run.error = setup_error;
        } else {
          try {
            std::map<std::string, const NocNet*> donors;
            for (const auto& [label, m] : models) donors[label] = &m.net;
            EntryModel model;
            run = run_entry(entry, ctx, s, donors, &model);
            models[entry.label] = std::move(model);
          } catch (const std::exception& e) {
            run.ok = false;
            run.error = e.what();
          }
        }
        runs.push_back(std::move(run));
      }
    }
  };
  const std::size_t n_threads = std::min<std::size_t>(std::max<std::size_t>(s.threads, 1), seeds.size());
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  AblationResult result;
  for (auto& runs : per_seed)
    for (auto& r : runs) result.runs.push_back(std::move(r));

  for (const auto& entry : matrix.entries) {
    std::vector<const EntryRun*> ok;
    for (const auto& r : result.runs)
      if (r.label == entry.label && r.ok) ok.push_back(&r);
    for (const auto& metric : matrix.metrics) {
      std::vector<double> v;
      for (const auto* r : ok) v.push_back(metric_value(*r, metric));
      result.rows.push_back(aggregate(entry.label, "all", metric, v));
      if (matrix.per_category && (metric == "map")) {
        for (std::size_t c = 0; c < n_cat; ++c) {
          std::vector<double> pc;
          for (const auto* r : ok)
            if (const auto it = r->ap_per_category.find(c); it != r->ap_per_category.end()) pc.push_back(it->second);
          result.rows.push_back(aggregate(entry.label, ds.manifest.category_names[c], metric, pc));
        }
      }
    }
    // Pooled over seeds, then one breakdown per seed.
    NamedBreakdown pooled{entry.label, {}};
    for (const auto* r : ok) {
      for (std::size_t k = 0; k < 5; ++k) pooled.breakdown.counts[k] += r->breakdown.counts[k];
      pooled.breakdown.n_gt += r->breakdown.n_gt;
      pooled.breakdown.counted += r->breakdown.counted;
      for (const auto& [c, counts] : r->breakdown.per_category)
        for (std::size_t k = 0; k < 5; ++k) pooled.breakdown.per_category[c][k] += counts[k];
    }
    if (pooled.breakdown.counted)
      for (std::size_t k = 0; k < 5; ++k)
        pooled.breakdown.fractions[k] =
            static_cast<double>(pooled.breakdown.counts[k]) / static_cast<double>(pooled.breakdown.counted);
    result.breakdowns.push_back(std::move(pooled));
    for (const auto* r : ok) result.breakdowns.push_back({entry.label + "@seed" + std::to_string(r->seed), r->breakdown});
  }
  return result;
}

void write_ablation(const std::filesystem::path& dir, const AblationResult& result) {
  emit_report(dir.string(), result.rows, result.breakdowns);
  std::ofstream out(dir / "per_seed.csv", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + (dir / "per_seed.csv").string());
  out << "experiment,seed,status,map,ap75,coco,cor_frac,loc_frac,sim_frac,oth_frac,bg_frac,n_gt,counted,final_loss,"
         "error\n";
  for (const auto& r : result.runs) {
    out << r.label << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      out << fmt(r.map) << ',' << fmt(r.ap75) << ',' << fmt(r.coco);
      for (double f : r.breakdown.fractions) out << ',' << fmt(f);
      out << ',' << r.breakdown.n_gt << ',' << r.breakdown.counted << ','
          << (r.training.loss_curve.empty() ? std::string("nan") : fmt(r.training.loss_curve.back())) << ",";
    } else {
      std::string msg = r.error;
      std::replace(msg.begin(), msg.end(), ',', ';');
      std::replace(msg.begin(), msg.end(), '\n', ' ');
      out << ",,,,,,,,,,," << msg;
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing per_seed.csv");
}

nlohmann::json svm_to_json(const SvmHead& svm) {
  nlohmann::json j;
  j["C"] = svm.C;
  j["feature_scale"] = svm.feature_scale;
  j["categories"] = nlohmann::json::array();
  for (std::size_t c = 0; c < svm.n_categories(); ++c)
    j["categories"].push_back({{"present", static_cast<bool>(svm.present[c])},
                               {"bias", svm.bias[c]},
                               {"weights", svm.weights[c]}});
  return j;
}

}  // namespace noc
