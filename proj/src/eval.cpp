#include "noc/eval.hpp"

#include <algorithm>
#include <numeric>
#include <tuple>

namespace noc {

namespace {

bool ranks_before(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.region.x1, a.region.y1, a.region.x2, a.region.y2) <
         std::tie(b.region.x1, b.region.y1, b.region.x2, b.region.y2);
}

// Score order across images: ties broken by image, then box.
bool ranks_before_global(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  if (a.image_id != b.image_id) return a.image_id < b.image_id;
  return ranks_before(a, b);
}

using GtIndex = std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>>;

GtIndex index_ground_truth(const std::vector<GroundTruth>& gts) {
  GtIndex idx;
  for (std::size_t g = 0; g < gts.size(); ++g) idx[{gts[g].image_id, gts[g].category}].push_back(g);
  return idx;
}

}  // namespace

std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh) {
  std::stable_sort(detections.begin(), detections.end(), ranks_before);
  std::vector<Detection> kept;
  for (const auto& d : detections) {
    const bool suppressed =
        std::any_of(kept.begin(), kept.end(), [&](const Detection& k) { return iou(k.region, d.region) >= iou_thresh; });
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

std::vector<Detection> nms_grouped(const std::vector<Detection>& detections, double iou_thresh) {
  std::map<std::pair<std::size_t, std::size_t>, std::vector<Detection>> groups;
  for (const auto& d : detections) groups[{d.image_id, d.category}].push_back(d);
  std::vector<Detection> out;
  for (auto& [key, group] : groups) {
    auto kept = nms(std::move(group), iou_thresh);
    out.insert(out.end(), kept.begin(), kept.end());
  }
  return out;
}

double average_precision(const std::vector<bool>& ranked_tp, std::size_t n_gt, ApInterpolation interp) {
  if (n_gt == 0 || ranked_tp.empty()) return 0.0;
  std::vector<double> prec(ranked_tp.size()), rec(ranked_tp.size());
  std::size_t tp = 0;
  for (std::size_t i = 0; i < ranked_tp.size(); ++i) {
    tp += ranked_tp[i];
    prec[i] = static_cast<double>(tp) / static_cast<double>(i + 1);
    rec[i] = static_cast<double>(tp) / static_cast<double>(n_gt);
  }
  if (interp == ApInterpolation::ElevenPoint) {
    double ap = 0.0;
    for (int k = 0; k <= 10; ++k) {
      const double t = k / 10.0;
      double p = 0.0;
      for (std::size_t i = 0; i < rec.size(); ++i)
        if (rec[i] >= t) p = std::max(p, prec[i]);
      ap += p / 11.0;
    }
    return ap;
  }
  // Precision envelope, integrated over recall steps.
  std::vector<double> env = prec;
  for (std::size_t i = env.size() - 1; i-- > 0;) env[i] = std::max(env[i], env[i + 1]);
  double ap = 0.0, prev_rec = 0.0;
  for (std::size_t i = 0; i < rec.size(); ++i) {
    if (rec[i] > prev_rec) {
      ap += (rec[i] - prev_rec) * env[i];
      prev_rec = rec[i];
    }
  }
  return ap;
}

ApResult ap_at(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
               double iou_thresh, ApInterpolation interp) {
  const GtIndex gt_index = index_ground_truth(ground_truth);
  std::map<std::size_t, std::size_t> n_gt;
  for (const auto& g : ground_truth) ++n_gt[g.category];

  std::map<std::size_t, std::vector<Detection>> by_cat;
  for (const auto& d : detections) by_cat[d.category].push_back(d);

  ApResult res;
  for (const auto& [cat, count] : n_gt) {
    auto dets = by_cat[cat];
    std::stable_sort(dets.begin(), dets.end(), ranks_before_global);
    std::vector<bool> matched(ground_truth.size(), false);
    std::vector<bool> tp;
    tp.reserve(dets.size());
    for (const auto& d : dets) {
      double best = -1.0;
      std::size_t best_g = 0;
      const auto it = gt_index.find({d.image_id, cat});
      if (it != gt_index.end()) {
        for (std::size_t g : it->second) {
          if (matched[g]) continue;
          const double v = iou(d.region, ground_truth[g].region);
          if (v > best) {
            best = v;
            best_g = g;
          }
        }
      }
      const bool hit = best >= iou_thresh;
      if (hit) matched[best_g] = true;
      tp.push_back(hit);
    }
    res.per_category[cat] = average_precision(tp, count, interp);
  }
  if (!res.per_category.empty()) {
    double s = 0.0;
    for (const auto& [c, v] : res.per_category) s += v;
    res.mean = s / static_cast<double>(res.per_category.size());
  }
  return res;
}

double coco_threshold(std::size_t k) { return static_cast<double>(50 + 5 * k) / 100.0; }

CocoApResult coco_ap(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth) {
  CocoApResult r;
  for (std::size_t k = 0; k < r.map_at.size(); ++k) r.map_at[k] = ap_at(detections, ground_truth, coco_threshold(k)).mean;
  r.ap = std::accumulate(r.map_at.begin(), r.map_at.end(), 0.0) / static_cast<double>(r.map_at.size());
  return r;
}

ErrorBreakdown diagnose(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                        const SimilarityMap& similarity, std::size_t n_categories) {
  for (std::size_t c = 0; c < n_categories; ++c)
    if (!similarity.contains(c))
      throw std::invalid_argument("diagnose: similarity map has no entry for category " + std::to_string(c));

  std::map<std::size_t, std::vector<std::size_t>> gts_by_image;
  std::map<std::size_t, std::size_t> n_gt;
  for (std::size_t g = 0; g < ground_truth.size(); ++g) {
    gts_by_image[ground_truth[g].image_id].push_back(g);
    ++n_gt[ground_truth[g].category];
  }

  std::map<std::size_t, std::vector<Detection>> by_cat;
  for (const auto& d : detections) by_cat[d.category].push_back(d);

  ErrorBreakdown out;
  out.n_gt = ground_truth.size();
  for (const auto& [cat, count] : n_gt) {
    auto dets = by_cat[cat];
    std::stable_sort(dets.begin(), dets.end(), ranks_before_global);
    if (dets.size() > count) dets.resize(count);
    const auto& similar = similarity.at(cat);
    std::vector<bool> matched(ground_truth.size(), false);
    auto& per_cat = out.per_category[cat];

    for (const auto& d : dets) {
      double best_unmatched = -1.0, best_same = 0.0, best_sim = 0.0, best_oth = 0.0;
      std::size_t best_g = 0;
      const auto it = gts_by_image.find(d.image_id);
      if (it != gts_by_image.end()) {
        for (std::size_t g : it->second) {
          const auto& gt = ground_truth[g];
          const double v = iou(d.region, gt.region);
          if (gt.category == cat) {
            best_same = std::max(best_same, v);
            if (!matched[g] && v > best_unmatched) {
              best_unmatched = v;
              best_g = g;
            }
          } else if (similar.contains(gt.category)) {
            best_sim = std::max(best_sim, v);
          } else {
            best_oth = std::max(best_oth, v);
          }
        }
      }
      ErrorType t;
      if (best_unmatched >= 0.5) {
        matched[best_g] = true;
        t = ErrorType::Cor;
      } else if (best_same >= 0.1) {
        t = ErrorType::Loc;
      } else if (best_sim >= 0.1) {
        t = ErrorType::Sim;
      } else if (best_oth >= 0.1) {
        t = ErrorType::Oth;
      } else {
        t = ErrorType::BG;
      }
      ++out.counts[static_cast<std::size_t>(t)];
      ++per_cat[static_cast<std::size_t>(t)];
      ++out.counted;
    }
  }
  if (out.counted > 0)
    for (std::size_t k = 0; k < 5; ++k)
      out.fractions[k] = static_cast<double>(out.counts[k]) / static_cast<double>(out.counted);
  return out;
}

}  // namespace noc
