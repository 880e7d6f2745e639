#pragma once

// Shared oracles for the unit tests and the acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <set>
#include <vector>

#include "noc/boxes.hpp"
#include "noc/eval.hpp"
#include "noc/pyramid.hpp"
#include "noc/rng.hpp"
#include "noc/tensor.hpp"

namespace noc::testing {

struct GradCheck {
  double max_rel = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates next to a kink
};

// Central differences on `x` for up to `samples` coordinates, using the steps
// actually representable in float. A coordinate is skipped when the central
// differences at h and h/2 disagree: a kink or tie lies inside the stencil.
inline GradCheck check_gradient(Tensor& x, const Tensor& analytic, const std::function<double()>& loss, Rng& rng,
                                std::size_t samples = 40, double h = 1e-2, double floor = 1e-2) {
  GradCheck out;
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::shuffle(idx.begin(), idx.end(), rng);
  if (idx.size() > samples) idx.resize(samples);
  auto central = [&](std::size_t i, double step) {
    const float orig = x[i];
    const float up = static_cast<float>(orig + step);
    const float dn = static_cast<float>(orig - step);
    x[i] = up;
    const double fp = loss();
    x[i] = dn;
    const double fm = loss();
    x[i] = orig;
    return (fp - fm) / (static_cast<double>(up) - dn);
  };
  for (std::size_t i : idx) {
    const double numeric = central(i, h);
    const double half = central(i, h / 2);
    if (std::abs(numeric - half) > 5e-4 * std::max({std::abs(numeric), std::abs(half), floor})) {
      ++out.skipped;
      continue;
    }
    const double a = analytic[i];
    const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    out.max_rel = std::max(out.max_rel, rel);
    ++out.checked;
  }
  return out;
}

// Loss = sum(out * w) with w fixed; its gradient with respect to out is w.
inline double weighted_sum(const Tensor& out, const Tensor& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += static_cast<double>(out[i]) * w[i];
  return s;
}

// Per-bin max computed from scratch, integer arithmetic only. Returns
// (values, argmax) or nothing when the window is empty.
struct OraclePool {
  bool ok = false;
  std::vector<float> values;
  std::vector<std::uint32_t> argmax;
};

inline OraclePool roi_pool_oracle(const Tensor& map, const Region& r, double stride, std::size_t m) {
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  auto lo = [&](double v, std::size_t n) {
    const double s = std::floor(v / stride);
    return static_cast<std::size_t>(std::clamp(s, 0.0, static_cast<double>(n)));
  };
  auto hi = [&](double v, std::size_t n) {
    const double s = std::ceil(v / stride);
    return static_cast<std::size_t>(std::clamp(s, 0.0, static_cast<double>(n)));
  };
  const std::size_t x0 = lo(r.x1, w), x1 = hi(r.x2, w), y0 = lo(r.y1, h), y1 = hi(r.y2, h);
  OraclePool out;
  if (x1 <= x0 || y1 <= y0) return out;
  const std::size_t ww = x1 - x0, wh = y1 - y0;
  out.ok = true;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t by = 0; by < m; ++by)
      for (std::size_t bx = 0; bx < m; ++bx) {
        const std::size_t ys = y0 + by * wh / m, ye = y0 + ((by + 1) * wh + m - 1) / m;
        const std::size_t xs = x0 + bx * ww / m, xe = x0 + ((bx + 1) * ww + m - 1) / m;
        float best = -std::numeric_limits<float>::infinity();
        std::uint32_t arg = 0;
        bool any = false;
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) {
            if (y < ys || y >= ye || x < xs || x >= xe) continue;
            const std::size_t flat = (ch * h + y) * w + x;
            if (!any || map[flat] > best) {
              best = map[flat];
              arg = static_cast<std::uint32_t>(flat);
              any = true;
            }
          }
        out.values.push_back(best);
        out.argmax.push_back(arg);
      }
  return out;
}

// All-points AP by brute force: for every recall level reached, the best
// precision at any cutoff with at least that recall.
inline double ap_oracle(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> prec, rec;
  std::size_t hits = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    hits += tp[k] ? 1 : 0;
    prec.push_back(static_cast<double>(hits) / static_cast<double>(k + 1));
    rec.push_back(static_cast<double>(hits) / static_cast<double>(n_gt));
  }
  double ap = 0.0;
  for (std::size_t level = 1; level <= n_gt; ++level) {
    const double r = static_cast<double>(level) / static_cast<double>(n_gt);
    double best = 0.0;
    for (std::size_t k = 0; k < prec.size(); ++k)
      if (rec[k] >= r - 1e-12) best = std::max(best, prec[k]);
    ap += best / static_cast<double>(n_gt);
  }
  return ap;
}

inline double ap11_oracle(const std::vector<bool>& tp, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  double ap = 0.0;
  for (int t = 0; t <= 10; ++t) {
    double best = 0.0;
    std::size_t hits = 0;
    for (std::size_t k = 0; k < tp.size(); ++k) {
      hits += tp[k] ? 1 : 0;
      const double r = static_cast<double>(hits) / static_cast<double>(n_gt);
      if (r >= t / 10.0) best = std::max(best, static_cast<double>(hits) / static_cast<double>(k + 1));
    }
    ap += best / 11.0;
  }
  return ap;
}

// Score-ordered greedy matching for one category, written independently of
// the library. Detections must carry distinct scores.
inline std::vector<bool> match_oracle(std::vector<Detection> dets, const std::vector<GroundTruth>& gts,
                                      std::size_t category, double thresh) {
  std::vector<Detection> mine;
  for (const auto& d : dets)
    if (d.category == category) mine.push_back(d);
  std::sort(mine.begin(), mine.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<bool> used(gts.size(), false), tp;
  for (const auto& d : mine) {
    int pick = -1;
    double best = -1.0;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (used[g] || gts[g].category != category || gts[g].image_id != d.image_id) continue;
      const double v = iou(d.region, gts[g].region);
      if (v > best) {
        best = v;
        pick = static_cast<int>(g);
      }
    }
    if (pick >= 0 && best >= thresh) {
      used[pick] = true;
      tp.push_back(true);
    } else {
      tp.push_back(false);
    }
  }
  return tp;
}

// Greedy NMS characterized as the unique subset S where a box is in S iff no
// higher-ranked member of S overlaps it at or above the threshold. Found by
// enumerating all subsets.
inline std::vector<std::size_t> nms_oracle(const std::vector<Detection>& d, double thresh,
                                           const std::vector<std::size_t>& rank_order, std::size_t* n_valid = nullptr) {
  const std::size_t n = d.size();
  std::vector<std::size_t> pos(n);
  for (std::size_t k = 0; k < n; ++k) pos[rank_order[k]] = k;
  std::vector<std::size_t> answer;
  std::size_t valid = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    bool good = true;
    for (std::size_t i = 0; i < n && good; ++i) {
      bool blocked = false;
      for (std::size_t j = 0; j < n; ++j)
        if ((mask >> j & 1) && pos[j] < pos[i] && iou(d[i].region, d[j].region) >= thresh) blocked = true;
      const bool in = mask >> i & 1;
      if (in == blocked) good = false;
    }
    if (good) {
      ++valid;
      answer.clear();
      for (std::size_t k = 0; k < n; ++k)
        if (mask >> rank_order[k] & 1) answer.push_back(rank_order[k]);
    }
  }
  if (n_valid) *n_valid = valid;
  return answer;
}

inline Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return uniform_tensor(s, lo, hi, rng);
}

}  // namespace noc::testing
