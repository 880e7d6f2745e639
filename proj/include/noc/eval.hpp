#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "noc/boxes.hpp"

namespace noc {

/// Greedy suppression: visit by descending score (ties by lower x1, y1, x2,
/// y2) and keep a box iff its IoU with every kept box is below iou_thresh.
std::vector<Detection> nms(std::vector<Detection> detections, double iou_thresh);

/// Applies nms independently per (image, category).
std::vector<Detection> nms_grouped(const std::vector<Detection>& detections, double iou_thresh);

enum class ApInterpolation { AllPoints, ElevenPoint };

struct ApResult {
  std::map<std::size_t, double> per_category;  // categories with >= 1 gt
  double mean = 0.0;
};

/// Per-category AP at one IoU threshold. Detections are matched in score
/// order to the highest-IoU unmatched ground truth of the same image and
/// category with IoU >= iou_thresh.
ApResult ap_at(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
               double iou_thresh, ApInterpolation interp = ApInterpolation::AllPoints);

/// AP from one category's ranked TP flags (true = TP) and its gt count.
double average_precision(const std::vector<bool>& ranked_tp, std::size_t n_gt,
                         ApInterpolation interp = ApInterpolation::AllPoints);

struct CocoApResult {
  std::array<double, 10> map_at{};  // thresholds 0.50, 0.55, ..., 0.95
  double ap = 0.0;
};

CocoApResult coco_ap(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth);

/// IoU threshold k of the 0.50:0.05:0.95 sweep.
double coco_threshold(std::size_t k);

enum class ErrorType { Cor = 0, Loc = 1, Sim = 2, Oth = 3, BG = 4 };
inline constexpr std::array<const char*, 5> kErrorTypeNames{"Cor", "Loc", "Sim", "Oth", "BG"};

struct ErrorBreakdown {
  std::array<std::size_t, 5> counts{};
  std::array<double, 5> fractions{};
  std::size_t n_gt = 0;     // total ground-truth labels
  std::size_t counted = 0;  // predictions classified (== n_gt when enough detections exist)
  std::map<std::size_t, std::array<std::size_t, 5>> per_category;

  double fraction(ErrorType t) const { return fractions[static_cast<std::size_t>(t)]; }
};

/// Similar-category sets, keyed by category.
using SimilarityMap = std::map<std::size_t, std::set<std::size_t>>;

/// Classifies, per category, the top-N scored detections (N = that
/// category's gt count) as Cor / Loc / Sim / Oth / BG.
ErrorBreakdown diagnose(const std::vector<Detection>& detections, const std::vector<GroundTruth>& ground_truth,
                        const SimilarityMap& similarity, std::size_t n_categories);

// ---------------------------------------------------------------------------
// Reports and detection files
// ---------------------------------------------------------------------------

/// One aggregated measurement; `category` is a category name or "all".
struct MetricRow {
  std::string experiment;
  std::string category;
  std::string metric;
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;

  bool operator==(const MetricRow&) const = default;
};

struct NamedBreakdown {
  std::string experiment;
  ErrorBreakdown breakdown;
};

std::string report_csv(const std::vector<MetricRow>& rows);
nlohmann::json report_json(const std::vector<MetricRow>& rows, const std::vector<NamedBreakdown>& breakdowns);
std::vector<MetricRow> rows_from_json(const nlohmann::json& j);
std::vector<NamedBreakdown> breakdowns_from_json(const nlohmann::json& j);

/// Writes `<dir>/results.csv` and `<dir>/breakdown.json`.
void emit_report(const std::string& dir, const std::vector<MetricRow>& rows,
                 const std::vector<NamedBreakdown>& breakdowns);

/// JSON lines: {"image_id":..,"category":..,"x1":..,"y1":..,"x2":..,"y2":..,"score":..}
void write_detections_jsonl(std::ostream& out, const std::vector<Detection>& detections);
/// Throws FormatError (with line number) on malformed input.
std::vector<Detection> read_detections_jsonl(std::istream& in);

}  // namespace noc
