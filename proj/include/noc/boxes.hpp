#pragma once

#include <cstddef>
#include <vector>

#include "noc/pyramid.hpp"

namespace noc {

/// Intersection over union on continuous box area; 0 for disjoint boxes.
double iou(const Region& a, const Region& b);

struct GroundTruth {
  std::size_t image_id = 0;
  std::size_t category = 0;
  Region region;
};

struct Detection {
  std::size_t image_id = 0;
  std::size_t category = 0;
  Region region;
  double score = 0.0;
};

}  // namespace noc
