#pragma once

#include <string>
#include <vector>

#include "stm/geometry.hpp"

namespace stm {

double iou(const BBox& a, const BBox& b);

struct Metrics {
  double success_auc = 0;     // mean over 101 thresholds of frac(IoU > tau)
  double precision = 0;       // frac(center error <= 20 px)
  double norm_precision = 0;  // frac(center error / sqrt(gt area) <= 0.2)
  double ao = 0;              // mean IoU
  double sr50 = 0;            // frac(IoU > 0.5)
  double sr75 = 0;            // frac(IoU > 0.75)
};

// Success AUC uses 101 uniform thresholds {0, 0.01, ..., 1}; AO is computed
// separately as the plain mean IoU. Throws on empty or mismatched input.
Metrics compute_metrics(const std::vector<BBox>& preds,
                        const std::vector<BBox>& gts);

struct TrackedFrame {
  int frame = 0;  // 1-based
  BBox box;
  double score = 0;
};

// One line per frame: frame_idx,x,y,w,h,score (header row included).
void write_results_csv(const std::string& path,
                       const std::vector<TrackedFrame>& rows);
std::vector<TrackedFrame> read_results_csv(const std::string& path);

}  // namespace stm
