#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stm/data.hpp"
#include "stm/metrics.hpp"
#include "stm/model.hpp"
#include "stm/track.hpp"

namespace stm {

struct SuiteConfig {
  std::string preset = "occlusion";
  int sequences = 20;
  int length = 60;
  std::uint64_t seed = 7;
};

// Deterministic bundle of synthetic sequences (per-sequence seeds derived
// from the suite seed).
std::vector<SequenceRecord> make_suite(const SuiteConfig& cfg);

struct SuiteRunResult {
  double mean_iou = 0;  // mean over sequences of per-sequence mean IoU,
                        // initialization frame excluded
  Metrics mean_metrics;
  double median_frame_seconds = 0;
  std::vector<double> per_sequence_iou;
};

template <typename T>
SuiteRunResult run_suite(TrackModel<T>& model,
                         const std::vector<SequenceRecord>& suite,
                         const TrackerConfig& cfg, int threads);

// Median wall time of the space-time read at the given feature shape, per
// memory size, after warmup; rows come back sorted by memory size.
struct BenchRow {
  int t_frames = 0;
  int channels = 0, height = 0, width = 0;
  double median_seconds = 0;
};
std::vector<BenchRow> bench_read(int channels, int height, int width,
                                 std::vector<int> t_list, int repeats,
                                 int warmups = 3);

}  // namespace stm
