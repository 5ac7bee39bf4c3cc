#pragma once

#include <functional>
#include <ostream>
#include <vector>

#include "stm/data.hpp"
#include "stm/memman.hpp"
#include "stm/metrics.hpp"
#include "stm/model.hpp"

namespace stm {

struct TrackerConfig {
  // Memory size N. Special values: 1 tracks against the first frame only
  // (template-style baseline), 0 keeps every historical frame.
  int memory_size = 6;
  double delta = 0.5;
  bool literal_formula = false;
  int cache_cap = 64;
  bool use_label_map = true;  // runtime override, independent of training
  PostprocessConfig post;
  std::ostream* selection_log = nullptr;  // "t: [i1, i2, ...]" per frame
  // Test hook: full replacement for the selection rule (given t, returns
  // the memory frame indices).
  std::function<std::vector<int>(int)> selection_override;

  SamplerConfig sampler() const {
    SamplerConfig s;
    s.memory_size = memory_size;
    s.delta = delta;
    s.literal_formula = literal_formula;
    return s;
  }
};

// One tracking session over one sequence; owns the memory bank and the
// previous-box state. Sessions are single-owner; run concurrent sequences on
// separate sessions (the model is only read).
template <typename T>
class TrackerSession {
 public:
  TrackerSession(TrackModel<T>& model, TrackerConfig cfg,
                 const Tensor<float>& first_frame, const BBox& init);

  struct StepResult {
    BBox box;
    double score = 0;
    bool lost = false;
    double seconds = 0;
  };
  StepResult step(const Tensor<float>& frame);

  int frame_index() const { return t_; }
  const BBox& current_box() const { return prev_; }
  const MemoryBank<T>& bank() const { return bank_; }

 private:
  std::vector<int> select(int t) const;
  void store_memory(const Tensor<float>& frame, const BBox& box,
                    int frame_index);

  TrackModel<T>& model_;
  TrackerConfig cfg_;
  MemoryBank<T> bank_;
  Tensor<T> window_;
  BBox prev_;
  int t_ = 1;
};

// Full-sequence driver: frame 1 output is the ground-truth initialization,
// every later frame runs the session. Per-frame wall time lands in
// frame_seconds when provided.
template <typename T>
std::vector<TrackedFrame> track_sequence(TrackModel<T>& model,
                                         const SequenceRecord& seq,
                                         const TrackerConfig& cfg,
                                         std::vector<double>* frame_seconds =
                                             nullptr);

}  // namespace stm
