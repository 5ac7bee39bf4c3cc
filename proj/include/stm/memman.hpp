#pragma once

#include <vector>

#include "stm/features.hpp"

namespace stm {

struct SamplerConfig {
  int memory_size = 6;  // N
  double delta = 0.5;   // per-segment offset, in [0, 1)
  // The printed sampling formula floor(L*(i+delta)) overruns t-1 for most t;
  // the mid-segment form floor(L*(i-1+delta)) realizes the stated intent.
  // The literal form stays available (clamped) for comparison.
  bool literal_formula = false;

  void validate() const;
};

// Memory-frame selection for current frame t (>= 2) over history [1, t-1].
// For t <= N all historical frames are returned; otherwise the first frame,
// one representative per segment, and the previous frame, deduplicated and
// sorted ascending. Result length never exceeds N.
std::vector<int> select_memory_indices(int t, const SamplerConfig& cfg);

// Embedding cache for one tracking session. Eviction drops the
// least-recently-selected entry beyond the cap; frame 1 is pinned since
// every future selection includes it.
template <typename T>
class MemoryBank {
 public:
  explicit MemoryBank(int cache_cap = 64);

  void update(FeatureMap<T> feature, int frame_index);
  const FeatureMap<T>* find(int frame_index) const;
  // Collects the cached embeddings for `frames` (missing ones are skipped)
  // and refreshes their selection stamps.
  std::vector<FeatureMap<T>> gather(const std::vector<int>& frames);

  std::size_t size() const { return entries_.size(); }
  std::vector<int> frames() const;

 private:
  struct Entry {
    FeatureMap<T> feature;
    int frame = 0;
    long last_selected = 0;
  };
  void evict_beyond_cap();

  std::vector<Entry> entries_;  // sorted by frame, unique
  long clock_ = 0;
  int cap_;
};

}  // namespace stm
