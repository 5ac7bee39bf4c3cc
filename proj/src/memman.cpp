#include "stm/memman.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stm {

void SamplerConfig::validate() const {
  if (memory_size < 2)
    throw std::invalid_argument("sampler: memory size N must be >= 2");
  if (delta < 0.0 || delta >= 1.0)
    throw std::invalid_argument("sampler: delta must be in [0, 1)");
}

std::vector<int> select_memory_indices(int t, const SamplerConfig& cfg) {
  cfg.validate();
  if (t < 2)
    throw std::invalid_argument("select_memory_indices: t must be >= 2");
  const int n = cfg.memory_size;

  if (t <= n) {
    std::vector<int> all(static_cast<std::size_t>(t - 1));
    for (int i = 1; i < t; ++i) all[static_cast<std::size_t>(i - 1)] = i;
    return all;
  }

  std::vector<int> picks{1, t - 1};
  const int segments = n - 2;
  if (segments > 0) {
    const long seg_len = (static_cast<long>(t) - 1) / segments;
    for (int i = 1; i <= segments; ++i) {
      const double pos = cfg.literal_formula
                             ? static_cast<double>(seg_len) * (i + cfg.delta)
                             : static_cast<double>(seg_len) *
                                   (i - 1 + cfg.delta);
      long rep = static_cast<long>(std::floor(pos));
      rep = std::clamp(rep, 1L, static_cast<long>(t) - 1);
      picks.push_back(static_cast<int>(rep));
    }
  }
  std::sort(picks.begin(), picks.end());
  picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
  return picks;
}

template <typename T>
MemoryBank<T>::MemoryBank(int cache_cap) : cap_(cache_cap) {
  if (cache_cap < 2)
    throw std::invalid_argument("memory bank: cache cap must be >= 2");
}

template <typename T>
void MemoryBank<T>::update(FeatureMap<T> feature, int frame_index) {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), frame_index,
      [](const Entry& e, int f) { return e.frame < f; });
  if (it != entries_.end() && it->frame == frame_index) {
    it->feature = std::move(feature);
    return;
  }
  Entry e;
  e.feature = std::move(feature);
  e.frame = frame_index;
  e.last_selected = ++clock_;
  entries_.insert(it, std::move(e));
  evict_beyond_cap();
}

template <typename T>
const FeatureMap<T>* MemoryBank<T>::find(int frame_index) const {
  auto it = std::lower_bound(
      entries_.begin(), entries_.end(), frame_index,
      [](const Entry& e, int f) { return e.frame < f; });
  if (it == entries_.end() || it->frame != frame_index) return nullptr;
  return &it->feature;
}

template <typename T>
std::vector<FeatureMap<T>> MemoryBank<T>::gather(
    const std::vector<int>& frames) {
  ++clock_;
  std::vector<FeatureMap<T>> out;
  out.reserve(frames.size());
  for (int f : frames) {
    auto it = std::lower_bound(
        entries_.begin(), entries_.end(), f,
        [](const Entry& e, int fr) { return e.frame < fr; });
    if (it == entries_.end() || it->frame != f) continue;
    it->last_selected = clock_;
    out.push_back(it->feature);
  }
  return out;
}

template <typename T>
void MemoryBank<T>::evict_beyond_cap() {
  while (entries_.size() > static_cast<std::size_t>(cap_)) {
    auto victim = entries_.end();
    for (auto it = entries_.begin(); it != entries_.end(); ++it) {
      if (it->frame == 1) continue;  // pinned
      if (victim == entries_.end() ||
          it->last_selected < victim->last_selected)
        victim = it;
    }
    if (victim == entries_.end()) return;
    entries_.erase(victim);
  }
}

template <typename T>
std::vector<int> MemoryBank<T>::frames() const {
  std::vector<int> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.frame);
  return out;
}

template class MemoryBank<float>;
template class MemoryBank<double>;

}  // namespace stm
