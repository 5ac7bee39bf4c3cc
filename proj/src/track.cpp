#include "stm/track.hpp"

#include <chrono>
#include <stdexcept>

namespace stm {

template <typename T>
TrackerSession<T>::TrackerSession(TrackModel<T>& model, TrackerConfig cfg,
                                  const Tensor<float>& first_frame,
                                  const BBox& init)
    : model_(model), cfg_(cfg), bank_(cfg.cache_cap) {
  if (!init.valid())
    throw std::invalid_argument("tracker: invalid initialization box");
  if (cfg_.memory_size < 0)
    throw std::invalid_argument("tracker: memory size must be >= 0");
  if (cfg_.memory_size >= 2) cfg_.sampler().validate();
  model_.features().set_use_label_map(cfg_.use_label_map &&
                                      model_.config().backbone.use_label_map);
  const int gs = model_.grid_side();
  window_ = make_cosine_window<T>(gs, gs);
  prev_ = init;
  store_memory(first_frame, init, 1);  // ground-truth label map
}

template <typename T>
std::vector<int> TrackerSession<T>::select(int t) const {
  if (cfg_.selection_override) return cfg_.selection_override(t);
  if (cfg_.memory_size == 1) return {1};
  if (cfg_.memory_size == 0) {
    std::vector<int> all(static_cast<std::size_t>(t - 1));
    for (int i = 1; i < t; ++i) all[static_cast<std::size_t>(i - 1)] = i;
    return all;
  }
  return select_memory_indices(t, cfg_.sampler());
}

template <typename T>
void TrackerSession<T>::store_memory(const Tensor<float>& frame,
                                     const BBox& box, int frame_index) {
  auto [patch, geom] =
      crop_patch(frame, box, model_.config().backbone.input_side);
  const LabelMap lm = make_label_map(box, geom);
  FeatureMap<T> fm;
  fm.data = model_.features().embed_memory(patch.template cast<T>(),
                                           lm.map.template cast<T>());
  fm.source_frame = frame_index;
  fm.geometry = geom;
  bank_.update(std::move(fm), frame_index);
}

template <typename T>
typename TrackerSession<T>::StepResult TrackerSession<T>::step(
    const Tensor<float>& frame) {
  const auto t0 = std::chrono::steady_clock::now();
  ++t_;

  const std::vector<int> indices = select(t_);
  if (cfg_.selection_log) {
    (*cfg_.selection_log) << t_ << ": [";
    for (std::size_t i = 0; i < indices.size(); ++i)
      (*cfg_.selection_log) << (i ? ", " : "") << indices[i];
    (*cfg_.selection_log) << "]\n";
  }
  std::vector<FeatureMap<T>> maps = bank_.gather(indices);
  if (maps.empty())
    throw std::runtime_error("tracker: memory bank lost every selected frame");
  const StackedMemory<T> memory = stack_memory(maps);

  auto [qpatch, qgeom] =
      crop_patch(frame, prev_, model_.config().backbone.input_side);

  // One graph per frame: query embedding, read, head.
  Graph<T> g;
  NodeId rows = g.constant(memory.rows);
  NodeId query = model_.features().embed_query(
      g, g.constant(qpatch.template cast<T>()));
  NodeId synth = memory_read(g, rows, query);
  auto heads = model_.head().forward(g, synth);
  HeadOutputs<T> out{g.value(heads.cls), g.value(heads.ctr),
                     g.value(heads.reg)};

  const BBox prev_patch = qgeom.to_patch(prev_);
  const DecodeResult<T> dec =
      decode(out, model_.grid(), prev_patch, window_, cfg_.post);

  StepResult res;
  res.lost = dec.lost;
  res.score = dec.score;
  res.box = dec.lost ? prev_ : qgeom.to_image(dec.box);
  prev_ = res.box;
  store_memory(frame, prev_, t_);  // predicted-box label map

  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                              t0)
                    .count();
  return res;
}

template <typename T>
std::vector<TrackedFrame> track_sequence(TrackModel<T>& model,
                                         const SequenceRecord& seq,
                                         const TrackerConfig& cfg,
                                         std::vector<double>* frame_seconds) {
  if (seq.frames.empty() || seq.frames.size() != seq.gt.size())
    throw std::invalid_argument("track_sequence: empty or inconsistent data");
  std::vector<TrackedFrame> out;
  out.reserve(seq.frames.size());
  out.push_back(TrackedFrame{1, seq.gt[0], 1.0});
  if (frame_seconds) frame_seconds->push_back(0.0);

  TrackerSession<T> session(model, cfg, seq.frames[0], seq.gt[0]);
  for (std::size_t i = 1; i < seq.frames.size(); ++i) {
    const auto r = session.step(seq.frames[i]);
    out.push_back(TrackedFrame{static_cast<int>(i) + 1, r.box, r.score});
    if (frame_seconds) frame_seconds->push_back(r.seconds);
  }
  return out;
}

template class TrackerSession<float>;
template class TrackerSession<double>;
template std::vector<TrackedFrame> track_sequence(TrackModel<float>&,
                                                  const SequenceRecord&,
                                                  const TrackerConfig&,
                                                  std::vector<double>*);
template std::vector<TrackedFrame> track_sequence(TrackModel<double>&,
                                                  const SequenceRecord&,
                                                  const TrackerConfig&,
                                                  std::vector<double>*);

}  // namespace stm
