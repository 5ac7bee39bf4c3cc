#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "stm/geometry.hpp"
#include "stm/rng.hpp"
#include "stm/tensor.hpp"

namespace stm {

// Crop-window jitter: translation in [-f*S, f*S] per axis and a window scale
// in [1/(1+r), 1+r].
struct AugmentParams {
  double dx = 0;
  double dy = 0;
  double scale = 1.0;
};

AugmentParams sample_augment(Rng& rng, double side, double translate_frac = 0.2,
                             double scale_r = 0.3);

// Context side S = 4 * sqrt(w*h) around the target center. The window may
// be jittered; out-of-frame area is filled with the per-channel frame mean
// and the result is bilinearly resampled to out_side.
std::pair<Tensor<float>, CropTransform> crop_patch(const Tensor<float>& frame,
                                                   const BBox& target,
                                                   int out_side = 289,
                                                   const AugmentParams& aug = {});

struct LabelMap {
  Tensor<float> map;     // 1 x S x S, 1 inside the box, 0 elsewhere
  bool outside = false;  // set when the box misses the patch entirely
};

// Pixel = 1 iff its source-image center lies inside the box, half-open
// [x, x+w) x [y, y+h).
LabelMap make_label_map(const BBox& box_in_image, const CropTransform& geom);

// T frame indices with max-min <= max_gap, sorted ascending; the last one is
// the query, the first T-1 the memory frames. A length-1 source yields T
// copies of frame 0 (the synthetic-video path for still images).
std::vector<int> sample_training_frames(int seq_length, int t_frames,
                                        int max_gap, Rng& rng);

struct OccluderSpec {
  int first_frame = 0;
  int last_frame = -1;
  double coverage = 0.6;  // fraction of the target area hidden
};

struct SequenceSpec {
  int length = 60;
  int width = 128;
  int height = 128;
  std::string target_shape = "rect";  // rect | ellipse
  double target_w = 26;
  double target_h = 20;
  double speed = 1.2;          // target velocity magnitude, px/frame
  double deform_amp = 0.0;     // aspect drift amplitude (area preserving)
  double deform_period = 40.0;
  int clutter = 0;             // distractor count
  double noise = 0.02;         // per-frame multiplicative texture noise
  std::vector<OccluderSpec> occluders;

  void validate() const;
};

struct FrameEvent {
  double occlusion_frac = 0;
  double aspect = 1;
  BBox occluder;  // meaningful when occlusion_frac > 0
};

struct SequenceRecord {
  std::vector<Tensor<float>> frames;  // 3 x H x W, values in [0, 1]
  std::vector<BBox> gt;
  std::vector<FrameEvent> events;
};

// Deterministic given (spec, seed): same seed, bit-identical frames.
SequenceRecord synth_sequence(const SequenceSpec& spec, std::uint64_t seed);

// Named suite presets used by the ablation harnesses: "plain", "occlusion"
// (heavy mid-sequence occluder plus deformation), "clutter" (distractors
// sharing the target's texture family).
SequenceSpec preset_sequence_spec(const std::string& name);

// On-disk form: numbered P6 frames, OTB-style groundtruth.txt (x,y,w,h per
// line), events.json sidecar.
void write_ppm(const std::string& path, const Tensor<float>& chw);
Tensor<float> read_ppm(const std::string& path);
void save_sequence(const std::string& dir, const SequenceRecord& seq);
SequenceRecord load_sequence(const std::string& dir);

}  // namespace stm
