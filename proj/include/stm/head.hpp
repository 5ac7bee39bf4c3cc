#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "stm/geometry.hpp"
#include "stm/graph.hpp"
#include "stm/rng.hpp"

namespace stm {

template <typename T>
struct HeadOutputs {
  Tensor<T> cls;  // 1 x H x W logits
  Tensor<T> ctr;  // 1 x H x W logits
  Tensor<T> reg;  // 4 x H x W distances (l, t, r, b) in input pixels, >= 0
};

template <typename T>
struct EncodedTargets {
  Tensor<T> cls_labels;   // 1 x H x W in {0, 1}
  Tensor<T> ctr_labels;   // 1 x H x W in [0, 1], zero off the positives
  Tensor<T> reg_targets;  // 4 x H x W, defined on positives
  int num_pos = 0;
};

struct NoPositiveCells : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct PostprocessConfig {
  double penalty_k = 0.04;
  double window_influence = 0.21;
  double size_lr = 0.5;
  bool enable_penalty = true;
  bool enable_window = true;
};

template <typename T>
struct DecodeResult {
  BBox box;
  double score = 0;
  bool lost = false;
  int best_cell = -1;
};

// Anchor-free head: a conv tower omega_cls feeding 1x1 classification and
// center-ness outputs (the center-ness branch forks after the tower), and a
// separate tower omega_reg feeding the 1x1 regression output. Regression
// passes through stride * exp(.) to stay positive and scale-calibrated.
template <typename T>
class HeadNet {
 public:
  HeadNet(int in_channels, int depth, int stride, Rng& rng);

  struct Nodes {
    NodeId cls, ctr, reg;
  };
  Nodes forward(Graph<T>& g, NodeId synth);
  HeadOutputs<T> forward(const Tensor<T>& synth);

  void visit_params(const std::function<void(Parameter<T>&)>& fn);
  int stride() const { return stride_; }

 private:
  struct Conv {
    Parameter<T> w, b;
    int pad = 1;
  };
  static Conv make_conv(const std::string& name, int cout, int cin, int k,
                        Rng& rng);
  NodeId tower(Graph<T>& g, std::vector<Conv>& t, NodeId x);

  std::vector<Conv> cls_tower_, reg_tower_;
  Conv cls_out_, ctr_out_, reg_out_;
  int stride_;
};

// Cell (i, j) is positive iff its image-space center falls inside gt
// (half-open on the right/bottom edges); regression targets are the four
// distances to the box sides, center-ness the usual sqrt of min/max ratios.
// Throws NoPositiveCells when nothing lands inside.
template <typename T>
EncodedTargets<T> encode_targets(const BBox& gt, const GridGeometry& grid,
                                 int h, int w);

// Outer product of Hann windows, values in [0, 1].
template <typename T>
Tensor<T> make_cosine_window(int h, int w);

// SiamFC++-style postprocessing in patch coordinates: score =
// sigmoid(cls)*sigmoid(ctr), scale/ratio penalty against prev, cosine-window
// blend, argmax (ties -> smallest row-major index), then size smoothing
// toward prev. Returns prev with score 0 when every final score vanishes.
template <typename T>
DecodeResult<T> decode(const HeadOutputs<T>& outputs, const GridGeometry& grid,
                       const BBox& prev, const Tensor<T>& window,
                       const PostprocessConfig& cfg);

}  // namespace stm
