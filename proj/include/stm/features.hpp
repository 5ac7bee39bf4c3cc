#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stm/geometry.hpp"
#include "stm/graph.hpp"
#include "stm/rng.hpp"

namespace stm {

struct BackboneConfig {
  std::vector<int> stage_channels{16, 32, 64, 64};
  std::vector<int> stage_strides{2, 2, 1, 2};
  int kernel = 3;
  int reduced_channels = 32;  // C, the embedding width both branches share
  int input_side = 289;
  bool share_backbone = false;
  bool use_label_map = true;
  // When sharing the backbone, the 1x1 reducers stay separate unless this is
  // also set; sharing phi alone is the default reading.
  bool share_reducers = false;

  int total_stride() const {
    int s = 1;
    for (int v : stage_strides) s *= v;
    return s;
  }
  // Spatial extent after the stage cascade (k=3, pad=1 convs).
  int grid_side() const {
    int side = input_side;
    for (int s : stage_strides) side = (side + 2 * (kernel / 2) - kernel) / s + 1;
    return side;
  }
  GridGeometry grid() const {
    return GridGeometry{total_stride(), total_stride() / 2.0};
  }
  void validate() const;
};

template <typename T>
struct FeatureMap {
  Tensor<T> data;  // C x H x W
  int source_frame = -1;
  CropTransform geometry;
};

// Memory/query feature extractors: backbones phi_m / phi_q, the label-map
// embedder g, and the 1x1 reducers h_m / h_q. When share_backbone is set,
// phi_q aliases phi_m's parameters (g stays memory-side only).
template <typename T>
class FeatureExtractor {
 public:
  FeatureExtractor(BackboneConfig cfg, Rng& rng);

  NodeId embed_memory(Graph<T>& g, NodeId frame, NodeId label_map);
  NodeId embed_query(Graph<T>& g, NodeId frame);

  // Inference conveniences running a throwaway graph.
  Tensor<T> embed_memory(const Tensor<T>& frame, const Tensor<T>& label_map);
  Tensor<T> embed_query(const Tensor<T>& frame);

  void visit_params(const std::function<void(Parameter<T>&)>& fn);
  std::size_t parameter_count();

  const BackboneConfig& config() const { return cfg_; }
  bool backbone_shared() const { return cfg_.share_backbone; }

  // Runtime switch for ablations: ignore label maps even if g was trained.
  void set_use_label_map(bool b) { use_label_map_ = b; }
  bool use_label_map() const { return use_label_map_; }

 private:
  struct Conv {
    Parameter<T> w, b;
    int stride = 1, pad = 1;
  };

  static Conv make_conv(const std::string& name, int cout, int cin, int k,
                        int stride, Rng& rng);
  NodeId apply_conv(Graph<T>& g, Conv& c, NodeId x, bool with_relu);
  NodeId backbone_tail(Graph<T>& g, std::vector<Conv>& stages, NodeId x);

  BackboneConfig cfg_;
  bool use_label_map_ = true;
  std::vector<Conv> phi_m_;
  std::vector<Conv> phi_q_;  // empty when the backbone is shared
  Parameter<T> g_weight_;    // label embedder, bias-free
  Conv h_m_, h_q_;           // h_q_ unused when reducers are shared
};

}  // namespace stm
