#include "stm/features.hpp"

#include <cmath>
#include <stdexcept>

namespace stm {

void BackboneConfig::validate() const {
  if (stage_channels.empty() || stage_channels.size() != stage_strides.size())
    throw std::invalid_argument(
        "backbone: stage_channels and stage_strides must match and be "
        "non-empty");
  if (reduced_channels < 1)
    throw std::invalid_argument("backbone: reduced_channels must be >= 1");
  if (kernel < 1 || kernel % 2 == 0)
    throw std::invalid_argument("backbone: kernel must be odd and >= 1");
  if (input_side < total_stride())
    throw std::invalid_argument("backbone: input side smaller than stride");
  for (int s : stage_strides)
    if (s < 1) throw std::invalid_argument("backbone: stride must be >= 1");
}

namespace {

// Centered uniform fan-in init keeps pre-activation variance near 1, which
// the 64-bit gradient checks depend on.
template <typename T>
Tensor<T> init_conv_weight(int cout, int cin, int k, Rng& rng) {
  const double bound = std::sqrt(3.0 / (static_cast<double>(cin) * k * k));
  return Tensor<T>::uniform({cout, cin, k, k}, rng, static_cast<T>(-bound),
                            static_cast<T>(bound));
}

}  // namespace

template <typename T>
typename FeatureExtractor<T>::Conv FeatureExtractor<T>::make_conv(
    const std::string& name, int cout, int cin, int k, int stride, Rng& rng) {
  Conv c;
  c.w = Parameter<T>(name + ".weight", init_conv_weight<T>(cout, cin, k, rng));
  // Small positive bias keeps dead regions (mean-filled borders give exact
  // zeros after relu) off the relu kink, where neither training nor the
  // difference oracle behaves well.
  c.b = Parameter<T>(name + ".bias",
                     Tensor<T>::uniform({cout}, rng, T(0.01), T(0.05)));
  c.stride = stride;
  c.pad = k / 2;
  return c;
}

template <typename T>
FeatureExtractor<T>::FeatureExtractor(BackboneConfig cfg, Rng& rng)
    : cfg_(std::move(cfg)), use_label_map_(cfg_.use_label_map) {
  cfg_.validate();
  const int k = cfg_.kernel;
  int cin = 3;
  for (std::size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
    phi_m_.push_back(make_conv("phi_m.stage" + std::to_string(i),
                               cfg_.stage_channels[i], cin, k,
                               cfg_.stage_strides[i], rng));
    cin = cfg_.stage_channels[i];
  }
  if (!cfg_.share_backbone) {
    cin = 3;
    for (std::size_t i = 0; i < cfg_.stage_channels.size(); ++i) {
      phi_q_.push_back(make_conv("phi_q.stage" + std::to_string(i),
                                 cfg_.stage_channels[i], cin, k,
                                 cfg_.stage_strides[i], rng));
      cin = cfg_.stage_channels[i];
    }
  }
  // g lands in phi_m's first-layer embedding space: same kernel and stride.
  g_weight_ = Parameter<T>(
      "g.weight", init_conv_weight<T>(cfg_.stage_channels[0], 1, k, rng));
  h_m_ = make_conv("h_m", cfg_.reduced_channels, cfg_.stage_channels.back(),
                   1, 1, rng);
  if (!cfg_.share_reducers)
    h_q_ = make_conv("h_q", cfg_.reduced_channels, cfg_.stage_channels.back(),
                     1, 1, rng);
}

template <typename T>
NodeId FeatureExtractor<T>::apply_conv(Graph<T>& g, Conv& c, NodeId x,
                                       bool with_relu) {
  NodeId y = g.conv2d(x, g.param(c.w), g.param(c.b), c.stride, c.pad);
  return with_relu ? g.relu(y) : y;
}

template <typename T>
NodeId FeatureExtractor<T>::backbone_tail(Graph<T>& g,
                                          std::vector<Conv>& stages,
                                          NodeId x) {
  NodeId y = x;
  for (std::size_t i = 1; i < stages.size(); ++i)
    y = apply_conv(g, stages[i], y, true);
  return y;
}

template <typename T>
NodeId FeatureExtractor<T>::embed_memory(Graph<T>& g, NodeId frame,
                                         NodeId label_map) {
  const Tensor<T>& fv = g.value(frame);
  const Tensor<T>& lv = g.value(label_map);
  if (fv.rank() != 3 || fv.dim(0) != 3)
    throw std::invalid_argument("embed_memory: frame must be 3 x H x W");
  if (lv.rank() != 3 || lv.dim(0) != 1 || lv.dim(1) != fv.dim(1) ||
      lv.dim(2) != fv.dim(2))
    throw std::invalid_argument(
        "embed_memory: label map spatial shape " + shape_str(lv.shape()) +
        " != frame " + shape_str(fv.shape()));

  NodeId z = apply_conv(g, phi_m_[0], frame, false);
  if (use_label_map_) {
    Conv& lead = phi_m_[0];
    NodeId cz = g.conv2d(label_map, g.param(g_weight_),
                         g.constant(Tensor<T>::zeros(
                             {cfg_.stage_channels[0]})),
                         lead.stride, lead.pad);
    z = g.add(z, cz);
  }
  z = g.relu(z);
  z = backbone_tail(g, phi_m_, z);
  return apply_conv(g, h_m_, z, true);
}

template <typename T>
NodeId FeatureExtractor<T>::embed_query(Graph<T>& g, NodeId frame) {
  const Tensor<T>& fv = g.value(frame);
  if (fv.rank() != 3 || fv.dim(0) != 3)
    throw std::invalid_argument("embed_query: frame must be 3 x H x W");
  std::vector<Conv>& stages = cfg_.share_backbone ? phi_m_ : phi_q_;
  NodeId z = apply_conv(g, stages[0], frame, true);
  z = backbone_tail(g, stages, z);
  Conv& reducer = cfg_.share_reducers ? h_m_ : h_q_;
  return apply_conv(g, reducer, z, true);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::embed_memory(const Tensor<T>& frame,
                                            const Tensor<T>& label_map) {
  Graph<T> g;
  NodeId out = embed_memory(g, g.constant(frame), g.constant(label_map));
  return g.value(out);
}

template <typename T>
Tensor<T> FeatureExtractor<T>::embed_query(const Tensor<T>& frame) {
  Graph<T> g;
  NodeId out = embed_query(g, g.constant(frame));
  return g.value(out);
}

template <typename T>
void FeatureExtractor<T>::visit_params(
    const std::function<void(Parameter<T>&)>& fn) {
  for (auto& c : phi_m_) {
    fn(c.w);
    fn(c.b);
  }
  for (auto& c : phi_q_) {
    fn(c.w);
    fn(c.b);
  }
  fn(g_weight_);
  fn(h_m_.w);
  fn(h_m_.b);
  if (!cfg_.share_reducers) {
    fn(h_q_.w);
    fn(h_q_.b);
  }
}

template <typename T>
std::size_t FeatureExtractor<T>::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](Parameter<T>& p) { n += static_cast<std::size_t>(p.value.numel()); });
  return n;
}

template class FeatureExtractor<float>;
template class FeatureExtractor<double>;

}  // namespace stm
