#include "stm/head.hpp"

#include <cmath>

namespace stm {

namespace {

template <typename T>
Tensor<T> init_conv_weight(int cout, int cin, int k, Rng& rng) {
  const double bound = std::sqrt(3.0 / (static_cast<double>(cin) * k * k));
  return Tensor<T>::uniform({cout, cin, k, k}, rng, static_cast<T>(-bound),
                            static_cast<T>(bound));
}

double sigmoid_d(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double size_with_context(double w, double h) {
  const double pad = (w + h) * 0.5;
  return std::sqrt((w + pad) * (h + pad));
}

double change_ratio(double r) { return std::max(r, 1.0 / r); }

}  // namespace

template <typename T>
typename HeadNet<T>::Conv HeadNet<T>::make_conv(const std::string& name,
                                                int cout, int cin, int k,
                                                Rng& rng) {
  Conv c;
  c.w = Parameter<T>(name + ".weight", init_conv_weight<T>(cout, cin, k, rng));
  // Off-kink bias init; see FeatureExtractor::make_conv.
  c.b = Parameter<T>(name + ".bias",
                     Tensor<T>::uniform({cout}, rng, T(0.01), T(0.05)));
  c.pad = k / 2;
  return c;
}

template <typename T>
HeadNet<T>::HeadNet(int in_channels, int depth, int stride, Rng& rng)
    : stride_(stride) {
  if (in_channels < 1 || depth < 1 || stride < 1)
    throw std::invalid_argument("head: channels, depth, stride must be >= 1");
  int cin = in_channels;
  for (int i = 0; i < depth; ++i) {
    cls_tower_.push_back(make_conv("head.cls" + std::to_string(i),
                                   in_channels, cin, 3, rng));
    cin = in_channels;
  }
  cin = in_channels;
  for (int i = 0; i < depth; ++i) {
    reg_tower_.push_back(make_conv("head.reg" + std::to_string(i),
                                   in_channels, cin, 3, rng));
    cin = in_channels;
  }
  cls_out_ = make_conv("head.cls_out", 1, in_channels, 1, rng);
  ctr_out_ = make_conv("head.ctr_out", 1, in_channels, 1, rng);
  reg_out_ = make_conv("head.reg_out", 4, in_channels, 1, rng);
}

template <typename T>
NodeId HeadNet<T>::tower(Graph<T>& g, std::vector<Conv>& t, NodeId x) {
  NodeId y = x;
  for (auto& c : t)
    y = g.relu(g.conv2d(y, g.param(c.w), g.param(c.b), 1, c.pad));
  return y;
}

template <typename T>
typename HeadNet<T>::Nodes HeadNet<T>::forward(Graph<T>& g, NodeId synth) {
  NodeId cls_feat = tower(g, cls_tower_, synth);
  NodeId cls =
      g.conv2d(cls_feat, g.param(cls_out_.w), g.param(cls_out_.b), 1, 0);
  NodeId ctr =
      g.conv2d(cls_feat, g.param(ctr_out_.w), g.param(ctr_out_.b), 1, 0);
  NodeId reg_feat = tower(g, reg_tower_, synth);
  NodeId reg_raw =
      g.conv2d(reg_feat, g.param(reg_out_.w), g.param(reg_out_.b), 1, 0);
  NodeId reg = g.scaled_exp(reg_raw, static_cast<T>(stride_));
  return Nodes{cls, ctr, reg};
}

template <typename T>
HeadOutputs<T> HeadNet<T>::forward(const Tensor<T>& synth) {
  Graph<T> g;
  Nodes n = forward(g, g.constant(synth));
  return HeadOutputs<T>{g.value(n.cls), g.value(n.ctr), g.value(n.reg)};
}

template <typename T>
void HeadNet<T>::visit_params(const std::function<void(Parameter<T>&)>& fn) {
  for (auto& c : cls_tower_) {
    fn(c.w);
    fn(c.b);
  }
  for (auto& c : reg_tower_) {
    fn(c.w);
    fn(c.b);
  }
  fn(cls_out_.w);
  fn(cls_out_.b);
  fn(ctr_out_.w);
  fn(ctr_out_.b);
  fn(reg_out_.w);
  fn(reg_out_.b);
}

template <typename T>
EncodedTargets<T> encode_targets(const BBox& gt, const GridGeometry& grid,
                                 int h, int w) {
  if (!gt.valid())
    throw std::invalid_argument("encode_targets: degenerate box");
  EncodedTargets<T> out;
  out.cls_labels = Tensor<T>({1, h, w});
  out.ctr_labels = Tensor<T>({1, h, w});
  out.reg_targets = Tensor<T>({4, h, w});
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const double cx = grid.cell_x(j);
      const double cy = grid.cell_y(i);
      const double l = cx - gt.x;
      const double t = cy - gt.y;
      const double r = gt.x2() - cx;
      const double b = gt.y2() - cy;
      if (l < 0 || t < 0 || r <= 0 || b <= 0) continue;
      const std::int64_t p = static_cast<std::int64_t>(i) * w + j;
      out.cls_labels[p] = T(1);
      const double cl = std::min(l, r) / std::max(l, r);
      const double ct = std::min(t, b) / std::max(t, b);
      out.ctr_labels[p] = static_cast<T>(std::sqrt(cl * ct));
      out.reg_targets[p] = static_cast<T>(l);
      out.reg_targets[hw + p] = static_cast<T>(t);
      out.reg_targets[2 * hw + p] = static_cast<T>(r);
      out.reg_targets[3 * hw + p] = static_cast<T>(b);
      ++out.num_pos;
    }
  }
  if (out.num_pos == 0)
    throw NoPositiveCells("encode_targets: no cell center inside gt box");
  return out;
}

template <typename T>
Tensor<T> make_cosine_window(int h, int w) {
  Tensor<T> win({h, w});
  auto hann = [](int n, int len) {
    if (len <= 1) return 1.0;
    return 0.5 - 0.5 * std::cos(2.0 * 3.14159265358979323846 * n / (len - 1));
  };
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      win.at(i, j) = static_cast<T>(hann(i, h) * hann(j, w));
  return win;
}

template <typename T>
DecodeResult<T> decode(const HeadOutputs<T>& outputs, const GridGeometry& grid,
                       const BBox& prev, const Tensor<T>& window,
                       const PostprocessConfig& cfg) {
  const int h = outputs.cls.dim(1);
  const int w = outputs.cls.dim(2);
  if (outputs.ctr.dim(1) != h || outputs.reg.dim(1) != h ||
      outputs.reg.dim(0) != 4)
    throw std::invalid_argument("decode: head output shapes disagree");
  if (cfg.enable_window && (window.dim(0) != h || window.dim(1) != w))
    throw std::invalid_argument("decode: window shape mismatch");
  if (!prev.valid()) throw std::invalid_argument("decode: prev box invalid");

  const std::int64_t hw = static_cast<std::int64_t>(h) * w;
  const T* cls = outputs.cls.data();
  const T* ctr = outputs.ctr.data();
  const T* rl = outputs.reg.data();
  const T* rt = outputs.reg.data() + hw;
  const T* rr = outputs.reg.data() + 2 * hw;
  const T* rb = outputs.reg.data() + 3 * hw;

  const double prev_ctx = size_with_context(prev.w, prev.h);
  const double prev_ratio = prev.w / prev.h;

  double best = -1.0;
  std::int64_t best_idx = -1;
  double best_raw = 0.0, best_pen = 1.0;
  for (std::int64_t p = 0; p < hw; ++p) {
    const double raw = sigmoid_d(cls[p]) * sigmoid_d(ctr[p]);
    double pen = 1.0;
    if (cfg.enable_penalty) {
      const double pw = static_cast<double>(rl[p]) + rr[p];
      const double ph = static_cast<double>(rt[p]) + rb[p];
      const double s_c = change_ratio(size_with_context(pw, ph) / prev_ctx);
      const double r_c = change_ratio(prev_ratio / (pw / ph));
      pen = std::exp(-(r_c * s_c - 1.0) * cfg.penalty_k);
    }
    double score = pen * raw;
    if (cfg.enable_window)
      score = score * (1.0 - cfg.window_influence) +
              static_cast<double>(window[p]) * cfg.window_influence;
    if (score > best) {  // strict: equal scores keep the earlier cell
      best = score;
      best_idx = p;
      best_raw = raw;
      best_pen = pen;
    }
  }

  if (best_idx < 0 || !(best > 0.0) || !std::isfinite(best))
    return DecodeResult<T>{prev, 0.0, true, -1};

  const int ci = static_cast<int>(best_idx / w);
  const int cj = static_cast<int>(best_idx % w);
  const double cx = grid.cell_x(cj);
  const double cy = grid.cell_y(ci);
  const double x1 = cx - rl[best_idx];
  const double y1 = cy - rt[best_idx];
  const double x2 = cx + rr[best_idx];
  const double y2 = cy + rb[best_idx];
  const BBox pred{x1, y1, x2 - x1, y2 - y1};

  double lr = best_pen * best_raw * cfg.size_lr;
  lr = std::min(std::max(lr, 0.0), 1.0);
  const BBox box = BBox::from_center(pred.cx(), pred.cy(),
                                     prev.w * (1.0 - lr) + pred.w * lr,
                                     prev.h * (1.0 - lr) + pred.h * lr);
  return DecodeResult<T>{box, best_raw, false, static_cast<int>(best_idx)};
}

template class HeadNet<float>;
template class HeadNet<double>;
template EncodedTargets<float> encode_targets(const BBox&, const GridGeometry&,
                                              int, int);
template EncodedTargets<double> encode_targets(const BBox&,
                                               const GridGeometry&, int, int);
template Tensor<float> make_cosine_window(int, int);
template Tensor<double> make_cosine_window(int, int);
template DecodeResult<float> decode(const HeadOutputs<float>&,
                                    const GridGeometry&, const BBox&,
                                    const Tensor<float>&,
                                    const PostprocessConfig&);
template DecodeResult<double> decode(const HeadOutputs<double>&,
                                     const GridGeometry&, const BBox&,
                                     const Tensor<double>&,
                                     const PostprocessConfig&);

}  // namespace stm
