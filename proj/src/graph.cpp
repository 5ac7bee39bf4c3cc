#include "stm/graph.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "stm/kernels.hpp"

namespace stm {

namespace {

template <typename T>
T softplus(T x) {
  if (x > T(30)) return x;
  if (x < T(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

template <typename T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

int conv_out_extent(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

// x: [C,H,W] -> col: [C*k*k, OH*OW]; zero-fill where the window leaves the
// padded input. Pure data movement, shared by every kernel variant.
template <typename T>
void im2col(const T* x, T* col, int c, int h, int w, int k, int stride,
            int pad, int oh, int ow) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* dst = col + (static_cast<std::size_t>(ch) * k * k + ki * k + kj) *
                           (static_cast<std::size_t>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride - pad + ki;
          if (y < 0 || y >= h) {
            std::memset(dst + static_cast<std::size_t>(i) * ow, 0,
                        sizeof(T) * ow);
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ch) * h + y) * w;
          for (int j = 0; j < ow; ++j) {
            const int xx = j * stride - pad + kj;
            dst[static_cast<std::size_t>(i) * ow + j] =
                (xx >= 0 && xx < w) ? src[xx] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_acc(const T* col, T* x, int c, int h, int w, int k, int stride,
                int pad, int oh, int ow) {
  for (int ch = 0; ch < c; ++ch) {
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* src = col + (static_cast<std::size_t>(ch) * k * k + ki * k +
                              kj) *
                                 (static_cast<std::size_t>(oh) * ow);
        for (int i = 0; i < oh; ++i) {
          const int y = i * stride - pad + ki;
          if (y < 0 || y >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ch) * h + y) * w;
          for (int j = 0; j < ow; ++j) {
            const int xx = j * stride - pad + kj;
            if (xx >= 0 && xx < w)
              dst[xx] += src[static_cast<std::size_t>(i) * ow + j];
          }
        }
      }
    }
  }
}

#ifdef NDEBUG
constexpr bool kCheckFiniteDefault = false;
#else
constexpr bool kCheckFiniteDefault = true;
#endif

}  // namespace

template <typename T>
Graph<T>::Graph() : check_finite_(kCheckFiniteDefault) {}

template <typename T>
const typename Graph<T>::Node& Graph<T>::node(NodeId id) const {
  if (!id.valid() || id.v >= static_cast<int>(nodes_.size()))
    throw std::invalid_argument("graph: invalid node id");
  return nodes_[static_cast<std::size_t>(id.v)];
}

template <typename T>
void Graph<T>::check_node_finite(const Node& n) const {
  if (check_finite_ && !n.value.all_finite())
    throw std::runtime_error(std::string("graph: non-finite value out of ") +
                             n.op);
}

template <typename T>
NodeId Graph<T>::emplace(const char* op, Tensor<T> value,
                         std::vector<int> inputs,
                         std::function<void(Graph&, int)> backprop) {
  Node n;
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.op = op;
  for (int in : n.inputs)
    n.requires_grad |= nodes_[static_cast<std::size_t>(in)].requires_grad;
  if (n.requires_grad) n.backprop = std::move(backprop);
  check_node_finite(n);
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
NodeId Graph<T>::input(Tensor<T> v) {
  Node n;
  n.requires_grad = v.requires_grad;
  n.value = std::move(v);
  n.op = "input";
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
NodeId Graph<T>::constant(Tensor<T> v) {
  Node n;
  n.value = std::move(v);
  n.op = "constant";
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
NodeId Graph<T>::param(Parameter<T>& p) {
  Node n;
  n.value = p.value;
  n.requires_grad = p.trainable;
  n.bound = &p;
  n.op = "param";
  nodes_.push_back(std::move(n));
  return NodeId{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Graph<T>::value(NodeId id) const {
  return node(id).value;
}

template <typename T>
bool Graph<T>::requires_grad(NodeId id) const {
  return node(id).requires_grad;
}

template <typename T>
int Graph<T>::backward_visits(NodeId id) const {
  return node(id).visits;
}

template <typename T>
Tensor<T>& Graph<T>::grad_buf(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.grad_live) {
    n.grad = Tensor<T>::zeros(n.value.shape());
    n.grad_live = true;
  }
  return n.grad;
}

template <typename T>
const Tensor<T>& Graph<T>::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.grad_live) {
    // Untouched node: materialize zeros lazily so callers always see a
    // tensor of the right shape.
    Node& mut = const_cast<Node&>(n);
    mut.grad = Tensor<T>::zeros(n.value.shape());
    mut.grad_live = true;
  }
  return n.grad;
}

template <typename T>
void Graph<T>::accumulate(int id, const Tensor<T>& g) {
  Tensor<T>& buf = grad_buf(id);
  kernels::active<T>().axpy(T(1), g.data(), buf.data(),
                            static_cast<std::size_t>(buf.numel()));
}

// ---------------------------------------------------------------------------
// elementwise / structural ops

template <typename T>
NodeId Graph<T>::relu(NodeId x) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  const auto& K = kernels::active<T>();
  K.relu(xv.data(), y.data(), static_cast<std::size_t>(y.numel()));
  return emplace("relu", std::move(y), {x.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    const int xi = n.inputs[0];
    if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad) return;
    const Tensor<T>& xv = g.nodes_[static_cast<std::size_t>(xi)].value;
    kernels::active<T>().relu_backward(
        xv.data(), n.grad.data(), g.grad_buf(xi).data(),
        static_cast<std::size_t>(xv.numel()));
  });
}

template <typename T>
NodeId Graph<T>::add(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (!av.same_shape(bv))
    throw std::invalid_argument("add: shape " + shape_str(av.shape()) +
                                " != " + shape_str(bv.shape()));
  Tensor<T> y(av.shape());
  kernels::active<T>().add(av.data(), bv.data(), y.data(),
                           static_cast<std::size_t>(y.numel()));
  return emplace("add", std::move(y), {a.v, b.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    for (int in : n.inputs)
      if (g.nodes_[static_cast<std::size_t>(in)].requires_grad)
        g.accumulate(in, n.grad);
  });
}

template <typename T>
NodeId Graph<T>::mul(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (!av.same_shape(bv))
    throw std::invalid_argument("mul: shape " + shape_str(av.shape()) +
                                " != " + shape_str(bv.shape()));
  Tensor<T> y(av.shape());
  kernels::active<T>().mul(av.data(), bv.data(), y.data(),
                           static_cast<std::size_t>(y.numel()));
  return emplace("mul", std::move(y), {a.v, b.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    const int ai = n.inputs[0], bi = n.inputs[1];
    const auto& K = kernels::active<T>();
    const std::size_t cnt = static_cast<std::size_t>(n.value.numel());
    if (g.nodes_[static_cast<std::size_t>(ai)].requires_grad)
      K.mul_acc(n.grad.data(), g.nodes_[static_cast<std::size_t>(bi)].value.data(),
                g.grad_buf(ai).data(), cnt);
    if (g.nodes_[static_cast<std::size_t>(bi)].requires_grad)
      K.mul_acc(n.grad.data(), g.nodes_[static_cast<std::size_t>(ai)].value.data(),
                g.grad_buf(bi).data(), cnt);
  });
}

template <typename T>
NodeId Graph<T>::matmul(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.rank() != 2 || bv.rank() != 2)
    throw std::invalid_argument("matmul: operands must be rank 2");
  if (av.dim(1) != bv.dim(0))
    throw std::invalid_argument(
        "matmul: inner dimension mismatch, a has " +
        std::to_string(av.dim(1)) + " columns but b has " +
        std::to_string(bv.dim(0)) + " rows");
  const int m = av.dim(0), k = av.dim(1), p = bv.dim(1);
  Tensor<T> y({m, p});
  kernels::active<T>().gemm_nn(av.data(), bv.data(), y.data(), m, k, p,
                               false);
  return emplace("matmul", std::move(y), {a.v, b.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    const int ai = n.inputs[0], bi = n.inputs[1];
    const Tensor<T>& av = g.nodes_[static_cast<std::size_t>(ai)].value;
    const Tensor<T>& bv = g.nodes_[static_cast<std::size_t>(bi)].value;
    const int m = av.dim(0), k = av.dim(1), p = bv.dim(1);
    const auto& K = kernels::active<T>();
    if (g.nodes_[static_cast<std::size_t>(ai)].requires_grad) {
      Tensor<T> bt({p, k});
      K.transpose(bv.data(), bt.data(), k, p);
      K.gemm_nn(n.grad.data(), bt.data(), g.grad_buf(ai).data(), m, p, k,
                true);
    }
    if (g.nodes_[static_cast<std::size_t>(bi)].requires_grad) {
      Tensor<T> at({k, m});
      K.transpose(av.data(), at.data(), m, k);
      K.gemm_nn(at.data(), n.grad.data(), g.grad_buf(bi).data(), k, m, p,
                true);
    }
  });
}

template <typename T>
NodeId Graph<T>::transpose2d(NodeId a) {
  const Tensor<T>& av = value(a);
  if (av.rank() != 2)
    throw std::invalid_argument("transpose2d: operand must be rank 2");
  const int m = av.dim(0), k = av.dim(1);
  Tensor<T> y({k, m});
  kernels::active<T>().transpose(av.data(), y.data(), m, k);
  return emplace("transpose2d", std::move(y), {a.v},
                 [](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   const int ai = n.inputs[0];
                   if (!g.nodes_[static_cast<std::size_t>(ai)].requires_grad)
                     return;
                   const int k = n.value.dim(0), m = n.value.dim(1);
                   Tensor<T> gt({m, k});
                   kernels::active<T>().transpose(n.grad.data(), gt.data(),
                                                  k, m);
                   g.accumulate(ai, gt);
                 });
}

template <typename T>
NodeId Graph<T>::reshape(NodeId a, Shape s) {
  const Tensor<T>& av = value(a);
  if (shape_numel(s) != av.numel())
    throw std::invalid_argument("reshape: element count " +
                                std::to_string(av.numel()) +
                                " does not fit shape " + shape_str(s));
  Tensor<T> y(s);
  std::memcpy(y.data(), av.data(), sizeof(T) * av.numel());
  return emplace("reshape", std::move(y), {a.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    const int ai = n.inputs[0];
    if (!g.nodes_[static_cast<std::size_t>(ai)].requires_grad) return;
    Tensor<T>& buf = g.grad_buf(ai);
    kernels::active<T>().axpy(T(1), n.grad.data(), buf.data(),
                              static_cast<std::size_t>(buf.numel()));
  });
}

template <typename T>
NodeId Graph<T>::chw_to_rows(NodeId a) {
  const Tensor<T>& av = value(a);
  if (av.rank() != 3)
    throw std::invalid_argument("chw_to_rows: operand must be rank 3");
  const int c = av.dim(0), hw = av.dim(1) * av.dim(2);
  Tensor<T> y({hw, c});
  kernels::active<T>().transpose(av.data(), y.data(), c, hw);
  return emplace("chw_to_rows", std::move(y), {a.v},
                 [](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   const int ai = n.inputs[0];
                   if (!g.nodes_[static_cast<std::size_t>(ai)].requires_grad)
                     return;
                   const int hw = n.value.dim(0), c = n.value.dim(1);
                   const Tensor<T>& xv =
                       g.nodes_[static_cast<std::size_t>(ai)].value;
                   Tensor<T> gt(xv.shape());
                   kernels::active<T>().transpose(n.grad.data(), gt.data(),
                                                  hw, c);
                   g.accumulate(ai, gt);
                 });
}

template <typename T>
NodeId Graph<T>::concat_rows(const std::vector<NodeId>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_rows: empty input");
  const Tensor<T>& first = value(xs[0]);
  if (first.rank() != 2)
    throw std::invalid_argument("concat_rows: operands must be rank 2");
  const int cols = first.dim(1);
  int rows = 0;
  std::vector<int> ins;
  for (NodeId id : xs) {
    const Tensor<T>& v = value(id);
    if (v.rank() != 2 || v.dim(1) != cols)
      throw std::invalid_argument(
          "concat_rows: column count mismatch, expected " +
          std::to_string(cols) + " got " + std::to_string(v.dim(1)));
    rows += v.dim(0);
    ins.push_back(id.v);
  }
  Tensor<T> y({rows, cols});
  std::size_t off = 0;
  for (NodeId id : xs) {
    const Tensor<T>& v = value(id);
    std::memcpy(y.data() + off, v.data(), sizeof(T) * v.numel());
    off += static_cast<std::size_t>(v.numel());
  }
  return emplace("concat_rows", std::move(y), std::move(ins),
                 [](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   std::size_t off = 0;
                   for (int in : n.inputs) {
                     Node& src = g.nodes_[static_cast<std::size_t>(in)];
                     const std::size_t cnt =
                         static_cast<std::size_t>(src.value.numel());
                     if (src.requires_grad)
                       kernels::active<T>().axpy(T(1), n.grad.data() + off,
                                                 g.grad_buf(in).data(), cnt);
                     off += cnt;
                   }
                 });
}

template <typename T>
NodeId Graph<T>::concat_channels(NodeId a, NodeId b) {
  const Tensor<T>& av = value(a);
  const Tensor<T>& bv = value(b);
  if (av.rank() != 3 || bv.rank() != 3)
    throw std::invalid_argument("concat_channels: operands must be rank 3");
  if (av.dim(1) != bv.dim(1) || av.dim(2) != bv.dim(2))
    throw std::invalid_argument(
        "concat_channels: spatial mismatch " + shape_str(av.shape()) +
        " vs " + shape_str(bv.shape()));
  Tensor<T> y({av.dim(0) + bv.dim(0), av.dim(1), av.dim(2)});
  std::memcpy(y.data(), av.data(), sizeof(T) * av.numel());
  std::memcpy(y.data() + av.numel(), bv.data(), sizeof(T) * bv.numel());
  return emplace("concat_channels", std::move(y), {a.v, b.v},
                 [](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   const int ai = n.inputs[0], bi = n.inputs[1];
                   const std::size_t na = static_cast<std::size_t>(
                       g.nodes_[static_cast<std::size_t>(ai)].value.numel());
                   const std::size_t nb = static_cast<std::size_t>(
                       g.nodes_[static_cast<std::size_t>(bi)].value.numel());
                   if (g.nodes_[static_cast<std::size_t>(ai)].requires_grad)
                     kernels::active<T>().axpy(T(1), n.grad.data(),
                                               g.grad_buf(ai).data(), na);
                   if (g.nodes_[static_cast<std::size_t>(bi)].requires_grad)
                     kernels::active<T>().axpy(T(1), n.grad.data() + na,
                                               g.grad_buf(bi).data(), nb);
                 });
}

// ---------------------------------------------------------------------------
// conv2d

template <typename T>
NodeId Graph<T>::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor<T>& xv = value(x);
  const Tensor<T>& wv = value(w);
  const Tensor<T>& bv = value(b);
  if (xv.rank() != 3)
    throw std::invalid_argument("conv2d: input must be C x H x W");
  if (wv.rank() != 4)
    throw std::invalid_argument(
        "conv2d: kernel must be C_out x C_in x k x k");
  if (bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw std::invalid_argument(
        "conv2d: bias extent " + std::to_string(bv.numel()) +
        " != kernel output channels " + std::to_string(wv.dim(0)));
  if (xv.dim(0) != wv.dim(1))
    throw std::invalid_argument(
        "conv2d: input channels " + std::to_string(xv.dim(0)) +
        " != kernel input channels " + std::to_string(wv.dim(1)));
  if (wv.dim(2) != wv.dim(3))
    throw std::invalid_argument("conv2d: kernel must be square");
  const int k = wv.dim(2);
  if (k < 1) throw std::invalid_argument("conv2d: kernel extent must be >= 1");
  if (stride < 1) throw std::invalid_argument("conv2d: stride must be >= 1");
  if (pad < 0) throw std::invalid_argument("conv2d: pad must be >= 0");
  if (xv.dim(1) + 2 * pad < k || xv.dim(2) + 2 * pad < k)
    throw std::invalid_argument(
        "conv2d: padded input " + std::to_string(xv.dim(1) + 2 * pad) + "x" +
        std::to_string(xv.dim(2) + 2 * pad) + " smaller than kernel " +
        std::to_string(k));

  const int cin = xv.dim(0), h = xv.dim(1), ww = xv.dim(2);
  const int cout = wv.dim(0);
  const int oh = conv_out_extent(h, k, stride, pad);
  const int ow = conv_out_extent(ww, k, stride, pad);
  const int ckk = cin * k * k;
  const int ohw = oh * ow;

  Tensor<T> col({ckk, ohw});
  im2col(xv.data(), col.data(), cin, h, ww, k, stride, pad, oh, ow);
  Tensor<T> y({cout, oh, ow});
  const auto& K = kernels::active<T>();
  K.gemm_nn(wv.data(), col.data(), y.data(), cout, ckk, ohw, false);
  K.add_row_bias(y.data(), bv.data(), cout, ohw);

  const int s = stride, p = pad;
  return emplace(
      "conv2d", std::move(y), {x.v, w.v, b.v},
      [s, p](Graph& g, int self) {
        const Node& n = g.nodes_[static_cast<std::size_t>(self)];
        const int xi = n.inputs[0], wi = n.inputs[1], bi = n.inputs[2];
        const Tensor<T>& xv = g.nodes_[static_cast<std::size_t>(xi)].value;
        const Tensor<T>& wv = g.nodes_[static_cast<std::size_t>(wi)].value;
        const int cin = xv.dim(0), h = xv.dim(1), ww = xv.dim(2);
        const int cout = wv.dim(0), k = wv.dim(2);
        const int oh = n.value.dim(1), ow = n.value.dim(2);
        const int ckk = cin * k * k, ohw = oh * ow;
        const auto& K = kernels::active<T>();

        if (g.nodes_[static_cast<std::size_t>(bi)].requires_grad) {
          Tensor<T>& db = g.grad_buf(bi);
          for (int c = 0; c < cout; ++c) {
            T acc = 0;
            const T* row = n.grad.data() + static_cast<std::size_t>(c) * ohw;
            for (int j = 0; j < ohw; ++j) acc += row[j];
            db[c] += acc;
          }
        }
        if (g.nodes_[static_cast<std::size_t>(wi)].requires_grad) {
          // dW += dY * col^T; the column matrix is recomputed rather than
          // kept alive, it is the largest buffer in the whole pass.
          Tensor<T> col({ckk, ohw});
          im2col(xv.data(), col.data(), cin, h, ww, k, s, p, oh, ow);
          Tensor<T> colt({ohw, ckk});
          K.transpose(col.data(), colt.data(), ckk, ohw);
          K.gemm_nn(n.grad.data(), colt.data(), g.grad_buf(wi).data(), cout,
                    ohw, ckk, true);
        }
        if (g.nodes_[static_cast<std::size_t>(xi)].requires_grad) {
          Tensor<T> wt({ckk, cout});
          K.transpose(wv.data(), wt.data(), cout, ckk);
          Tensor<T> dcol({ckk, ohw});
          K.gemm_nn(wt.data(), n.grad.data(), dcol.data(), ckk, cout, ohw,
                    false);
          col2im_acc(dcol.data(), g.grad_buf(xi).data(), cin, h, ww, k, s, p,
                     oh, ow);
        }
      });
}

// ---------------------------------------------------------------------------
// softmax / exp / reductions

template <typename T>
NodeId Graph<T>::softmax_columns(NodeId x, T s) {
  const Tensor<T>& xv = value(x);
  if (xv.rank() != 2)
    throw std::invalid_argument("softmax_columns: operand must be rank 2");
  if (!(s > T(0)))
    throw std::invalid_argument("softmax_columns: scale must be positive");
  const int m = xv.dim(0), k = xv.dim(1);
  Tensor<T> y({m, k});
  kernels::active<T>().softmax_columns(xv.data(), y.data(), m, k, s);
  return emplace(
      "softmax_columns", std::move(y), {x.v}, [s](Graph& g, int self) {
        const Node& n = g.nodes_[static_cast<std::size_t>(self)];
        const int xi = n.inputs[0];
        if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad) return;
        const int m = n.value.dim(0), k = n.value.dim(1);
        const T inv = T(1) / s;
        // dx = y/s * (dy - colsum(dy * y))
        std::vector<double> dot(static_cast<std::size_t>(k), 0.0);
        for (int i = 0; i < m; ++i) {
          const T* yrow = n.value.data() + static_cast<std::size_t>(i) * k;
          const T* grow = n.grad.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j)
            dot[j] += static_cast<double>(grow[j]) *
                      static_cast<double>(yrow[j]);
        }
        Tensor<T>& dx = g.grad_buf(xi);
        for (int i = 0; i < m; ++i) {
          const T* yrow = n.value.data() + static_cast<std::size_t>(i) * k;
          const T* grow = n.grad.data() + static_cast<std::size_t>(i) * k;
          T* drow = dx.data() + static_cast<std::size_t>(i) * k;
          for (int j = 0; j < k; ++j)
            drow[j] += yrow[j] * (grow[j] - static_cast<T>(dot[j])) * inv;
        }
      });
}

template <typename T>
NodeId Graph<T>::scaled_exp(NodeId x, T scale, T clamp) {
  const Tensor<T>& xv = value(x);
  Tensor<T> y(xv.shape());
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    y[i] = scale * std::exp(std::min(xv[i], clamp));
  return emplace("scaled_exp", std::move(y), {x.v},
                 [clamp](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   const int xi = n.inputs[0];
                   if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad)
                     return;
                   const Tensor<T>& xv =
                       g.nodes_[static_cast<std::size_t>(xi)].value;
                   Tensor<T>& dx = g.grad_buf(xi);
                   for (std::int64_t i = 0; i < xv.numel(); ++i)
                     if (xv[i] < clamp) dx[i] += n.grad[i] * n.value[i];
                 });
}

template <typename T>
NodeId Graph<T>::sum_all(NodeId x) {
  const Tensor<T>& xv = value(x);
  double acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i)
    acc += static_cast<double>(xv[i]);
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc);
  return emplace("sum_all", std::move(y), {x.v}, [](Graph& g, int self) {
    const Node& n = g.nodes_[static_cast<std::size_t>(self)];
    const int xi = n.inputs[0];
    if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad) return;
    Tensor<T>& dx = g.grad_buf(xi);
    const T gy = n.grad[0];
    for (std::int64_t i = 0; i < dx.numel(); ++i) dx[i] += gy;
  });
}

template <typename T>
NodeId Graph<T>::weighted_sum(const std::vector<NodeId>& xs,
                              const std::vector<T>& coeffs) {
  if (xs.empty() || xs.size() != coeffs.size())
    throw std::invalid_argument("weighted_sum: operand/coefficient mismatch");
  std::vector<int> ins;
  double acc = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Tensor<T>& v = value(xs[i]);
    if (v.numel() != 1)
      throw std::invalid_argument("weighted_sum: operands must be scalars");
    acc += static_cast<double>(coeffs[i]) * static_cast<double>(v[0]);
    ins.push_back(xs[i].v);
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc);
  std::vector<T> cs = coeffs;
  return emplace("weighted_sum", std::move(y), std::move(ins),
                 [cs](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   for (std::size_t i = 0; i < n.inputs.size(); ++i) {
                     const int in = n.inputs[i];
                     if (!g.nodes_[static_cast<std::size_t>(in)].requires_grad)
                       continue;
                     g.grad_buf(in)[0] += cs[i] * n.grad[0];
                   }
                 });
}

// ---------------------------------------------------------------------------
// losses

template <typename T>
NodeId Graph<T>::focal_loss_with_logits(NodeId logits, Tensor<T> labels,
                                        T alpha, T gamma, T normalizer) {
  const Tensor<T>& xv = value(logits);
  if (!xv.same_shape(labels))
    throw std::invalid_argument("focal_loss: logits shape " +
                                shape_str(xv.shape()) + " != labels " +
                                shape_str(labels.shape()));
  if (!(normalizer > T(0)))
    throw std::invalid_argument("focal_loss: normalizer must be positive");
  double acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    const T x = xv[i];
    const T p = sigmoid(x);
    if (labels[i] > T(0.5)) {
      acc += static_cast<double>(alpha) *
             std::pow(static_cast<double>(T(1) - p),
                      static_cast<double>(gamma)) *
             static_cast<double>(softplus(-x));
    } else {
      acc += static_cast<double>(T(1) - alpha) *
             std::pow(static_cast<double>(p), static_cast<double>(gamma)) *
             static_cast<double>(softplus(x));
    }
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc / static_cast<double>(normalizer));
  Tensor<T> lab = std::move(labels);
  return emplace(
      "focal_loss", std::move(y), {logits.v},
      [lab, alpha, gamma, normalizer](Graph& g, int self) {
        const Node& n = g.nodes_[static_cast<std::size_t>(self)];
        const int xi = n.inputs[0];
        if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad) return;
        const Tensor<T>& xv = g.nodes_[static_cast<std::size_t>(xi)].value;
        Tensor<T>& dx = g.grad_buf(xi);
        const T go = n.grad[0] / normalizer;
        for (std::int64_t i = 0; i < xv.numel(); ++i) {
          const T x = xv[i];
          const T p = sigmoid(x);
          T d;
          if (lab[i] > T(0.5)) {
            const T q = T(1) - p;
            const T qg = static_cast<T>(
                std::pow(static_cast<double>(q), static_cast<double>(gamma)));
            d = alpha * qg * (-gamma * p * softplus(-x) - q);
          } else {
            const T pg = static_cast<T>(
                std::pow(static_cast<double>(p), static_cast<double>(gamma)));
            d = (T(1) - alpha) * pg *
                (gamma * (T(1) - p) * softplus(x) + p);
          }
          dx[i] += go * d;
        }
      });
}

template <typename T>
NodeId Graph<T>::bce_with_logits_masked(NodeId logits, Tensor<T> targets,
                                        Tensor<T> mask, T normalizer) {
  const Tensor<T>& xv = value(logits);
  if (!xv.same_shape(targets) || !xv.same_shape(mask))
    throw std::invalid_argument("bce: logits/targets/mask shapes differ");
  if (!(normalizer > T(0)))
    throw std::invalid_argument("bce: normalizer must be positive");
  double acc = 0;
  for (std::int64_t i = 0; i < xv.numel(); ++i) {
    if (mask[i] <= T(0)) continue;
    acc += static_cast<double>(softplus(xv[i])) -
           static_cast<double>(xv[i]) * static_cast<double>(targets[i]);
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc / static_cast<double>(normalizer));
  Tensor<T> tgt = std::move(targets);
  Tensor<T> msk = std::move(mask);
  return emplace("bce_masked", std::move(y), {logits.v},
                 [tgt, msk, normalizer](Graph& g, int self) {
                   const Node& n = g.nodes_[static_cast<std::size_t>(self)];
                   const int xi = n.inputs[0];
                   if (!g.nodes_[static_cast<std::size_t>(xi)].requires_grad)
                     return;
                   const Tensor<T>& xv =
                       g.nodes_[static_cast<std::size_t>(xi)].value;
                   Tensor<T>& dx = g.grad_buf(xi);
                   const T go = n.grad[0] / normalizer;
                   for (std::int64_t i = 0; i < xv.numel(); ++i) {
                     if (msk[i] <= T(0)) continue;
                     dx[i] += go * (sigmoid(xv[i]) - tgt[i]);
                   }
                 });
}

template <typename T>
NodeId Graph<T>::iou_loss_ltrb(NodeId pred, Tensor<T> target, Tensor<T> mask,
                               T normalizer) {
  const Tensor<T>& pv = value(pred);
  if (pv.rank() != 3 || pv.dim(0) != 4)
    throw std::invalid_argument("iou_loss: pred must be 4 x H x W");
  if (!pv.same_shape(target))
    throw std::invalid_argument("iou_loss: pred shape " +
                                shape_str(pv.shape()) + " != target " +
                                shape_str(target.shape()));
  if (mask.numel() != pv.dim(1) * pv.dim(2))
    throw std::invalid_argument("iou_loss: mask extent mismatch");
  if (!(normalizer > T(0)))
    throw std::invalid_argument("iou_loss: normalizer must be positive");

  const std::int64_t hw = pv.dim(1) * static_cast<std::int64_t>(pv.dim(2));
  const T* pl = pv.data();
  const T* pt = pv.data() + hw;
  const T* pr = pv.data() + 2 * hw;
  const T* pb = pv.data() + 3 * hw;
  const T* ql = target.data();
  const T* qt = target.data() + hw;
  const T* qr = target.data() + 2 * hw;
  const T* qb = target.data() + 3 * hw;
  constexpr double kIouFloor = 1e-9;
  double acc = 0;
  for (std::int64_t j = 0; j < hw; ++j) {
    if (mask[j] <= T(0)) continue;
    const double iw = std::min<double>(pl[j], ql[j]) +
                      std::min<double>(pr[j], qr[j]);
    const double ih = std::min<double>(pt[j], qt[j]) +
                      std::min<double>(pb[j], qb[j]);
    const double inter = iw * ih;
    const double ap = (double(pl[j]) + pr[j]) * (double(pt[j]) + pb[j]);
    const double at = (double(ql[j]) + qr[j]) * (double(qt[j]) + qb[j]);
    const double uni = ap + at - inter;
    const double iou = inter / uni;
    acc += -std::log(std::max(iou, kIouFloor));
  }
  Tensor<T> y({1});
  y[0] = static_cast<T>(acc / static_cast<double>(normalizer));
  Tensor<T> tgt = std::move(target);
  Tensor<T> msk = std::move(mask);
  return emplace(
      "iou_loss", std::move(y), {pred.v},
      [tgt, msk, normalizer](Graph& g, int self) {
        const Node& n = g.nodes_[static_cast<std::size_t>(self)];
        const int pi = n.inputs[0];
        if (!g.nodes_[static_cast<std::size_t>(pi)].requires_grad) return;
        const Tensor<T>& pv = g.nodes_[static_cast<std::size_t>(pi)].value;
        Tensor<T>& dx = g.grad_buf(pi);
        const std::int64_t hw =
            pv.dim(1) * static_cast<std::int64_t>(pv.dim(2));
        const T* pp[4] = {pv.data(), pv.data() + hw, pv.data() + 2 * hw,
                          pv.data() + 3 * hw};
        const T* qq[4] = {tgt.data(), tgt.data() + hw, tgt.data() + 2 * hw,
                          tgt.data() + 3 * hw};
        T* dd[4] = {dx.data(), dx.data() + hw, dx.data() + 2 * hw,
                    dx.data() + 3 * hw};
        const double go =
            static_cast<double>(n.grad[0]) / static_cast<double>(normalizer);
        for (std::int64_t j = 0; j < hw; ++j) {
          if (msk[j] <= T(0)) continue;
          const double l = pp[0][j], t = pp[1][j], r = pp[2][j],
                       b = pp[3][j];
          const double gl = qq[0][j], gt_ = qq[1][j], gr = qq[2][j],
                       gb = qq[3][j];
          const double iw = std::min(l, gl) + std::min(r, gr);
          const double ih = std::min(t, gt_) + std::min(b, gb);
          const double inter = iw * ih;
          const double ap = (l + r) * (t + b);
          const double at = (gl + gr) * (gt_ + gb);
          const double uni = ap + at - inter;
          const double iou = inter / uni;
          if (iou < 1e-9) continue;  // clamped in forward, zero gradient
          // d(-ln iou) = -(1/iou) * d iou; iou = I/U with dU/dI = -1
          const double diou_dI = (uni + inter) / (uni * uni);
          const double diou_dap = -inter / (uni * uni);
          const double s = -go / iou;
          // horizontal sides
          const double dI_dl = (l < gl) ? ih : 0.0;
          const double dI_dr = (r < gr) ? ih : 0.0;
          const double dI_dt = (t < gt_) ? iw : 0.0;
          const double dI_db = (b < gb) ? iw : 0.0;
          const double dap_dl = t + b, dap_dr = t + b;
          const double dap_dt = l + r, dap_db = l + r;
          dd[0][j] += static_cast<T>(s * (diou_dI * dI_dl + diou_dap * dap_dl));
          dd[1][j] += static_cast<T>(s * (diou_dI * dI_dt + diou_dap * dap_dt));
          dd[2][j] += static_cast<T>(s * (diou_dI * dI_dr + diou_dap * dap_dr));
          dd[3][j] += static_cast<T>(s * (diou_dI * dI_db + diou_dap * dap_db));
        }
      });
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
void Graph<T>::backward(NodeId root) {
  const Node& r = node(root);
  if (r.value.numel() != 1)
    throw std::invalid_argument("backward: root must be scalar, got shape " +
                                shape_str(r.value.shape()));
  std::vector<char> reach(nodes_.size(), 0);
  reach[static_cast<std::size_t>(root.v)] = 1;
  grad_buf(root.v)[0] = T(1);
  for (int i = root.v; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!reach[static_cast<std::size_t>(i)] || !n.requires_grad) continue;
    for (int in : n.inputs) reach[static_cast<std::size_t>(in)] = 1;
    if (n.backprop) {
      grad_buf(i);  // ensure the buffer exists even if downstream was zero
      n.backprop(*this, i);
      ++n.visits;
    }
  }
  if (!fold_param_grads_) return;
  // Fold leaf gradients into their bound parameters, in tape order.
  for (std::size_t i = 0; i <= static_cast<std::size_t>(root.v); ++i) {
    Node& n = nodes_[i];
    if (!n.bound || !n.requires_grad || !n.grad_live) continue;
    n.bound->ensure_grad();
    kernels::active<T>().axpy(T(1), n.grad.data(), n.bound->grad.data(),
                              static_cast<std::size_t>(n.grad.numel()));
  }
}

template <typename T>
std::vector<std::pair<Parameter<T>*, const Tensor<T>*>>
Graph<T>::bound_grads() const {
  std::vector<std::pair<Parameter<T>*, const Tensor<T>*>> out;
  for (const Node& n : nodes_)
    if (n.bound && n.requires_grad && n.grad_live)
      out.emplace_back(n.bound, &n.grad);
  return out;
}

template class Graph<float>;
template class Graph<double>;

}  // namespace stm
