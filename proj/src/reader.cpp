#include "stm/reader.hpp"

#include <cmath>
#include <stdexcept>

#include "stm/kernels.hpp"

namespace stm {

template <typename T>
StackedMemory<T> stack_memory(const std::vector<FeatureMap<T>>& maps) {
  if (maps.empty()) throw std::invalid_argument("stack_memory: empty input");
  const Shape& s0 = maps[0].data.shape();
  if (maps[0].data.rank() != 3)
    throw std::invalid_argument("stack_memory: features must be C x H x W");
  for (const auto& m : maps)
    if (m.data.shape() != s0)
      throw std::invalid_argument(
          "stack_memory: heterogeneous feature shapes " + shape_str(s0) +
          " vs " + shape_str(m.data.shape()));

  const int c = s0[0], h = s0[1], w = s0[2];
  const int hw = h * w;
  StackedMemory<T> out;
  out.frames = static_cast<int>(maps.size());
  out.height = h;
  out.width = w;
  out.channels = c;
  out.rows = Tensor<T>({out.frames * hw, c});
  out.frame_of_row.resize(static_cast<std::size_t>(out.frames) * hw);
  const auto& K = kernels::active<T>();
  for (int t = 0; t < out.frames; ++t) {
    // CHW -> HWC is exactly a [C, HW] transpose.
    K.transpose(maps[static_cast<std::size_t>(t)].data.data(),
                out.rows.data() + static_cast<std::size_t>(t) * hw * c, c,
                hw);
    const int frame = maps[static_cast<std::size_t>(t)].source_frame;
    for (int p = 0; p < hw; ++p)
      out.frame_of_row[static_cast<std::size_t>(t) * hw + p] = frame;
  }
  return out;
}

template <typename T>
NodeId stack_memory_rows(Graph<T>& g, const std::vector<NodeId>& features) {
  if (features.empty())
    throw std::invalid_argument("stack_memory_rows: empty input");
  std::vector<NodeId> rows;
  rows.reserve(features.size());
  for (NodeId f : features) rows.push_back(g.chw_to_rows(f));
  return features.size() == 1 ? rows[0] : g.concat_rows(rows);
}

template <typename T>
NodeId memory_read(Graph<T>& g, NodeId memory_rows, NodeId query_chw) {
  const Tensor<T>& mem = g.value(memory_rows);
  const Tensor<T>& q = g.value(query_chw);
  if (mem.rank() != 2)
    throw std::invalid_argument("memory_read: memory must be THW x C");
  if (q.rank() != 3)
    throw std::invalid_argument("memory_read: query must be C x H x W");
  const int c = q.dim(0), h = q.dim(1), w = q.dim(2);
  if (mem.dim(1) != c)
    throw std::invalid_argument(
        "memory_read: memory channels " + std::to_string(mem.dim(1)) +
        " != query channels " + std::to_string(c));
  const T s = static_cast<T>(std::sqrt(static_cast<double>(c)));

  NodeId qmat = g.reshape(query_chw, {c, h * w});
  NodeId logits = g.matmul(memory_rows, qmat);        // THW x HW
  NodeId weights = g.softmax_columns(logits, s);      // columns sum to 1
  NodeId readout = g.matmul(g.transpose2d(memory_rows), weights);  // C x HW
  NodeId readout_chw = g.reshape(readout, {c, h, w});
  return g.concat_channels(query_chw, readout_chw);
}

template <typename T>
Tensor<T> memory_read(const StackedMemory<T>& memory, const Tensor<T>& query) {
  Graph<T> g;
  NodeId out =
      memory_read(g, g.constant(memory.rows), g.constant(query));
  return g.value(out);
}

template <typename T>
ReadDetail<T> memory_read_detail(const StackedMemory<T>& memory,
                                 const Tensor<T>& query) {
  const int c = query.dim(0), h = query.dim(1), w = query.dim(2);
  Graph<T> g;
  NodeId rows = g.constant(memory.rows);
  NodeId qn = g.constant(query);
  NodeId logits = g.matmul(rows, g.reshape(qn, {c, h * w}));
  NodeId weights = g.softmax_columns(
      logits, static_cast<T>(std::sqrt(static_cast<double>(c))));
  NodeId readout = g.matmul(g.transpose2d(rows), weights);
  NodeId synth = g.concat_channels(qn, g.reshape(readout, {c, h, w}));
  return ReadDetail<T>{g.value(weights), g.value(synth)};
}

template <typename T>
void dump_attention_column(const StackedMemory<T>& memory,
                           const Tensor<T>& query, int query_pixel,
                           std::ostream& os) {
  const int c = memory.channels;
  const int hw = memory.height * memory.width;
  const int rows = memory.frames * hw;
  if (query_pixel < 0 || query_pixel >= hw)
    throw std::invalid_argument("dump_attention_column: pixel out of range");
  if (query.rank() != 3 || query.dim(0) != c)
    throw std::invalid_argument("dump_attention_column: query mismatch");

  // One-column similarity: logits_i = <memory_i, q_pixel> / sqrt(C).
  Tensor<T> logits({rows, 1});
  for (int i = 0; i < rows; ++i) {
    double acc = 0;
    const T* mrow = memory.rows.data() + static_cast<std::size_t>(i) * c;
    for (int ch = 0; ch < c; ++ch)
      acc += static_cast<double>(mrow[ch]) *
             static_cast<double>(query[static_cast<std::int64_t>(ch) * hw +
                                       query_pixel]);
    logits[i] = static_cast<T>(acc);
  }
  Tensor<T> w({rows, 1});
  kernels::active<T>().softmax_columns(
      logits.data(), w.data(), rows, 1,
      static_cast<T>(std::sqrt(static_cast<double>(c))));
  os << "row_index,frame_index,weight\n";
  for (int i = 0; i < rows; ++i)
    os << i << ',' << memory.frame_of_row[static_cast<std::size_t>(i)] << ','
       << static_cast<double>(w[i]) << '\n';
}

template StackedMemory<float> stack_memory(const std::vector<FeatureMap<float>>&);
template StackedMemory<double> stack_memory(const std::vector<FeatureMap<double>>&);
template NodeId stack_memory_rows(Graph<float>&, const std::vector<NodeId>&);
template NodeId stack_memory_rows(Graph<double>&, const std::vector<NodeId>&);
template NodeId memory_read(Graph<float>&, NodeId, NodeId);
template NodeId memory_read(Graph<double>&, NodeId, NodeId);
template Tensor<float> memory_read(const StackedMemory<float>&,
                                   const Tensor<float>&);
template Tensor<double> memory_read(const StackedMemory<double>&,
                                    const Tensor<double>&);
template ReadDetail<float> memory_read_detail(const StackedMemory<float>&,
                                              const Tensor<float>&);
template ReadDetail<double> memory_read_detail(const StackedMemory<double>&,
                                               const Tensor<double>&);
template void dump_attention_column(const StackedMemory<float>&,
                                    const Tensor<float>&, int, std::ostream&);
template void dump_attention_column(const StackedMemory<double>&,
                                    const Tensor<double>&, int, std::ostream&);

}  // namespace stm
