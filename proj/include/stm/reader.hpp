#pragma once

#include <ostream>
#include <vector>

#include "stm/features.hpp"
#include "stm/graph.hpp"

namespace stm {

// T memory feature maps flattened to THW x C. Row (t*H*W + h*W + w) holds
// the channel vector of frame t at pixel (h, w). frame_of_row is provenance
// for diagnostics only and never enters the computation.
template <typename T>
struct StackedMemory {
  Tensor<T> rows;
  std::vector<int> frame_of_row;
  int frames = 0;
  int height = 0;
  int width = 0;
  int channels = 0;
};

template <typename T>
StackedMemory<T> stack_memory(const std::vector<FeatureMap<T>>& maps);

// Graph form of the stacking (inputs are C x H x W feature nodes).
template <typename T>
NodeId stack_memory_rows(Graph<T>& g, const std::vector<NodeId>& features);

// The space-time read: similarity softmax((rows . query) / sqrt(C)) per
// query pixel, weighted retrieval over all memory pixels, then channel
// concatenation with the query -> 2C x H x W. No key/value split; the same
// feature serves similarity and retrieval.
template <typename T>
NodeId memory_read(Graph<T>& g, NodeId memory_rows, NodeId query_chw);

template <typename T>
Tensor<T> memory_read(const StackedMemory<T>& memory, const Tensor<T>& query);

// Same read, but also surfaces the similarity matrix (THW x HW, columns
// sum to 1) for invariant checks and diagnostics.
template <typename T>
struct ReadDetail {
  Tensor<T> weights;
  Tensor<T> synth;
};
template <typename T>
ReadDetail<T> memory_read_detail(const StackedMemory<T>& memory,
                                 const Tensor<T>& query);

// One similarity-matrix column (the weights with which every memory row
// attends to one query pixel) as "row_index,frame_index,weight" CSV lines.
template <typename T>
void dump_attention_column(const StackedMemory<T>& memory,
                           const Tensor<T>& query, int query_pixel,
                           std::ostream& os);

}  // namespace stm
