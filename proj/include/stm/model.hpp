#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "stm/features.hpp"
#include "stm/head.hpp"
#include "stm/reader.hpp"

namespace stm {

struct ModelConfig {
  BackboneConfig backbone;
  int head_depth = 3;

  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
};

// The full tracker network: feature extraction, space-time read, head.
template <typename T>
class TrackModel {
 public:
  TrackModel(ModelConfig cfg, std::uint64_t init_seed);

  struct MemoryInput {
    NodeId frame;
    NodeId label_map;
  };
  struct Outputs {
    typename HeadNet<T>::Nodes head;
    NodeId synth;
  };

  Outputs forward(Graph<T>& g, const std::vector<MemoryInput>& memory,
                  NodeId query_frame);

  FeatureExtractor<T>& features() { return features_; }
  HeadNet<T>& head() { return head_; }
  const ModelConfig& config() const { return cfg_; }
  GridGeometry grid() const { return cfg_.backbone.grid(); }
  int grid_side() const { return cfg_.backbone.grid_side(); }

  void visit_params(const std::function<void(Parameter<T>&)>& fn);
  std::size_t parameter_count();

  void save(const std::string& path);
  static TrackModel<T> load(const std::string& path);

 private:
  ModelConfig cfg_;
  FeatureExtractor<T> features_;
  HeadNet<T> head_;
};

}  // namespace stm
