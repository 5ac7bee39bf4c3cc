#include "stm/model.hpp"

#include <stdexcept>

#include "stm/checkpoint.hpp"

namespace stm {

nlohmann::json ModelConfig::to_json() const {
  nlohmann::json j;
  j["stage_channels"] = backbone.stage_channels;
  j["stage_strides"] = backbone.stage_strides;
  j["kernel"] = backbone.kernel;
  j["reduced_channels"] = backbone.reduced_channels;
  j["input_side"] = backbone.input_side;
  j["share_backbone"] = backbone.share_backbone;
  j["use_label_map"] = backbone.use_label_map;
  j["share_reducers"] = backbone.share_reducers;
  j["head_depth"] = head_depth;
  return j;
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.backbone.stage_channels = j.at("stage_channels").get<std::vector<int>>();
  c.backbone.stage_strides = j.at("stage_strides").get<std::vector<int>>();
  c.backbone.kernel = j.value("kernel", 3);
  c.backbone.reduced_channels = j.at("reduced_channels").get<int>();
  c.backbone.input_side = j.value("input_side", 289);
  c.backbone.share_backbone = j.value("share_backbone", false);
  c.backbone.use_label_map = j.value("use_label_map", true);
  c.backbone.share_reducers = j.value("share_reducers", false);
  c.head_depth = j.value("head_depth", 3);
  return c;
}

template <typename T>
TrackModel<T>::TrackModel(ModelConfig cfg, std::uint64_t init_seed)
    : cfg_(cfg),
      features_(
          [&] {
            Rng rng(Rng::splitmix64(init_seed) ^ 0x5eedf00dULL);
            return FeatureExtractor<T>(cfg.backbone, rng);
          }()),
      head_([&] {
        Rng rng(Rng::splitmix64(init_seed + 1) ^ 0x4eadULL);
        return HeadNet<T>(2 * cfg.backbone.reduced_channels, cfg.head_depth,
                          cfg.backbone.total_stride(), rng);
      }()) {}

template <typename T>
typename TrackModel<T>::Outputs TrackModel<T>::forward(
    Graph<T>& g, const std::vector<MemoryInput>& memory, NodeId query_frame) {
  if (memory.empty())
    throw std::invalid_argument("model: need at least one memory frame");
  std::vector<NodeId> feats;
  feats.reserve(memory.size());
  for (const auto& m : memory)
    feats.push_back(features_.embed_memory(g, m.frame, m.label_map));
  NodeId rows = stack_memory_rows(g, feats);
  NodeId query = features_.embed_query(g, query_frame);
  NodeId synth = memory_read(g, rows, query);
  return Outputs{head_.forward(g, synth), synth};
}

template <typename T>
void TrackModel<T>::visit_params(
    const std::function<void(Parameter<T>&)>& fn) {
  features_.visit_params(fn);
  head_.visit_params(fn);
}

template <typename T>
std::size_t TrackModel<T>::parameter_count() {
  std::size_t n = 0;
  visit_params([&n](Parameter<T>& p) {
    n += static_cast<std::size_t>(p.value.numel());
  });
  return n;
}

template <typename T>
void TrackModel<T>::save(const std::string& path) {
  std::vector<NamedTensorRef<T>> refs;
  visit_params([&refs](Parameter<T>& p) {
    refs.push_back(NamedTensorRef<T>{p.name, &p.value});
  });
  nlohmann::json meta;
  meta["model"] = cfg_.to_json();
  save_checkpoint(path, refs, meta);
}

template <typename T>
TrackModel<T> TrackModel<T>::load(const std::string& path) {
  LoadedCheckpoint<T> ck = load_checkpoint<T>(path);
  if (!ck.meta.contains("model"))
    throw std::runtime_error("checkpoint: missing model config in " + path);
  TrackModel<T> model(ModelConfig::from_json(ck.meta["model"]), 0);
  model.visit_params([&ck, &path](Parameter<T>& p) {
    auto it = ck.tensors.find(p.name);
    if (it == ck.tensors.end())
      throw std::runtime_error("checkpoint: " + path + " lacks tensor " +
                               p.name);
    if (it->second.shape() != p.value.shape())
      throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
    p.value = std::move(it->second);
  });
  return model;
}

template class TrackModel<float>;
template class TrackModel<double>;

}  // namespace stm
