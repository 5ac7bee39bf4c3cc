#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "stm/tensor.hpp"

namespace stm {

// Single-file parameter store: 8-byte magic "STMT0001", a little-endian u64
// header length, a JSON header (meta object plus name -> shape/dtype/offset
// manifest), then the raw little-endian scalar payload.
inline constexpr char kCheckpointMagic[9] = "STMT0001";

template <typename T>
struct NamedTensorRef {
  std::string name;
  const Tensor<T>* tensor;
};

template <typename T>
struct LoadedCheckpoint {
  nlohmann::json meta;
  std::map<std::string, Tensor<T>> tensors;
};

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensorRef<T>>& tensors,
                     const nlohmann::json& meta);

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path);

// Reads only the header; used to recover model configuration cheaply.
nlohmann::json load_checkpoint_meta(const std::string& path);

}  // namespace stm
