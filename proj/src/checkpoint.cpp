#include "stm/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace stm {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian raw scalars");

namespace {

template <typename T>
const char* dtype_name();
template <>
const char* dtype_name<float>() {
  return "f32";
}
template <>
const char* dtype_name<double>() {
  return "f64";
}

nlohmann::json read_header(std::ifstream& f, const std::string& path) {
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  std::uint64_t len = 0;
  f.read(reinterpret_cast<char*>(&len), sizeof(len));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  std::string hdr(len, '\0');
  f.read(hdr.data(), static_cast<std::streamsize>(len));
  if (!f) throw std::runtime_error("checkpoint: truncated header in " + path);
  return nlohmann::json::parse(hdr);
}

}  // namespace

template <typename T>
void save_checkpoint(const std::string& path,
                     const std::vector<NamedTensorRef<T>>& tensors,
                     const nlohmann::json& meta) {
  nlohmann::json manifest = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& e : tensors) {
    nlohmann::json item;
    item["name"] = e.name;
    item["dtype"] = dtype_name<T>();
    item["shape"] = e.tensor->shape();
    item["offset"] = offset;
    manifest.push_back(std::move(item));
    offset += static_cast<std::uint64_t>(e.tensor->numel()) * sizeof(T);
  }
  nlohmann::json header;
  header["meta"] = meta;
  header["tensors"] = std::move(manifest);
  const std::string hdr = header.dump();

  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  f.write(kCheckpointMagic, 8);
  const std::uint64_t len = hdr.size();
  f.write(reinterpret_cast<const char*>(&len), sizeof(len));
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& e : tensors)
    f.write(reinterpret_cast<const char*>(e.tensor->data()),
            static_cast<std::streamsize>(e.tensor->numel() * sizeof(T)));
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  const nlohmann::json header = read_header(f, path);
  const std::streampos payload = f.tellg();

  LoadedCheckpoint<T> out;
  out.meta = header.value("meta", nlohmann::json::object());
  for (const auto& item : header.at("tensors")) {
    const std::string name = item.at("name");
    const std::string dtype = item.at("dtype");
    if (dtype != dtype_name<T>())
      throw std::invalid_argument("checkpoint: tensor " + name + " has dtype " +
                                  dtype + ", expected " + dtype_name<T>());
    Shape shape = item.at("shape").get<Shape>();
    Tensor<T> t(shape);
    f.seekg(payload + static_cast<std::streamoff>(
                          item.at("offset").get<std::uint64_t>()));
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(t.numel() * sizeof(T)));
    if (!f)
      throw std::runtime_error("checkpoint: truncated payload for " + name);
    out.tensors.emplace(name, std::move(t));
  }
  return out;
}

nlohmann::json load_checkpoint_meta(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  return read_header(f, path).value("meta", nlohmann::json::object());
}

template void save_checkpoint<float>(const std::string&,
                                     const std::vector<NamedTensorRef<float>>&,
                                     const nlohmann::json&);
template void save_checkpoint<double>(
    const std::string&, const std::vector<NamedTensorRef<double>>&,
    const nlohmann::json&);
template LoadedCheckpoint<float> load_checkpoint<float>(const std::string&);
template LoadedCheckpoint<double> load_checkpoint<double>(const std::string&);

}  // namespace stm
