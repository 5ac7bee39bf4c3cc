#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "stm/data.hpp"
#include "stm/model.hpp"
#include "stm/track.hpp"
#include "stm/train.hpp"

namespace stm {

// Flat "key = value" text, one pair per line, '#' starts a comment. Values
// stay strings until typed access.
class KeyValueConfig {
 public:
  static KeyValueConfig parse_file(const std::string& path);
  static KeyValueConfig parse_string(const std::string& text);

  bool has(const std::string& key) const;
  std::string get(const std::string& key, const std::string& fallback) const;
  long get_int(const std::string& key, long fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key,
                                std::vector<int> fallback) const;

  void set(const std::string& key, const std::string& value);
  const std::map<std::string, std::string>& entries() const {
    return entries_;
  }

  // FNV-1a over the sorted pairs; stable run identifier for reports.
  std::uint64_t hash() const;

 private:
  std::map<std::string, std::string> entries_;
};

ModelConfig model_config_from(const KeyValueConfig& kv);
TrainConfig train_config_from(const KeyValueConfig& kv);
TrackerConfig tracker_config_from(const KeyValueConfig& kv);
SequenceSpec sequence_spec_from(const KeyValueConfig& kv);

}  // namespace stm
