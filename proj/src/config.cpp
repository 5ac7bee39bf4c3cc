#include "stm/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace stm {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

KeyValueConfig KeyValueConfig::parse_string(const std::string& text) {
  KeyValueConfig kv;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("config: line " + std::to_string(lineno) +
                                  " lacks '='");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw std::invalid_argument("config: empty key on line " +
                                  std::to_string(lineno));
    kv.entries_[key] = value;
  }
  return kv;
}

KeyValueConfig KeyValueConfig::parse_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_string(ss.str());
}

bool KeyValueConfig::has(const std::string& key) const {
  return entries_.count(key) != 0;
}

std::string KeyValueConfig::get(const std::string& key,
                                const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

long KeyValueConfig::get_int(const std::string& key, long fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stol(it->second);
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' is not an integer");
  }
}

double KeyValueConfig::get_double(const std::string& key,
                                  double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  try {
    return std::stod(it->second);
  } catch (...) {
    throw std::invalid_argument("config: key '" + key + "' is not a number");
  }
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::string v = it->second;
  std::transform(v.begin(), v.end(), v.begin(), ::tolower);
  if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
  if (v == "0" || v == "false" || v == "off" || v == "no") return false;
  throw std::invalid_argument("config: key '" + key + "' is not a boolean");
}

std::vector<int> KeyValueConfig::get_int_list(const std::string& key,
                                              std::vector<int> fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::vector<int> out;
  std::istringstream ss(it->second);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<int>(std::stol(item)));
  }
  if (out.empty())
    throw std::invalid_argument("config: key '" + key + "' is an empty list");
  return out;
}

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  entries_[key] = value;
}

std::uint64_t KeyValueConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;
    h *= 0x100000001b3ULL;
  };
  for (const auto& [k, v] : entries_) {
    mix(k);
    mix(v);
  }
  return h;
}

ModelConfig model_config_from(const KeyValueConfig& kv) {
  ModelConfig c;
  c.backbone.stage_channels =
      kv.get_int_list("stage_channels", c.backbone.stage_channels);
  c.backbone.stage_strides =
      kv.get_int_list("stage_strides", c.backbone.stage_strides);
  c.backbone.kernel = static_cast<int>(kv.get_int("kernel", c.backbone.kernel));
  c.backbone.reduced_channels = static_cast<int>(
      kv.get_int("reduced_channels", c.backbone.reduced_channels));
  c.backbone.input_side =
      static_cast<int>(kv.get_int("input_side", c.backbone.input_side));
  c.backbone.share_backbone =
      kv.get_bool("share_backbone", c.backbone.share_backbone);
  c.backbone.use_label_map =
      kv.get_bool("use_label_map", c.backbone.use_label_map);
  c.backbone.share_reducers =
      kv.get_bool("share_reducers", c.backbone.share_reducers);
  c.head_depth = static_cast<int>(kv.get_int("head_depth", c.head_depth));
  c.backbone.validate();
  return c;
}

TrainConfig train_config_from(const KeyValueConfig& kv) {
  TrainConfig c;
  c.epochs = static_cast<int>(kv.get_int("epochs", c.epochs));
  c.steps_per_epoch =
      static_cast<int>(kv.get_int("steps_per_epoch", c.steps_per_epoch));
  c.batch_size = static_cast<int>(kv.get_int("batch_size", c.batch_size));
  c.base_lr = kv.get_double("base_lr", c.base_lr);
  c.peak_lr = kv.get_double("peak_lr", c.peak_lr);
  c.final_lr = kv.get_double("final_lr", c.final_lr);
  c.warmup_steps =
      static_cast<int>(kv.get_int("warmup_steps", c.warmup_steps));
  c.momentum = kv.get_double("momentum", c.momentum);
  c.weight_decay = kv.get_double("weight_decay", c.weight_decay);
  c.train_frames =
      static_cast<int>(kv.get_int("train_frames", c.train_frames));
  c.max_gap = static_cast<int>(kv.get_int("max_gap", c.max_gap));
  c.lambda_ctr = kv.get_double("lambda_ctr", c.lambda_ctr);
  c.lambda_reg = kv.get_double("lambda_reg", c.lambda_reg);
  c.focal_alpha = kv.get_double("focal_alpha", c.focal_alpha);
  c.focal_gamma = kv.get_double("focal_gamma", c.focal_gamma);
  c.freeze_phi_m = kv.get_bool("freeze_phi_m", c.freeze_phi_m);
  c.freeze_phi_q = kv.get_bool("freeze_phi_q", c.freeze_phi_q);
  c.freeze_g = kv.get_bool("freeze_g", c.freeze_g);
  c.freeze_reducers = kv.get_bool("freeze_reducers", c.freeze_reducers);
  c.freeze_head = kv.get_bool("freeze_head", c.freeze_head);
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  c.checkpoint_every =
      static_cast<int>(kv.get_int("checkpoint_every", c.checkpoint_every));
  c.threads = static_cast<int>(kv.get_int("threads", c.threads));
  c.validate();
  return c;
}

TrackerConfig tracker_config_from(const KeyValueConfig& kv) {
  TrackerConfig c;
  c.memory_size = static_cast<int>(kv.get_int("memory_size", c.memory_size));
  c.delta = kv.get_double("delta", c.delta);
  c.literal_formula = kv.get_bool("literal_eq5", c.literal_formula);
  c.cache_cap = static_cast<int>(kv.get_int("cache_cap", c.cache_cap));
  c.use_label_map = kv.get_bool("fb_label", c.use_label_map);
  c.post.penalty_k = kv.get_double("penalty_k", c.post.penalty_k);
  c.post.window_influence =
      kv.get_double("window_influence", c.post.window_influence);
  c.post.size_lr = kv.get_double("size_lr", c.post.size_lr);
  c.post.enable_penalty = kv.get_bool("enable_penalty", c.post.enable_penalty);
  c.post.enable_window = kv.get_bool("enable_window", c.post.enable_window);
  return c;
}

SequenceSpec sequence_spec_from(const KeyValueConfig& kv) {
  SequenceSpec s;
  if (kv.has("preset")) s = preset_sequence_spec(kv.get("preset", "plain"));
  s.length = static_cast<int>(kv.get_int("length", s.length));
  s.width = static_cast<int>(kv.get_int("width", s.width));
  s.height = static_cast<int>(kv.get_int("height", s.height));
  s.target_shape = kv.get("target_shape", s.target_shape);
  s.target_w = kv.get_double("target_w", s.target_w);
  s.target_h = kv.get_double("target_h", s.target_h);
  s.speed = kv.get_double("speed", s.speed);
  s.deform_amp = kv.get_double("deform_amp", s.deform_amp);
  s.deform_period = kv.get_double("deform_period", s.deform_period);
  s.clutter = static_cast<int>(kv.get_int("clutter", s.clutter));
  s.noise = kv.get_double("noise", s.noise);
  if (kv.has("occluder_coverage") || kv.has("occluder_start")) {
    OccluderSpec o;
    o.first_frame = static_cast<int>(kv.get_int("occluder_start", 20));
    o.last_frame = static_cast<int>(kv.get_int("occluder_end", -1));
    o.coverage = kv.get_double("occluder_coverage", 0.6);
    s.occluders.assign(1, o);
  }
  s.validate();
  return s;
}

}  // namespace stm
