#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "stm/data.hpp"
#include "stm/model.hpp"

namespace stm {

struct TrainConfig {
  int epochs = 2;
  int steps_per_epoch = 2000;
  int batch_size = 8;
  double base_lr = 1e-3;
  double peak_lr = 1e-2;
  double final_lr = 1e-5;
  int warmup_steps = 200;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  int train_frames = 3;  // T; the last sampled frame is the query
  int max_gap = 100;
  double lambda_ctr = 1.0;
  double lambda_reg = 3.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  bool freeze_phi_m = false;
  bool freeze_phi_q = false;
  bool freeze_g = false;
  bool freeze_reducers = false;
  bool freeze_head = false;
  std::uint64_t seed = 1;
  int checkpoint_every = 0;  // steps; 0 disables periodic checkpoints
  int threads = 0;           // 0 -> hardware concurrency

  void validate() const;
  int total_steps() const { return epochs * steps_per_epoch; }
};

// Linear warmup base -> peak over warmup_steps, then cosine peak -> final
// ending exactly at the last step.
double lr_at(const TrainConfig& cfg, int step);

struct LossParts {
  double total = 0;
  double cls = 0;
  double ctr = 0;
  double reg = 0;
  int num_pos = 0;
};

// Focal classification over all cells, BCE center-ness and -log(IoU)
// regression over positives, combined as cls + l_ctr*ctr + l_reg*reg. Each
// term is normalized by max(1, num_pos). Zero-positive targets degrade to
// the classification term alone (num_pos = 0 flags it).
template <typename T>
std::pair<NodeId, LossParts> compute_loss(Graph<T>& g,
                                          const typename HeadNet<T>::Nodes& out,
                                          const EncodedTargets<T>& targets,
                                          const TrainConfig& cfg);

template <typename T>
struct TrainSample {
  std::vector<std::pair<Tensor<T>, Tensor<T>>> memory;  // (patch, label map)
  Tensor<T> query;
  EncodedTargets<T> targets;
};

// Crops the sampled frames, builds label maps from ground truth, and encodes
// the query targets. Retries a few times when augmentation leaves no
// positive cell.
template <typename T>
TrainSample<T> make_train_sample(const ModelConfig& cfg,
                                 const SequenceRecord& seq,
                                 const std::vector<int>& frame_indices,
                                 Rng& rng);

struct StepMetrics {
  int step = 0;
  double lr = 0;
  LossParts loss;
};

template <typename T>
class Trainer {
 public:
  Trainer(TrackModel<T>& model, TrainConfig cfg);

  StepMetrics step(const std::vector<TrainSample<T>>& batch);
  int step_index() const { return step_; }
  const TrainConfig& config() const { return cfg_; }

  // Full loop: per-step batch assembly from `data`, JSONL metrics to `log`
  // (may be null), optional periodic checkpoints "<prefix>.step<k>".
  void train(const std::vector<SequenceRecord>& data, std::ostream* log,
             const std::string& checkpoint_prefix = "");

 private:
  void apply_update(double lr);

  TrackModel<T>& model_;
  TrainConfig cfg_;
  std::vector<Tensor<T>> momentum_;  // aligned with parameter visit order
  int step_ = 0;
};

// Repeatedly steps on one fixed sample; returns the per-step total losses.
template <typename T>
std::vector<double> overfit_harness(TrackModel<T>& model,
                                    const TrainSample<T>& sample,
                                    int max_steps, TrainConfig cfg);

}  // namespace stm
