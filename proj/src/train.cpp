#include "stm/train.hpp"

#include <cmath>
#include <stdexcept>

#include "stm/kernels.hpp"
#include "stm/parallel.hpp"

namespace stm {

void TrainConfig::validate() const {
  if (epochs < 1 || steps_per_epoch < 1 || batch_size < 1)
    throw std::invalid_argument("train: epochs/steps/batch must be >= 1");
  if (!(peak_lr >= base_lr && base_lr >= final_lr && final_lr >= 0))
    throw std::invalid_argument("train: need peak >= base >= final >= 0");
  if (warmup_steps < 0 || warmup_steps >= total_steps())
    throw std::invalid_argument("train: warmup must fit inside the schedule");
  if (train_frames < 2)
    throw std::invalid_argument("train: T must be >= 2 (memory plus query)");
  if (momentum < 0 || momentum >= 1)
    throw std::invalid_argument("train: momentum must be in [0, 1)");
  if (weight_decay < 0)
    throw std::invalid_argument("train: weight decay must be >= 0");
}

double lr_at(const TrainConfig& cfg, int step) {
  if (step < cfg.warmup_steps) {
    return cfg.base_lr + (cfg.peak_lr - cfg.base_lr) *
                             (static_cast<double>(step) / cfg.warmup_steps);
  }
  const int denom = std::max(1, cfg.total_steps() - 1 - cfg.warmup_steps);
  double phase = static_cast<double>(step - cfg.warmup_steps) / denom;
  phase = std::min(phase, 1.0);
  return cfg.final_lr + (cfg.peak_lr - cfg.final_lr) * 0.5 *
                            (1.0 + std::cos(3.14159265358979323846 * phase));
}

template <typename T>
std::pair<NodeId, LossParts> compute_loss(
    Graph<T>& g, const typename HeadNet<T>::Nodes& out,
    const EncodedTargets<T>& targets, const TrainConfig& cfg) {
  const Tensor<T>& cls_v = g.value(out.cls);
  if (!cls_v.same_shape(targets.cls_labels))
    throw std::invalid_argument("compute_loss: output grid " +
                                shape_str(cls_v.shape()) +
                                " != target grid " +
                                shape_str(targets.cls_labels.shape()));
  const T norm = static_cast<T>(std::max(1, targets.num_pos));
  NodeId cls = g.focal_loss_with_logits(
      out.cls, targets.cls_labels, static_cast<T>(cfg.focal_alpha),
      static_cast<T>(cfg.focal_gamma), norm);

  LossParts parts;
  parts.num_pos = targets.num_pos;
  NodeId total;
  if (targets.num_pos > 0) {
    NodeId ctr = g.bce_with_logits_masked(out.ctr, targets.ctr_labels,
                                          targets.cls_labels, norm);
    NodeId reg = g.iou_loss_ltrb(out.reg, targets.reg_targets,
                                 targets.cls_labels, norm);
    total = g.weighted_sum(
        {cls, ctr, reg},
        {T(1), static_cast<T>(cfg.lambda_ctr), static_cast<T>(cfg.lambda_reg)});
    parts.ctr = static_cast<double>(g.value(ctr)[0]);
    parts.reg = static_cast<double>(g.value(reg)[0]);
  } else {
    total = cls;
  }
  parts.cls = static_cast<double>(g.value(cls)[0]);
  parts.total = static_cast<double>(g.value(total)[0]);
  return {total, parts};
}

template <typename T>
TrainSample<T> make_train_sample(const ModelConfig& cfg,
                                 const SequenceRecord& seq,
                                 const std::vector<int>& frame_indices,
                                 Rng& rng) {
  if (frame_indices.size() < 2)
    throw std::invalid_argument("make_train_sample: need >= 2 frames");
  const int side = cfg.backbone.input_side;
  const int gs = cfg.backbone.grid_side();
  const GridGeometry grid = cfg.backbone.grid();

  TrainSample<T> s;
  for (std::size_t i = 0; i + 1 < frame_indices.size(); ++i) {
    const int fi = frame_indices[i];
    const BBox& gt = seq.gt[static_cast<std::size_t>(fi)];
    const AugmentParams aug =
        sample_augment(rng, 4.0 * std::sqrt(gt.w * gt.h));
    auto [patch, geom] =
        crop_patch(seq.frames[static_cast<std::size_t>(fi)], gt, side, aug);
    LabelMap lm = make_label_map(gt, geom);
    s.memory.emplace_back(patch.template cast<T>(),
                          lm.map.template cast<T>());
  }

  const int qi = frame_indices.back();
  const BBox& qgt = seq.gt[static_cast<std::size_t>(qi)];
  for (int attempt = 0;; ++attempt) {
    const AugmentParams aug =
        sample_augment(rng, 4.0 * std::sqrt(qgt.w * qgt.h));
    auto [patch, geom] =
        crop_patch(seq.frames[static_cast<std::size_t>(qi)], qgt, side, aug);
    try {
      s.targets = encode_targets<T>(geom.to_patch(qgt), grid, gs, gs);
    } catch (const NoPositiveCells&) {
      if (attempt >= 8)
        throw std::runtime_error(
            "make_train_sample: target never covers a grid cell");
      continue;
    }
    s.query = patch.template cast<T>();
    break;
  }
  return s;
}

template <typename T>
Trainer<T>::Trainer(TrackModel<T>& model, TrainConfig cfg)
    : model_(model), cfg_(cfg) {
  cfg_.validate();
  if (cfg_.threads <= 0) cfg_.threads = default_thread_count();
  model_.visit_params([this](Parameter<T>& p) {
    auto starts_with = [&p](const char* prefix) {
      return p.name.rfind(prefix, 0) == 0;
    };
    if ((cfg_.freeze_phi_m && starts_with("phi_m.")) ||
        (cfg_.freeze_phi_q && starts_with("phi_q.")) ||
        (cfg_.freeze_g && starts_with("g.")) ||
        (cfg_.freeze_reducers &&
         (starts_with("h_m.") || starts_with("h_q."))) ||
        (cfg_.freeze_head && starts_with("head.")))
      p.trainable = false;
    momentum_.push_back(Tensor<T>::zeros(p.value.shape()));
  });
}

template <typename T>
StepMetrics Trainer<T>::step(const std::vector<TrainSample<T>>& batch) {
  if (batch.empty()) throw std::invalid_argument("train step: empty batch");
  model_.visit_params([](Parameter<T>& p) {
    p.ensure_grad();
    std::fill(p.grad.data(), p.grad.data() + p.grad.numel(), T(0));
  });

  const int n = static_cast<int>(batch.size());
  LossParts mean;
  // Waves of `threads` concurrent sample graphs; gradients merge in sample
  // order so the update is independent of scheduling.
  for (int wave = 0; wave < n; wave += cfg_.threads) {
    const int count = std::min(cfg_.threads, n - wave);
    std::vector<Graph<T>> graphs(static_cast<std::size_t>(count));
    std::vector<LossParts> parts(static_cast<std::size_t>(count));
    parallel_for(count, cfg_.threads, [&](int i) {
      const TrainSample<T>& s = batch[static_cast<std::size_t>(wave + i)];
      Graph<T>& g = graphs[static_cast<std::size_t>(i)];
      g.set_fold_param_grads(false);
      std::vector<typename TrackModel<T>::MemoryInput> mem;
      for (const auto& [patch, label] : s.memory)
        mem.push_back({g.constant(patch), g.constant(label)});
      auto out = model_.forward(g, mem, g.constant(s.query));
      auto [total, lp] = compute_loss(g, out.head, s.targets, cfg_);
      if (!std::isfinite(lp.total))
        throw std::runtime_error("train step: non-finite loss at step " +
                                 std::to_string(step_) + ", sample " +
                                 std::to_string(wave + i));
      g.backward(total);
      parts[static_cast<std::size_t>(i)] = lp;
    });
    for (int i = 0; i < count; ++i) {
      for (auto& [param, gr] : graphs[static_cast<std::size_t>(i)]
                                   .bound_grads()) {
        param->ensure_grad();
        kernels::active<T>().axpy(T(1), gr->data(), param->grad.data(),
                                  static_cast<std::size_t>(gr->numel()));
      }
      mean.total += parts[static_cast<std::size_t>(i)].total / n;
      mean.cls += parts[static_cast<std::size_t>(i)].cls / n;
      mean.ctr += parts[static_cast<std::size_t>(i)].ctr / n;
      mean.reg += parts[static_cast<std::size_t>(i)].reg / n;
      mean.num_pos += parts[static_cast<std::size_t>(i)].num_pos;
    }
  }

  const T inv = T(1) / static_cast<T>(n);
  model_.visit_params([inv](Parameter<T>& p) {
    if (!p.trainable) return;
    kernels::active<T>().scale(inv, p.grad.data(),
                               static_cast<std::size_t>(p.grad.numel()));
  });

  const double lr = lr_at(cfg_, step_);
  apply_update(lr);
  StepMetrics m;
  m.step = step_;
  m.lr = lr;
  m.loss = mean;
  ++step_;
  return m;
}

template <typename T>
void Trainer<T>::apply_update(double lr) {
  std::size_t i = 0;
  model_.visit_params([&](Parameter<T>& p) {
    Tensor<T>& mom = momentum_[i++];
    if (!p.trainable || lr == 0.0) return;
    kernels::active<T>().sgd_momentum(
        p.value.data(), mom.data(), p.grad.data(),
        static_cast<std::size_t>(p.value.numel()),
        static_cast<T>(cfg_.momentum), static_cast<T>(lr),
        static_cast<T>(cfg_.weight_decay));
  });
}

template <typename T>
void Trainer<T>::train(const std::vector<SequenceRecord>& data,
                       std::ostream* log,
                       const std::string& checkpoint_prefix) {
  if (data.empty()) throw std::invalid_argument("train: no sequences");
  Rng data_rng = Rng(cfg_.seed).fork(0xDA7A);
  const int total = cfg_.total_steps();
  for (int s = 0; s < total; ++s) {
    std::vector<TrainSample<T>> batch;
    batch.reserve(static_cast<std::size_t>(cfg_.batch_size));
    for (int b = 0; b < cfg_.batch_size; ++b) {
      const auto& seq = data[static_cast<std::size_t>(
          data_rng.uniform_int(0, static_cast<std::int64_t>(data.size()) - 1))];
      const auto idx = sample_training_frames(
          static_cast<int>(seq.frames.size()), cfg_.train_frames,
          cfg_.max_gap, data_rng);
      batch.push_back(
          make_train_sample<T>(model_.config(), seq, idx, data_rng));
    }
    const StepMetrics m = step(batch);
    if (log) {
      (*log) << "{\"step\":" << m.step << ",\"lr\":" << m.lr
             << ",\"loss\":" << m.loss.total << ",\"loss_cls\":" << m.loss.cls
             << ",\"loss_ctr\":" << m.loss.ctr
             << ",\"loss_reg\":" << m.loss.reg << "}\n";
    }
    if (cfg_.checkpoint_every > 0 && !checkpoint_prefix.empty() &&
        (s + 1) % cfg_.checkpoint_every == 0)
      model_.save(checkpoint_prefix + ".step" + std::to_string(s + 1));
  }
}

template <typename T>
std::vector<double> overfit_harness(TrackModel<T>& model,
                                    const TrainSample<T>& sample,
                                    int max_steps, TrainConfig cfg) {
  cfg.batch_size = 1;
  cfg.epochs = 1;
  cfg.steps_per_epoch = std::max(1, max_steps);
  if (cfg.warmup_steps >= cfg.steps_per_epoch) cfg.warmup_steps = 0;
  Trainer<T> trainer(model, cfg);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(max_steps));
  std::vector<TrainSample<T>> batch{sample};
  for (int s = 0; s < max_steps; ++s)
    losses.push_back(trainer.step(batch).loss.total);
  return losses;
}

template std::pair<NodeId, LossParts> compute_loss(
    Graph<float>&, const HeadNet<float>::Nodes&,
    const EncodedTargets<float>&, const TrainConfig&);
template std::pair<NodeId, LossParts> compute_loss(
    Graph<double>&, const HeadNet<double>::Nodes&,
    const EncodedTargets<double>&, const TrainConfig&);
template TrainSample<float> make_train_sample(const ModelConfig&,
                                              const SequenceRecord&,
                                              const std::vector<int>&, Rng&);
template TrainSample<double> make_train_sample(const ModelConfig&,
                                               const SequenceRecord&,
                                               const std::vector<int>&, Rng&);
template class Trainer<float>;
template class Trainer<double>;
template std::vector<double> overfit_harness(TrackModel<float>&,
                                             const TrainSample<float>&, int,
                                             TrainConfig);
template std::vector<double> overfit_harness(TrackModel<double>&,
                                             const TrainSample<double>&, int,
                                             TrainConfig);

}  // namespace stm
