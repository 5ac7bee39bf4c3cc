#include "stm/ablate.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include "stm/parallel.hpp"
#include "stm/reader.hpp"

namespace stm {

std::vector<SequenceRecord> make_suite(const SuiteConfig& cfg) {
  if (cfg.sequences < 1)
    throw std::invalid_argument("suite: need at least one sequence");
  SequenceSpec spec = preset_sequence_spec(cfg.preset);
  spec.length = cfg.length;
  Rng root(cfg.seed);
  std::vector<SequenceRecord> out;
  out.reserve(static_cast<std::size_t>(cfg.sequences));
  for (int i = 0; i < cfg.sequences; ++i)
    out.push_back(synth_sequence(spec, root.fork(static_cast<std::uint64_t>(i))
                                           .seed()));
  return out;
}

template <typename T>
SuiteRunResult run_suite(TrackModel<T>& model,
                         const std::vector<SequenceRecord>& suite,
                         const TrackerConfig& cfg, int threads) {
  if (suite.empty()) throw std::invalid_argument("run_suite: empty suite");
  const int n = static_cast<int>(suite.size());
  std::vector<Metrics> per_seq(static_cast<std::size_t>(n));
  std::vector<std::vector<double>> times(static_cast<std::size_t>(n));
  if (threads <= 0) threads = default_thread_count();

  parallel_for(n, threads, [&](int i) {
    std::vector<double> seconds;
    const auto results =
        track_sequence(model, suite[static_cast<std::size_t>(i)], cfg,
                       &seconds);
    // Drop the initialization frame from both metrics and timing.
    std::vector<BBox> preds, gts;
    for (std::size_t f = 1; f < results.size(); ++f) {
      preds.push_back(results[f].box);
      gts.push_back(suite[static_cast<std::size_t>(i)].gt[f]);
    }
    per_seq[static_cast<std::size_t>(i)] = compute_metrics(preds, gts);
    times[static_cast<std::size_t>(i)] =
        std::vector<double>(seconds.begin() + 1, seconds.end());
  });

  SuiteRunResult out;
  std::vector<double> all_times;
  for (int i = 0; i < n; ++i) {
    const Metrics& m = per_seq[static_cast<std::size_t>(i)];
    out.per_sequence_iou.push_back(m.ao);
    out.mean_iou += m.ao / n;
    out.mean_metrics.success_auc += m.success_auc / n;
    out.mean_metrics.precision += m.precision / n;
    out.mean_metrics.norm_precision += m.norm_precision / n;
    out.mean_metrics.ao += m.ao / n;
    out.mean_metrics.sr50 += m.sr50 / n;
    out.mean_metrics.sr75 += m.sr75 / n;
    all_times.insert(all_times.end(), times[static_cast<std::size_t>(i)].begin(),
                     times[static_cast<std::size_t>(i)].end());
  }
  if (!all_times.empty()) {
    std::sort(all_times.begin(), all_times.end());
    out.median_frame_seconds = all_times[all_times.size() / 2];
  }
  return out;
}

std::vector<BenchRow> bench_read(int channels, int height, int width,
                                 std::vector<int> t_list, int repeats,
                                 int warmups) {
  if (repeats < 1)
    throw std::invalid_argument("bench_read: repeats must be >= 1");
  if (channels < 1 || height < 1 || width < 1)
    throw std::invalid_argument("bench_read: bad feature shape");
  std::sort(t_list.begin(), t_list.end());
  t_list.erase(std::unique(t_list.begin(), t_list.end()), t_list.end());

  Rng rng(0xBE7C);
  const Tensor<float> query =
      Tensor<float>::uniform({channels, height, width}, rng, -1.f, 1.f);

  std::vector<BenchRow> rows;
  for (int t : t_list) {
    if (t < 1) throw std::invalid_argument("bench_read: T must be >= 1");
    StackedMemory<float> mem;
    mem.frames = t;
    mem.height = height;
    mem.width = width;
    mem.channels = channels;
    mem.rows = Tensor<float>::uniform({t * height * width, channels}, rng,
                                      -1.f, 1.f);
    mem.frame_of_row.assign(
        static_cast<std::size_t>(t) * height * width, 0);

    for (int i = 0; i < warmups; ++i) (void)memory_read(mem, query);
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(repeats));
    for (int i = 0; i < repeats; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      (void)memory_read(mem, query);
      samples.push_back(std::chrono::duration<double>(
                            std::chrono::steady_clock::now() - t0)
                            .count());
    }
    std::sort(samples.begin(), samples.end());
    BenchRow row;
    row.t_frames = t;
    row.channels = channels;
    row.height = height;
    row.width = width;
    row.median_seconds = samples[samples.size() / 2];
    rows.push_back(row);
  }
  return rows;
}

template SuiteRunResult run_suite(TrackModel<float>&,
                                  const std::vector<SequenceRecord>&,
                                  const TrackerConfig&, int);
template SuiteRunResult run_suite(TrackModel<double>&,
                                  const std::vector<SequenceRecord>&,
                                  const TrackerConfig&, int);

}  // namespace stm
