#include "stm/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace stm {

double iou(const BBox& a, const BBox& b) {
  if (!a.valid() || !b.valid())
    throw std::invalid_argument("iou: degenerate box");
  const double ix = std::max(0.0, std::min(a.x2(), b.x2()) - std::max(a.x, b.x));
  const double iy = std::max(0.0, std::min(a.y2(), b.y2()) - std::max(a.y, b.y));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

Metrics compute_metrics(const std::vector<BBox>& preds,
                        const std::vector<BBox>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw std::invalid_argument("metrics: empty or mismatched inputs");
  const std::size_t n = preds.size();
  std::vector<double> ious(n), err(n), nerr(n);
  for (std::size_t i = 0; i < n; ++i) {
    ious[i] = iou(preds[i], gts[i]);
    const double dx = preds[i].cx() - gts[i].cx();
    const double dy = preds[i].cy() - gts[i].cy();
    err[i] = std::hypot(dx, dy);
    nerr[i] = err[i] / std::sqrt(gts[i].area());
  }
  auto frac = [n](auto&& pred) {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (pred(i)) ++c;
    return static_cast<double>(c) / static_cast<double>(n);
  };

  Metrics m;
  double auc = 0;
  for (int k = 0; k <= 100; ++k) {
    const double tau = k / 100.0;
    auc += frac([&](std::size_t i) { return ious[i] > tau; });
  }
  m.success_auc = auc / 101.0;
  m.precision = frac([&](std::size_t i) { return err[i] <= 20.0; });
  m.norm_precision = frac([&](std::size_t i) { return nerr[i] <= 0.2; });
  double sum = 0;
  for (double v : ious) sum += v;
  m.ao = sum / static_cast<double>(n);
  m.sr50 = frac([&](std::size_t i) { return ious[i] > 0.5; });
  m.sr75 = frac([&](std::size_t i) { return ious[i] > 0.75; });
  return m;
}

void write_results_csv(const std::string& path,
                       const std::vector<TrackedFrame>& rows) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("results: cannot open " + path);
  f << "frame_idx,x,y,w,h,score\n";
  char line[256];
  for (const auto& r : rows) {
    std::snprintf(line, sizeof(line), "%d,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  r.frame, r.box.x, r.box.y, r.box.w, r.box.h, r.score);
    f << line;
  }
  if (!f) throw std::runtime_error("results: write failed for " + path);
}

std::vector<TrackedFrame> read_results_csv(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("results: cannot open " + path);
  std::vector<TrackedFrame> rows;
  std::string line;
  bool first = true;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    if (first && line.rfind("frame_idx", 0) == 0) {
      first = false;
      continue;
    }
    first = false;
    TrackedFrame r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf", &r.frame, &r.box.x,
                    &r.box.y, &r.box.w, &r.box.h, &r.score) != 6)
      throw std::runtime_error("results: bad line '" + line + "'");
    rows.push_back(r);
  }
  if (rows.empty()) throw std::runtime_error("results: empty file " + path);
  return rows;
}

}  // namespace stm
