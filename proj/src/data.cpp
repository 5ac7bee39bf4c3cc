#include "stm/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace stm {

namespace fs = std::filesystem;

AugmentParams sample_augment(Rng& rng, double side, double translate_frac,
                             double scale_r) {
  AugmentParams a;
  a.dx = rng.uniform(-translate_frac * side, translate_frac * side);
  a.dy = rng.uniform(-translate_frac * side, translate_frac * side);
  a.scale = std::exp(rng.uniform(-std::log1p(scale_r), std::log1p(scale_r)));
  return a;
}

namespace {

// Bilinear sample with the out-of-frame region held at the channel mean.
float sample_bilinear(const Tensor<float>& img, int ch, double x, double y,
                      float fill) {
  const int h = img.dim(1), w = img.dim(2);
  const double fx = x - 0.5, fy = y - 0.5;
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const double ax = fx - x0, ay = fy - y0;
  auto px = [&](int yy, int xx) -> float {
    if (xx < 0 || xx >= w || yy < 0 || yy >= h) return fill;
    return img.at(ch, yy, xx);
  };
  const double top = px(y0, x0) * (1 - ax) + px(y0, x0 + 1) * ax;
  const double bot = px(y0 + 1, x0) * (1 - ax) + px(y0 + 1, x0 + 1) * ax;
  return static_cast<float>(top * (1 - ay) + bot * ay);
}

}  // namespace

std::pair<Tensor<float>, CropTransform> crop_patch(const Tensor<float>& frame,
                                                   const BBox& target,
                                                   int out_side,
                                                   const AugmentParams& aug) {
  if (frame.rank() != 3 || frame.dim(0) != 3)
    throw std::invalid_argument("crop_patch: frame must be 3 x H x W");
  if (!target.valid())
    throw std::invalid_argument("crop_patch: degenerate target box");

  const double base_side = 4.0 * std::sqrt(target.w * target.h);
  CropTransform geom;
  geom.cx = target.cx() + aug.dx;
  geom.cy = target.cy() + aug.dy;
  geom.side = base_side * aug.scale;
  geom.out_side = out_side;

  float mean[3];
  const std::int64_t hw =
      static_cast<std::int64_t>(frame.dim(1)) * frame.dim(2);
  for (int c = 0; c < 3; ++c) {
    double acc = 0;
    const float* p = frame.data() + c * hw;
    for (std::int64_t i = 0; i < hw; ++i) acc += p[i];
    mean[c] = static_cast<float>(acc / static_cast<double>(hw));
  }

  Tensor<float> patch({3, out_side, out_side});
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < out_side; ++i)
      for (int j = 0; j < out_side; ++j)
        patch.at(c, i, j) =
            sample_bilinear(frame, c, geom.to_image_x(j + 0.5),
                            geom.to_image_y(i + 0.5), mean[c]);
  return {std::move(patch), geom};
}

LabelMap make_label_map(const BBox& box_in_image, const CropTransform& geom) {
  if (!box_in_image.valid())
    throw std::invalid_argument("make_label_map: degenerate box");
  LabelMap out;
  const int s = geom.out_side;
  out.map = Tensor<float>({1, s, s});
  std::int64_t ones = 0;
  for (int i = 0; i < s; ++i) {
    const double v = geom.to_image_y(i + 0.5);
    const bool in_y = v >= box_in_image.y && v < box_in_image.y2();
    for (int j = 0; j < s; ++j) {
      const double u = geom.to_image_x(j + 0.5);
      if (in_y && u >= box_in_image.x && u < box_in_image.x2()) {
        out.map.at(0, i, j) = 1.0f;
        ++ones;
      }
    }
  }
  out.outside = ones == 0;
  return out;
}

std::vector<int> sample_training_frames(int seq_length, int t_frames,
                                        int max_gap, Rng& rng) {
  if (seq_length < 1)
    throw std::invalid_argument("sample_training_frames: empty sequence");
  if (t_frames < 1)
    throw std::invalid_argument("sample_training_frames: T must be >= 1");
  if (seq_length == 1)
    return std::vector<int>(static_cast<std::size_t>(t_frames), 0);
  if (t_frames < 2)
    throw std::invalid_argument(
        "sample_training_frames: video training needs T >= 2");
  const int lo = static_cast<int>(rng.uniform_int(0, seq_length - 1));
  const int hi = std::min(seq_length - 1, lo + max_gap);
  std::vector<int> idx(static_cast<std::size_t>(t_frames));
  for (auto& v : idx) v = static_cast<int>(rng.uniform_int(lo, hi));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// ---------------------------------------------------------------------------
// synthetic sequences

void SequenceSpec::validate() const {
  if (length < 1) throw std::invalid_argument("sequence: length must be >= 1");
  if (width < 16 || height < 16)
    throw std::invalid_argument("sequence: image too small");
  if (target_w >= width || target_h >= height)
    throw std::invalid_argument("sequence: target larger than image");
  if (target_w < 4 || target_h < 4)
    throw std::invalid_argument("sequence: target too small to render");
  if (target_shape != "rect" && target_shape != "ellipse")
    throw std::invalid_argument("sequence: unknown target shape '" +
                                target_shape + "'");
  if (deform_amp < 0 || deform_amp >= 0.5)
    throw std::invalid_argument("sequence: deform_amp must be in [0, 0.5)");
  for (const auto& o : occluders)
    if (o.coverage <= 0 || o.coverage > 1)
      throw std::invalid_argument("sequence: occluder coverage out of (0,1]");
}

namespace {

struct Paint {
  float r, g, b;
  double stripe_period;
  double stripe_gain;
};

Paint random_paint(Rng& rng) {
  Paint p;
  p.r = static_cast<float>(rng.uniform(0.2, 0.95));
  p.g = static_cast<float>(rng.uniform(0.2, 0.95));
  p.b = static_cast<float>(rng.uniform(0.2, 0.95));
  p.stripe_period = rng.uniform(3.0, 9.0);
  p.stripe_gain = rng.uniform(0.15, 0.4);
  return p;
}

float shade(const Paint& p, int ch, double lx, double ly, double noise_mul) {
  const double stripe =
      1.0 + p.stripe_gain * std::sin(2.0 * 3.14159265358979323846 *
                                     (lx + 0.7 * ly) / p.stripe_period);
  const float base = ch == 0 ? p.r : (ch == 1 ? p.g : p.b);
  const double v = base * stripe * noise_mul;
  return static_cast<float>(std::clamp(v, 0.0, 1.0));
}

bool inside_shape(const std::string& shape, const BBox& box, double x,
                  double y) {
  if (shape == "ellipse") {
    const double nx = (x - box.cx()) / (box.w / 2.0);
    const double ny = (y - box.cy()) / (box.h / 2.0);
    return nx * nx + ny * ny <= 1.0;
  }
  return x >= box.x && x < box.x2() && y >= box.y && y < box.y2();
}

void draw_shape(Tensor<float>& img, const std::string& shape, const BBox& box,
                const Paint& paint, double noise_mul) {
  const int h = img.dim(1), w = img.dim(2);
  const int y0 = std::max(0, static_cast<int>(std::floor(box.y)));
  const int y1 = std::min(h, static_cast<int>(std::ceil(box.y2())));
  const int x0 = std::max(0, static_cast<int>(std::floor(box.x)));
  const int x1 = std::min(w, static_cast<int>(std::ceil(box.x2())));
  for (int i = y0; i < y1; ++i) {
    for (int j = x0; j < x1; ++j) {
      const double px = j + 0.5, py = i + 0.5;
      if (!inside_shape(shape, box, px, py)) continue;
      for (int c = 0; c < 3; ++c)
        img.at(c, i, j) =
            shade(paint, c, px - box.x, py - box.y, noise_mul);
    }
  }
}

// Reflect a coordinate into [margin, limit - margin] (triangle fold).
double fold(double v, double margin, double limit) {
  const double span = limit - 2.0 * margin;
  if (span <= 0) return limit / 2.0;
  double u = std::fmod(v - margin, 2.0 * span);
  if (u < 0) u += 2.0 * span;
  return margin + (u <= span ? u : 2.0 * span - u);
}

}  // namespace

SequenceRecord synth_sequence(const SequenceSpec& spec, std::uint64_t seed) {
  spec.validate();
  Rng root(seed);
  Rng bg_rng = root.fork(1);
  Rng layout_rng = root.fork(2);

  // Static textured background.
  Tensor<float> background({3, spec.height, spec.width});
  {
    const Paint p = random_paint(bg_rng);
    for (int i = 0; i < spec.height; ++i)
      for (int j = 0; j < spec.width; ++j)
        for (int c = 0; c < 3; ++c)
          background.at(c, i, j) =
              0.45f * shade(p, c, j * 0.5, i * 0.5, 1.0) +
              static_cast<float>(bg_rng.uniform(0.0, 0.05));
  }

  const Paint target_paint = random_paint(layout_rng);
  const double dir = layout_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
  const double vx = spec.speed * std::cos(dir);
  const double vy = spec.speed * std::sin(dir);
  const double margin_x = spec.target_w * 0.75;
  const double margin_y = spec.target_h * 0.75;
  const double sx = layout_rng.uniform(margin_x, spec.width - margin_x);
  const double sy = layout_rng.uniform(margin_y, spec.height - margin_y);

  struct Distractor {
    Paint paint;
    double sx, sy, vx, vy, w, h;
    std::string shape;
  };
  std::vector<Distractor> distractors;
  for (int i = 0; i < spec.clutter; ++i) {
    Distractor d;
    d.paint = target_paint;  // same texture family: genuinely confusable
    d.paint.stripe_period = layout_rng.uniform(3.0, 9.0);
    d.w = spec.target_w * layout_rng.uniform(0.7, 1.3);
    d.h = spec.target_h * layout_rng.uniform(0.7, 1.3);
    d.sx = layout_rng.uniform(d.w, spec.width - d.w);
    d.sy = layout_rng.uniform(d.h, spec.height - d.h);
    const double ddir = layout_rng.uniform(0.0, 2.0 * 3.14159265358979323846);
    const double dspeed = spec.speed * layout_rng.uniform(0.5, 1.5);
    d.vx = dspeed * std::cos(ddir);
    d.vy = dspeed * std::sin(ddir);
    d.shape = spec.target_shape;
    distractors.push_back(d);
  }
  const Paint occ_paint = random_paint(layout_rng);

  SequenceRecord rec;
  rec.frames.reserve(static_cast<std::size_t>(spec.length));
  for (int t = 0; t < spec.length; ++t) {
    Rng frame_rng = root.fork(100 + static_cast<std::uint64_t>(t));
    Tensor<float> img = background;

    const double phase =
        spec.deform_amp *
        std::sin(2.0 * 3.14159265358979323846 * t / spec.deform_period);
    const double w_t = spec.target_w * (1.0 + phase);
    const double h_t = spec.target_h / (1.0 + phase);
    const double cx = fold(sx + vx * t, w_t * 0.75, spec.width);
    const double cy = fold(sy + vy * t, h_t * 0.75, spec.height);
    const BBox target = BBox::from_center(cx, cy, w_t, h_t);

    for (const auto& d : distractors) {
      const BBox db = BBox::from_center(fold(d.sx + d.vx * t, d.w, spec.width),
                                        fold(d.sy + d.vy * t, d.h, spec.height),
                                        d.w, d.h);
      draw_shape(img, d.shape, db, d.paint,
                 1.0 + spec.noise * frame_rng.normal());
    }
    draw_shape(img, spec.target_shape, target, target_paint,
               1.0 + spec.noise * frame_rng.normal());

    FrameEvent ev;
    ev.aspect = w_t / h_t;
    for (const auto& o : spec.occluders) {
      const int last = o.last_frame < 0 ? spec.length - 1 : o.last_frame;
      if (t < o.first_frame || t > last) continue;
      // Horizontal bar over the target's upper part, sized to hide
      // `coverage` of its area.
      BBox occ{target.x - 1.0, target.y - 1.0, target.w + 2.0,
               target.h * o.coverage + 1.0};
      draw_shape(img, "rect", occ, occ_paint, 1.0);
      ev.occlusion_frac = std::max(ev.occlusion_frac, o.coverage);
      ev.occluder = occ;
    }

    rec.frames.push_back(std::move(img));
    rec.gt.push_back(target);
    rec.events.push_back(ev);
  }
  return rec;
}

SequenceSpec preset_sequence_spec(const std::string& name) {
  SequenceSpec s;
  if (name == "plain") {
    s.speed = 1.0;
  } else if (name == "occlusion") {
    s.speed = 1.2;
    s.deform_amp = 0.18;
    s.deform_period = 30;
    OccluderSpec o;
    o.first_frame = 20;
    o.last_frame = 32;
    o.coverage = 0.6;
    s.occluders.push_back(o);
  } else if (name == "clutter") {
    s.speed = 1.2;
    s.clutter = 4;
    s.deform_amp = 0.10;
  } else {
    throw std::invalid_argument("unknown sequence preset '" + name + "'");
  }
  return s;
}

// ---------------------------------------------------------------------------
// disk formats

void write_ppm(const std::string& path, const Tensor<float>& chw) {
  if (chw.rank() != 3 || chw.dim(0) != 3)
    throw std::invalid_argument("write_ppm: image must be 3 x H x W");
  const int h = chw.dim(1), w = chw.dim(2);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("write_ppm: cannot open " + path);
  f << "P6\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> row(static_cast<std::size_t>(w) * 3);
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(chw.at(c, i, j), 0.0f, 1.0f);
        row[static_cast<std::size_t>(j) * 3 + c] =
            static_cast<unsigned char>(std::lround(v * 255.0f));
      }
    f.write(reinterpret_cast<const char*>(row.data()),
            static_cast<std::streamsize>(row.size()));
  }
  if (!f) throw std::runtime_error("write_ppm: write failed for " + path);
}

Tensor<float> read_ppm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("read_ppm: cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P6") throw std::runtime_error("read_ppm: not a P6 file");
  int w = 0, h = 0, maxval = 0;
  f >> w >> h >> maxval;
  if (!f || w < 1 || h < 1 || maxval != 255)
    throw std::runtime_error("read_ppm: unsupported header in " + path);
  f.get();  // single whitespace after maxval
  Tensor<float> img({3, h, w});
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
  f.read(reinterpret_cast<char*>(buf.data()),
         static_cast<std::streamsize>(buf.size()));
  if (!f) throw std::runtime_error("read_ppm: truncated pixel data");
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j)
      for (int c = 0; c < 3; ++c)
        img.at(c, i, j) =
            buf[(static_cast<std::size_t>(i) * w + j) * 3 + c] / 255.0f;
  return img;
}

void save_sequence(const std::string& dir, const SequenceRecord& seq) {
  fs::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < seq.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.ppm", i);
    write_ppm((fs::path(dir) / name).string(), seq.frames[i]);
  }
  std::ofstream gt(fs::path(dir) / "groundtruth.txt");
  gt.precision(6);
  gt << std::fixed;
  for (const auto& b : seq.gt)
    gt << b.x << ',' << b.y << ',' << b.w << ',' << b.h << '\n';

  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : seq.events) {
    nlohmann::json j;
    j["occlusion"] = e.occlusion_frac;
    j["aspect"] = e.aspect;
    if (e.occlusion_frac > 0)
      j["occluder"] = {e.occluder.x, e.occluder.y, e.occluder.w, e.occluder.h};
    events.push_back(std::move(j));
  }
  std::ofstream ev(fs::path(dir) / "events.json");
  ev << events.dump(2) << '\n';
}

SequenceRecord load_sequence(const std::string& dir) {
  SequenceRecord rec;
  std::ifstream gt(fs::path(dir) / "groundtruth.txt");
  if (!gt)
    throw std::runtime_error("load_sequence: missing groundtruth.txt in " +
                             dir);
  std::string line;
  while (std::getline(gt, line)) {
    if (line.empty()) continue;
    BBox b;
    if (std::sscanf(line.c_str(), "%lf,%lf,%lf,%lf", &b.x, &b.y, &b.w,
                    &b.h) != 4)
      throw std::runtime_error("load_sequence: bad groundtruth line '" + line +
                               "'");
    rec.gt.push_back(b);
  }
  char name[32];
  for (std::size_t i = 0; i < rec.gt.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%06zu.ppm", i);
    rec.frames.push_back(read_ppm((fs::path(dir) / name).string()));
  }
  const fs::path evpath = fs::path(dir) / "events.json";
  if (fs::exists(evpath)) {
    std::ifstream ev(evpath);
    nlohmann::json events = nlohmann::json::parse(ev);
    for (const auto& j : events) {
      FrameEvent e;
      e.occlusion_frac = j.value("occlusion", 0.0);
      e.aspect = j.value("aspect", 1.0);
      if (j.contains("occluder")) {
        const auto& o = j["occluder"];
        e.occluder = BBox{o[0], o[1], o[2], o[3]};
      }
      rec.events.push_back(e);
    }
  } else {
    rec.events.resize(rec.gt.size());
  }
  return rec;
}

}  // namespace stm
