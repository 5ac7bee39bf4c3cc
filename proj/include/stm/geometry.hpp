#pragma once

#include <algorithm>

namespace stm {

// Axis-aligned box, top-left convention, continuous pixel coordinates.
// Pixel (i, j) of an image covers [j, j+1) x [i, i+1).
struct BBox {
  double x = 0, y = 0, w = 0, h = 0;

  double cx() const { return x + w / 2.0; }
  double cy() const { return y + h / 2.0; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
  double area() const { return w * h; }
  bool valid() const { return w > 0 && h > 0; }

  static BBox from_center(double cx, double cy, double w, double h) {
    return BBox{cx - w / 2.0, cy - h / 2.0, w, h};
  }
};

// Square crop window of side `side` centered at (cx, cy) in source-image
// coordinates, resampled to out_side x out_side. Invertible linear map.
struct CropTransform {
  double cx = 0, cy = 0;
  double side = 1;
  int out_side = 289;

  double scale() const { return static_cast<double>(out_side) / side; }
  double left() const { return cx - side / 2.0; }
  double top() const { return cy - side / 2.0; }

  double to_patch_x(double ix) const { return (ix - left()) * scale(); }
  double to_patch_y(double iy) const { return (iy - top()) * scale(); }
  double to_image_x(double px) const { return px / scale() + left(); }
  double to_image_y(double py) const { return py / scale() + top(); }

  BBox to_patch(const BBox& b) const {
    return BBox{to_patch_x(b.x), to_patch_y(b.y), b.w * scale(),
                b.h * scale()};
  }
  BBox to_image(const BBox& b) const {
    return BBox{to_image_x(b.x), to_image_y(b.y), b.w / scale(),
                b.h / scale()};
  }
};

// Score-grid cell (i, j) center in input-patch pixels.
struct GridGeometry {
  int stride = 8;
  double offset = 4.0;  // stride / 2 by convention

  double cell_x(int j) const { return offset + static_cast<double>(stride) * j; }
  double cell_y(int i) const { return offset + static_cast<double>(stride) * i; }
};

}  // namespace stm
