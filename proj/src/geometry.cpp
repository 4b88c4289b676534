#include "fovdet/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "fovdet/errors.hpp"
#include "fovdet/kernels.hpp"

namespace fovdet {

double fov_from_focal(double focal_px, double image_width_px) {
  if (focal_px <= 0.0) throw DomainError("fov_from_focal: focal must be > 0");
  if (image_width_px <= 0.0)
    throw DomainError("fov_from_focal: width must be > 0");
  return 2.0 * std::atan(image_width_px / (2.0 * focal_px));
}

namespace {
int round_even(double x) {
  return 2 * static_cast<int>(std::llround(x / 2.0));
}
}  // namespace

SimulatedImage simulate_intrinsic(const Image& img, const CameraIntrinsics& k,
                                  double f_target, double pad_value) {
  if (f_target <= 0.0)
    throw DomainError("simulate_intrinsic: f_target must be > 0");
  if (!k.valid()) throw DomainError("simulate_intrinsic: invalid intrinsics");
  if (img.width != k.width || img.height != k.height)
    throw DomainError("simulate_intrinsic: image/intrinsics size mismatch");

  SimulatedImage out;
  if (f_target == k.fx && f_target == k.fy) {
    out.image = img;
    out.intrinsics = k;
    return out;
  }

  const int crop_w = round_even(img.width * k.fx / f_target);
  const int crop_h = round_even(img.height * k.fy / f_target);
  if (crop_w <= 0 || crop_h <= 0)
    throw DomainError("simulate_intrinsic: degenerate crop");

  // Crop window centered on the principal point; resample to full size.
  const double x0 = k.cx - crop_w / 2.0;
  const double y0 = k.cy - crop_h / 2.0;
  const double sx = static_cast<double>(crop_w) / img.width;
  const double sy = static_cast<double>(crop_h) / img.height;

  out.image = Image(img.height, img.width, img.channels);
  kernels::resample_bilinear(img.data.data(), img.height, img.width,
                             img.channels, out.image.data.data(), img.height,
                             img.width, x0, y0, sx, sy, pad_value);
  out.intrinsics = CameraIntrinsics::centered(f_target, img.width, img.height);
  out.intrinsics.fy = f_target;
  return out;
}

bool point_in_image(double u, double v, const CameraIntrinsics& k) {
  return u >= 0.0 && u < k.width && v >= 0.0 && v < k.height;
}

std::vector<TransformedLabel> transform_labels(const std::vector<Box3D>& boxes,
                                               const CameraIntrinsics& k_old,
                                               const CameraIntrinsics& k_new) {
  if (!k_old.valid() || !k_new.valid())
    throw DomainError("transform_labels: invalid intrinsics");
  std::vector<TransformedLabel> out;
  out.reserve(boxes.size());
  for (const Box3D& b : boxes) {
    TransformedLabel t;
    t.box = b;  // 3D geometry is unchanged; only the projection moves
    const double z = b.center[2];
    if (z <= 0.0) {
      t.out_of_frame = true;
    } else {
      const double u = k_new.fx * b.center[0] / z + k_new.cx;
      const double v = k_new.fy * b.center[1] / z + k_new.cy;
      t.out_of_frame = !point_in_image(u, v, k_new);
    }
    out.push_back(t);
  }
  return out;
}

std::array<std::array<double, 3>, 8> box_corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = box.dims[0] / 2.0, hw = box.dims[1] / 2.0,
               hh = box.dims[2] / 2.0;
  std::array<std::array<double, 3>, 8> out;
  int i = 0;
  for (double u : {-hl, hl}) {
    for (double v : {-hw, hw}) {
      const double dx = c * u - s * v;
      const double dz = s * u + c * v;
      for (double dy : {-hh, hh}) {
        out[i++] = {box.center[0] + dx, box.center[1] + dy,
                    box.center[2] + dz};
      }
    }
  }
  return out;
}

std::array<std::array<double, 2>, 4> bev_corners(const Box3D& box) {
  const double c = std::cos(box.yaw), s = std::sin(box.yaw);
  const double hl = box.dims[0] / 2.0, hw = box.dims[1] / 2.0;
  std::array<std::array<double, 2>, 4> out;
  const double us[4] = {hl, -hl, -hl, hl};
  const double vs[4] = {hw, hw, -hw, -hw};
  for (int i = 0; i < 4; ++i) {
    out[i] = {box.center[0] + c * us[i] - s * vs[i],
              box.center[2] + s * us[i] + c * vs[i]};
  }
  return out;
}

Box2D project_box(const Box3D& box, const CameraIntrinsics& k) {
  if (box.center[2] <= 0.0)
    throw DomainError("project_box: box center behind camera");
  const auto corners = box_corners(box);
  double xmin = 1e300, ymin = 1e300, xmax = -1e300, ymax = -1e300;
  int in_front = 0;
  for (const auto& c : corners) {
    if (c[2] <= 1e-9) continue;  // behind camera: excluded from the hull
    ++in_front;
    const double u = k.fx * c[0] / c[2] + k.cx;
    const double v = k.fy * c[1] / c[2] + k.cy;
    xmin = std::min(xmin, u);
    xmax = std::max(xmax, u);
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
  }
  if (in_front == 0)
    throw DomainError("project_box: all corners behind camera");
  Box2D r;
  r.xmin = std::clamp(xmin, 0.0, static_cast<double>(k.width));
  r.xmax = std::clamp(xmax, 0.0, static_cast<double>(k.width));
  r.ymin = std::clamp(ymin, 0.0, static_cast<double>(k.height));
  r.ymax = std::clamp(ymax, 0.0, static_cast<double>(k.height));
  return r;
}

}  // namespace fovdet
