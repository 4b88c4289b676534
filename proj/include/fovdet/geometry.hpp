#pragma once

#include <array>
#include <vector>

#include "fovdet/image.hpp"

namespace fovdet {

// Pinhole parameters. Convention: continuous image coordinates, pixel (i,j)
// covers [j,j+1) x [i,i+1) with its center at (j+0.5, i+0.5); a 3D point
// (x,y,z) in camera coordinates (x right, y down, z forward) projects to
// u = fx*x/z + cx, v = fy*y/z + cy.
struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 0;
  int height = 0;

  static CameraIntrinsics centered(double f, int w, int h) {
    return {f, f, w / 2.0, h / 2.0, w, h};
  }

  bool valid() const {
    return fx > 0 && fy > 0 && width >= 1 && height >= 1 && cx >= 0 &&
           cx < width && cy >= 0 && cy < height;
  }
};

// Oriented 3D box in camera coordinates. dims = (l, w, h); at yaw = 0 the
// length axis runs along camera x and the width axis along camera z; yaw
// rotates the footprint about the vertical (y) axis.
struct Box3D {
  std::array<double, 3> center{0, 0, 0};
  std::array<double, 3> dims{0, 0, 0};  // l, w, h; all > 0
  double yaw = 0.0;                     // radians, (-pi, pi]
  int category = 0;
};

struct Box2D {
  double xmin = 0, ymin = 0, xmax = 0, ymax = 0;
  double width() const { return xmax - xmin; }
  double height() const { return ymax - ymin; }
  double area() const { return width() * height(); }
};

// theta = 2*atan(w / (2 f)). Throws DomainError on non-positive input.
double fov_from_focal(double focal_px, double image_width_px);

// FoV-based focal simulation: central crop-or-pad of the source scaled by
// f_target/fx, resampled back to the source resolution with bilinear
// filtering. Returns the resampled image and the new intrinsics
// (fx' = fy' = f_target, principal point at the image center, size
// unchanged). Crop extents are rounded to the nearest even integer.
struct SimulatedImage {
  Image image;
  CameraIntrinsics intrinsics;
};
SimulatedImage simulate_intrinsic(const Image& img, const CameraIntrinsics& k,
                                  double f_target, double pad_value = 0.0);

// Label carry-over for a simulated intrinsic change: 3D geometry is
// untouched; boxes whose projected center leaves the new frame are flagged.
struct TransformedLabel {
  Box3D box;
  bool out_of_frame = false;
};
std::vector<TransformedLabel> transform_labels(const std::vector<Box3D>& boxes,
                                               const CameraIntrinsics& k_old,
                                               const CameraIntrinsics& k_new);

// Axis-aligned hull of the 8 projected corners, clamped to image bounds.
// Corners with z <= 0 are excluded; throws DomainError if none remain.
Box2D project_box(const Box3D& box, const CameraIntrinsics& k);

// The 8 corners of a Box3D in camera coordinates (no projection).
std::array<std::array<double, 3>, 8> box_corners(const Box3D& box);

// Footprint corners in the BEV (x,z) plane, counter-clockwise.
std::array<std::array<double, 2>, 4> bev_corners(const Box3D& box);

bool point_in_image(double u, double v, const CameraIntrinsics& k);

}  // namespace fovdet
