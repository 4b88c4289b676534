#include <doctest.h>

#include <cmath>
#include <cstring>

#include "fovdet/errors.hpp"
#include "fovdet/geometry.hpp"
#include "fovdet/rng.hpp"

using namespace fovdet;

namespace {
Image random_image(int h, int w, Rng& rng) {
  Image img(h, w, 3);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

// Independent hand projection of one corner.
void project_point(double x, double y, double z, const CameraIntrinsics& k,
                   double& u, double& v) {
  u = k.fx * x / z + k.cx;
  v = k.fy * y / z + k.cy;
}
}  // namespace

TEST_SUITE("geometry") {

TEST_CASE("fov_from_focal: known values") {
  CHECK(fov_from_focal(640, 1280) == 2.0 * std::atan(1.0));  // pi/2 exactly
  CHECK(fov_from_focal(640, 1280) == doctest::Approx(M_PI / 2).epsilon(1e-15));
  // Frozen from an independent evaluation of 2*atan(w/(2f)).
  CHECK(std::fabs(fov_from_focal(700, 1280) - 1.4813038638856655) < 1e-6);
  CHECK(std::fabs(fov_from_focal(700, 1280) -
                  2.0 * std::atan(1280.0 / 1400.0)) < 1e-15);
  CHECK(std::fabs(fov_from_focal(1300, 1280) - 0.9149496957920503) < 1e-6);
}

TEST_CASE("fov_from_focal: domain errors and monotonicity") {
  CHECK_THROWS_AS(fov_from_focal(0, 1280), DomainError);
  CHECK_THROWS_AS(fov_from_focal(-5, 1280), DomainError);
  CHECK_THROWS_AS(fov_from_focal(700, 0), DomainError);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const double w = rng.uniform(100, 4000);
    const double f1 = rng.uniform(50, 5000);
    const double f2 = f1 + rng.uniform(1, 500);
    CHECK(fov_from_focal(f1, w) > fov_from_focal(f2, w));
    const double theta = fov_from_focal(f1, w);
    CHECK(theta > 0.0);
    CHECK(theta < M_PI);
  }
}

TEST_CASE("simulate_intrinsic: f_target == fx is a byte-identical no-op") {
  Rng rng(5);
  Image img = random_image(64, 128, rng);
  const auto k = CameraIntrinsics::centered(900, 128, 64);
  const auto out = simulate_intrinsic(img, k, 900.0);
  REQUIRE(out.image.data.size() == img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(out.image.data[i] == img.data[i]);
  CHECK(out.intrinsics.fx == k.fx);
  CHECK(out.intrinsics.fy == k.fy);
  CHECK(out.intrinsics.cx == k.cx);
  CHECK(out.intrinsics.cy == k.cy);
}

TEST_CASE("simulate_intrinsic: crop width follows round-even(w*fx/f_target)") {
  // fx=900 -> f_target=1300 at w=1280: crop covers round_even(886.15) = 886
  // source pixels. Verify via the resampling geometry: the outermost output
  // pixel centers must map just inside a 886-px-wide centered window.
  Rng rng(6);
  Image img = random_image(384, 1280, rng);
  const auto k = CameraIntrinsics::centered(900, 1280, 384);
  const auto out = simulate_intrinsic(img, k, 1300.0);
  CHECK(out.intrinsics.fx == 1300.0);
  CHECK(out.intrinsics.width == 1280);
  const double crop_w = 1280.0 * 900.0 / 1300.0;  // 886.15...
  const int crop_even = 886;
  CHECK(std::fabs(crop_w - crop_even) < 1.0);
  // Content check: output center pixel equals source center pixel (identity
  // at the principal point).
  const int cy = 192, cx = 640;
  // The center of the crop maps exactly onto the principal point; with even
  // crop sizes the center 2x2 block is a pure bilinear blend of the source
  // center block. Sanity: value stays within the source's local range.
  double lo = 1e9, hi = -1e9;
  for (int dy = -1; dy <= 1; ++dy)
    for (int dx = -1; dx <= 1; ++dx) {
      lo = std::min(lo, img.at(cy + dy, cx + dx, 0));
      hi = std::max(hi, img.at(cy + dy, cx + dx, 0));
    }
  CHECK(out.image.at(cy, cx, 0) >= lo - 1e-12);
  CHECK(out.image.at(cy, cx, 0) <= hi + 1e-12);
}

TEST_CASE("simulate_intrinsic: round trip recovers dimensions and content") {
  // Smooth content: resampling loss is what the tolerance is about, and
  // white noise would dominate it.
  Image img(64, 128, 3);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 128; ++x)
      for (int c = 0; c < 3; ++c)
        img.at(y, x, c) =
            0.5 + 0.45 * std::sin(0.11 * x + 0.07 * y + 0.9 * c);
  const auto k = CameraIntrinsics::centered(1000, 128, 64);
  const auto zoomed = simulate_intrinsic(img, k, 1300.0);
  const auto back = simulate_intrinsic(zoomed.image, zoomed.intrinsics, 1000.0);
  CHECK(back.image.width == img.width);
  CHECK(back.image.height == img.height);
  CHECK(back.intrinsics.fx == 1000.0);
  // Content equal up to resampling loss in the interior (border ring loses
  // information to the zoom-out pad).
  double mad = 0.0;
  int count = 0;
  for (int y = 8; y < 56; ++y)
    for (int x = 16; x < 112; ++x)
      for (int c = 0; c < 3; ++c) {
        mad += std::fabs(back.image.at(y, x, c) - img.at(y, x, c));
        ++count;
      }
  CHECK(mad / count < 0.02);
}

TEST_CASE("simulate_intrinsic: domain errors") {
  Rng rng(10);
  Image img = random_image(32, 64, rng);
  const auto k = CameraIntrinsics::centered(800, 64, 32);
  CHECK_THROWS_AS(simulate_intrinsic(img, k, 0.0), DomainError);
  CHECK_THROWS_AS(simulate_intrinsic(img, k, -100.0), DomainError);
  // Scale so extreme the crop collapses to zero pixels.
  CHECK_THROWS_AS(simulate_intrinsic(img, k, 1e9), DomainError);
}

TEST_CASE("consistency triangle: projection under K_new matches scaling by s "
          "about the principal point") {
  Rng rng(12);
  const int w = 256, h = 128;
  for (int trial = 0; trial < 50; ++trial) {
    const double fx = rng.uniform(700, 1300);
    const double ft = rng.uniform(700, 1300);
    const auto k_old = CameraIntrinsics::centered(fx, w, h);
    const auto k_new = CameraIntrinsics::centered(ft, w, h);
    const double s = ft / fx;
    Box3D box;
    box.center = {rng.uniform(-1.5, 1.5), rng.uniform(-0.7, 0.7),
                  rng.uniform(8, 50)};
    box.dims = {rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0),
                rng.uniform(0.5, 2.0)};
    box.yaw = rng.uniform(-3.1, 3.1);
    // Keep the projections inside the frame so clamping stays out of play.
    Box2D a, b;
    try {
      a = project_box(box, k_old);
      b = project_box(box, k_new);
    } catch (const DomainError&) {
      continue;
    }
    if (a.xmin <= 0 || a.xmax >= w || a.ymin <= 0 || a.ymax >= h) continue;
    if (b.xmin <= 0 || b.xmax >= w || b.ymin <= 0 || b.ymax >= h) continue;
    CHECK(std::fabs(b.xmin - (s * (a.xmin - k_old.cx) + k_new.cx)) <= 1.0);
    CHECK(std::fabs(b.xmax - (s * (a.xmax - k_old.cx) + k_new.cx)) <= 1.0);
    CHECK(std::fabs(b.ymin - (s * (a.ymin - k_old.cy) + k_new.cy)) <= 1.0);
    CHECK(std::fabs(b.ymax - (s * (a.ymax - k_old.cy) + k_new.cy)) <= 1.0);
  }
}

TEST_CASE("transform_labels: identity and 3D immutability") {
  Rng rng(13);
  const auto k = CameraIntrinsics::centered(1000, 256, 128);
  std::vector<Box3D> boxes;
  for (int i = 0; i < 10; ++i) {
    Box3D b;
    b.center = {rng.uniform(-2, 2), rng.uniform(-0.5, 1), rng.uniform(5, 50)};
    b.dims = {1, 1, 1};
    b.yaw = rng.uniform(-3, 3);
    boxes.push_back(b);
  }
  const auto same = transform_labels(boxes, k, k);
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    CHECK(!same[i].out_of_frame);
    // bitwise equality of 3D fields
    CHECK(std::memcmp(&same[i].box.center, &boxes[i].center,
                      sizeof(boxes[i].center)) == 0);
    CHECK(std::memcmp(&same[i].box.dims, &boxes[i].dims,
                      sizeof(boxes[i].dims)) == 0);
    CHECK(same[i].box.yaw == boxes[i].yaw);
  }
  // Zoom-in keeps 3D identical but enlarges the projection.
  const auto k2 = CameraIntrinsics::centered(1300, 256, 128);
  Box3D center_box;
  center_box.center = {0, 0, 20};
  center_box.dims = {1, 1, 1};
  const auto a = project_box(center_box, k);
  const auto b = project_box(center_box, k2);
  CHECK(b.area() > a.area());
}

TEST_CASE("transform_labels: border box flagged out of frame under zoom-in") {
  const auto k_old = CameraIntrinsics::centered(700, 256, 128);
  const auto k_new = CameraIntrinsics::centered(1300, 256, 128);
  Box3D b;
  b.dims = {0.5, 0.5, 0.5};
  b.center = {0, 0, 20};
  // Place the center just inside the old frame edge: u_old ~ 2 px.
  b.center[0] = (2.0 - k_old.cx) * 20.0 / k_old.fx;
  const auto out = transform_labels({b}, k_old, k_new);
  REQUIRE(out.size() == 1);
  CHECK(out[0].out_of_frame);
  // Brute-force check of the projected center under the new intrinsics.
  double u, v;
  project_point(b.center[0], b.center[1], b.center[2], k_new, u, v);
  CHECK(u < 0.0);
}

TEST_CASE("project_box: frontal unit cube hand oracle") {
  CameraIntrinsics k{1000, 1000, 640, 360, 1280, 720};
  Box3D cube;
  cube.center = {0, 0, 10};
  cube.dims = {1, 1, 1};
  const auto r = project_box(cube, k);
  // Oracle: hand projection of all 8 corners; near face (z = 9.5)
  // dominates the hull: half extent = 1000*0.5/9.5.
  const double half = 1000.0 * 0.5 / 9.5;
  CHECK(std::fabs((r.xmax - r.xmin) - 2 * half) < 0.5);
  CHECK(std::fabs((r.ymax - r.ymin) - 2 * half) < 0.5);
  CHECK(std::fabs((r.xmin + r.xmax) / 2 - 640.0) < 1e-9);
  CHECK(std::fabs((r.ymin + r.ymax) / 2 - 360.0) < 1e-9);
}

TEST_CASE("project_box: 1/z scaling and linearity in f") {
  CameraIntrinsics k{1000, 1000, 640, 360, 1280, 720};
  Box3D cube;
  cube.center = {0, 0, 10};
  cube.dims = {1, 1, 1};
  Box3D far_cube = cube;
  far_cube.center[2] = 20;
  const auto near_r = project_box(cube, k);
  const auto far_r = project_box(far_cube, k);
  // Thin-object approximation: doubling z roughly halves the side.
  CHECK(far_r.width() == doctest::Approx(near_r.width() / 2).epsilon(0.06));

  CameraIntrinsics k2 = k;
  k2.fx *= 2;
  k2.fy *= 2;
  const auto wide = project_box(far_cube, k2);
  // Doubling f doubles extents exactly (all corners stay in frame).
  CHECK(wide.width() == doctest::Approx(2 * far_r.width()).epsilon(1e-12));
  CHECK(wide.height() == doctest::Approx(2 * far_r.height()).epsilon(1e-12));
}

TEST_CASE("project_box: behind-camera handling") {
  CameraIntrinsics k{1000, 1000, 640, 360, 1280, 720};
  Box3D b;
  b.center = {0, 0, -5};
  b.dims = {1, 1, 1};
  CHECK_THROWS_AS(project_box(b, k), DomainError);
  // Center in front but some corners behind: still projects.
  Box3D huge;
  huge.center = {0, 0, 0.4};
  huge.dims = {0.2, 2.0, 0.2};
  const auto r = project_box(huge, k);
  CHECK(r.xmax > r.xmin);
}

}  // TEST_SUITE
