#include <doctest.h>

#include <cmath>

#include "fovdet/evalmetrics.hpp"
#include "fovdet/rng.hpp"

using namespace fovdet;

namespace {

Box3D make_box(double x, double z, double l, double w, double yaw,
               double y = 0.0, double h = 1.0, int cat = 0) {
  Box3D b;
  b.center = {x, y, z};
  b.dims = {l, w, h};
  b.yaw = yaw;
  b.category = cat;
  return b;
}

bool inside_bev(const Box3D& b, double x, double z) {
  // Inverse of the CCW footprint rotation.
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double dx = x - b.center[0], dz = z - b.center[2];
  const double u = c * dx + s * dz;
  const double v = -s * dx + c * dz;
  return std::fabs(u) <= b.dims[0] / 2 && std::fabs(v) <= b.dims[1] / 2;
}

// Independent Monte Carlo oracle: stratified jittered-grid sampling of the
// intersection over the overlap of the two axis-aligned bounds.
double mc_bev_iou(const Box3D& a, const Box3D& b, int grid = 1000) {
  auto bounds = [](const Box3D& box, double& x0, double& x1, double& z0,
                   double& z1) {
    x0 = z0 = 1e300;
    x1 = z1 = -1e300;
    for (const auto& c : bev_corners(box)) {
      x0 = std::min(x0, c[0]);
      x1 = std::max(x1, c[0]);
      z0 = std::min(z0, c[1]);
      z1 = std::max(z1, c[1]);
    }
  };
  double ax0, ax1, az0, az1, bx0, bx1, bz0, bz1;
  bounds(a, ax0, ax1, az0, az1);
  bounds(b, bx0, bx1, bz0, bz1);
  const double x0 = std::max(ax0, bx0), x1 = std::min(ax1, bx1);
  const double z0 = std::max(az0, bz0), z1 = std::min(az1, bz1);
  const double area_a = a.dims[0] * a.dims[1];
  const double area_b = b.dims[0] * b.dims[1];
  if (x0 >= x1 || z0 >= z1) return 0.0;
  std::int64_t hits = 0;
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      std::uint64_t s = 0xC0FFEEULL + static_cast<std::uint64_t>(i) * grid + j;
      const double jx = u64_to_unit(splitmix64(s));
      const double jz = u64_to_unit(splitmix64(s));
      const double x = x0 + (i + jx) * (x1 - x0) / grid;
      const double z = z0 + (j + jz) * (z1 - z0) / grid;
      if (inside_bev(a, x, z) && inside_bev(b, x, z)) ++hits;
    }
  }
  const double inter = (x1 - x0) * (z1 - z0) * static_cast<double>(hits) /
                       (static_cast<double>(grid) * grid);
  return inter / (area_a + area_b - inter);
}

}  // namespace

TEST_SUITE("evalmetrics") {

TEST_CASE("bev_iou: hand geometry") {
  const auto a = make_box(0, 0, 1, 1, 0);
  CHECK(bev_iou(a, a) == doctest::Approx(1.0));
  const auto off = make_box(0.5, 0, 1, 1, 0);
  CHECK(bev_iou(a, off) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
  const auto far_away = make_box(5, 5, 1, 1, 0);
  CHECK(bev_iou(a, far_away) == 0.0);
  // 45-degree square on axis-aligned square, same center: intersection is a
  // regular octagon; IoU = (8*(sqrt(2)-1)/2... known value 2*(sqrt(2)-1)/
  // (2-(sqrt(2)-1)*2) -> compute directly: inter = 2*(sqrt(2)-1).
  const auto rot = make_box(0, 0, 1, 1, M_PI / 4);
  const double inter = 2 * (std::sqrt(2.0) - 1.0);
  const double expect = inter / (2.0 - inter);
  CHECK(bev_iou(a, rot) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("bev_iou: degenerate boxes give zero") {
  const auto a = make_box(0, 0, 1, 1, 0);
  const auto flat = make_box(0, 0, 0, 1, 0);
  CHECK(bev_iou(a, flat) == 0.0);
  CHECK(bev_iou(flat, flat) == 0.0);
}

TEST_CASE("bev_iou: matches stratified Monte Carlo on random rotated pairs") {
  Rng rng(4242);
  for (int trial = 0; trial < 12; ++trial) {
    const auto a = make_box(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5),
                            rng.uniform(-M_PI, M_PI));
    const auto b = make_box(rng.uniform(-1, 1), rng.uniform(-1, 1),
                            rng.uniform(0.5, 2.5), rng.uniform(0.5, 2.5),
                            rng.uniform(-M_PI, M_PI));
    CHECK(bev_iou(a, b) == doctest::Approx(mc_bev_iou(a, b)).epsilon(2e-3));
  }
}

TEST_CASE("bev_iou: symmetry and rotation equivariance") {
  Rng rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    auto a = make_box(rng.uniform(-2, 2), rng.uniform(-2, 2),
                      rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                      rng.uniform(-M_PI, M_PI));
    auto b = make_box(rng.uniform(-2, 2), rng.uniform(-2, 2),
                      rng.uniform(0.5, 2), rng.uniform(0.5, 2),
                      rng.uniform(-M_PI, M_PI));
    const double ab = bev_iou(a, b);
    CHECK(std::fabs(ab - bev_iou(b, a)) < 1e-12);

    // rotate both about the origin by the same angle
    const double phi = rng.uniform(-M_PI, M_PI);
    auto rotate = [&](Box3D box) {
      const double c = std::cos(phi), s = std::sin(phi);
      const double x = box.center[0], z = box.center[2];
      box.center[0] = c * x - s * z;
      box.center[2] = s * x + c * z;
      box.yaw = box.yaw + phi;
      return box;
    };
    CHECK(std::fabs(bev_iou(rotate(a), rotate(b)) - ab) <= 1e-9);
  }
}

TEST_CASE("iou3d: hand cases") {
  auto a = make_box(0, 0, 1, 1, 0, 0.0, 1.0);
  CHECK(iou3d(a, a) == doctest::Approx(1.0));
  // full BEV overlap, zero vertical overlap
  auto above = a;
  above.center[1] = 1.0;
  CHECK(iou3d(a, above) == 0.0);
  // stacked unit cubes overlapping 0.5 vertically, same footprint
  auto half = a;
  half.center[1] = 0.5;
  CHECK(iou3d(a, half) == doctest::Approx(1.0 / 3.0).epsilon(1e-9));
}

TEST_CASE("bucket_difficulty: threshold cases") {
  CHECK(bucket_difficulty(60, 1.0, 40, 25, 0.95, 0.5) == Difficulty::kEasy);
  CHECK(bucket_difficulty(30, 1.0, 40, 25, 0.95, 0.5) == Difficulty::kModerate);
  CHECK(bucket_difficulty(10, 0.3, 40, 25, 0.95, 0.5) == Difficulty::kHard);
  CHECK(bucket_difficulty(60, 0.6, 40, 25, 0.95, 0.5) == Difficulty::kModerate);
}

TEST_CASE("average_precision: trivial endpoints") {
  // all preds correct, scores descending
  std::vector<MatchedRecord> recs;
  for (int i = 0; i < 4; ++i) recs.push_back({0.9 - 0.1 * i, true, false});
  CHECK(average_precision(recs, 4) == doctest::Approx(100.0));
  CHECK(average_precision({}, 3) == doctest::Approx(0.0));
  CHECK(average_precision({}, 0) == kApNotApplicable);
}

TEST_CASE("average_precision: hand-enumerated PR curve") {
  // 2 GTs; predictions TP(.9), FP(.8), TP(.7).
  // Ranking: r=0.5 @ p=1, r=0.5 @ p=1/2, r=1.0 @ p=2/3.
  // Interpolated precision: 1.0 for r <= 0.5, 2/3 above.
  // AP40 = (20 * 1.0 + 20 * 2/3) / 40 = 5/6.
  std::vector<MatchedRecord> recs = {
      {0.9, true, false}, {0.8, false, false}, {0.7, true, false}};
  CHECK(average_precision(recs, 2) == doctest::Approx(100.0 * 5.0 / 6.0));
}

TEST_CASE("average_precision: relabeling a FP as TP never lowers AP") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MatchedRecord> recs;
    const int n = 3 + static_cast<int>(rng.uniform_int(0, 8));
    int tp = 0;
    for (int i = 0; i < n; ++i) {
      MatchedRecord r;
      r.score = rng.uniform();
      r.is_tp = rng.uniform() < 0.5;
      tp += r.is_tp;
      recs.push_back(r);
    }
    const int n_gt = tp + 2;
    // find a FP to flip
    int flip = -1;
    for (int i = 0; i < n; ++i)
      if (!recs[static_cast<std::size_t>(i)].is_tp) flip = i;
    if (flip < 0) continue;
    const double before = average_precision(recs, n_gt);
    recs[static_cast<std::size_t>(flip)].is_tp = true;
    const double after = average_precision(recs, n_gt);
    CHECK(after >= before - 1e-9);
  }
}

TEST_CASE("match_image: greedy by score, one GT consumed once") {
  std::vector<EvalGt> gts;
  EvalGt g;
  g.box = make_box(0, 10, 2, 2, 0);
  g.difficulty = Difficulty::kEasy;
  gts.push_back(g);

  std::vector<EvalPred> preds;
  EvalPred p1;
  p1.box = make_box(0.05, 10, 2, 2, 0);
  p1.score = 0.8;
  EvalPred p2;
  p2.box = make_box(0.02, 10, 2, 2, 0);  // better IoU but lower score
  p2.score = 0.6;
  preds = {p2, p1};

  const auto r = match_image(preds, gts, Difficulty::kEasy, 0.5, IouKind::kBev);
  REQUIRE(r.records.size() == 2);
  CHECK(r.n_gt == 1);
  // Higher score matched first and took the only GT.
  CHECK(r.records[0].score == doctest::Approx(0.8));
  CHECK(r.records[0].is_tp);
  CHECK(!r.records[1].is_tp);
}

TEST_CASE("match_image: harder-bucket GTs act as ignore regions") {
  std::vector<EvalGt> gts(2);
  gts[0].box = make_box(0, 10, 2, 2, 0);
  gts[0].difficulty = Difficulty::kEasy;
  gts[1].box = make_box(6, 20, 2, 2, 0);
  gts[1].difficulty = Difficulty::kHard;

  std::vector<EvalPred> preds(2);
  preds[0].box = make_box(0, 10, 2, 2, 0);
  preds[0].score = 0.9;
  preds[1].box = make_box(6, 20, 2, 2, 0);  // matches the hard GT
  preds[1].score = 0.8;

  const auto r = match_image(preds, gts, Difficulty::kEasy, 0.5, IouKind::kBev);
  CHECK(r.n_gt == 1);
  CHECK(r.records[0].is_tp);
  CHECK(r.records[1].ignored);  // neither TP nor FP at the easy level
  const double ap = average_precision(r.records, r.n_gt);
  CHECK(ap == doctest::Approx(100.0));
}

TEST_CASE("evaluate_detections: category-aware matching") {
  std::vector<std::vector<EvalGt>> gts(1);
  EvalGt g;
  g.box = make_box(0, 10, 2, 2, 0);
  g.category = 1;
  g.difficulty = Difficulty::kEasy;
  gts[0].push_back(g);

  std::vector<std::vector<EvalPred>> preds(1);
  EvalPred p;
  p.box = g.box;
  p.category = 0;  // wrong class
  p.score = 0.9;
  preds[0].push_back(p);

  auto ap = evaluate_detections(preds, gts, 0.5);
  CHECK(ap.ap3d[0] == doctest::Approx(0.0));
  preds[0][0].category = 1;
  ap = evaluate_detections(preds, gts, 0.5);
  CHECK(ap.ap3d[0] == doctest::Approx(100.0));
}

TEST_CASE("ap csv formatting") {
  APResult r;
  r.ap3d = {50.0, 40.0, 30.0};
  r.apbev = {55.0, 45.0, 35.0};
  CHECK(ap_csv_header() ==
        "focal,provenance,ap3d_easy,ap3d_mod,ap3d_hard,apbev_easy,apbev_mod,"
        "apbev_hard");
  CHECK(ap_csv_row(900, "exact", r) == "900,exact,50,40,30,55,45,35");
}

}  // TEST_SUITE
