#include <doctest.h>

#include <cmath>

#include "fovdet/detector.hpp"
#include "fovdet/encoder.hpp"
#include "fovdet/pipeline.hpp"
#include "fovdet/train.hpp"

using namespace fovdet;
using ad::Tape;

namespace {

// Small-but-real configuration used across this suite.
DetectorConfig small_config() {
  DetectorConfig c;
  c.d_model = 16;
  c.n_queries = 8;
  c.n_decoder_layers = 2;
  c.n_heads = 4;
  c.ffn_dim = 24;
  c.base_channels = 4;
  c.max_channels = 16;
  c.n_classes = 3;
  c.image_w = 64;
  c.image_h = 32;
  c.embed_dim = 12;
  return c;
}

// Micro configuration for the end-to-end gradient check: image 32x16,
// d' = 8, 2 queries, single head, single decoder layer, one scale path
// stubbed to three identical maps.
DetectorConfig micro_config() {
  DetectorConfig c;
  c.d_model = 8;
  c.n_queries = 2;
  c.n_decoder_layers = 1;
  c.n_heads = 1;
  c.ffn_dim = 8;
  c.base_channels = 2;
  c.max_channels = 4;
  c.n_classes = 2;
  c.image_w = 32;
  c.image_h = 16;
  c.embed_dim = 6;
  c.single_scale_stub = true;
  return c;
}

Image random_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, 3);
  for (double& v : img.data) v = rng.uniform();
  return img;
}

std::vector<GtObject> toy_gts(const CameraIntrinsics& k, int n) {
  std::vector<GtObject> out;
  for (int i = 0; i < n; ++i) {
    Box3D b;
    b.center = {-0.4 + 0.4 * i, 0.05, 12.0 + 4.0 * i};
    b.dims = {0.7, 0.7, 0.5};
    b.yaw = 0.2 * i;
    b.category = i % 2;
    GtObject g;
    g.box = b;
    g.rect = project_box(b, k);
    out.push_back(g);
  }
  return out;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_SUITE("detector") {

TEST_CASE("forward output shapes per query") {
  auto cfg = small_config();
  Detector det(cfg, 1);
  const Image img = random_image(32, 64, 5);
  std::vector<double> t_intr(static_cast<std::size_t>(cfg.d_model), 0.1);
  const auto out = det.forward(img, &t_intr);
  CHECK(out.class_probs.shape == std::vector<int>{8, 4});  // C+1
  CHECK(out.box2d.shape == std::vector<int>{8, 4});
  CHECK(out.center_uv.shape == std::vector<int>{8, 2});
  CHECK(out.depth.shape == std::vector<int>{8, 1});
  CHECK(out.dims.shape == std::vector<int>{8, 3});
  CHECK(out.yaw_sincos.shape == std::vector<int>{8, 2});
  CHECK(out.dmap.shape == std::vector<int>{1, 1, 2});  // 32/32 x 64/32
  // scores normalized; depth/dims positive; yaw unit-norm
  for (int q = 0; q < 8; ++q) {
    double sum = 0;
    for (int c = 0; c < 4; ++c) {
      sum += out.class_probs.at(q, c);
      CHECK(out.class_probs.at(q, c) >= 0.0);
    }
    CHECK(sum == doctest::Approx(1.0));
    CHECK(out.depth.at(q, 0) > 0.0);
    for (int j = 0; j < 3; ++j) CHECK(out.dims.at(q, j) > 0.0);
    const double n = std::hypot(out.yaw_sincos.at(q, 0), out.yaw_sincos.at(q, 1));
    CHECK(n == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("forward: deterministic run-to-run") {
  auto cfg = small_config();
  Detector det(cfg, 2);
  const Image img = random_image(32, 64, 6);
  std::vector<double> t_intr(static_cast<std::size_t>(cfg.d_model));
  for (std::size_t i = 0; i < t_intr.size(); ++i) t_intr[i] = 0.01 * (double)i;
  const auto a = det.forward(img, &t_intr);
  const auto b = det.forward(img, &t_intr);
  CHECK(same_bits(a.class_probs, b.class_probs));
  CHECK(same_bits(a.box2d, b.box2d));
  CHECK(same_bits(a.depth, b.depth));
  CHECK(same_bits(a.dmap, b.dmap));
}

TEST_CASE("ablation continuity: aware forward with t_intr = 0 equals the "
          "baseline forward bitwise for identical shared weights") {
  auto aware_cfg = small_config();
  auto base_cfg = small_config();
  base_cfg.intrinsic_aware = false;
  base_cfg.feature_fusion = false;
  base_cfg.query_fusion = false;
  Detector aware(aware_cfg, 3);
  Detector base(base_cfg, 3);
  // Conditioning params are created last, so shared weights from the same
  // seed are already identical; verify one pair to be sure.
  CHECK(same_bits(aware.params().find("backbone.0.w")->value,
                  base.params().find("backbone.0.w")->value));
  CHECK(same_bits(aware.params().find("head.depth.w")->value,
                  base.params().find("head.depth.w")->value));

  const Image img = random_image(32, 64, 7);
  std::vector<double> zero(static_cast<std::size_t>(aware_cfg.d_model), 0.0);
  ForwardTrace trace_aware, trace_base;
  const auto a = aware.forward(img, &zero, &trace_aware);
  const auto b = base.forward(img, nullptr, &trace_base);
  CHECK(trace_aware.feature_fused);
  CHECK(trace_aware.query_fused);
  CHECK(!trace_base.feature_fused);
  CHECK(!trace_base.query_fused);
  CHECK(same_bits(a.class_probs, b.class_probs));
  CHECK(same_bits(a.box2d, b.box2d));
  CHECK(same_bits(a.center_uv, b.center_uv));
  CHECK(same_bits(a.depth, b.depth));
  CHECK(same_bits(a.dims, b.dims));
  CHECK(same_bits(a.yaw_sincos, b.yaw_sincos));
  CHECK(same_bits(a.dmap, b.dmap));
}

TEST_CASE("ablation flags toggle exactly their code paths") {
  auto cfg = small_config();
  cfg.feature_fusion = false;
  Detector no_feat(cfg, 4);
  const Image img = random_image(32, 64, 8);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.2);
  ForwardTrace trace;
  no_feat.forward(img, &t, &trace);
  CHECK(!trace.feature_fused);
  CHECK(trace.query_fused);

  auto cfg2 = small_config();
  cfg2.query_fusion = false;
  Detector no_query(cfg2, 4);
  ForwardTrace trace2;
  no_query.forward(img, &t, &trace2);
  CHECK(trace2.feature_fused);
  CHECK(!trace2.query_fused);
}

TEST_CASE("hungarian match: cost follows the configured weights") {
  auto cfg = small_config();
  Detector det(cfg, 5);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  const Image img = random_image(32, 64, 9);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.0);
  const auto preds = det.forward(img, &t);
  const auto gts = toy_gts(k, 2);
  const auto assign = det.match(preds, gts, k);
  REQUIRE(assign.col_of_row.size() == 2);
  CHECK(assign.col_of_row[0] != assign.col_of_row[1]);
  CHECK(assign.total_cost >= 0.0);
  // Pair cost is bounded below by the single-GT optimum of either GT.
  for (int g = 0; g < 2; ++g) {
    const auto solo = det.match(preds, {gts[static_cast<std::size_t>(g)]}, k);
    CHECK(assign.total_cost >= solo.total_cost - 1e-12);
  }
}

TEST_CASE("loss: exact predictions zero the regression terms") {
  auto cfg = small_config();
  Detector det(cfg, 6);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  const auto gts = toy_gts(k, 2);

  // Hand-build a DetectionSet that reproduces the GTs on queries 0 and 1
  // and background elsewhere.
  DetectionSet ds;
  const int nq = cfg.n_queries, nc = cfg.n_classes;
  ds.class_probs = Tensor({nq, nc + 1});
  ds.box2d = Tensor({nq, 4});
  ds.center_uv = Tensor({nq, 2});
  ds.depth = Tensor({nq, 1});
  ds.dims = Tensor({nq, 3});
  ds.yaw_sincos = Tensor({nq, 2});
  ds.dmap = Tensor({1, 1, 2});
  for (int q = 0; q < nq; ++q) {
    ds.class_probs.at(q, nc) = 1.0;  // background
    ds.yaw_sincos.at(q, 1) = 1.0;
    ds.depth.at(q, 0) = 10.0;
    ds.dims.at(q, 0) = ds.dims.at(q, 1) = ds.dims.at(q, 2) = 0.5;
  }
  for (int g = 0; g < 2; ++g) {
    const auto& gt = gts[static_cast<std::size_t>(g)];
    ds.class_probs.at(g, nc) = 0.0;
    ds.class_probs.at(g, gt.box.category) = 1.0;
    const auto& r = gt.rect;
    ds.box2d.at(g, 0) = (r.xmin + r.xmax) / 2 / k.width;
    ds.box2d.at(g, 1) = (r.ymin + r.ymax) / 2 / k.height;
    ds.box2d.at(g, 2) = r.width() / k.width;
    ds.box2d.at(g, 3) = r.height() / k.height;
    ds.center_uv.at(g, 0) =
        (k.fx * gt.box.center[0] / gt.box.center[2] + k.cx) / k.width;
    ds.center_uv.at(g, 1) =
        (k.fy * gt.box.center[1] / gt.box.center[2] + k.cy) / k.height;
    ds.depth.at(g, 0) = gt.box.center[2];
    for (int j = 0; j < 3; ++j)
      ds.dims.at(g, j) = gt.box.dims[static_cast<std::size_t>(j)];
    ds.yaw_sincos.at(g, 0) = std::sin(gt.box.yaw);
    ds.yaw_sincos.at(g, 1) = std::cos(gt.box.yaw);
  }
  // dmap: exact depths for covered cells
  for (int i = 0; i < 1; ++i)
    for (int j = 0; j < 2; ++j) {
      const double px = (j + 0.5) * 32, py = (i + 0.5) * 32;
      double z = 0;
      for (const auto& gt : gts)
        if (px >= gt.rect.xmin && px <= gt.rect.xmax && py >= gt.rect.ymin &&
            py <= gt.rect.ymax)
          if (z == 0 || gt.box.center[2] < z) z = gt.box.center[2];
      ds.dmap.data[static_cast<std::size_t>(i * 2 + j)] = z > 0 ? z : 7.0;
    }

  Assignment assign;
  assign.col_of_row = {0, 1};
  const auto lb = det.loss(ds, gts, assign, k);
  CHECK(lb.bbox == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(lb.giou == doctest::Approx(0.0).scale(1).epsilon(1e-6));
  CHECK(lb.center3d == doctest::Approx(0.0));
  CHECK(lb.dim == doctest::Approx(0.0));
  CHECK(lb.depth == doctest::Approx(0.0));
  CHECK(lb.yaw == doctest::Approx(0.0));
  CHECK(lb.dmap == doctest::Approx(0.0));
  CHECK(lb.total == doctest::Approx(lb.cls));
}

TEST_CASE("loss: weights scale their terms linearly") {
  auto cfg = small_config();
  Detector det(cfg, 7);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  const auto gts = toy_gts(k, 2);
  const Image img = random_image(32, 64, 11);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.0);
  const auto preds = det.forward(img, &t);
  const auto assign = det.match(preds, gts, k);
  const auto base = det.loss(preds, gts, assign, k);

  auto cfg2 = cfg;
  cfg2.w_bbox *= 2.0;
  Detector det2(cfg2, 7);
  const auto doubled = det2.loss(preds, gts, assign, k);
  CHECK(doubled.bbox == doctest::Approx(2.0 * base.bbox).epsilon(1e-12));
  CHECK(doubled.cls == doctest::Approx(base.cls).epsilon(1e-12));
}

TEST_CASE("loss: zero ground truths is classification-only and finite") {
  auto cfg = small_config();
  Detector det(cfg, 8);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  const Image img = random_image(32, 64, 12);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.0);
  const auto preds = det.forward(img, &t);
  const auto lb = det.loss(preds, {}, {}, k);
  CHECK(std::isfinite(lb.total));
  CHECK(lb.total > 0.0);
  CHECK(lb.bbox == 0.0);
  CHECK(lb.l3d == 0.0);
  CHECK(lb.total == doctest::Approx(lb.cls));
}

TEST_CASE("loss: permutation-invariant in GT order") {
  auto cfg = small_config();
  Detector det(cfg, 9);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  auto gts = toy_gts(k, 3);
  const Image img = random_image(32, 64, 13);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.0);
  const auto preds = det.forward(img, &t);
  const auto a1 = det.match(preds, gts, k);
  const auto l1 = det.loss(preds, gts, a1, k);
  std::swap(gts[0], gts[2]);
  const auto a2 = det.match(preds, gts, k);
  const auto l2 = det.loss(preds, gts, a2, k);
  CHECK(l1.total == doctest::Approx(l2.total).epsilon(1e-9));
}

TEST_CASE("end-to-end micro gradient check") {
  auto cfg = micro_config();
  Detector det(cfg, 10);
  const auto k = CameraIntrinsics::centered(1000, 32, 16);
  const Image img = random_image(16, 32, 14);
  std::vector<GtObject> gts;
  {
    Box3D b;
    b.center = {0.05, 0.03, 10.0};
    b.dims = {0.5, 0.5, 0.4};
    b.yaw = 0.3;
    b.category = 1;
    GtObject g;
    g.box = b;
    g.rect = project_box(b, k);
    gts.push_back(g);
  }
  Tensor t_avg_in({1, cfg.embed_dim});
  for (int i = 0; i < cfg.embed_dim; ++i)
    t_avg_in.data[static_cast<std::size_t>(i)] = 0.1 * (i - 2);

  // Fix the assignment once so the loss stays differentiable around the
  // current parameters.
  Assignment assign;
  {
    Tape tape;
    auto t_intr = det.connector().forward(tape, tape.input(t_avg_in));
    const auto f = det.forward_tape(tape, img, t_intr);
    assign = det.match(Detector::extract(tape, f), gts, k);
  }

  auto build = [&](Tape& tape) {
    auto t_intr = det.connector().forward(tape, tape.input(t_avg_in));
    const auto f = det.forward_tape(tape, img, t_intr);
    return det.loss_tape(tape, f, gts, assign, k, nullptr);
  };
  auto loss_fn = [&] {
    Tape tape;
    return tape.val(build(tape))[0];
  };
  auto grad_fn = [&] {
    Tape tape;
    tape.backward(build(tape));
  };
  const double err = ad::gradient_check(det.params(), loss_fn, grad_fn, 1e-5);
  CHECK(err < 1e-3);
}

TEST_CASE("predict: threshold endpoints and re-projection inverse") {
  auto cfg = small_config();
  Detector det(cfg, 11);
  const auto k = CameraIntrinsics::centered(1000, 64, 32);
  const Image img = random_image(32, 64, 15);
  std::vector<double> t(static_cast<std::size_t>(cfg.d_model), 0.0);
  const auto preds = det.forward(img, &t);
  CHECK(det.predict(preds, k, 1.0 + 1e-9).empty());
  const auto all = det.predict(preds, k, 0.0);
  CHECK(static_cast<int>(all.size()) == cfg.n_queries);
  for (const auto& d : all) {
    // decoded center re-projects onto the predicted (u,v)
    const double u = k.fx * d.box.center[0] / d.box.center[2] + k.cx;
    const double v = k.fy * d.box.center[1] / d.box.center[2] + k.cy;
    bool matched = false;
    for (int q = 0; q < cfg.n_queries; ++q) {
      if (std::fabs(preds.center_uv.at(q, 0) * k.width - u) < 1e-6 &&
          std::fabs(preds.center_uv.at(q, 1) * k.height - v) < 1e-6)
        matched = true;
    }
    CHECK(matched);
  }
}

TEST_CASE("smoke train: loss decreases over 200 steps, averaged over seeds") {
  auto cfg = small_config();
  auto run_cfg = RunConfig::defaults();
  run_cfg.set("image.width", "64");
  run_cfg.set("image.height", "32");
  run_cfg.set("scene.max_boxes", "2");
  run_cfg.set("scene.z_min", "8");
  run_cfg.set("scene.z_max", "20");
  run_cfg.set("scene.ground_min", "0.1");
  run_cfg.set("scene.ground_max", "0.3");
  run_cfg.set("scene.object_scale", "0.35");

  // Bank over two focals from the checked-in descriptions.
  const auto enc = make_reference_encoder(cfg.embed_dim);
  auto sets = load_descriptions("data/descriptions");
  sets.resize(2);
  const auto bank = build_bank(sets, *enc);
  const auto hash_before = bank.content_hash();

  double first_sum = 0, last_sum = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::vector<TrainRecord> recs;
    for (int si = 0; si < 10; ++si) {
      const Scene scene = generate_scene(seed * 100 + static_cast<std::uint64_t>(si), run_cfg);
      for (double f : {700.0, 900.0}) {
        const auto k = CameraIntrinsics::centered(f, 64, 32);
        Sample s = render(scene, k, run_cfg);
        TrainRecord r;
        r.image = std::move(s.image);
        r.intrinsics = k;
        r.focal = f;
        r.gts = gts_from_labels(s.labels, k);
        recs.push_back(std::move(r));
      }
    }
    Detector det(cfg, seed);
    TrainOptions opts;
    opts.epochs = 10;  // 10 epochs x 20 records = 200 steps
    opts.lr = 1e-3;
    opts.seed = seed;
    opts.log_every = 50;
    const auto result = train_detector(det, recs, &bank, opts);
    CHECK(result.steps == 200);
    first_sum += result.first_loss;
    last_sum += result.final_loss;
  }
  CHECK(last_sum / 5.0 < first_sum / 5.0);
  CHECK(bank.content_hash() == hash_before);  // frozen through training
}

TEST_CASE("baseline training never reads the bank") {
  auto cfg = small_config();
  cfg.intrinsic_aware = false;
  cfg.feature_fusion = false;
  cfg.query_fusion = false;
  auto run_cfg = RunConfig::defaults();
  run_cfg.set("image.width", "64");
  run_cfg.set("image.height", "32");
  run_cfg.set("scene.object_scale", "0.35");
  run_cfg.set("scene.ground_min", "0.1");
  run_cfg.set("scene.ground_max", "0.3");
  run_cfg.set("scene.z_min", "8");
  run_cfg.set("scene.z_max", "20");

  const auto enc = make_reference_encoder(cfg.embed_dim);
  auto sets = load_descriptions("data/descriptions");
  sets.resize(1);
  const auto bank = build_bank(sets, *enc);
  const auto lookups_before = bank.lookup_count();

  std::vector<TrainRecord> recs;
  const Scene scene = generate_scene(1, run_cfg);
  const auto k = CameraIntrinsics::centered(700, 64, 32);
  Sample s = render(scene, k, run_cfg);
  TrainRecord r;
  r.image = std::move(s.image);
  r.intrinsics = k;
  r.focal = 700;
  r.gts = gts_from_labels(s.labels, k);
  recs.push_back(std::move(r));

  Detector det(cfg, 0);
  TrainOptions opts;
  opts.epochs = 3;
  opts.seed = 0;
  train_detector(det, recs, &bank, opts);
  CHECK(bank.lookup_count() == lookups_before);
}

TEST_CASE("training requires an exact bank hit for each record focal") {
  auto cfg = small_config();
  const auto enc = make_reference_encoder(cfg.embed_dim);
  auto sets = load_descriptions("data/descriptions");
  sets.resize(1);  // only focal 700 present
  const auto bank = build_bank(sets, *enc);

  std::vector<TrainRecord> recs(1);
  recs[0].image = random_image(32, 64, 20);
  recs[0].intrinsics = CameraIntrinsics::centered(800, 64, 32);
  recs[0].focal = 800;  // not in the bank
  Detector det(cfg, 0);
  TrainOptions opts;
  opts.epochs = 1;
  CHECK_THROWS_AS(train_detector(det, recs, &bank, opts), ConfigError);
}

TEST_CASE("checkpoint round trip restores parameters, rejects bad hash") {
  auto cfg = small_config();
  Detector det(cfg, 21);
  const auto path =
      (std::filesystem::temp_directory_path() / "fovdet_ck.bin").string();
  save_checkpoint(path, det.params(), cfg.hash(), 123);

  Detector fresh(cfg, 99);  // different init
  const auto info = load_checkpoint(path, fresh.params(), cfg.hash());
  CHECK(info.step == 123);
  CHECK(same_bits(det.params().find("queries")->value,
                  fresh.params().find("queries")->value));

  auto other = cfg;
  other.n_queries += 1;
  Detector wrong(other, 21);
  CHECK_THROWS_AS(load_checkpoint(path, wrong.params(), other.hash()),
                  ConfigError);
}

}  // TEST_SUITE
