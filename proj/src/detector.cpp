#include "fovdet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fovdet/errors.hpp"

namespace fovdet {

DetectorConfig DetectorConfig::from_run_config(const RunConfig& cfg) {
  DetectorConfig d;
  d.d_model = static_cast<int>(cfg.get_int("detector.d_model"));
  d.n_queries = static_cast<int>(cfg.get_int("detector.n_queries"));
  d.n_decoder_layers = static_cast<int>(cfg.get_int("detector.n_decoder_layers"));
  d.n_heads = static_cast<int>(cfg.get_int("detector.n_heads"));
  d.ffn_dim = static_cast<int>(cfg.get_int("detector.ffn_dim"));
  d.base_channels = static_cast<int>(cfg.get_int("detector.base_channels"));
  d.max_channels = static_cast<int>(cfg.get_int("detector.max_channels"));
  d.n_classes = static_cast<int>(cfg.get_int("dataset.categories"));
  d.image_w = static_cast<int>(cfg.get_int("image.width"));
  d.image_h = static_cast<int>(cfg.get_int("image.height"));
  d.embed_dim = static_cast<int>(cfg.get_int("encoder.dim"));
  d.connector_hidden = static_cast<int>(cfg.get_int("connector.hidden"));
  d.tanh_gelu = cfg.get("connector.gelu") == "tanh";
  d.w_class = cfg.get_double("loss.class");
  d.w_bbox = cfg.get_double("loss.bbox");
  d.w_giou = cfg.get_double("loss.giou");
  d.w_center3d = cfg.get_double("loss.center3d");
  d.w_dim = cfg.get_double("loss.dim");
  d.w_depth = cfg.get_double("loss.depth");
  d.w_dmap = cfg.get_double("loss.dmap");
  d.w_yaw = cfg.get_double("loss.yaw");
  d.focal_alpha = cfg.get_double("loss.focal_alpha");
  d.focal_gamma = cfg.get_double("loss.focal_gamma");
  d.c_class = cfg.get_double("match.class");
  d.c_bbox = cfg.get_double("match.bbox");
  d.c_giou = cfg.get_double("match.giou");
  d.c_center3d = cfg.get_double("match.center3d");
  if (d.image_w % 32 != 0 || d.image_h % 32 != 0)
    throw ConfigError("image dimensions must be multiples of 32");
  if (d.d_model % d.n_heads != 0)
    throw ConfigError("detector.d_model must be divisible by detector.n_heads");
  return d;
}

std::uint64_t DetectorConfig::hash() const {
  std::ostringstream os;
  os << d_model << '|' << n_queries << '|' << n_decoder_layers << '|'
     << n_heads << '|' << ffn_dim << '|' << base_channels << '|'
     << max_channels << '|' << n_classes << '|' << image_w << '|' << image_h
     << '|' << intrinsic_aware << feature_fusion << query_fusion
     << connector_mlp << static_cast<int>(encoder_mode) << '|' << embed_dim
     << '|' << connector_hidden << '|' << tanh_gelu << '|' << w_class << ','
     << w_bbox << ',' << w_giou << ',' << w_center3d << ',' << w_dim << ','
     << w_depth << ',' << w_dmap << ',' << w_yaw << ',' << focal_alpha << ','
     << focal_gamma << '|' << c_class << ',' << c_bbox << ',' << c_giou << ','
     << c_center3d << '|' << single_scale_stub;
  const std::string s = os.str();
  return fnv1a64(s);
}

Detector::Detector(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  Rng rng(0xdecafbadULL ^ seed * 0x9e3779b97f4a7c15ULL);
  const int d = cfg.d_model;

  auto conv = [&](const std::string& name, int ci, int co, int k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(ci * k * k));
    ConvLayer layer;
    layer.w = params_.add(name + ".w", uniform_init({co, ci, k, k}, bound, rng));
    layer.b = params_.add(name + ".b", Tensor({co}));
    layer.stride = 2;
    return layer;
  };
  auto lin = [&](const std::string& name, int din, int dout) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(din));
    return std::pair<ad::Param*, ad::Param*>(
        params_.add(name + ".w", uniform_init({dout, din}, bound, rng)),
        params_.add(name + ".b", Tensor({dout})));
  };

  // Backbone: stem + 4 stride-2 blocks reaching stride 32; scales are the
  // outputs of the last three blocks (strides 8, 16, 32).
  int ci = 3;
  for (int i = 0; i < 5; ++i) {
    const int co = std::min(cfg.base_channels << std::max(0, i - 1),
                            cfg.max_channels);
    backbone_.push_back(conv("backbone." + std::to_string(i), ci, co, 3));
    ci = co;
  }
  const int c8 = std::min(cfg.base_channels << 1, cfg.max_channels);
  const int c16 = std::min(cfg.base_channels << 2, cfg.max_channels);
  const int c32 = std::min(cfg.base_channels << 3, cfg.max_channels);
  const int scale_ci[3] = {c8, c16, c32};
  for (int s = 0; s < 3; ++s) {
    auto p = conv("proj." + std::to_string(s), scale_ci[s], d, 1);
    p.stride = 1;
    scale_proj_.push_back(p);
  }

  for (int l = 0; l < cfg.n_decoder_layers; ++l) {
    const std::string p = "decoder." + std::to_string(l);
    DecoderLayer layer;
    std::tie(layer.wq, layer.bq) = lin(p + ".q", d, d);
    std::tie(layer.wk, layer.bk) = lin(p + ".k", d, d);
    std::tie(layer.wv, layer.bv) = lin(p + ".v", d, d);
    std::tie(layer.wo, layer.bo) = lin(p + ".o", d, d);
    layer.ln1_g = params_.add(p + ".ln1.g", Tensor({d}));
    layer.ln1_g->value.fill(1.0);
    layer.ln1_b = params_.add(p + ".ln1.b", Tensor({d}));
    layer.ln2_g = params_.add(p + ".ln2.g", Tensor({d}));
    layer.ln2_g->value.fill(1.0);
    layer.ln2_b = params_.add(p + ".ln2.b", Tensor({d}));
    std::tie(layer.ff1_w, layer.ff1_b) = lin(p + ".ff1", d, cfg.ffn_dim);
    std::tie(layer.ff2_w, layer.ff2_b) = lin(p + ".ff2", cfg.ffn_dim, d);
    decoder_.push_back(layer);
  }

  queries_ = params_.add(
      "queries",
      uniform_init({cfg.n_queries, d}, 1.0 / std::sqrt(static_cast<double>(d)),
                   rng));

  std::tie(head_class_w, head_class_b) = lin("head.class", d, cfg.n_classes + 1);
  std::tie(head_box_w, head_box_b) = lin("head.box2d", d, 4);
  std::tie(head_uv_w, head_uv_b) = lin("head.uv", d, 2);
  std::tie(head_depth_w, head_depth_b) = lin("head.depth", d, 1);
  head_depth_b->value[0] = 15.0;  // softplus(15) ~ 15 m starting depth
  std::tie(head_dims_w, head_dims_b) = lin("head.dims", d, 3);
  head_dims_b->value.fill(1.0);
  std::tie(head_yaw_w, head_yaw_b) = lin("head.yaw", d, 2);

  {
    const double bound = 1.0 / std::sqrt(static_cast<double>(c32));
    head_dmap_w = params_.add("head.dmap.w",
                              uniform_init({1, cfg.d_model, 1, 1}, bound, rng));
    head_dmap_b = params_.add("head.dmap.b", Tensor({1}));
    head_dmap_b->value[0] = 15.0;
  }

  // Conditioning parameters last, so the shared prefix of the parameter
  // sequence is identical between aware and baseline models built from the
  // same seed.
  if (cfg.intrinsic_aware) {
    const int hidden =
        cfg.connector_hidden > 0 ? cfg.connector_hidden : cfg.embed_dim;
    if (cfg.connector_mlp) {
      connector_ = Connector::create(params_, cfg.embed_dim, hidden, d,
                                     cfg.tanh_gelu, rng);
    } else {
      connector_ = Connector::create_linear(params_, cfg.embed_dim, d, rng);
    }
    if (cfg.encoder_mode == EncoderMode::kLinearFocal) {
      focal_enc_w = params_.add("focal_enc.w",
                                uniform_init({cfg.embed_dim, 1}, 1.0, rng));
      focal_enc_b = params_.add("focal_enc.b", Tensor({cfg.embed_dim}));
    }
  }
}

Tensor Detector::positional_encoding(
    const std::vector<std::array<int, 2>>& scale_hw) const {
  const int d = cfg_.d_model;
  int total = 0;
  for (const auto& hw : scale_hw) total += hw[0] * hw[1];
  Tensor pos({total, d});
  const int quads = d / 4;
  int row = 0;
  for (std::size_t s = 0; s < scale_hw.size(); ++s) {
    const int h = scale_hw[s][0], w = scale_hw[s][1];
    const double phase = 2.1 * static_cast<double>(s);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x, ++row) {
        const double u = (x + 0.5) / w * 6.283185307179586 + phase;
        const double v = (y + 0.5) / h * 6.283185307179586 + phase;
        for (int q = 0; q < quads; ++q) {
          const double f = std::pow(2.0, static_cast<double>(q) * 0.5);
          pos.at(row, 4 * q + 0) = std::sin(f * u);
          pos.at(row, 4 * q + 1) = std::cos(f * u);
          pos.at(row, 4 * q + 2) = std::sin(f * v);
          pos.at(row, 4 * q + 3) = std::cos(f * v);
        }
      }
    }
  }
  return pos;
}

Detector::ForwardVars Detector::forward_tape(
    ad::Tape& tape, const Image& img, std::optional<ad::Tape::Var> t_intr,
    ForwardTrace* trace) const {
  if (img.width != cfg_.image_w || img.height != cfg_.image_h)
    throw ConfigError("forward: image resolution does not match config");
  if (cfg_.intrinsic_aware && !t_intr.has_value())
    throw InternalError("forward: intrinsic-aware model needs t_intr");

  // HWC -> CHW input
  Tensor x({3, img.height, img.width});
  const std::int64_t hw =
      static_cast<std::int64_t>(img.height) * img.width;
  for (int c = 0; c < 3; ++c)
    for (std::int64_t i = 0; i < hw; ++i)
      x.data[c * hw + i] = img.data[i * 3 + c];

  auto cur = tape.input(std::move(x));
  std::vector<ad::Tape::Var> scales;
  const int n_layers = cfg_.single_scale_stub ? 3
                                              : static_cast<int>(backbone_.size());
  for (int i = 0; i < n_layers; ++i) {
    const auto& l = backbone_[static_cast<std::size_t>(i)];
    cur = tape.relu(tape.add_vec_chw(
        tape.conv2d(cur, tape.param(l.w), l.stride, 1), tape.param(l.b)));
    if (i >= 2) scales.push_back(cur);
  }
  if (cfg_.single_scale_stub) {
    // one stride-8 map reused for all three scale slots
    scales = {scales[0], scales[0], scales[0]};
  }

  ad::Tape::Var t_vec = -1;
  if (t_intr.has_value())
    t_vec = tape.reshape(*t_intr, {cfg_.d_model});

  std::vector<ad::Tape::Var> proj(3);
  std::vector<std::array<int, 2>> scale_hw;
  for (int s = 0; s < 3; ++s) {
    const auto& p = cfg_.single_scale_stub ? scale_proj_[0]
                                           : scale_proj_[static_cast<std::size_t>(s)];
    auto f = tape.add_vec_chw(tape.conv2d(scales[static_cast<std::size_t>(s)],
                                          tape.param(p.w), 1, 0),
                              tape.param(p.b));
    if (cfg_.feature_fusion && t_intr.has_value()) {
      f = tape.add_vec_chw(f, t_vec);
      if (trace) trace->feature_fused = true;
    }
    proj[static_cast<std::size_t>(s)] = f;
    scale_hw.push_back({tape.val(f).dim(1), tape.val(f).dim(2)});
  }

  // Depth map head rides on the fused stride-32 scale.
  auto dmap = tape.softplus(tape.add_vec_chw(
      tape.conv2d(proj[2], tape.param(head_dmap_w), 1, 0),
      tape.param(head_dmap_b)));

  std::vector<ad::Tape::Var> mem_parts;
  for (int s = 0; s < 3; ++s)
    mem_parts.push_back(tape.im2rows(proj[static_cast<std::size_t>(s)]));
  auto memory = tape.concat_rows(mem_parts);
  auto mem_pos = tape.add(memory, tape.input(positional_encoding(scale_hw)));

  auto q = tape.param(queries_);
  if (cfg_.query_fusion && t_intr.has_value()) {
    q = tape.add_vec_rows(q, t_vec);
    if (trace) trace->query_fused = true;
  }

  const int d = cfg_.d_model;
  const int nh = cfg_.n_heads;
  const int dh = d / nh;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const auto& layer : decoder_) {
    auto qq = tape.linear(q, tape.param(layer.wq), tape.param(layer.bq));
    auto kk = tape.linear(mem_pos, tape.param(layer.wk), tape.param(layer.bk));
    auto vv = tape.linear(memory, tape.param(layer.wv), tape.param(layer.bv));
    std::vector<ad::Tape::Var> heads;
    for (int h = 0; h < nh; ++h) {
      auto qh = tape.slice_cols(qq, h * dh, (h + 1) * dh);
      auto kh = tape.slice_cols(kk, h * dh, (h + 1) * dh);
      auto vh = tape.slice_cols(vv, h * dh, (h + 1) * dh);
      auto attn = tape.softmax_rows(
          tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh));
      heads.push_back(tape.matmul_nn(attn, vh));
    }
    auto o = tape.linear(nh == 1 ? heads[0] : tape.concat_cols(heads),
                         tape.param(layer.wo), tape.param(layer.bo));
    auto x1 = tape.layernorm_rows(tape.add(q, o), tape.param(layer.ln1_g),
                                  tape.param(layer.ln1_b));
    auto ff = tape.linear(
        tape.relu(tape.linear(x1, tape.param(layer.ff1_w),
                              tape.param(layer.ff1_b))),
        tape.param(layer.ff2_w), tape.param(layer.ff2_b));
    q = tape.layernorm_rows(tape.add(x1, ff), tape.param(layer.ln2_g),
                            tape.param(layer.ln2_b));
  }

  ForwardVars out;
  out.class_logits =
      tape.linear(q, tape.param(head_class_w), tape.param(head_class_b));
  out.class_probs = tape.softmax_rows(out.class_logits);
  out.box2d = tape.sigmoid(
      tape.linear(q, tape.param(head_box_w), tape.param(head_box_b)));
  out.center_uv = tape.sigmoid(
      tape.linear(q, tape.param(head_uv_w), tape.param(head_uv_b)));
  out.depth = tape.softplus(
      tape.linear(q, tape.param(head_depth_w), tape.param(head_depth_b)));
  out.dims = tape.softplus(
      tape.linear(q, tape.param(head_dims_w), tape.param(head_dims_b)));
  auto yaw_raw =
      tape.linear(q, tape.param(head_yaw_w), tape.param(head_yaw_b));
  auto norm = tape.sqrt(
      tape.add_const(tape.sum_rows(tape.square(yaw_raw)), 1e-12));
  out.yaw = tape.div_rows(yaw_raw, norm);
  out.dmap = dmap;
  return out;
}

DetectionSet Detector::extract(const ad::Tape& tape, const ForwardVars& f) {
  DetectionSet d;
  d.class_probs = tape.val(f.class_probs);
  d.box2d = tape.val(f.box2d);
  d.center_uv = tape.val(f.center_uv);
  d.depth = tape.val(f.depth);
  d.dims = tape.val(f.dims);
  d.yaw_sincos = tape.val(f.yaw);
  d.dmap = tape.val(f.dmap);
  return d;
}

DetectionSet Detector::forward(const Image& img,
                               const std::vector<double>* t_intr,
                               ForwardTrace* trace) const {
  ad::Tape tape;
  std::optional<ad::Tape::Var> tv;
  if (t_intr) {
    Tensor t({1, cfg_.d_model});
    if (static_cast<int>(t_intr->size()) != cfg_.d_model)
      throw InternalError("forward: t_intr width mismatch");
    t.data = *t_intr;
    tv = tape.input(std::move(t));
  }
  const auto f = forward_tape(tape, img, tv, trace);
  return extract(tape, f);
}

ad::Tape::Var Detector::embed_tape(ad::Tape& tape,
                                   const std::vector<double>& t_avg,
                                   double focal) const {
  if (!cfg_.intrinsic_aware)
    throw InternalError("embed_tape: model is not intrinsic-aware");
  if (cfg_.encoder_mode == EncoderMode::kLinearFocal) {
    Tensor f({1, 1});
    f.data[0] = focal / 1000.0;
    auto enc = tape.linear(tape.input(std::move(f)), tape.param(focal_enc_w),
                           tape.param(focal_enc_b));
    return connector_.forward(tape, enc);
  }
  Tensor t({1, cfg_.embed_dim});
  if (static_cast<int>(t_avg.size()) != cfg_.embed_dim)
    throw InternalError("embed_tape: bank width mismatch");
  t.data = t_avg;
  return connector_.forward(tape, tape.input(std::move(t)));
}

std::vector<double> Detector::embed_value(const std::vector<double>& t_avg,
                                          double focal) const {
  ad::Tape tape;
  return tape.val(embed_tape(tape, t_avg, focal)).data;
}

namespace {

struct RectN {  // normalized cxcywh
  double cx, cy, w, h;
};

RectN normalized_rect(const Box2D& r, const CameraIntrinsics& k) {
  return {(r.xmin + r.xmax) / 2.0 / k.width, (r.ymin + r.ymax) / 2.0 / k.height,
          (r.xmax - r.xmin) / k.width, (r.ymax - r.ymin) / k.height};
}

double giou_pixel(double acx, double acy, double aw, double ah, double bcx,
                  double bcy, double bw, double bh) {
  const double ax1 = acx - aw / 2, ax2 = acx + aw / 2;
  const double ay1 = acy - ah / 2, ay2 = acy + ah / 2;
  const double bx1 = bcx - bw / 2, bx2 = bcx + bw / 2;
  const double by1 = bcy - bh / 2, by2 = bcy + bh / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = aw * ah + bw * bh - inter;
  const double iou = inter / (uni + 1e-9);
  const double hw = std::max(ax2, bx2) - std::min(ax1, bx1);
  const double hh = std::max(ay2, by2) - std::min(ay1, by1);
  const double hull = hw * hh;
  return iou - (hull - uni) / (hull + 1e-9);
}

}  // namespace

std::vector<GtObject> gts_from_labels(const std::vector<LabeledObject>& labels,
                                      const CameraIntrinsics& k) {
  std::vector<GtObject> out;
  for (const auto& l : labels) {
    if (l.visibility <= 0.0) continue;
    GtObject g;
    g.box = l.box;
    g.visibility = l.visibility;
    g.rect = project_box(l.box, k);
    if (g.rect.width() < 1e-6 || g.rect.height() < 1e-6) continue;
    out.push_back(g);
  }
  return out;
}

Assignment Detector::match(const DetectionSet& preds,
                           const std::vector<GtObject>& gts,
                           const CameraIntrinsics& k) const {
  const int n_gt = static_cast<int>(gts.size());
  const int n_q = cfg_.n_queries;
  if (n_gt == 0) return {};
  if (n_gt > n_q)
    throw InternalError("match: more ground truths than queries");
  Tensor cost({n_gt, n_q});
  for (int g = 0; g < n_gt; ++g) {
    const RectN gr = normalized_rect(gts[static_cast<std::size_t>(g)].rect, k);
    const Box3D& gb = gts[static_cast<std::size_t>(g)].box;
    const double gu = (k.fx * gb.center[0] / gb.center[2] + k.cx) / k.width;
    const double gv = (k.fy * gb.center[1] / gb.center[2] + k.cy) / k.height;
    const int cat = gb.category;
    for (int q = 0; q < n_q; ++q) {
      const double score = preds.class_probs.at(q, cat);
      const double l1_box = std::fabs(preds.box2d.at(q, 0) - gr.cx) +
                            std::fabs(preds.box2d.at(q, 1) - gr.cy) +
                            std::fabs(preds.box2d.at(q, 2) - gr.w) +
                            std::fabs(preds.box2d.at(q, 3) - gr.h);
      const double giou = giou_pixel(
          preds.box2d.at(q, 0) * k.width, preds.box2d.at(q, 1) * k.height,
          preds.box2d.at(q, 2) * k.width, preds.box2d.at(q, 3) * k.height,
          gr.cx * k.width, gr.cy * k.height, gr.w * k.width, gr.h * k.height);
      const double l1_c3d = std::fabs(preds.center_uv.at(q, 0) - gu) +
                            std::fabs(preds.center_uv.at(q, 1) - gv);
      cost.at(g, q) = cfg_.c_class * (1.0 - score) + cfg_.c_bbox * l1_box +
                      cfg_.c_giou * (1.0 - giou) + cfg_.c_center3d * l1_c3d;
    }
  }
  return hungarian_min_cost(cost);
}

ad::Tape::Var Detector::loss_tape(ad::Tape& tape, const ForwardVars& f,
                                  const std::vector<GtObject>& gts,
                                  const Assignment& assignment,
                                  const CameraIntrinsics& k,
                                  LossBreakdown* out) const {
  const int n_q = cfg_.n_queries;
  const int n_cls = cfg_.n_classes;
  const int n_gt = static_cast<int>(gts.size());
  const double inv_ngt = 1.0 / std::max(1, n_gt);

  // Class focal loss over all queries (matched -> GT class, rest background).
  Tensor onehot({n_q, n_cls + 1});
  Tensor alpha({n_q});
  for (int q = 0; q < n_q; ++q) {
    onehot.at(q, n_cls) = 1.0;
    alpha[q] = 1.0 - cfg_.focal_alpha;
  }
  for (int g = 0; g < n_gt; ++g) {
    const int q = assignment.col_of_row[static_cast<std::size_t>(g)];
    onehot.at(q, n_cls) = 0.0;
    onehot.at(q, gts[static_cast<std::size_t>(g)].box.category) = 1.0;
    alpha[q] = cfg_.focal_alpha;
  }
  auto lsm = tape.log_softmax_rows(f.class_logits);
  auto ll = tape.sum_rows(tape.mul(lsm, tape.input(onehot)));  // [n_q]
  auto pt = tape.exp(ll);
  auto one_minus = tape.clamp_min(tape.scale(tape.add_const(pt, -1.0), -1.0),
                                  1e-12);
  ad::Tape::Var focal_factor;
  if (cfg_.focal_gamma == 2.0) {
    focal_factor = tape.square(one_minus);
  } else {
    focal_factor =
        tape.exp(tape.scale(tape.log(one_minus), cfg_.focal_gamma));
  }
  auto cls_sum = tape.sum_all(tape.mul(
      tape.input(std::move(alpha)),
      tape.mul(focal_factor, tape.scale(ll, -1.0))));

  auto zero = tape.input(Tensor({1}));
  auto bbox_sum = zero, giou_sum = zero, c3d_sum = zero, dims_sum = zero,
       depth_sum = zero, yaw_sum = zero;

  if (n_gt > 0) {
    std::vector<int> rows(assignment.col_of_row.begin(),
                          assignment.col_of_row.end());
    Tensor gt_box({n_gt, 4}), gt_uv({n_gt, 2}), gt_dims({n_gt, 3}),
        gt_z({n_gt, 1}), gt_yaw({n_gt, 2}), wh({n_gt, 4});
    for (int g = 0; g < n_gt; ++g) {
      const auto& gt = gts[static_cast<std::size_t>(g)];
      const RectN r = normalized_rect(gt.rect, k);
      gt_box.at(g, 0) = r.cx;
      gt_box.at(g, 1) = r.cy;
      gt_box.at(g, 2) = r.w;
      gt_box.at(g, 3) = r.h;
      gt_uv.at(g, 0) = (k.fx * gt.box.center[0] / gt.box.center[2] + k.cx) / k.width;
      gt_uv.at(g, 1) = (k.fy * gt.box.center[1] / gt.box.center[2] + k.cy) / k.height;
      for (int j = 0; j < 3; ++j) gt_dims.at(g, j) = gt.box.dims[static_cast<std::size_t>(j)];
      gt_z.at(g, 0) = gt.box.center[2];
      gt_yaw.at(g, 0) = std::sin(gt.box.yaw);
      gt_yaw.at(g, 1) = std::cos(gt.box.yaw);
      wh.at(g, 0) = k.width;
      wh.at(g, 1) = k.height;
      wh.at(g, 2) = k.width;
      wh.at(g, 3) = k.height;
    }

    auto pb = tape.gather_rows(f.box2d, rows);
    bbox_sum = tape.sum_all(tape.abs(tape.sub(pb, tape.input(gt_box))));

    // GIoU in pixel units.
    auto pbx = tape.mul(pb, tape.input(wh));
    Tensor gt_px = gt_box;
    for (int g = 0; g < n_gt; ++g) {
      gt_px.at(g, 0) *= k.width;
      gt_px.at(g, 1) *= k.height;
      gt_px.at(g, 2) *= k.width;
      gt_px.at(g, 3) *= k.height;
    }
    auto gx = tape.input(gt_px);
    auto half = [&](ad::Tape::Var v, int c) {
      return tape.scale(tape.slice_cols(v, c, c + 1), 0.5);
    };
    auto col = [&](ad::Tape::Var v, int c) { return tape.slice_cols(v, c, c + 1); };
    auto px1 = tape.sub(col(pbx, 0), half(pbx, 2));
    auto px2 = tape.add(col(pbx, 0), half(pbx, 2));
    auto py1 = tape.sub(col(pbx, 1), half(pbx, 3));
    auto py2 = tape.add(col(pbx, 1), half(pbx, 3));
    auto gx1 = tape.sub(col(gx, 0), half(gx, 2));
    auto gx2 = tape.add(col(gx, 0), half(gx, 2));
    auto gy1 = tape.sub(col(gx, 1), half(gx, 3));
    auto gy2 = tape.add(col(gx, 1), half(gx, 3));
    auto iw = tape.clamp_min(tape.sub(tape.emin(px2, gx2), tape.emax(px1, gx1)), 0.0);
    auto ih = tape.clamp_min(tape.sub(tape.emin(py2, gy2), tape.emax(py1, gy1)), 0.0);
    auto inter = tape.mul(iw, ih);
    auto area_p = tape.mul(col(pbx, 2), col(pbx, 3));
    auto area_g = tape.mul(col(gx, 2), col(gx, 3));
    auto uni = tape.sub(tape.add(area_p, area_g), inter);
    auto iou = tape.div(inter, tape.add_const(uni, 1e-9));
    auto hull = tape.mul(tape.sub(tape.emax(px2, gx2), tape.emin(px1, gx1)),
                         tape.sub(tape.emax(py2, gy2), tape.emin(py1, gy1)));
    auto giou = tape.sub(
        iou, tape.div(tape.sub(hull, uni), tape.add_const(hull, 1e-9)));
    giou_sum = tape.sum_all(
        tape.scale(tape.add_const(giou, -1.0), -1.0));  // sum(1 - giou)

    c3d_sum = tape.sum_all(
        tape.abs(tape.sub(tape.gather_rows(f.center_uv, rows),
                          tape.input(gt_uv))));
    dims_sum = tape.sum_all(tape.abs(
        tape.sub(tape.gather_rows(f.dims, rows), tape.input(gt_dims))));
    depth_sum = tape.sum_all(tape.abs(
        tape.sub(tape.gather_rows(f.depth, rows), tape.input(gt_z))));
    yaw_sum = tape.sum_all(tape.abs(
        tape.sub(tape.gather_rows(f.yaw, rows), tape.input(gt_yaw))));
  }

  // Object-region depth-map supervision on stride-32 cells.
  auto dmap_sum = zero;
  {
    const Tensor& dm = tape.val(f.dmap);
    const int h32 = dm.dim(1), w32 = dm.dim(2);
    Tensor gt_map({1, h32, w32}), mask({1, h32, w32});
    int covered = 0;
    const int cell = cfg_.image_h / h32;
    for (int i = 0; i < h32; ++i) {
      for (int j = 0; j < w32; ++j) {
        const double px = (j + 0.5) * cell;
        const double py = (i + 0.5) * cell;
        double best_z = 0.0;
        for (const auto& gt : gts) {
          if (px >= gt.rect.xmin && px <= gt.rect.xmax && py >= gt.rect.ymin &&
              py <= gt.rect.ymax) {
            if (best_z == 0.0 || gt.box.center[2] < best_z)
              best_z = gt.box.center[2];
          }
        }
        if (best_z > 0.0) {
          gt_map.data[i * w32 + j] = best_z;
          mask.data[i * w32 + j] = 1.0;
          ++covered;
        }
      }
    }
    if (covered > 0) {
      dmap_sum = tape.scale(
          tape.sum_all(tape.mul(tape.input(std::move(mask)),
                                tape.abs(tape.sub(f.dmap,
                                                  tape.input(std::move(gt_map)))))),
          1.0 / covered);
    }
  }

  auto weighted = tape.scale(cls_sum, cfg_.w_class);
  weighted = tape.add(weighted, tape.scale(bbox_sum, cfg_.w_bbox));
  weighted = tape.add(weighted, tape.scale(giou_sum, cfg_.w_giou));
  weighted = tape.add(weighted, tape.scale(c3d_sum, cfg_.w_center3d));
  weighted = tape.add(weighted, tape.scale(dims_sum, cfg_.w_dim));
  weighted = tape.add(weighted, tape.scale(depth_sum, cfg_.w_depth));
  weighted = tape.add(weighted, tape.scale(yaw_sum, cfg_.w_yaw));
  weighted = tape.add(weighted, tape.scale(dmap_sum, cfg_.w_dmap));
  auto total = tape.scale(weighted, inv_ngt);

  if (out) {
    out->cls = tape.val(cls_sum)[0] * cfg_.w_class * inv_ngt;
    out->bbox = tape.val(bbox_sum)[0] * cfg_.w_bbox * inv_ngt;
    out->giou = tape.val(giou_sum)[0] * cfg_.w_giou * inv_ngt;
    out->center3d = tape.val(c3d_sum)[0] * cfg_.w_center3d * inv_ngt;
    out->dim = tape.val(dims_sum)[0] * cfg_.w_dim * inv_ngt;
    out->depth = tape.val(depth_sum)[0] * cfg_.w_depth * inv_ngt;
    out->yaw = tape.val(yaw_sum)[0] * cfg_.w_yaw * inv_ngt;
    out->dmap = tape.val(dmap_sum)[0] * cfg_.w_dmap * inv_ngt;
    out->l2d = out->cls + out->bbox + out->giou;
    out->l3d = out->center3d + out->dim + out->depth + out->yaw;
    out->ldmap = out->dmap;
    out->total = tape.val(total)[0];
  }
  return total;
}

LossBreakdown Detector::loss(const DetectionSet& preds,
                             const std::vector<GtObject>& gts,
                             const Assignment& assignment,
                             const CameraIntrinsics& k) const {
  // Rebuild the forward-output vars as constants; the breakdown does not
  // need gradients.
  ad::Tape tape;
  ForwardVars f;
  Tensor logits = preds.class_probs;  // recover logits as log-probs
  for (double& v : logits.data) v = std::log(std::max(v, 1e-300));
  f.class_logits = tape.input(logits);
  f.class_probs = tape.input(preds.class_probs);
  f.box2d = tape.input(preds.box2d);
  f.center_uv = tape.input(preds.center_uv);
  f.depth = tape.input(preds.depth);
  f.dims = tape.input(preds.dims);
  f.yaw = tape.input(preds.yaw_sincos);
  f.dmap = tape.input(preds.dmap);
  LossBreakdown out;
  loss_tape(tape, f, gts, assignment, k, &out);
  return out;
}

std::vector<Detection> Detector::predict(const DetectionSet& det,
                                         const CameraIntrinsics& k,
                                         double score_threshold) const {
  std::vector<Detection> out;
  const int n_q = det.class_probs.dim(0);
  const int n_cls = det.class_probs.dim(1) - 1;
  for (int q = 0; q < n_q; ++q) {
    double best = -1.0;
    int cat = 0;
    for (int c = 0; c < n_cls; ++c) {
      if (det.class_probs.at(q, c) > best) {
        best = det.class_probs.at(q, c);
        cat = c;
      }
    }
    if (best < score_threshold) continue;
    Detection d;
    d.score = best;
    d.category = cat;
    const double u = det.center_uv.at(q, 0) * k.width;
    const double v = det.center_uv.at(q, 1) * k.height;
    const double z = det.depth.at(q, 0);
    d.box.center = {(u - k.cx) * z / k.fx, (v - k.cy) * z / k.fy, z};
    d.box.dims = {det.dims.at(q, 0), det.dims.at(q, 1), det.dims.at(q, 2)};
    d.box.yaw = std::atan2(det.yaw_sincos.at(q, 0), det.yaw_sincos.at(q, 1));
    d.box.category = cat;
    const double bw = det.box2d.at(q, 2) * k.width;
    const double bh = det.box2d.at(q, 3) * k.height;
    d.rect.xmin = det.box2d.at(q, 0) * k.width - bw / 2;
    d.rect.xmax = det.box2d.at(q, 0) * k.width + bw / 2;
    d.rect.ymin = det.box2d.at(q, 1) * k.height - bh / 2;
    d.rect.ymax = det.box2d.at(q, 1) * k.height + bh / 2;
    out.push_back(d);
  }
  return out;
}

}  // namespace fovdet
