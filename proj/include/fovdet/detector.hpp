#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fovdet/adaptation.hpp"
#include "fovdet/autodiff.hpp"
#include "fovdet/config.hpp"
#include "fovdet/geometry.hpp"
#include "fovdet/hungarian.hpp"
#include "fovdet/image.hpp"
#include "fovdet/scenegen.hpp"

namespace fovdet {

enum class EncoderMode { kBank, kLinearFocal, kNone };

struct DetectorConfig {
  int d_model = 256;
  int n_queries = 50;
  int n_decoder_layers = 3;
  int n_heads = 8;
  int ffn_dim = 256;
  int base_channels = 16;
  int max_channels = 64;
  int n_classes = 3;
  int image_w = 256;
  int image_h = 128;

  bool intrinsic_aware = true;
  bool feature_fusion = true;
  bool query_fusion = true;
  bool connector_mlp = true;  // false = single-linear connector
  EncoderMode encoder_mode = EncoderMode::kBank;
  int embed_dim = 64;        // bank embedding width fed to the connector
  int connector_hidden = 0;  // 0 = embed_dim
  bool tanh_gelu = false;

  double w_class = 2, w_bbox = 5, w_giou = 2, w_center3d = 10, w_dim = 1,
         w_depth = 1, w_dmap = 1, w_yaw = 1;
  double focal_alpha = 0.25, focal_gamma = 2;
  double c_class = 2, c_bbox = 5, c_giou = 2, c_center3d = 10;

  // Test hook: compute only the stride-8 map and reuse it for all scales
  // (used by the micro gradient checks where H/32 < 1).
  bool single_scale_stub = false;

  static DetectorConfig from_run_config(const RunConfig& cfg);
  std::uint64_t hash() const;
};

// Raw per-query outputs of one forward pass (values, not tape vars).
struct DetectionSet {
  Tensor class_probs;  // [Nq, C+1], softmax scores
  Tensor box2d;        // [Nq, 4] normalized (cx, cy, w, h)
  Tensor center_uv;    // [Nq, 2] normalized (u, v)
  Tensor depth;        // [Nq, 1] meters (positive)
  Tensor dims;         // [Nq, 3] meters (positive)
  Tensor yaw_sincos;   // [Nq, 2] unit-normalized (sin, cos)
  Tensor dmap;         // [1, H/32, W/32] meters
};

struct ForwardTrace {
  bool feature_fused = false;
  bool query_fused = false;
};

struct GtObject {
  Box3D box;
  Box2D rect;          // projected under the sample intrinsics
  double visibility = 1.0;
};

struct LossBreakdown {
  double total = 0;
  double l2d = 0, l3d = 0, ldmap = 0;  // logged groups
  double cls = 0, bbox = 0, giou = 0, center3d = 0, dim = 0, depth = 0,
         yaw = 0, dmap = 0;  // per-term (weighted, normalized)
};

struct Detection {
  Box3D box;
  Box2D rect;
  double score = 0.0;
  int category = 0;
};

class Detector {
 public:
  Detector(const DetectorConfig& cfg, std::uint64_t seed);

  const DetectorConfig& config() const { return cfg_; }
  ad::ParamStore& params() { return params_; }
  const ad::ParamStore& params() const { return params_; }
  const Connector& connector() const { return connector_; }

  // Tape handles for one forward pass; tape must outlive them.
  struct ForwardVars {
    ad::Tape::Var class_logits;
    ad::Tape::Var class_probs;
    ad::Tape::Var box2d;
    ad::Tape::Var center_uv;
    ad::Tape::Var depth;
    ad::Tape::Var dims;
    ad::Tape::Var yaw;
    ad::Tape::Var dmap;
  };

  // t_intr: none for the intrinsic-blind path; otherwise a [1, d'] tape var
  // (typically the connector output so gradients reach it).
  ForwardVars forward_tape(ad::Tape& tape, const Image& img,
                           std::optional<ad::Tape::Var> t_intr,
                           ForwardTrace* trace = nullptr) const;

  DetectionSet forward(const Image& img,
                       const std::vector<double>* t_intr = nullptr,
                       ForwardTrace* trace = nullptr) const;

  // Embedding path on the tape: bank vector / raw focal -> t_intr [1, d'].
  ad::Tape::Var embed_tape(ad::Tape& tape, const std::vector<double>& t_avg,
                           double focal) const;
  std::vector<double> embed_value(const std::vector<double>& t_avg,
                                  double focal) const;

  static DetectionSet extract(const ad::Tape& tape, const ForwardVars& f);

  // Hungarian matching with the Table-style cost weights.
  Assignment match(const DetectionSet& preds, const std::vector<GtObject>& gts,
                   const CameraIntrinsics& k) const;

  // Set-prediction loss on the tape. Returns the scalar var; fills `out`.
  ad::Tape::Var loss_tape(ad::Tape& tape, const ForwardVars& f,
                          const std::vector<GtObject>& gts,
                          const Assignment& assignment,
                          const CameraIntrinsics& k, LossBreakdown* out) const;

  LossBreakdown loss(const DetectionSet& preds, const std::vector<GtObject>& gts,
                     const Assignment& assignment,
                     const CameraIntrinsics& k) const;

  std::vector<Detection> predict(const DetectionSet& det,
                                 const CameraIntrinsics& k,
                                 double score_threshold) const;

 private:
  DetectorConfig cfg_;
  ad::ParamStore params_;
  Connector connector_;

  // Backbone/projection/decoder/head parameter handles.
  struct ConvLayer {
    ad::Param* w;
    ad::Param* b;
    int stride;
  };
  std::vector<ConvLayer> backbone_;
  std::vector<ConvLayer> scale_proj_;  // 1x1 to d_model
  struct DecoderLayer {
    ad::Param *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    ad::Param *ln1_g, *ln1_b, *ln2_g, *ln2_b;
    ad::Param *ff1_w, *ff1_b, *ff2_w, *ff2_b;
  };
  std::vector<DecoderLayer> decoder_;
  ad::Param* queries_;
  ad::Param *head_class_w, *head_class_b;
  ad::Param *head_box_w, *head_box_b;
  ad::Param *head_uv_w, *head_uv_b;
  ad::Param *head_depth_w, *head_depth_b;
  ad::Param *head_dims_w, *head_dims_b;
  ad::Param *head_yaw_w, *head_yaw_b;
  ad::Param *head_dmap_w, *head_dmap_b;
  ad::Param *focal_enc_w = nullptr, *focal_enc_b = nullptr;  // no-encoder mode

  Tensor positional_encoding(const std::vector<std::array<int, 2>>& scale_hw)
      const;
};

// GT conversion: labels -> matched/training targets under K. Objects with
// zero visibility (out of frame) are dropped.
std::vector<GtObject> gts_from_labels(const std::vector<LabeledObject>& labels,
                                      const CameraIntrinsics& k);

}  // namespace fovdet
