#pragma once

#include <array>
#include <string>
#include <vector>

#include "fovdet/geometry.hpp"

namespace fovdet {

enum class Difficulty { kEasy = 0, kModerate = 1, kHard = 2 };

// Rotated-rectangle IoU in the BEV (x,z) plane. Intersection by
// Sutherland-Hodgman clipping, areas by the shoelace formula.
// Degenerate (zero-area) boxes yield 0.
double bev_iou(const Box3D& a, const Box3D& b);

// BEV intersection area times vertical overlap, over the union of volumes.
double iou3d(const Box3D& a, const Box3D& b);

// Convex polygon intersection area (inputs need not share orientation).
double convex_intersection_area(const std::vector<std::array<double, 2>>& p,
                                const std::vector<std::array<double, 2>>& q);
double polygon_area(const std::vector<std::array<double, 2>>& p);

// Synthetic stand-in for occlusion/truncation-based buckets: easy needs a
// tall projection and near-full visibility; moderate a smaller one; the rest
// is hard. Thresholds come from eval.* config keys.
Difficulty bucket_difficulty(double projected_height_px, double visibility,
                             double easy_height, double mod_height,
                             double easy_vis, double mod_vis);

// One scored prediction joined against ground truth.
struct MatchedRecord {
  double score = 0.0;
  bool is_tp = false;
  bool ignored = false;  // matched a GT outside the difficulty level
};

// 40-point interpolated AP (percent). Records must carry the greedy
// score-descending match outcome; n_gt counts the ground truths in the
// difficulty level. Zero GTs -> returns kApNotApplicable.
inline constexpr double kApNotApplicable = -1.0;
double average_precision(std::vector<MatchedRecord> records, int n_gt);

// Greedy KITTI-style matching for one image at one difficulty level:
// predictions sorted by descending score; each may consume one unmatched GT
// with IoU >= threshold (the best-IoU one). GTs harder than `level` are
// ignore regions: predictions matching them are dropped from scoring.
struct EvalGt {
  Box3D box;
  Difficulty difficulty = Difficulty::kHard;
  int category = 0;
};
struct EvalPred {
  Box3D box;
  double score = 0.0;
  int category = 0;
};

enum class IouKind { kBev, k3d };

struct ImageEvalResult {
  std::vector<MatchedRecord> records;
  int n_gt = 0;
};
ImageEvalResult match_image(const std::vector<EvalPred>& preds,
                            const std::vector<EvalGt>& gts, Difficulty level,
                            double iou_threshold, IouKind kind);

struct APResult {
  // Indexed by Difficulty.
  std::array<double, 3> ap3d{kApNotApplicable, kApNotApplicable,
                             kApNotApplicable};
  std::array<double, 3> apbev{kApNotApplicable, kApNotApplicable,
                              kApNotApplicable};
  int n_gts = 0;
  int n_preds = 0;
};

// Aggregates over a set of images at one IoU threshold.
APResult evaluate_detections(
    const std::vector<std::vector<EvalPred>>& preds_per_image,
    const std::vector<std::vector<EvalGt>>& gts_per_image,
    double iou_threshold);

std::string ap_csv_header();
std::string ap_csv_row(double focal, const std::string& provenance,
                       const APResult& r);

}  // namespace fovdet
