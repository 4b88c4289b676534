#include "fovdet/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fovdet/errors.hpp"

namespace fovdet {

double polygon_area(const std::vector<std::array<double, 2>>& p) {
  const std::size_t n = p.size();
  if (n < 3) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % n];
    acc += a[0] * b[1] - b[0] * a[1];
  }
  return 0.5 * std::fabs(acc);
}

namespace {
double signed_area2(const std::vector<std::array<double, 2>>& p) {
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    acc += a[0] * b[1] - b[0] * a[1];
  }
  return acc;
}

// Clips polygon `poly` against the half-plane left of edge a->b.
std::vector<std::array<double, 2>> clip_edge(
    const std::vector<std::array<double, 2>>& poly,
    const std::array<double, 2>& a, const std::array<double, 2>& b) {
  std::vector<std::array<double, 2>> out;
  const std::size_t n = poly.size();
  out.reserve(n + 2);
  auto side = [&](const std::array<double, 2>& p) {
    return (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
  };
  for (std::size_t i = 0; i < n; ++i) {
    const auto& cur = poly[i];
    const auto& nxt = poly[(i + 1) % n];
    const double sc = side(cur), sn = side(nxt);
    if (sc >= 0.0) out.push_back(cur);
    if ((sc > 0.0 && sn < 0.0) || (sc < 0.0 && sn > 0.0)) {
      const double t = sc / (sc - sn);
      out.push_back({cur[0] + t * (nxt[0] - cur[0]),
                     cur[1] + t * (nxt[1] - cur[1])});
    }
  }
  return out;
}
}  // namespace

double convex_intersection_area(const std::vector<std::array<double, 2>>& p,
                                const std::vector<std::array<double, 2>>& q) {
  if (p.size() < 3 || q.size() < 3) return 0.0;
  auto subject = p;
  auto clipper = q;
  if (signed_area2(subject) < 0.0)
    std::reverse(subject.begin(), subject.end());
  if (signed_area2(clipper) < 0.0)
    std::reverse(clipper.begin(), clipper.end());
  auto out = subject;
  for (std::size_t i = 0; i < clipper.size() && !out.empty(); ++i) {
    out = clip_edge(out, clipper[i], clipper[(i + 1) % clipper.size()]);
  }
  return polygon_area(out);
}

namespace {
std::vector<std::array<double, 2>> bev_polygon(const Box3D& b) {
  const auto c = bev_corners(b);
  return {c[0], c[1], c[2], c[3]};
}
}  // namespace

double bev_iou(const Box3D& a, const Box3D& b) {
  const double area_a = a.dims[0] * a.dims[1];
  const double area_b = b.dims[0] * b.dims[1];
  if (area_a <= 0.0 || area_b <= 0.0) return 0.0;
  const double inter = convex_intersection_area(bev_polygon(a), bev_polygon(b));
  const double uni = area_a + area_b - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double iou3d(const Box3D& a, const Box3D& b) {
  const double area_a = a.dims[0] * a.dims[1];
  const double area_b = b.dims[0] * b.dims[1];
  if (area_a <= 0.0 || area_b <= 0.0 || a.dims[2] <= 0.0 || b.dims[2] <= 0.0)
    return 0.0;
  const double inter_bev =
      convex_intersection_area(bev_polygon(a), bev_polygon(b));
  const double a_lo = a.center[1] - a.dims[2] / 2.0;
  const double a_hi = a.center[1] + a.dims[2] / 2.0;
  const double b_lo = b.center[1] - b.dims[2] / 2.0;
  const double b_hi = b.center[1] + b.dims[2] / 2.0;
  const double overlap =
      std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
  const double inter = inter_bev * overlap;
  const double uni = area_a * a.dims[2] + area_b * b.dims[2] - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

Difficulty bucket_difficulty(double projected_height_px, double visibility,
                             double easy_height, double mod_height,
                             double easy_vis, double mod_vis) {
  if (projected_height_px >= easy_height && visibility >= easy_vis)
    return Difficulty::kEasy;
  if (projected_height_px >= mod_height && visibility >= mod_vis)
    return Difficulty::kModerate;
  return Difficulty::kHard;
}

double average_precision(std::vector<MatchedRecord> records, int n_gt) {
  if (n_gt <= 0) return kApNotApplicable;
  std::stable_sort(records.begin(), records.end(),
                   [](const MatchedRecord& a, const MatchedRecord& b) {
                     return a.score > b.score;
                   });
  std::vector<double> precision, recall;
  int tp = 0, fp = 0;
  for (const auto& r : records) {
    if (r.ignored) continue;
    r.is_tp ? ++tp : ++fp;
    precision.push_back(static_cast<double>(tp) / (tp + fp));
    recall.push_back(static_cast<double>(tp) / n_gt);
  }
  double ap = 0.0;
  for (int k = 1; k <= 40; ++k) {
    const double r = static_cast<double>(k) / 40.0;
    double best = 0.0;
    for (std::size_t i = 0; i < recall.size(); ++i)
      if (recall[i] >= r - 1e-12) best = std::max(best, precision[i]);
    ap += best;
  }
  return ap / 40.0 * 100.0;
}

ImageEvalResult match_image(const std::vector<EvalPred>& preds,
                            const std::vector<EvalGt>& gts, Difficulty level,
                            double iou_threshold, IouKind kind) {
  ImageEvalResult out;
  auto iou = [&](const Box3D& a, const Box3D& b) {
    return kind == IouKind::kBev ? bev_iou(a, b) : iou3d(a, b);
  };
  for (const auto& g : gts)
    if (static_cast<int>(g.difficulty) <= static_cast<int>(level)) ++out.n_gt;

  std::vector<int> order(preds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return preds[a].score > preds[b].score;
  });

  std::vector<bool> gt_used(gts.size(), false);
  for (int pi : order) {
    const auto& p = preds[pi];
    double best = 0.0;
    int best_gt = -1;
    for (std::size_t gi = 0; gi < gts.size(); ++gi) {
      if (gt_used[gi] || gts[gi].category != p.category) continue;
      const double v = iou(p.box, gts[gi].box);
      if (v >= iou_threshold && v > best) {
        best = v;
        best_gt = static_cast<int>(gi);
      }
    }
    MatchedRecord rec;
    rec.score = p.score;
    if (best_gt >= 0) {
      gt_used[static_cast<std::size_t>(best_gt)] = true;
      const bool counted = static_cast<int>(gts[best_gt].difficulty) <=
                           static_cast<int>(level);
      rec.is_tp = counted;
      rec.ignored = !counted;  // don't-care region: neither TP nor FP
    }
    out.records.push_back(rec);
  }
  return out;
}

APResult evaluate_detections(
    const std::vector<std::vector<EvalPred>>& preds_per_image,
    const std::vector<std::vector<EvalGt>>& gts_per_image,
    double iou_threshold) {
  if (preds_per_image.size() != gts_per_image.size())
    throw InternalError("evaluate_detections: image count mismatch");
  APResult out;
  for (const auto& g : gts_per_image) out.n_gts += static_cast<int>(g.size());
  for (const auto& p : preds_per_image)
    out.n_preds += static_cast<int>(p.size());

  for (int kind = 0; kind < 2; ++kind) {
    for (int d = 0; d < 3; ++d) {
      std::vector<MatchedRecord> pooled;
      int n_gt = 0;
      for (std::size_t i = 0; i < preds_per_image.size(); ++i) {
        auto r = match_image(preds_per_image[i], gts_per_image[i],
                             static_cast<Difficulty>(d), iou_threshold,
                             kind == 0 ? IouKind::k3d : IouKind::kBev);
        n_gt += r.n_gt;
        pooled.insert(pooled.end(), r.records.begin(), r.records.end());
      }
      const double ap = average_precision(std::move(pooled), n_gt);
      (kind == 0 ? out.ap3d : out.apbev)[static_cast<std::size_t>(d)] = ap;
    }
  }
  return out;
}

std::string ap_csv_header() {
  return "focal,provenance,ap3d_easy,ap3d_mod,ap3d_hard,apbev_easy,apbev_mod,"
         "apbev_hard";
}

std::string ap_csv_row(double focal, const std::string& provenance,
                       const APResult& r) {
  std::ostringstream os;
  os << focal << ',' << provenance;
  for (double v : r.ap3d) os << ',' << v;
  for (double v : r.apbev) os << ',' << v;
  return os.str();
}

}  // namespace fovdet
