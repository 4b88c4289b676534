#include "fovdet/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include "fovdet/errors.hpp"

namespace fovdet {

InterpolationPolicy InterpolationPolicy::from_run_config(const RunConfig& cfg) {
  InterpolationPolicy p;
  p.threshold_px = cfg.get_double("infer.threshold_px");
  if (p.threshold_px <= 0)
    throw ConfigError("infer.threshold_px must be positive");
  const std::string space = cfg.get("infer.space");
  if (space == "bank") p.space = Space::kBank;
  else if (space == "post") p.space = Space::kPostConnector;
  else throw ConfigError("infer.space must be 'bank' or 'post'");
  const std::string ex = cfg.get("infer.extrapolation");
  if (ex == "linear") p.extrapolation = Extrapolation::kLinear;
  else if (ex == "clamp") p.extrapolation = Extrapolation::kClamp;
  else throw ConfigError("infer.extrapolation must be 'linear' or 'clamp'");
  return p;
}

EvalParams EvalParams::from_run_config(const RunConfig& cfg) {
  EvalParams p;
  p.iou_threshold = cfg.get_double("eval.iou_threshold");
  p.score_threshold = cfg.get_double("infer.score_threshold");
  p.easy_height = cfg.get_double("eval.easy_height");
  p.mod_height = cfg.get_double("eval.mod_height");
  p.easy_vis = cfg.get_double("eval.easy_vis");
  p.mod_vis = cfg.get_double("eval.mod_vis");
  return p;
}

BankBlend blend_in_bank_space(double f_test,
                              const IntrinsicEmbeddingBank& bank,
                              const InterpolationPolicy& policy) {
  if (bank.size() == 0) throw ConfigError("select_embedding: empty bank");
  const auto& es = bank.entries();

  // Two nearest by absolute gap, ties toward the smaller focal. Entries are
  // sorted ascending, so scanning in order with strict '<' does both.
  int a = -1, b = -1;
  double da = 1e300, db = 1e300;
  for (int i = 0; i < static_cast<int>(es.size()); ++i) {
    const double d = std::fabs(es[static_cast<std::size_t>(i)].focal - f_test);
    if (d < da) {
      b = a; db = da;
      a = i; da = d;
    } else if (d < db) {
      b = i; db = d;
    }
  }

  BankBlend out;
  if (da <= policy.threshold_px) {
    out.vec = es[static_cast<std::size_t>(a)].vec;
    out.provenance.exact = true;
    out.source_focal = es[static_cast<std::size_t>(a)].focal;
    return out;
  }
  if (b < 0)
    throw ConfigError(
        "select_embedding: need two bank entries to interpolate");
  const double fa = es[static_cast<std::size_t>(a)].focal;
  const double fb = es[static_cast<std::size_t>(b)].focal;
  double w = (fb - f_test) / (fb - fa);
  if (policy.extrapolation == InterpolationPolicy::Extrapolation::kClamp)
    w = std::clamp(w, 0.0, 1.0);
  out.vec.assign(es[static_cast<std::size_t>(a)].vec.size(), 0.0);
  for (std::size_t i = 0; i < out.vec.size(); ++i)
    out.vec[i] = w * es[static_cast<std::size_t>(a)].vec[i] +
                 (1.0 - w) * es[static_cast<std::size_t>(b)].vec[i];
  out.provenance.exact = false;
  out.provenance.f_lo = fa;
  out.provenance.f_hi = fb;
  out.provenance.weight = w;
  out.source_focal = f_test;
  return out;
}

AdaptedEmbedding select_embedding(double f_test,
                                  const IntrinsicEmbeddingBank& bank,
                                  const Detector& det,
                                  const InterpolationPolicy& policy) {
  AdaptedEmbedding out;
  if (policy.space == InterpolationPolicy::Space::kBank) {
    const BankBlend blend = blend_in_bank_space(f_test, bank, policy);
    out.t_intr = det.embed_value(blend.vec, f_test);
    out.provenance = blend.provenance;
    out.source_focal = blend.source_focal;
    return out;
  }
  // Post-connector space: blend the connector outputs of the two choices.
  InterpolationPolicy nearest_only = policy;
  nearest_only.space = InterpolationPolicy::Space::kBank;
  const BankBlend blend = blend_in_bank_space(f_test, bank, nearest_only);
  if (blend.provenance.exact) {
    out.t_intr = det.embed_value(blend.vec, f_test);
    out.provenance = blend.provenance;
    out.source_focal = blend.source_focal;
    return out;
  }
  const auto* lo = bank.find(blend.provenance.f_lo);
  const auto* hi = bank.find(blend.provenance.f_hi);
  const auto tlo = det.embed_value(lo->vec, blend.provenance.f_lo);
  const auto thi = det.embed_value(hi->vec, blend.provenance.f_hi);
  const double w = blend.provenance.weight;
  out.t_intr.assign(tlo.size(), 0.0);
  for (std::size_t i = 0; i < tlo.size(); ++i)
    out.t_intr[i] = w * tlo[i] + (1.0 - w) * thi[i];
  out.provenance = blend.provenance;
  out.source_focal = f_test;
  return out;
}

std::optional<AdaptedEmbedding> embedding_for_focal(
    const Detector& det, const IntrinsicEmbeddingBank* bank,
    const InterpolationPolicy& policy, double focal) {
  const auto& cfg = det.config();
  if (!cfg.intrinsic_aware) return std::nullopt;
  if (cfg.encoder_mode == EncoderMode::kLinearFocal) {
    AdaptedEmbedding e;
    e.t_intr = det.embed_value({}, focal);
    e.provenance.exact = true;
    e.source_focal = focal;
    return e;
  }
  if (!bank) throw ConfigError("evaluation requires a bank for this model");
  return select_embedding(focal, *bank, det, policy);
}

std::vector<EvalSample> eval_samples_from_manifest(
    const DatasetManifest& manifest, const EvalParams& params,
    const std::string& split) {
  std::vector<EvalSample> out;
  for (const auto& r : manifest.records) {
    if (!split.empty() && r.split != split) continue;
    EvalSample s;
    s.focal = r.focal;
    s.image = read_image(r.image_path);
    s.intrinsics =
        CameraIntrinsics::centered(r.focal, s.image.width, s.image.height);
    for (const auto& l : load_labels(r.label_path)) {
      if (l.visibility <= 0.0) continue;
      EvalGt g;
      g.box = l.box;
      g.category = l.box.category;
      const Box2D rect = project_box(l.box, s.intrinsics);
      g.difficulty =
          bucket_difficulty(rect.height(), l.visibility, params.easy_height,
                            params.mod_height, params.easy_vis, params.mod_vis);
      s.gts.push_back(g);
    }
    out.push_back(std::move(s));
  }
  return out;
}

namespace {
std::vector<EvalPred> detect_one(const Detector& det, const EvalSample& s,
                                 const std::optional<AdaptedEmbedding>& emb,
                                 const CameraIntrinsics& believed_k,
                                 const EvalParams& params) {
  const DetectionSet ds =
      det.forward(s.image, emb ? &emb->t_intr : nullptr);
  std::vector<EvalPred> preds;
  for (const auto& d : det.predict(ds, believed_k, params.score_threshold)) {
    EvalPred p;
    p.box = d.box;
    p.score = d.score;
    p.category = d.category;
    preds.push_back(p);
  }
  return preds;
}
}  // namespace

std::vector<FocalEvalRow> evaluate_over_focals(
    const Detector& det, const IntrinsicEmbeddingBank* bank,
    const InterpolationPolicy& policy, std::vector<double> grid,
    const std::vector<EvalSample>& samples, const EvalParams& params) {
  if (grid.empty()) {
    std::set<double> focals;
    for (const auto& s : samples) focals.insert(s.focal);
    grid.assign(focals.begin(), focals.end());
  }
  std::vector<FocalEvalRow> rows;
  for (double f : grid) {
    std::vector<const EvalSample*> at_focal;
    for (const auto& s : samples)
      if (s.focal == f) at_focal.push_back(&s);
    if (at_focal.empty()) {
      std::cerr << "evaluate_over_focals: no samples at focal " << f
                << ", skipping\n";
      continue;
    }
    const auto emb = embedding_for_focal(det, bank, policy, f);
    std::vector<std::vector<EvalPred>> preds;
    std::vector<std::vector<EvalGt>> gts;
    for (const EvalSample* s : at_focal) {
      preds.push_back(detect_one(det, *s, emb, s->intrinsics, params));
      gts.push_back(s->gts);
    }
    FocalEvalRow row;
    row.focal = f;
    row.provenance = emb ? emb->provenance.to_string() : "none";
    row.ap = evaluate_detections(preds, gts, params.iou_threshold);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MismatchRow> mismatch_sweep(const Detector& det,
                                        const IntrinsicEmbeddingBank* bank,
                                        const InterpolationPolicy& policy,
                                        const std::vector<EvalSample>& samples,
                                        const std::vector<double>& deltas,
                                        const EvalParams& params) {
  auto run_at = [&](double delta_signed) {
    std::vector<std::vector<EvalPred>> preds;
    std::vector<std::vector<EvalGt>> gts;
    std::map<double, std::optional<AdaptedEmbedding>> cache;
    for (const auto& s : samples) {
      const double f_used = s.focal + delta_signed;
      auto it = cache.find(f_used);
      if (it == cache.end())
        it = cache.emplace(f_used,
                           embedding_for_focal(det, bank, policy, f_used))
                 .first;
      const CameraIntrinsics believed = CameraIntrinsics::centered(
          f_used, s.image.width, s.image.height);
      preds.push_back(detect_one(det, s, it->second, believed, params));
      gts.push_back(s.gts);
    }
    return evaluate_detections(preds, gts, params.iou_threshold);
  };

  std::vector<MismatchRow> rows;
  for (double d : deltas) {
    MismatchRow row;
    row.delta = d;
    if (d == 0.0) {
      row.ap = run_at(0.0);
    } else {
      const APResult plus = run_at(d);
      const APResult minus = run_at(-d);
      row.ap = plus;
      for (int i = 0; i < 3; ++i) {
        auto mean_or_na = [](double a, double b) {
          if (a == kApNotApplicable || b == kApNotApplicable)
            return kApNotApplicable;
          return (a + b) / 2.0;
        };
        row.ap.ap3d[static_cast<std::size_t>(i)] = mean_or_na(
            plus.ap3d[static_cast<std::size_t>(i)], minus.ap3d[static_cast<std::size_t>(i)]);
        row.ap.apbev[static_cast<std::size_t>(i)] = mean_or_na(
            plus.apbev[static_cast<std::size_t>(i)], minus.apbev[static_cast<std::size_t>(i)]);
      }
    }
    rows.push_back(row);
  }
  return rows;
}

void write_focal_csv(const std::string& path,
                     const std::vector<FocalEvalRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write: " + path);
  os << ap_csv_header() << '\n';
  for (const auto& r : rows)
    os << ap_csv_row(r.focal, r.provenance, r.ap) << '\n';
}

void write_mismatch_csv(const std::string& path,
                        const std::vector<MismatchRow>& rows) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot write: " + path);
  os << "delta,ap3d_easy,ap3d_mod,ap3d_hard,apbev_easy,apbev_mod,apbev_hard\n";
  for (const auto& r : rows) {
    os << r.delta;
    for (double v : r.ap.ap3d) os << ',' << v;
    for (double v : r.ap.apbev) os << ',' << v;
    os << '\n';
  }
}

}  // namespace fovdet
