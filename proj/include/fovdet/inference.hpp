#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fovdet/adaptation.hpp"
#include "fovdet/detector.hpp"
#include "fovdet/encoder.hpp"
#include "fovdet/evalmetrics.hpp"
#include "fovdet/scenegen.hpp"

namespace fovdet {

struct InterpolationPolicy {
  double threshold_px = 32.0;
  enum class Space { kBank, kPostConnector } space = Space::kBank;
  enum class Extrapolation { kLinear, kClamp } extrapolation =
      Extrapolation::kLinear;

  static InterpolationPolicy from_run_config(const RunConfig& cfg);
};

// The test-time rule: take the two seen focals nearest to f_test (ties
// toward the smaller focal). Within threshold_px of the nearest, reuse its
// embedding bitwise; otherwise blend with w = (f_b - f_test)/(f_b - f_a),
// where w leaves [0,1] for out-of-range focals under linear extrapolation.
// Blending happens in bank space by default; the post-connector alternative
// blends the two connector outputs instead.
AdaptedEmbedding select_embedding(double f_test,
                                  const IntrinsicEmbeddingBank& bank,
                                  const Detector& det,
                                  const InterpolationPolicy& policy);

// Bank-space version without the connector (exposed for the sweep tests).
struct BankBlend {
  std::vector<double> vec;
  Provenance provenance;
  double source_focal = 0.0;
};
BankBlend blend_in_bank_space(double f_test, const IntrinsicEmbeddingBank& bank,
                              const InterpolationPolicy& policy);

struct EvalSample {
  double focal = 0.0;
  Image image;
  CameraIntrinsics intrinsics;
  std::vector<EvalGt> gts;
};

struct EvalParams {
  double iou_threshold = 0.7;
  double score_threshold = 0.35;
  double easy_height = 40, mod_height = 25;
  double easy_vis = 0.95, mod_vis = 0.5;
  static EvalParams from_run_config(const RunConfig& cfg);
};

std::vector<EvalSample> eval_samples_from_manifest(
    const DatasetManifest& manifest, const EvalParams& params,
    const std::string& split = "");

// Embedding for an arbitrary focal under this model's conditioning mode;
// nullopt for the intrinsic-blind baseline.
std::optional<AdaptedEmbedding> embedding_for_focal(
    const Detector& det, const IntrinsicEmbeddingBank* bank,
    const InterpolationPolicy& policy, double focal);

struct FocalEvalRow {
  double focal = 0.0;
  std::string provenance;
  APResult ap;
};

// Per-focal AP table over the grid (skips grid focals with no samples, with
// a warning). Empty grid = all focals present in the samples, ascending.
std::vector<FocalEvalRow> evaluate_over_focals(
    const Detector& det, const IntrinsicEmbeddingBank* bank,
    const InterpolationPolicy& policy, std::vector<double> grid,
    const std::vector<EvalSample>& samples, const EvalParams& params);

struct MismatchRow {
  double delta = 0.0;
  APResult ap;  // mean of the +delta and -delta runs
};

// Re-runs detection with f_test = f_true +- delta feeding both the embedding
// selection and the decoding intrinsics; ground truth stays untouched.
// delta = 0 gives the ground-truth-intrinsic reference row.
std::vector<MismatchRow> mismatch_sweep(const Detector& det,
                                        const IntrinsicEmbeddingBank* bank,
                                        const InterpolationPolicy& policy,
                                        const std::vector<EvalSample>& samples,
                                        const std::vector<double>& deltas,
                                        const EvalParams& params);

void write_focal_csv(const std::string& path,
                     const std::vector<FocalEvalRow>& rows);
void write_mismatch_csv(const std::string& path,
                        const std::vector<MismatchRow>& rows);

}  // namespace fovdet
