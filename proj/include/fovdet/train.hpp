#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fovdet/detector.hpp"
#include "fovdet/encoder.hpp"
#include "fovdet/scenegen.hpp"

namespace fovdet {

struct TrainRecord {
  Image image;
  CameraIntrinsics intrinsics;
  std::vector<GtObject> gts;
  double focal = 0.0;
};

std::vector<TrainRecord> records_from_manifest(const DatasetManifest& manifest,
                                               const std::string& split);

struct TrainOptions {
  int epochs = 30;
  double lr = 2e-4;
  double weight_decay = 1e-4;
  double decay_rate = 0.5;
  std::vector<double> decay_list = {85, 125, 165, 205};
  double decay_ref = 250;  // epoch count the decay list was written for
  int log_every = 100;
  std::uint64_t seed = 0;
  std::string metrics_path;  // empty = don't write
};

struct TrainResult {
  int steps = 0;
  double first_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::string> log_lines;  // "step loss l2d l3d ldmap lr"
};

// Single-writer training loop: per step sample a record uniformly, look up
// its focal in the frozen bank (exact hit required), run the connector and
// detector forward, Hungarian-match, compute the loss, backprop, and apply
// an AdamW step with the rescaled step-decay schedule. `bank` may be null
// only for models that never read it (baseline / no-encoder ablations).
TrainResult train_detector(Detector& det, const std::vector<TrainRecord>& recs,
                           const IntrinsicEmbeddingBank* bank,
                           const TrainOptions& opts);

struct AdamW {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  double weight_decay = 1e-4;
  std::int64_t t = 0;
  void step(ad::ParamStore& params, double lr);
};

}  // namespace fovdet
