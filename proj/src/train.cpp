#include "fovdet/train.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fovdet/errors.hpp"
#include "fovdet/rng.hpp"

namespace fovdet {

std::vector<TrainRecord> records_from_manifest(const DatasetManifest& manifest,
                                               const std::string& split) {
  std::vector<TrainRecord> out;
  for (const auto& r : manifest.records) {
    if (!split.empty() && r.split != split) continue;
    TrainRecord rec;
    rec.image = read_image(r.image_path);
    rec.focal = r.focal;
    rec.intrinsics = CameraIntrinsics::centered(r.focal, rec.image.width,
                                                rec.image.height);
    rec.gts = gts_from_labels(load_labels(r.label_path), rec.intrinsics);
    out.push_back(std::move(rec));
  }
  return out;
}

void AdamW::step(ad::ParamStore& params, double lr) {
  ++t;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
  for (const auto& p : params.all()) {
    for (std::int64_t i = 0; i < p->value.numel(); ++i) {
      const double g = p->grad[i];
      p->adam_m[i] = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
      p->adam_v[i] = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
      const double mhat = p->adam_m[i] / bc1;
      const double vhat = p->adam_v[i] / bc2;
      p->value[i] -=
          lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * p->value[i]);
    }
  }
}

TrainResult train_detector(Detector& det, const std::vector<TrainRecord>& recs,
                           const IntrinsicEmbeddingBank* bank,
                           const TrainOptions& opts) {
  if (recs.empty()) throw ConfigError("train: no records in the train split");
  const auto& cfg = det.config();
  const bool needs_bank =
      cfg.intrinsic_aware && cfg.encoder_mode == EncoderMode::kBank;
  if (needs_bank && !bank)
    throw ConfigError("train: this configuration requires a bank");

  // Resolve bank vectors once per record; training requires an exact hit.
  std::vector<const std::vector<double>*> bank_vec(recs.size(), nullptr);
  if (needs_bank) {
    for (std::size_t i = 0; i < recs.size(); ++i) {
      const auto* e = bank->find(recs[i].focal);
      if (!e)
        throw ConfigError("train: focal " + std::to_string(recs[i].focal) +
                          " not in bank (training only sees seen focals)");
      bank_vec[i] = &e->vec;
    }
  }

  // Step-decay epochs rescaled from the reference schedule length.
  std::vector<int> decay_epochs;
  for (double e : opts.decay_list)
    decay_epochs.push_back(static_cast<int>(
        std::llround(e * static_cast<double>(opts.epochs) / opts.decay_ref)));

  std::ofstream metrics;
  if (!opts.metrics_path.empty()) {
    metrics.open(opts.metrics_path);
    if (!metrics) throw IoError("cannot write metrics: " + opts.metrics_path);
    metrics.precision(10);
  }

  Rng rng(0x7ea7c0deULL ^ opts.seed * 0x9e3779b97f4a7c15ULL);
  AdamW opt;
  opt.weight_decay = opts.weight_decay;
  TrainResult result;
  const int steps_per_epoch = static_cast<int>(recs.size());
  const std::vector<double> empty_vec;

  int step = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    double lr = opts.lr;
    for (int de : decay_epochs)
      if (epoch >= de && de > 0) lr *= opts.decay_rate;
    for (int it = 0; it < steps_per_epoch; ++it, ++step) {
      const std::size_t idx = static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(recs.size()) - 1));
      const TrainRecord& rec = recs[idx];

      ad::Tape tape;
      std::optional<ad::Tape::Var> t_intr;
      if (cfg.intrinsic_aware) {
        t_intr = det.embed_tape(
            tape, bank_vec[idx] ? *bank_vec[idx] : empty_vec, rec.focal);
      }
      const auto fwd = det.forward_tape(tape, rec.image, t_intr);
      const DetectionSet det_set = Detector::extract(tape, fwd);
      const Assignment assign = det.match(det_set, rec.gts, rec.intrinsics);
      LossBreakdown lb;
      const auto loss = det.loss_tape(tape, fwd, rec.gts, assign,
                                      rec.intrinsics, &lb);
      if (!std::isfinite(lb.total))
        throw TrainError("non-finite loss at step " + std::to_string(step));

      det.params().zero_grads();
      tape.backward(loss);
      opt.step(det.params(), lr);
      if (!det.params().all_finite())
        throw TrainError("non-finite parameter after step " +
                         std::to_string(step));

      if (step == 0) result.first_loss = lb.total;
      result.final_loss = lb.total;
      if (step % opts.log_every == 0 || (epoch == opts.epochs - 1 &&
                                         it == steps_per_epoch - 1)) {
        std::ostringstream line;
        line.precision(10);
        line << step << ' ' << lb.total << ' ' << lb.l2d << ' ' << lb.l3d
             << ' ' << lb.ldmap << ' ' << lr;
        result.log_lines.push_back(line.str());
        if (metrics.is_open()) metrics << line.str() << '\n';
      }
    }
  }
  result.steps = step;
  return result;
}

}  // namespace fovdet
