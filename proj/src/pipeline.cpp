#include "fovdet/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "fovdet/checkpoint.hpp"
#include "fovdet/encoder.hpp"
#include "fovdet/errors.hpp"
#include "fovdet/inference.hpp"
#include "fovdet/kernels.hpp"
#include "fovdet/scenegen.hpp"
#include "fovdet/train.hpp"

namespace fovdet {

namespace fs = std::filesystem;

namespace {
void apply_runtime(const RunConfig& cfg) {
  kernels::set_max_threads(static_cast<int>(cfg.get_int("workers")));
}

void log_resolved(const RunConfig& cfg, const std::string& out_dir) {
  if (!out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    std::ofstream os(fs::path(out_dir) / "resolved_config.txt");
    if (os) os << cfg.to_string();
  }
  std::cout << "# resolved config\n" << cfg.to_string();
}
}  // namespace

SynthResult run_synth(const RunConfig& cfg) {
  apply_runtime(cfg);
  const std::string out = cfg.get("synth.out");
  log_resolved(cfg, out);
  const auto focals = cfg.get_list("synth.focals");
  const auto splits = cfg.get_list("synth.splits");
  const auto manifest = build_dataset(
      static_cast<std::uint64_t>(cfg.get_int("seed")),
      static_cast<int>(cfg.get_int("synth.scenes")), focals, splits, cfg, out);
  SynthResult r;
  r.manifest_path = manifest.path;
  r.n_records = static_cast<int>(manifest.records.size());
  return r;
}

BankResult run_bank(const RunConfig& cfg) {
  apply_runtime(cfg);
  const std::string desc_dir = cfg.get("bank.desc_dir");
  if (!fs::exists(desc_dir))
    throw ConfigError("description directory missing: " + desc_dir +
                      " (expected files named focal_<F>.txt)");
  const auto sets = load_descriptions(desc_dir);
  const int dim = static_cast<int>(cfg.get_int("bank.dim"));
  const std::string enc_spec = cfg.get("bank.encoder");
  std::unique_ptr<TextEncoder> enc;
  if (enc_spec == "reference") {
    enc = make_reference_encoder(dim, cfg.get_double("encoder.numeric_gain"));
  } else if (enc_spec.rfind("external:", 0) == 0) {
    enc = make_external_encoder(enc_spec.substr(9), dim);
  } else {
    throw ConfigError("bank.encoder must be 'reference' or 'external:<cmd>'");
  }
  const auto bank = build_bank(sets, *enc);

  const std::string out = cfg.get("bank.out");
  const fs::path parent = fs::path(out).parent_path();
  if (!parent.empty()) {
    std::error_code ec;
    fs::create_directories(parent, ec);
  }
  log_resolved(cfg, parent.string());
  write_bank(out, bank);

  BankResult r;
  r.bank_path = out;
  r.entries = static_cast<int>(bank.size());
  r.similarity_csv = (parent / "similarity.csv").string();
  r.pca_csv = (parent / "pca.csv").string();
  write_similarity_csv(r.similarity_csv, bank);
  write_pca_csv(r.pca_csv, pca_projection(bank, 2));
  return r;
}

DetectorConfig detector_config_for_ablation(const RunConfig& cfg,
                                            const std::string& ablation) {
  DetectorConfig d = DetectorConfig::from_run_config(cfg);
  if (ablation == "full") {
    // defaults: aware, both fusions, MLP connector, bank lookup
  } else if (ablation == "no-encoder") {
    d.encoder_mode = EncoderMode::kLinearFocal;
  } else if (ablation == "no-connector") {
    d.connector_mlp = false;
  } else if (ablation == "no-featfuse") {
    d.feature_fusion = false;
  } else if (ablation == "no-queryfuse") {
    d.query_fusion = false;
  } else if (ablation == "baseline") {
    d.intrinsic_aware = false;
    d.feature_fusion = false;
    d.query_fusion = false;
  } else {
    throw ConfigError("unknown ablation: " + ablation);
  }
  return d;
}

TrainRunResult run_train(const RunConfig& cfg) {
  apply_runtime(cfg);
  const std::string out = cfg.get("train.out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out);
  log_resolved(cfg, out);

  const DetectorConfig dcfg =
      detector_config_for_ablation(cfg, cfg.get("train.ablation"));
  const auto manifest = load_manifest(cfg.get("train.manifest"));
  const auto records = records_from_manifest(manifest, "train");

  IntrinsicEmbeddingBank bank;
  const IntrinsicEmbeddingBank* bank_ptr = nullptr;
  if (dcfg.intrinsic_aware && dcfg.encoder_mode == EncoderMode::kBank) {
    if (cfg.get("train.bank").empty())
      throw ConfigError("train: --bank is required for this ablation");
    bank = read_bank(cfg.get("train.bank"));
    if (bank.dim() != dcfg.embed_dim)
      throw ConfigError("train: bank dim does not match encoder.dim");
    bank_ptr = &bank;
  }

  Detector det(dcfg, static_cast<std::uint64_t>(cfg.get_int("seed")));

  TrainOptions opts;
  opts.epochs = static_cast<int>(cfg.get_int("train.epochs"));
  opts.lr = cfg.get_double("train.lr");
  opts.weight_decay = cfg.get_double("train.weight_decay");
  opts.decay_rate = cfg.get_double("train.decay_rate");
  opts.decay_list = cfg.get_list("train.decay_list");
  opts.decay_ref = cfg.get_double("train.decay_ref");
  opts.log_every = static_cast<int>(cfg.get_int("train.log_every"));
  opts.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  opts.metrics_path = (fs::path(out) / "metrics.log").string();

  const std::uint64_t bank_hash_before =
      bank_ptr ? bank_ptr->content_hash() : 0;
  const auto result = train_detector(det, records, bank_ptr, opts);
  if (bank_ptr && bank_ptr->content_hash() != bank_hash_before)
    throw InternalError("frozen bank mutated during training");

  TrainRunResult r;
  r.checkpoint_path = (fs::path(out) / "ckpt.bin").string();
  r.metrics_path = opts.metrics_path;
  r.steps = result.steps;
  r.final_loss = result.final_loss;
  save_checkpoint(r.checkpoint_path, det.params(), dcfg.hash(),
                  static_cast<std::uint64_t>(result.steps));
  return r;
}

EvalRunResult run_eval(const RunConfig& cfg) {
  apply_runtime(cfg);
  const std::string out = cfg.get("eval.out");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create output directory: " + out);
  log_resolved(cfg, out);

  const DetectorConfig dcfg =
      detector_config_for_ablation(cfg, cfg.get("train.ablation"));
  Detector det(dcfg, static_cast<std::uint64_t>(cfg.get_int("seed")));
  load_checkpoint(cfg.get("eval.ckpt"), det.params(), dcfg.hash());

  IntrinsicEmbeddingBank bank;
  const IntrinsicEmbeddingBank* bank_ptr = nullptr;
  if (dcfg.intrinsic_aware && dcfg.encoder_mode == EncoderMode::kBank) {
    if (cfg.get("eval.bank").empty())
      throw ConfigError("eval: --bank is required for this model");
    bank = read_bank(cfg.get("eval.bank"));
    bank_ptr = &bank;
  }

  const auto policy = InterpolationPolicy::from_run_config(cfg);
  const auto params = EvalParams::from_run_config(cfg);
  const auto manifest = load_manifest(cfg.get("eval.manifest"));
  const auto samples = eval_samples_from_manifest(manifest, params);

  std::vector<double> grid;
  if (!cfg.get("eval.focals").empty()) grid = cfg.get_list("eval.focals");
  const auto rows =
      evaluate_over_focals(det, bank_ptr, policy, grid, samples, params);

  EvalRunResult r;
  r.focal_csv = (fs::path(out) / "focal_sweep.csv").string();
  write_focal_csv(r.focal_csv, rows);
  r.focal_rows = static_cast<int>(rows.size());

  if (!cfg.get("eval.mismatch").empty()) {
    std::vector<double> deltas = {0.0};
    for (double d : cfg.get_list("eval.mismatch"))
      if (d != 0.0) deltas.push_back(d);
    const auto mrows =
        mismatch_sweep(det, bank_ptr, policy, samples, deltas, params);
    r.mismatch_csv = (fs::path(out) / "mismatch.csv").string();
    write_mismatch_csv(r.mismatch_csv, mrows);
  }
  return r;
}

const std::vector<std::pair<std::string, std::vector<FlagSpec>>>&
cli_command_flags() {
  static const std::vector<std::pair<std::string, std::vector<FlagSpec>>> kMap = {
      {"synth",
       {{"--seed", "seed"},
        {"--workers", "workers"},
        {"--scenes", "synth.scenes"},
        {"--focals", "synth.focals"},
        {"--splits", "synth.splits"},
        {"--oracle", "synth.oracle"},
        {"--out", "synth.out"}}},
      {"bank",
       {{"--seed", "seed"},
        {"--workers", "workers"},
        {"--desc-dir", "bank.desc_dir"},
        {"--encoder", "bank.encoder"},
        {"--dim", "bank.dim"},
        {"--out", "bank.out"}}},
      {"train",
       {{"--seed", "seed"},
        {"--workers", "workers"},
        {"--manifest", "train.manifest"},
        {"--bank", "train.bank"},
        {"--epochs", "train.epochs"},
        {"--ablation", "train.ablation"},
        {"--out", "train.out"}}},
      {"eval",
       {{"--seed", "seed"},
        {"--workers", "workers"},
        {"--ckpt", "eval.ckpt"},
        {"--bank", "eval.bank"},
        {"--manifest", "eval.manifest"},
        {"--focals", "eval.focals"},
        {"--mismatch", "eval.mismatch"},
        {"--ablation", "train.ablation"},
        {"--out", "eval.out"}}},
  };
  return kMap;
}

}  // namespace fovdet
