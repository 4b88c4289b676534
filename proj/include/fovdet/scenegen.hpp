#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fovdet/config.hpp"
#include "fovdet/geometry.hpp"
#include "fovdet/image.hpp"

namespace fovdet {

struct Scene {
  std::uint64_t seed = 0;
  std::vector<Box3D> boxes;      // mutually non-overlapping in BEV
  double ground_height = 1.2;    // meters below the optical axis (y down)
  std::uint32_t pattern_id = 0;  // selects the procedural background
};

struct LabeledObject {
  Box3D box;
  Box2D rect;              // projected hull under the sample's intrinsics
  double visibility = 0.0; // 1 = fully visible, 0 = out of frame / hidden
};

struct Sample {
  std::uint64_t scene_seed = 0;
  CameraIntrinsics intrinsics;
  Image image;
  std::vector<LabeledObject> labels;
};

// Fully determined by (seed, config): same inputs, bitwise-identical scene.
Scene generate_scene(std::uint64_t seed, const RunConfig& cfg);

// Rasterizes shaded cuboids (painter's order, far to near) over the
// procedural background and recomputes labels under K.
Sample render(const Scene& scene, const CameraIntrinsics& k,
              const RunConfig& cfg);

// Labels only: projection, visibility and truncation under K, computed from
// an occupancy pass without producing the color image.
std::vector<LabeledObject> labels_for(const Scene& scene,
                                      const CameraIntrinsics& k,
                                      const RunConfig& cfg);

struct DatasetRecord {
  std::string split;
  double focal = 0.0;
  std::string image_path;
  std::string label_path;
};

struct DatasetManifest {
  std::string path;
  std::vector<DatasetRecord> records;
};

// One record per (scene, focal): the image is the canonical render passed
// through simulate_intrinsic (not a re-render); when synth.oracle is on, an
// exact re-render is written next to it under oracle/ for fidelity checks.
DatasetManifest build_dataset(std::uint64_t seed, int n_scenes,
                              const std::vector<double>& focal_set,
                              const std::vector<double>& split_ratios,
                              const RunConfig& cfg, const std::string& out_dir);

DatasetManifest load_manifest(const std::string& path);

void write_labels(const std::string& path,
                  const std::vector<LabeledObject>& labels);
std::vector<LabeledObject> load_labels(const std::string& path);

// Base dims (l, w, h) for a category before scale/jitter.
std::array<double, 3> category_base_dims(int category);

// Flat-shaded face color, keyed by category and face index.
std::array<double, 3> face_color(int category, int face);

std::uint64_t manifest_hash(const DatasetManifest& m);

}  // namespace fovdet
