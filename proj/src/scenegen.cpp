#include "fovdet/scenegen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fovdet/errors.hpp"
#include "fovdet/evalmetrics.hpp"
#include "fovdet/kernels.hpp"
#include "fovdet/rng.hpp"

namespace fovdet {

namespace fs = std::filesystem;

std::array<double, 3> category_base_dims(int category) {
  // Square footprints so heading never dominates the overlap metrics;
  // distinct aspect ratios give each category a readable size prior.
  switch (category % 3) {
    case 0: return {1.6, 1.6, 0.8};
    case 1: return {1.1, 1.1, 1.4};
    default: return {2.2, 2.2, 0.6};
  }
}

std::array<double, 3> face_color(int category, int face) {
  std::array<double, 3> base{0.45, 0.45, 0.45};
  base[static_cast<std::size_t>(category % 3)] = 1.0;
  const double shade = 0.60 + 0.08 * face;  // orientation cue
  return {base[0] * shade, base[1] * shade, base[2] * shade};
}

Scene generate_scene(std::uint64_t seed, const RunConfig& cfg) {
  Rng rng(0x5ce4e5b9ULL ^ seed * 0x9e3779b97f4a7c15ULL);
  Scene scene;
  scene.seed = seed;
  scene.pattern_id = static_cast<std::uint32_t>(rng.next() >> 33);
  scene.ground_height =
      rng.uniform(cfg.get_double("scene.ground_min"),
                  cfg.get_double("scene.ground_max"));

  const int min_boxes = std::max(1, static_cast<int>(cfg.get_int("scene.min_boxes")));
  const int max_boxes = std::min(12, static_cast<int>(cfg.get_int("scene.max_boxes")));
  const int n_boxes = static_cast<int>(rng.uniform_int(min_boxes, max_boxes));

  const double z_min = cfg.get_double("scene.z_min");
  const double z_max = cfg.get_double("scene.z_max");
  const double x_limit = cfg.get_double("scene.x_limit");
  const double margin = cfg.get_double("scene.frustum_margin");
  const double f_canon = cfg.get_double("scene.canonical_focal");
  const double half_w = cfg.get_double("image.width") / 2.0;
  const double yaw_range = cfg.get_double("scene.yaw_range");
  const double scale = cfg.get_double("scene.object_scale");
  const double jitter = cfg.get_double("scene.dim_jitter");
  const int n_cats = static_cast<int>(cfg.get_int("dataset.categories"));

  for (int i = 0; i < n_boxes; ++i) {
    for (int attempt = 0; attempt < 64; ++attempt) {
      Box3D b;
      b.category = static_cast<int>(rng.uniform_int(0, n_cats - 1));
      auto dims = category_base_dims(b.category);
      const double fp_jitter = 1.0 + jitter * rng.uniform(-1.0, 1.0);
      const double h_jitter = 1.0 + jitter * rng.uniform(-1.0, 1.0);
      b.dims = {dims[0] * scale * fp_jitter, dims[1] * scale * fp_jitter,
                dims[2] * scale * h_jitter};
      const double z = rng.uniform(z_min, z_max);
      const double x_frustum = margin * half_w * z / f_canon;
      const double x_half = std::min(x_limit, x_frustum);
      const double x = rng.uniform(-x_half, x_half);
      const double y = scene.ground_height - b.dims[2] / 2.0;
      b.center = {x, y, z};
      double yaw = rng.uniform(-yaw_range, yaw_range);
      if (yaw <= -3.141592653589793) yaw = 3.141592653589793;
      b.yaw = yaw;

      bool overlaps = false;
      Box3D inflated = b;
      inflated.dims[0] *= 1.05;
      inflated.dims[1] *= 1.05;
      for (const Box3D& other : scene.boxes) {
        if (bev_iou(inflated, other) > 0.0) {
          overlaps = true;
          break;
        }
      }
      if (!overlaps) {
        scene.boxes.push_back(b);
        break;
      }
    }
  }
  return scene;
}

namespace {

struct ProjectedFace {
  std::array<std::array<double, 2>, 4> quad;
  double xmin, xmax, ymin, ymax;
  std::array<double, 3> color;
};

struct ProjectedBox {
  std::vector<ProjectedFace> faces;
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  int index = -1;
};

// corner index = u*4 + v*2 + y with u over +-l/2, v over +-w/2, y over +-h/2
constexpr int kFaceCorners[6][4] = {
    {0, 1, 3, 2}, {4, 5, 7, 6},  // -l / +l side
    {0, 1, 5, 4}, {2, 3, 7, 6},  // -w / +w side
    {0, 2, 6, 4}, {1, 3, 7, 5},  // top / bottom
};

bool point_in_quad(const std::array<std::array<double, 2>, 4>& q, double x,
                   double y) {
  int pos = 0, neg = 0;
  for (int i = 0; i < 4; ++i) {
    const auto& a = q[i];
    const auto& b = q[(i + 1) % 4];
    const double cr = (b[0] - a[0]) * (y - a[1]) - (b[1] - a[1]) * (x - a[0]);
    if (cr > 0) ++pos;
    if (cr < 0) ++neg;
  }
  return pos == 0 || neg == 0;
}

std::vector<ProjectedBox> project_scene(const Scene& scene,
                                        const CameraIntrinsics& k) {
  // Painter's order: far to near by center depth.
  std::vector<int> order(scene.boxes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return scene.boxes[static_cast<std::size_t>(a)].center[2] >
           scene.boxes[static_cast<std::size_t>(b)].center[2];
  });

  std::vector<ProjectedBox> out;
  for (int bi : order) {
    const Box3D& box = scene.boxes[static_cast<std::size_t>(bi)];
    if (box.center[2] <= 0.05) continue;
    const auto corners = box_corners(box);
    ProjectedBox pb;
    pb.index = bi;
    for (int f = 0; f < 6; ++f) {
      // Backface cull: outward normal vs. the view ray to the face center.
      std::array<double, 3> fc{0, 0, 0};
      for (int ci = 0; ci < 4; ++ci)
        for (int d = 0; d < 3; ++d) fc[d] += corners[kFaceCorners[f][ci]][d] / 4.0;
      const auto& c0 = corners[kFaceCorners[f][0]];
      const auto& c1 = corners[kFaceCorners[f][1]];
      const auto& c2 = corners[kFaceCorners[f][3]];
      std::array<double, 3> e1{c1[0] - c0[0], c1[1] - c0[1], c1[2] - c0[2]};
      std::array<double, 3> e2{c2[0] - c0[0], c2[1] - c0[1], c2[2] - c0[2]};
      std::array<double, 3> n{e1[1] * e2[2] - e1[2] * e2[1],
                              e1[2] * e2[0] - e1[0] * e2[2],
                              e1[0] * e2[1] - e1[1] * e2[0]};
      std::array<double, 3> outward{fc[0] - box.center[0],
                                    fc[1] - box.center[1],
                                    fc[2] - box.center[2]};
      double dot_out = n[0] * outward[0] + n[1] * outward[1] + n[2] * outward[2];
      if (dot_out < 0) {
        n = {-n[0], -n[1], -n[2]};
      }
      const double facing = n[0] * fc[0] + n[1] * fc[1] + n[2] * fc[2];
      if (facing >= 0) continue;  // faces away from the camera

      ProjectedFace pf;
      bool ok = true;
      pf.xmin = pf.ymin = 1e300;
      pf.xmax = pf.ymax = -1e300;
      for (int ci = 0; ci < 4; ++ci) {
        const auto& c = corners[kFaceCorners[f][ci]];
        if (c[2] <= 0.05) {
          ok = false;
          break;
        }
        const double u = k.fx * c[0] / c[2] + k.cx;
        const double v = k.fy * c[1] / c[2] + k.cy;
        pf.quad[ci] = {u, v};
        pf.xmin = std::min(pf.xmin, u);
        pf.xmax = std::max(pf.xmax, u);
        pf.ymin = std::min(pf.ymin, v);
        pf.ymax = std::max(pf.ymax, v);
      }
      if (!ok) continue;
      pf.color = face_color(box.category, f);
      pb.xmin = std::min(pb.xmin, pf.xmin);
      pb.xmax = std::max(pb.xmax, pf.xmax);
      pb.ymin = std::min(pb.ymin, pf.ymin);
      pb.ymax = std::max(pb.ymax, pf.ymax);
      pb.faces.push_back(pf);
    }
    if (!pb.faces.empty()) out.push_back(std::move(pb));
  }
  return out;
}

struct PatternParams {
  std::array<double, 4> fx, fy, phase, amp;
};

PatternParams pattern_params(std::uint32_t pattern_id) {
  std::uint64_t s = 0x243f6a8885a308d3ULL ^ pattern_id;
  PatternParams p;
  for (int i = 0; i < 4; ++i) {
    p.fx[i] = 60.0 + 180.0 * u64_to_unit(splitmix64(s));
    p.fy[i] = 60.0 + 180.0 * u64_to_unit(splitmix64(s));
    p.phase[i] = 6.283185307179586 * u64_to_unit(splitmix64(s));
    p.amp[i] = 0.5 + 0.5 * u64_to_unit(splitmix64(s));
  }
  return p;
}

inline double background_value(const PatternParams& p, double dx, double dy,
                               int channel, double amplitude) {
  double acc = 0.0;
  for (int i = 0; i < 4; ++i) {
    acc += p.amp[i] *
           std::sin(p.fx[i] * dx + p.fy[i] * dy + p.phase[i] +
                    0.7 * channel);
  }
  const double v = 0.32 + amplitude * acc / 4.0;
  return std::clamp(v, 0.0, 1.0);
}

// Per-pixel owner pass shared by render() and labels_for(). owner[i*W+j]
// holds the scene box index covering that pixel, or -1.
void rasterize_owners(const Scene& scene, const CameraIntrinsics& k,
                      const std::vector<ProjectedBox>& boxes,
                      std::vector<int>& owner) {
  const int w = k.width, h = k.height;
  owner.assign(static_cast<std::size_t>(w) * h, -1);
  kernels::for_each_row(
      h,
      [&](int y) {
        const double py = y + 0.5;
        for (int x = 0; x < w; ++x) {
          const double px = x + 0.5;
          int own = -1;
          for (const ProjectedBox& pb : boxes) {  // far to near
            if (px < pb.xmin || px > pb.xmax || py < pb.ymin || py > pb.ymax)
              continue;
            for (const ProjectedFace& pf : pb.faces) {
              if (px < pf.xmin || px > pf.xmax || py < pf.ymin ||
                  py > pf.ymax)
                continue;
              if (point_in_quad(pf.quad, px, py)) {
                own = pb.index;
                break;
              }
            }
          }
          owner[static_cast<std::size_t>(y) * w + x] = own;
        }
      },
      kernels::parallel_enabled());
}

std::vector<LabeledObject> labels_from_owner(const Scene& scene,
                                             const CameraIntrinsics& k,
                                             const std::vector<int>& owner) {
  const int w = k.width, h = k.height;
  std::vector<std::int64_t> visible(scene.boxes.size(), 0);
  std::vector<std::int64_t> covered(scene.boxes.size(), 0);

  // covered = pixels where the box alone would paint (ignoring occlusion),
  // recomputed per box from its own faces.
  std::vector<Scene> singles;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    for (std::size_t px = 0; px < owner.size(); ++px)
      if (owner[px] == static_cast<int>(i)) ++visible[i];
  }

  std::vector<LabeledObject> labels;
  for (std::size_t i = 0; i < scene.boxes.size(); ++i) {
    const Box3D& b = scene.boxes[i];
    LabeledObject lab;
    lab.box = b;
    if (b.center[2] <= 0.05) {
      lab.visibility = 0.0;
      labels.push_back(lab);
      continue;
    }
    lab.rect = project_box(b, k);

    Scene solo;
    solo.boxes = {b};
    auto proj = project_scene(solo, k);
    std::int64_t cov = 0;
    double unclipped_area = 1.0, clipped_area = 1.0;
    if (!proj.empty()) {
      const auto& pb = proj[0];
      const int y0 = std::max(0, static_cast<int>(std::floor(pb.ymin)));
      const int y1 = std::min(h - 1, static_cast<int>(std::ceil(pb.ymax)));
      const int x0 = std::max(0, static_cast<int>(std::floor(pb.xmin)));
      const int x1 = std::min(w - 1, static_cast<int>(std::ceil(pb.xmax)));
      for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
          const double px = x + 0.5, py = y + 0.5;
          for (const ProjectedFace& pf : pb.faces) {
            if (point_in_quad(pf.quad, px, py)) {
              ++cov;
              break;
            }
          }
        }
      }
      unclipped_area = std::max(1.0, (pb.xmax - pb.xmin) * (pb.ymax - pb.ymin));
      const double cx0 = std::clamp(pb.xmin, 0.0, static_cast<double>(w));
      const double cx1 = std::clamp(pb.xmax, 0.0, static_cast<double>(w));
      const double cy0 = std::clamp(pb.ymin, 0.0, static_cast<double>(h));
      const double cy1 = std::clamp(pb.ymax, 0.0, static_cast<double>(h));
      clipped_area = std::max(0.0, (cx1 - cx0) * (cy1 - cy0));
    }
    covered[i] = cov;
    const double truncation = clipped_area / unclipped_area;
    const double occlusion =
        cov > 0 ? static_cast<double>(visible[i]) / static_cast<double>(cov)
                : 0.0;
    lab.visibility = std::clamp(occlusion * truncation, 0.0, 1.0);
    labels.push_back(lab);
  }
  return labels;
}

}  // namespace

std::vector<LabeledObject> labels_for(const Scene& scene,
                                      const CameraIntrinsics& k,
                                      const RunConfig& cfg) {
  (void)cfg;
  auto boxes = project_scene(scene, k);
  std::vector<int> owner;
  rasterize_owners(scene, k, boxes, owner);
  return labels_from_owner(scene, k, owner);
}

Sample render(const Scene& scene, const CameraIntrinsics& k,
              const RunConfig& cfg) {
  if (!k.valid()) throw DomainError("render: invalid intrinsics");
  Sample s;
  s.scene_seed = scene.seed;
  s.intrinsics = k;
  s.image = Image(k.height, k.width, 3);

  const auto boxes = project_scene(scene, k);
  const auto pat = pattern_params(scene.pattern_id);
  const double amp = cfg.get_double("scene.bg_amplitude");

  // Color lookup per scene box index.
  std::vector<const ProjectedBox*> by_index(scene.boxes.size(), nullptr);
  for (const auto& pb : boxes) by_index[static_cast<std::size_t>(pb.index)] = &pb;

  kernels::for_each_row(
      k.height,
      [&](int y) {
        const double py = y + 0.5;
        for (int x = 0; x < k.width; ++x) {
          const double px = x + 0.5;
          const double dx = (px - k.cx) / k.fx;
          const double dy = (py - k.cy) / k.fy;
          std::array<double, 3> col{background_value(pat, dx, dy, 0, amp),
                                    background_value(pat, dx, dy, 1, amp),
                                    background_value(pat, dx, dy, 2, amp)};
          for (const ProjectedBox& pb : boxes) {  // far to near
            if (px < pb.xmin || px > pb.xmax || py < pb.ymin || py > pb.ymax)
              continue;
            for (const ProjectedFace& pf : pb.faces) {
              if (px < pf.xmin || px > pf.xmax || py < pf.ymin ||
                  py > pf.ymax)
                continue;
              if (point_in_quad(pf.quad, px, py)) {
                col = pf.color;
                break;
              }
            }
          }
          for (int c = 0; c < 3; ++c) s.image.at(y, x, c) = col[c];
        }
      },
      kernels::parallel_enabled());

  std::vector<int> owner;
  rasterize_owners(scene, k, boxes, owner);
  s.labels = labels_from_owner(scene, k, owner);
  return s;
}

void write_labels(const std::string& path,
                  const std::vector<LabeledObject>& labels) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open for write: " + path);
  os.precision(17);
  for (const auto& l : labels) {
    os << l.box.category << ' ' << l.box.center[0] << ' ' << l.box.center[1]
       << ' ' << l.box.center[2] << ' ' << l.box.dims[0] << ' '
       << l.box.dims[1] << ' ' << l.box.dims[2] << ' ' << l.box.yaw << ' '
       << l.visibility << '\n';
  }
  if (!os) throw IoError("write failed: " + path);
}

std::vector<LabeledObject> load_labels(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for read: " + path);
  std::vector<LabeledObject> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    LabeledObject l;
    if (!(ls >> l.box.category >> l.box.center[0] >> l.box.center[1] >>
          l.box.center[2] >> l.box.dims[0] >> l.box.dims[1] >>
          l.box.dims[2] >> l.box.yaw >> l.visibility))
      throw IoError("malformed label line in " + path + ": " + line);
    out.push_back(l);
  }
  return out;
}

namespace {
std::string record_stem(int scene_idx, double focal) {
  std::ostringstream os;
  os << "s" << scene_idx << "_f" << focal;
  return os.str();
}
}  // namespace

DatasetManifest build_dataset(std::uint64_t seed, int n_scenes,
                              const std::vector<double>& focal_set,
                              const std::vector<double>& split_ratios,
                              const RunConfig& cfg,
                              const std::string& out_dir) {
  if (focal_set.empty())
    throw ConfigError("build_dataset: focal set must be non-empty");
  if (split_ratios.size() != 3)
    throw ConfigError("build_dataset: expected 3 split ratios");
  const double ratio_sum = split_ratios[0] + split_ratios[1] + split_ratios[2];
  if (std::fabs(ratio_sum - 1.0) > 1e-9)
    throw ConfigError("build_dataset: split ratios must sum to 1");
  for (double f : focal_set)
    if (f <= 0.0) throw ConfigError("build_dataset: focal must be positive");

  const bool with_oracle = cfg.get_bool("synth.oracle");
  const int width = static_cast<int>(cfg.get_int("image.width"));
  const int height = static_cast<int>(cfg.get_int("image.height"));
  const double f_canon = cfg.get_double("scene.canonical_focal");
  const double pad = cfg.get_double("image.pad_value");

  std::error_code ec;
  fs::create_directories(fs::path(out_dir) / "images", ec);
  fs::create_directories(fs::path(out_dir) / "labels", ec);
  if (with_oracle) fs::create_directories(fs::path(out_dir) / "oracle", ec);
  if (ec) throw IoError("cannot create dataset directories under " + out_dir);

  const int n_train = static_cast<int>(std::llround(split_ratios[0] * n_scenes));
  const int n_val = static_cast<int>(std::llround(split_ratios[1] * n_scenes));
  auto split_of = [&](int idx) -> std::string {
    if (idx < n_train) return "train";
    if (idx < n_train + n_val) return "val";
    return "test";
  };

  DatasetManifest manifest;
  manifest.path = (fs::path(out_dir) / "manifest.tsv").string();

  const CameraIntrinsics k_canon =
      CameraIntrinsics::centered(f_canon, width, height);

  for (int si = 0; si < n_scenes; ++si) {
    const std::uint64_t scene_seed = seed * 1000003ULL + static_cast<std::uint64_t>(si);
    const Scene scene = generate_scene(scene_seed, cfg);
    const Sample canonical = render(scene, k_canon, cfg);

    for (double f : focal_set) {
      const auto stem = record_stem(si, f);
      const std::string img_path =
          (fs::path(out_dir) / "images" / (stem + ".img")).string();
      const std::string lab_path =
          (fs::path(out_dir) / "labels" / (stem + ".txt")).string();

      // Training image: canonical render pushed through the focal
      // simulation, not a re-render.
      const auto sim = simulate_intrinsic(canonical.image, k_canon, f, pad);
      write_image(img_path, sim.image);

      // Labels: 3D geometry carried over unchanged; projection/visibility
      // recomputed under the new intrinsics via an occupancy pass.
      const auto carried = transform_labels(scene.boxes, k_canon, sim.intrinsics);
      auto labels = labels_for(scene, sim.intrinsics, cfg);
      for (std::size_t i = 0; i < labels.size() && i < carried.size(); ++i)
        if (carried[i].out_of_frame) labels[i].visibility = 0.0;
      write_labels(lab_path, labels);

      if (with_oracle) {
        const Sample exact = render(scene, sim.intrinsics, cfg);
        const std::string oracle_path =
            (fs::path(out_dir) / "oracle" / (stem + ".img")).string();
        write_image(oracle_path, exact.image);
      }

      DatasetRecord rec;
      rec.split = split_of(si);
      rec.focal = f;
      rec.image_path = img_path;
      rec.label_path = lab_path;
      manifest.records.push_back(rec);
    }
  }

  std::ofstream os(manifest.path);
  if (!os) throw IoError("cannot write manifest: " + manifest.path);
  for (const auto& r : manifest.records)
    os << r.split << '\t' << r.focal << '\t' << r.image_path << '\t'
       << r.label_path << '\n';
  if (!os) throw IoError("manifest write failed: " + manifest.path);
  return manifest;
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest: " + path);
  DatasetManifest m;
  m.path = path;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    DatasetRecord r;
    std::string focal;
    if (!std::getline(ls, r.split, '\t') || !std::getline(ls, focal, '\t') ||
        !std::getline(ls, r.image_path, '\t') ||
        !std::getline(ls, r.label_path))
      throw IoError("malformed manifest line in " + path + ": " + line);
    r.focal = std::stod(focal);
    m.records.push_back(r);
  }
  return m;
}

std::uint64_t manifest_hash(const DatasetManifest& m) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& r : m.records) {
    h = fnv1a64(r.split.data(), r.split.size(), h);
    h = fnv1a64(&r.focal, sizeof(r.focal), h);
    const Image img = read_image(r.image_path);
    const std::uint64_t ih = image_hash(img);
    h = fnv1a64(&ih, sizeof(ih), h);
    for (const auto& l : load_labels(r.label_path)) {
      h = fnv1a64(&l.box.center, sizeof(l.box.center), h);
      h = fnv1a64(&l.box.dims, sizeof(l.box.dims), h);
      h = fnv1a64(&l.box.yaw, sizeof(l.box.yaw), h);
      h = fnv1a64(&l.visibility, sizeof(l.visibility), h);
    }
  }
  return h;
}

}  // namespace fovdet
