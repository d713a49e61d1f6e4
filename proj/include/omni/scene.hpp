#pragma once

#include <string>

#include "omni/gaussians.hpp"
#include "omni/geometry.hpp"

namespace omni {

// ---- ego rig ----

struct RigConfig {
  int width = 112, height = 64;
  double hfov_deg = 70.0;
  int K = 6;
  Vec3 center{0, 0, 0.9};
};

// K outward-facing cameras at yaw increments of 360/K, world z up, camera y
// down. Throws when the adjacent-view overlap fraction reaches 15%.
std::vector<CameraModel> make_ego_rig(const RigConfig& rig);

// ---- scene description ----

enum class PrimitiveKind { sphere, box, pole, wall, backdrop, floor };

struct Primitive {
  PrimitiveKind kind = PrimitiveKind::sphere;
  Vec3 center{0, 0, 0};
  // sphere: radius = size[0]; box/wall/pole: half extents (axis-aligned);
  // backdrop: inward-facing sphere of radius size[0] around the origin;
  // floor: plane z = center[2] with half extent size[0] in x and y.
  Vec3 size{1, 1, 1};
  Vec3 albedo{0.5, 0.5, 0.5};
  bool checker = false;
  Vec3 albedo2{0.1, 0.1, 0.1};
  double checker_scale = 0.5;  // meters (radians on the backdrop)
};

struct SceneSpec {
  uint64_t seed = 0;
  int scene_case = 0;  // 1..4, 0 = mixed
  VolumeSpec volume;
  std::vector<Primitive> primitives;
};

VolumeSpec desk_volume();  // 32x32x8 over [-10,10]^2 x [-1,3]

// Deterministic scene per (case, seed); case 0 combines all four features.
SceneSpec generate_scene(int case_id, uint64_t seed);

// ---- analytic oracle ----

struct RayHit {
  bool hit = false;
  double t = 0;  // along the unit ray
  int prim = -1;
  Vec3 point{0, 0, 0};
  Vec3 color{0, 0, 0};
};
RayHit raycast_scene(const SceneSpec& spec, const Ray& ray);

struct AnalyticView {
  std::vector<double> rgb;    // h*w*3
  std::vector<double> depth;  // h*w, camera z
  std::vector<int> prim;      // h*w, nearest primitive index or -1
};
AnalyticView render_analytic(const SceneSpec& spec, const CameraModel& cam);

// Dense Gaussian surface samples of every primitive; fx sets the pixel
// density target, detail > 1 coarsens the sampling.
GaussianSet scene_surrogate(const SceneSpec& spec, double fx = 80.0, double detail = 1.0);

// ---- bin samples ----

struct ViewData {
  CameraModel cam;
  std::vector<double> rgb;    // h*w*3
  std::vector<double> depth;  // h*w, camera z (analytic)
};

struct BinSample {
  SceneSpec scene;
  double bin_size = 0.8;
  Vec3 trajectory{0, 1, 0};
  std::vector<ViewData> input;    // rig at center
  std::vector<ViewData> novel_a;  // rig at center + trajectory * bin/2
  std::vector<ViewData> novel_b;  // rig at center - trajectory * bin/2
};

BinSample make_bin_sample(const SceneSpec& scene, const RigConfig& rig, double bin_size);

void write_bin(const std::string& dir, const BinSample& b);
BinSample read_bin(const std::string& dir);

}  // namespace omni
