#include "omni/scene.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "omni/image_io.hpp"
#include "omni/renderer.hpp"

namespace omni {

namespace {

constexpr double kPi = 3.14159265358979323846;

Vec3 rot90(const Vec3& p, int k) {
  Vec3 r = p;
  for (int i = 0; i < (k & 3); ++i) r = {-r[1], r[0], r[2]};
  return r;
}

Vec3 half90(const Vec3& h, int k) { return (k & 1) ? Vec3{h[1], h[0], h[2]} : h; }

// Surface parameterization used by the checker pattern; shared by the
// analytic raycast and the Gaussian surrogate so their colors agree.
void surface_uv(const Primitive& p, const Vec3& pt, double& u, double& v) {
  switch (p.kind) {
    case PrimitiveKind::floor:
      u = pt[0];
      v = pt[1];
      return;
    case PrimitiveKind::sphere: {
      Vec3 d = pt - p.center;
      double r = std::max(norm(d), 1e-12);
      u = std::atan2(d[1], d[0]) * p.size[0];
      v = std::asin(std::clamp(d[2] / r, -1.0, 1.0)) * p.size[0];
      return;
    }
    case PrimitiveKind::backdrop: {
      double r = std::max(norm(pt), 1e-12);
      u = std::atan2(pt[1], pt[0]);
      v = std::asin(std::clamp(pt[2] / r, -1.0, 1.0));
      return;
    }
    default: {  // box-like: param on the face with the largest normalized coord
      Vec3 d = pt - p.center;
      int axis = 0;
      double best = -1;
      for (int a = 0; a < 3; ++a) {
        double f = std::abs(d[a]) / std::max(p.size[size_t(a)], 1e-12);
        if (f > best) { best = f; axis = a; }
      }
      u = pt[(axis + 1) % 3];
      v = pt[(axis + 2) % 3];
      return;
    }
  }
}

Vec3 primitive_color(const Primitive& p, const Vec3& pt) {
  if (!p.checker) return p.albedo;
  double u, v;
  surface_uv(p, pt, u, v);
  int64_t iu = int64_t(std::floor(u / p.checker_scale));
  int64_t iv = int64_t(std::floor(v / p.checker_scale));
  return ((iu + iv) & 1) ? p.albedo2 : p.albedo;
}

constexpr double kRayEps = 1e-6;

// Returns the hit distance along the unit ray, or a negative value on miss.
double intersect_primitive(const Primitive& p, const Ray& ray) {
  const Vec3& o = ray.origin;
  const Vec3& d = ray.direction;
  switch (p.kind) {
    case PrimitiveKind::sphere: {
      Vec3 oc = o - p.center;
      double b = dot(oc, d);
      double c = dot(oc, oc) - p.size[0] * p.size[0];
      double disc = b * b - c;
      if (disc < 0) return -1;
      double s = std::sqrt(disc);
      double t = -b - s;
      if (t > kRayEps) return t;
      t = -b + s;
      return t > kRayEps ? t : -1;
    }
    case PrimitiveKind::backdrop: {
      // Inward-facing sphere around the origin; the camera is inside it.
      double b = dot(o, d);
      double c = dot(o, o) - p.size[0] * p.size[0];
      double disc = b * b - c;
      if (disc < 0) return -1;
      double t = -b + std::sqrt(disc);
      return t > kRayEps ? t : -1;
    }
    case PrimitiveKind::floor: {
      if (std::abs(d[2]) < 1e-12) return -1;
      double t = (p.center[2] - o[2]) / d[2];
      if (t <= kRayEps) return -1;
      Vec3 pt = o + d * t;
      if (std::abs(pt[0] - p.center[0]) > p.size[0] ||
          std::abs(pt[1] - p.center[1]) > p.size[0])
        return -1;
      return t;
    }
    default: {  // axis-aligned box (box, pole, wall)
      double t0 = -1e300, t1 = 1e300;
      for (int a = 0; a < 3; ++a) {
        double lo = p.center[size_t(a)] - p.size[size_t(a)];
        double hi = p.center[size_t(a)] + p.size[size_t(a)];
        if (std::abs(d[size_t(a)]) < 1e-12) {
          if (o[size_t(a)] < lo || o[size_t(a)] > hi) return -1;
          continue;
        }
        double ta = (lo - o[size_t(a)]) / d[size_t(a)];
        double tb = (hi - o[size_t(a)]) / d[size_t(a)];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
      }
      if (t0 > t1) return -1;
      if (t0 > kRayEps) return t0;
      return t1 > kRayEps ? t1 : -1;
    }
  }
}

}  // namespace

std::vector<CameraModel> make_ego_rig(const RigConfig& rig) {
  OMNI_CHECK(rig.K >= 1, "make_ego_rig: K must be >= 1");
  OMNI_CHECK(rig.hfov_deg > 0 && rig.hfov_deg < 180, "make_ego_rig: hfov out of range");
  OMNI_CHECK(rig.width > 0 && rig.height > 0, "make_ego_rig: bad image size");
  if (rig.K >= 2) {
    double step = 360.0 / rig.K;
    double overlap = (rig.hfov_deg - step) / rig.hfov_deg;
    OMNI_CHECK(overlap < 0.15,
               "make_ego_rig: adjacent-view overlap fraction reaches 15%; reduce hfov or K");
  }

  double fx = 0.5 * rig.width / std::tan(0.5 * rig.hfov_deg * kPi / 180.0);
  std::vector<CameraModel> cams;
  for (int k = 0; k < rig.K; ++k) {
    double yaw = 2.0 * kPi * k / rig.K;
    Vec3 forward{std::cos(yaw), std::sin(yaw), 0};
    Vec3 down{0, 0, -1};
    Vec3 right = cross(down, forward);
    CameraModel cam;
    cam.fx = cam.fy = fx;
    cam.cx = 0.5 * rig.width;
    cam.cy = 0.5 * rig.height;
    cam.width = rig.width;
    cam.height = rig.height;
    cam.rotation = {right[0],   right[1],   right[2],    //
                    down[0],    down[1],    down[2],     //
                    forward[0], forward[1], forward[2]};
    cam.translation = mat_vec(cam.rotation, rig.center) * -1.0;
    // Splats grazing the camera plane project to unbounded footprints
    // (the EWA Jacobian scales with 1/z^2), so the rig culls anything
    // closer than a quarter meter; nothing in the scenes is visible there.
    cam.near_plane = 0.25;
    cam.validate();
    cams.push_back(cam);
  }
  return cams;
}

VolumeSpec desk_volume() {
  VolumeSpec v;
  v.H = 32;
  v.W = 32;
  v.Z = 8;
  v.min_corner = {-10, -10, -1};
  v.max_corner = {10, 10, 3};
  return v;
}

namespace {

Vec3 palette(Rng& rng) {
  return {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
}

void add_common(SceneSpec& s, Rng& rng) {
  Primitive floor;
  floor.kind = PrimitiveKind::floor;
  floor.center = {0, 0, 0};
  floor.size = {14, 14, 0};
  floor.checker = true;
  floor.albedo = palette(rng);
  floor.albedo2 = palette(rng);
  floor.checker_scale = 0.5;
  s.primitives.push_back(floor);

  Primitive back;
  back.kind = PrimitiveKind::backdrop;
  back.center = {0, 0, 0};
  back.size = {60, 60, 60};
  back.checker = true;
  back.albedo = palette(rng);
  back.albedo2 = palette(rng);
  back.checker_scale = 0.15;  // radians
  s.primitives.push_back(back);
}

// Case feature: an object fully inside the occluder's shadow as seen from
// the rig center, revealed by the half-bin lateral translation of the novel
// frames. Placement stays on the x axis (quadrant 0 or 2) because the
// trajectory runs along y.
void add_occlusion(SceneSpec& s, Rng& rng, int quad) {
  Primitive box;
  box.kind = PrimitiveKind::box;
  box.center = rot90({1.5, 0, 0.9}, quad);
  box.size = half90({0.3, 0.16, 0.8}, quad);
  box.albedo = palette(rng);
  s.primitives.push_back(box);

  Primitive ball;
  ball.kind = PrimitiveKind::sphere;
  ball.center = rot90({4.0 + 0.4 * rng.uniform(), 0, 0.9}, quad);
  ball.size = {0.5, 0.5, 0.5};
  ball.albedo = {rng.uniform(0.7, 0.95), rng.uniform(0.1, 0.3), rng.uniform(0.1, 0.3)};
  s.primitives.push_back(ball);
}

// Case feature: a pole that crosses the top of the volume (z max 3), so its
// upper part lies outside the reconstruction volume. Placed far enough out
// that the horizontal cameras (half vfov ~0.4 rad from 0.9 m height) see
// above z = 3 at its distance: 0.9 + 0.4 * 6 = 3.3.
void add_truncation(SceneSpec& s, Rng& rng, int quad) {
  Primitive pole;
  pole.kind = PrimitiveKind::pole;
  pole.center = rot90({6.0, 0.8 * (rng.uniform() - 0.5), 2.3}, quad);
  pole.size = {0.18, 0.18, 2.1};
  pole.albedo = palette(rng);
  s.primitives.push_back(pole);

  Primitive ctx;
  ctx.kind = PrimitiveKind::box;
  ctx.center = rot90({3.5, -1.2, 0.7}, quad);
  ctx.size = half90({0.5, 0.5, 0.7}, quad);
  ctx.albedo = palette(rng);
  s.primitives.push_back(ctx);
}

// Case feature: a wall entirely beyond the volume's lateral extent (10 m),
// so every one of its pixels has depth past the volume range.
void add_out_of_volume(SceneSpec& s, Rng& rng, int quad) {
  Primitive wall;
  wall.kind = PrimitiveKind::wall;
  wall.center = rot90({14.0 + rng.uniform(), 0, 3.0}, quad);
  wall.size = half90({0.2, 6, 3}, quad);
  wall.checker = true;
  wall.albedo = palette(rng);
  wall.albedo2 = palette(rng);
  wall.checker_scale = 1.0;
  s.primitives.push_back(wall);
}

// Case feature: a fine checker wall and small spheres inside the volume.
void add_fine_detail(SceneSpec& s, Rng& rng, int quad) {
  Primitive wall;
  wall.kind = PrimitiveKind::wall;
  wall.center = rot90({2.5, 0, 1.2}, quad);
  wall.size = half90({0.1, 1.8, 1.2}, quad);
  wall.checker = true;
  wall.albedo = palette(rng);
  wall.albedo2 = palette(rng);
  wall.checker_scale = 0.12;
  s.primitives.push_back(wall);

  for (int i = 0; i < 3; ++i) {
    Primitive ball;
    ball.kind = PrimitiveKind::sphere;
    ball.center = rot90({2.0, -0.8 + 0.8 * i, 0.35}, quad);
    ball.size = {0.18, 0.18, 0.18};
    ball.albedo = palette(rng);
    s.primitives.push_back(ball);
  }
}

}  // namespace

SceneSpec generate_scene(int case_id, uint64_t seed) {
  OMNI_CHECK(case_id >= 0 && case_id <= 4, "generate_scene: case must be 0 (mixed) or 1..4");
  SceneSpec s;
  s.seed = seed;
  s.scene_case = case_id;
  s.volume = desk_volume();
  Rng rng(seed * 1000003ull + uint64_t(case_id) + 1);
  add_common(s, rng);
  switch (case_id) {
    case 1:
      add_occlusion(s, rng, rng.uniform() < 0.5 ? 0 : 2);
      break;
    case 2:
      add_truncation(s, rng, int(rng.randint(4)));
      break;
    case 3:
      add_out_of_volume(s, rng, int(rng.randint(4)));
      break;
    case 4:
      add_fine_detail(s, rng, int(rng.randint(4)));
      break;
    default:
      add_occlusion(s, rng, 0);
      add_truncation(s, rng, 1);
      add_out_of_volume(s, rng, 2);
      add_fine_detail(s, rng, 3);
      break;
  }
  return s;
}

RayHit raycast_scene(const SceneSpec& spec, const Ray& ray) {
  RayHit best;
  for (size_t i = 0; i < spec.primitives.size(); ++i) {
    double t = intersect_primitive(spec.primitives[i], ray);
    if (t > 0 && (!best.hit || t < best.t)) {
      best.hit = true;
      best.t = t;
      best.prim = int(i);
    }
  }
  if (best.hit) {
    best.point = ray.origin + ray.direction * best.t;
    best.color = primitive_color(spec.primitives[size_t(best.prim)], best.point);
  }
  return best;
}

AnalyticView render_analytic(const SceneSpec& spec, const CameraModel& cam) {
  AnalyticView out;
  size_t n = size_t(cam.width) * size_t(cam.height);
  out.rgb.assign(n * 3, 0.0);
  out.depth.assign(n, 0.0);
  out.prim.assign(n, -1);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      RayHit h = raycast_scene(spec, pixel_ray(cam, x + 0.5, y + 0.5));
      if (!h.hit) continue;
      size_t i = size_t(y) * size_t(cam.width) + size_t(x);
      out.prim[i] = h.prim;
      out.depth[i] = mat_vec(cam.rotation, h.point)[2] + cam.translation[2];
      for (int c = 0; c < 3; ++c) out.rgb[i * 3 + size_t(c)] = h.color[size_t(c)];
    }
  return out;
}

namespace {

void add_splat(GaussianSet& set, const Vec3& pos, const Vec3& scale, const Vec3& color) {
  Gaussian3D g;
  g.mean = pos;
  g.opacity = 0.92;
  g.scale = scale;
  g.color = {std::clamp(color[0], 0.0, 1.0), std::clamp(color[1], 0.0, 1.0),
             std::clamp(color[2], 0.0, 1.0)};
  set.items.push_back(g);
}

// Surface-sample spacing targeting roughly 1.6 pixels at the rig.
double local_step(const Vec3& pos, const Vec3& rig, double fx, double detail) {
  double d = std::max(norm(pos - rig), 0.5);
  return detail * std::clamp(1.6 * d / fx, 0.025, 0.5);
}

void surrogate_sphere(GaussianSet& set, const Primitive& p, const Vec3& rig, double fx,
                      double detail) {
  double s = local_step(p.center, rig, fx, detail);
  double r = p.size[0];
  int n = std::max(8, int(std::ceil(4.0 * kPi * r * r / (s * s))));
  double ga = kPi * (3.0 - std::sqrt(5.0));  // golden angle
  for (int i = 0; i < n; ++i) {
    double z = 1.0 - 2.0 * (i + 0.5) / n;
    double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
    double a = ga * i;
    Vec3 pos = p.center + Vec3{rho * std::cos(a), rho * std::sin(a), z} * r;
    add_splat(set, pos, {0.7 * s, 0.7 * s, 0.7 * s}, primitive_color(p, pos));
  }
}

void surrogate_box(GaussianSet& set, const Primitive& p, const Vec3& rig, double fx,
                   double detail) {
  double s = local_step(p.center, rig, fx, detail);
  for (int axis = 0; axis < 3; ++axis)
    for (int side = -1; side <= 1; side += 2) {
      int a1 = (axis + 1) % 3, a2 = (axis + 2) % 3;
      int n1 = std::max(1, int(std::ceil(2.0 * p.size[size_t(a1)] / s)));
      int n2 = std::max(1, int(std::ceil(2.0 * p.size[size_t(a2)] / s)));
      for (int i = 0; i < n1; ++i)
        for (int j = 0; j < n2; ++j) {
          Vec3 pos = p.center;
          pos[size_t(axis)] += side * p.size[size_t(axis)];
          pos[size_t(a1)] += (-1.0 + (2.0 * i + 1.0) / n1) * p.size[size_t(a1)];
          pos[size_t(a2)] += (-1.0 + (2.0 * j + 1.0) / n2) * p.size[size_t(a2)];
          Vec3 sc{0.7 * s, 0.7 * s, 0.7 * s};
          sc[size_t(axis)] = 0.2 * s;  // thin along the face normal
          add_splat(set, pos, sc, primitive_color(p, pos));
        }
    }
}

void surrogate_floor(GaussianSet& set, const Primitive& p, const Vec3& rig, double fx,
                     double detail) {
  double rmax = p.size[0] * std::sqrt(2.0);
  for (double r = 0.6; r < rmax;) {
    double s = detail * std::clamp(2.2 * r / fx, 0.03, 0.6);
    int naz = std::max(8, int(std::ceil(2.0 * kPi * r / s)));
    for (int i = 0; i < naz; ++i) {
      double a = 2.0 * kPi * (i + 0.5) / naz;
      Vec3 pos{p.center[0] + r * std::cos(a), p.center[1] + r * std::sin(a), p.center[2]};
      if (std::abs(pos[0] - p.center[0]) > p.size[0] ||
          std::abs(pos[1] - p.center[1]) > p.size[0])
        continue;
      add_splat(set, pos, {0.7 * s, 0.7 * s, 0.2 * s}, primitive_color(p, pos));
    }
    r += s;
  }
  (void)rig;
}

void surrogate_backdrop(GaussianSet& set, const Primitive& p, double fx, double detail) {
  double rad = p.size[0];
  double step = detail * 1.8 / fx;  // angular, radians
  int nel = std::max(4, int(std::ceil(0.9 / step)));
  for (int ie = 0; ie < nel; ++ie) {
    double el = -0.45 + 0.9 * (ie + 0.5) / nel;
    int naz = std::max(8, int(std::ceil(2.0 * kPi * std::cos(el) / step)));
    for (int ia = 0; ia < naz; ++ia) {
      double az = 2.0 * kPi * (ia + 0.5) / naz;
      Vec3 pos = Vec3{std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el)} * rad;
      double s = 0.7 * rad * step;
      add_splat(set, pos, {s, s, s}, primitive_color(p, pos));
    }
  }
}

}  // namespace

GaussianSet scene_surrogate(const SceneSpec& spec, double fx, double detail) {
  OMNI_CHECK(fx > 0 && detail > 0, "scene_surrogate: fx and detail must be > 0");
  GaussianSet set;
  Vec3 rig{0, 0, 0.9};
  for (const auto& p : spec.primitives) {
    switch (p.kind) {
      case PrimitiveKind::sphere:
        surrogate_sphere(set, p, rig, fx, detail);
        break;
      case PrimitiveKind::floor:
        surrogate_floor(set, p, rig, fx, detail);
        break;
      case PrimitiveKind::backdrop:
        surrogate_backdrop(set, p, fx, detail);
        break;
      default:
        surrogate_box(set, p, rig, fx, detail);
        break;
    }
  }
  return set;
}

BinSample make_bin_sample(const SceneSpec& scene, const RigConfig& rig, double bin_size) {
  OMNI_CHECK(bin_size > 0, "make_bin_sample: bin_size must be > 0");
  BinSample b;
  b.scene = scene;
  b.bin_size = bin_size;
  b.trajectory = {0, 1, 0};

  std::vector<CameraModel> probe = make_ego_rig(rig);
  GaussianSet surrogate = scene_surrogate(scene, probe[0].fx);

  auto render_rig = [&](const Vec3& offset) {
    RigConfig shifted = rig;
    shifted.center = rig.center + offset;
    std::vector<ViewData> views;
    for (const CameraModel& cam : make_ego_rig(shifted)) {
      ViewData v;
      v.cam = cam;
      RenderOutput r = render(surrogate, cam);
      v.rgb.resize(r.rgb.size());
      for (size_t i = 0; i < r.rgb.size(); ++i) v.rgb[i] = std::clamp(r.rgb[i], 0.0, 1.0);
      v.depth = render_analytic(scene, cam).depth;
      views.push_back(std::move(v));
    }
    return views;
  };

  b.input = render_rig({0, 0, 0});
  b.novel_a = render_rig(b.trajectory * (0.5 * bin_size));
  b.novel_b = render_rig(b.trajectory * (-0.5 * bin_size));
  return b;
}

namespace {

using json = nlohmann::json;

const char* kind_name(PrimitiveKind k) {
  switch (k) {
    case PrimitiveKind::sphere: return "sphere";
    case PrimitiveKind::box: return "box";
    case PrimitiveKind::pole: return "pole";
    case PrimitiveKind::wall: return "wall";
    case PrimitiveKind::backdrop: return "backdrop";
    case PrimitiveKind::floor: return "floor";
  }
  fail("unknown primitive kind");
}

PrimitiveKind kind_from_name(const std::string& s) {
  if (s == "sphere") return PrimitiveKind::sphere;
  if (s == "box") return PrimitiveKind::box;
  if (s == "pole") return PrimitiveKind::pole;
  if (s == "wall") return PrimitiveKind::wall;
  if (s == "backdrop") return PrimitiveKind::backdrop;
  if (s == "floor") return PrimitiveKind::floor;
  fail("unknown primitive kind: " + s);
}

json vec_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }
Vec3 vec_from(const json& j) { return {j.at(0), j.at(1), j.at(2)}; }

json camera_json(const CameraModel& c) {
  json j;
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["width"] = c.width;
  j["height"] = c.height;
  j["rotation"] = std::vector<double>(c.rotation.begin(), c.rotation.end());
  j["translation"] = vec_json(c.translation);
  return j;
}

CameraModel camera_from(const json& j) {
  CameraModel c;
  c.fx = j.at("fx");
  c.fy = j.at("fy");
  c.cx = j.at("cx");
  c.cy = j.at("cy");
  c.width = j.at("width");
  c.height = j.at("height");
  std::vector<double> r = j.at("rotation");
  OMNI_CHECK(r.size() == 9, "camera rotation must have 9 entries");
  std::copy(r.begin(), r.end(), c.rotation.begin());
  c.translation = vec_from(j.at("translation"));
  c.validate();
  return c;
}

json scene_json(const SceneSpec& s) {
  json j;
  j["seed"] = s.seed;
  j["case"] = s.scene_case;
  json vol;
  vol["H"] = s.volume.H;
  vol["W"] = s.volume.W;
  vol["Z"] = s.volume.Z;
  vol["min"] = vec_json(s.volume.min_corner);
  vol["max"] = vec_json(s.volume.max_corner);
  j["volume"] = vol;
  json prims = json::array();
  for (const auto& p : s.primitives) {
    json pj;
    pj["kind"] = kind_name(p.kind);
    pj["center"] = vec_json(p.center);
    pj["size"] = vec_json(p.size);
    pj["albedo"] = vec_json(p.albedo);
    pj["checker"] = p.checker;
    pj["albedo2"] = vec_json(p.albedo2);
    pj["checker_scale"] = p.checker_scale;
    prims.push_back(pj);
  }
  j["primitives"] = prims;
  return j;
}

SceneSpec scene_from(const json& j) {
  SceneSpec s;
  s.seed = j.at("seed");
  s.scene_case = j.at("case");
  const json& vol = j.at("volume");
  s.volume.H = vol.at("H");
  s.volume.W = vol.at("W");
  s.volume.Z = vol.at("Z");
  s.volume.min_corner = vec_from(vol.at("min"));
  s.volume.max_corner = vec_from(vol.at("max"));
  s.volume.validate();
  for (const json& pj : j.at("primitives")) {
    Primitive p;
    p.kind = kind_from_name(pj.at("kind"));
    p.center = vec_from(pj.at("center"));
    p.size = vec_from(pj.at("size"));
    p.albedo = vec_from(pj.at("albedo"));
    p.checker = pj.at("checker");
    p.albedo2 = vec_from(pj.at("albedo2"));
    p.checker_scale = pj.at("checker_scale");
    s.primitives.push_back(p);
  }
  return s;
}

const char* kGroups[3] = {"input", "novel_a", "novel_b"};

std::string view_base(const char* group, size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_%02zu", group, i);
  return buf;
}

}  // namespace

void write_bin(const std::string& dir, const BinSample& b) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);

  json man;
  man["bin_size"] = b.bin_size;
  man["trajectory"] = vec_json(b.trajectory);
  man["scene"] = scene_json(b.scene);

  const std::vector<ViewData>* groups[3] = {&b.input, &b.novel_a, &b.novel_b};
  for (int g = 0; g < 3; ++g) {
    json views = json::array();
    for (size_t i = 0; i < groups[g]->size(); ++i) {
      const ViewData& v = (*groups[g])[i];
      std::string base = view_base(kGroups[g], i);
      write_ppm(dir + "/" + base + ".ppm", v.rgb, v.cam.width, v.cam.height);
      write_pfm(dir + "/" + base + ".pfm", v.depth, v.cam.width, v.cam.height);
      json vj;
      vj["camera"] = camera_json(v.cam);
      vj["image"] = base + ".ppm";
      vj["depth"] = base + ".pfm";
      views.push_back(vj);
    }
    man[kGroups[g]] = views;
  }

  std::ofstream f(dir + "/manifest.json", std::ios::binary);
  OMNI_CHECK(f.good(), "write_bin: cannot open manifest for writing: " + dir);
  f << man.dump(2) << "\n";
  OMNI_CHECK(f.good(), "write_bin: manifest write failed: " + dir);
}

BinSample read_bin(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json", std::ios::binary);
  OMNI_CHECK(f.good(), "read_bin: cannot open manifest: " + dir);
  json man = json::parse(f);

  BinSample b;
  b.bin_size = man.at("bin_size");
  b.trajectory = vec_from(man.at("trajectory"));
  b.scene = scene_from(man.at("scene"));

  std::vector<ViewData>* groups[3] = {&b.input, &b.novel_a, &b.novel_b};
  for (int g = 0; g < 3; ++g) {
    for (const json& vj : man.at(kGroups[g])) {
      ViewData v;
      v.cam = camera_from(vj.at("camera"));
      int w = 0, h = 0;
      v.rgb = read_ppm(dir + "/" + std::string(vj.at("image")), w, h);
      OMNI_CHECK(w == v.cam.width && h == v.cam.height, "read_bin: image size mismatch");
      v.depth = read_pfm(dir + "/" + std::string(vj.at("depth")), w, h);
      OMNI_CHECK(w == v.cam.width && h == v.cam.height, "read_bin: depth size mismatch");
      groups[g]->push_back(std::move(v));
    }
  }
  return b;
}

}  // namespace omni
