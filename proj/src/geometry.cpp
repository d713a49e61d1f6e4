#include "omni/geometry.hpp"

#include <cmath>

namespace omni {

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Vec3 normalized(const Vec3& a) {
  double n = norm(a);
  OMNI_CHECK(n > 0, "normalizing zero vector");
  return a * (1.0 / n);
}

Vec3 mat_vec(const Mat3& m, const Vec3& v) {
  return {m[0] * v[0] + m[1] * v[1] + m[2] * v[2], m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
          m[6] * v[0] + m[7] * v[1] + m[8] * v[2]};
}

Mat3 mat_mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0;
      for (int k = 0; k < 3; ++k) s += a[i * 3 + k] * b[k * 3 + j];
      r[i * 3 + j] = s;
    }
  return r;
}

Mat3 transpose(const Mat3& m) {
  return {m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]};
}

bool is_rotation(const Mat3& m, double tol) {
  Mat3 mtm = mat_mul(transpose(m), m);
  Mat3 eye{1, 0, 0, 0, 1, 0, 0, 0, 1};
  for (int i = 0; i < 9; ++i)
    if (std::fabs(mtm[i] - eye[i]) > tol) return false;
  double det = m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
  return std::fabs(det - 1.0) <= tol;
}

Vec3 CameraModel::position() const {
  Vec3 mt{-translation[0], -translation[1], -translation[2]};
  return mat_vec(transpose(rotation), mt);
}

void CameraModel::validate() const {
  OMNI_CHECK(fx > 0 && fy > 0, "camera focal lengths must be positive");
  OMNI_CHECK(width >= 1 && height >= 1, "camera image dims must be >= 1");
  OMNI_CHECK(is_rotation(rotation), "camera rotation not orthonormal");
}

CameraModel CameraModel::scaled(double f) const {
  CameraModel c = *this;
  c.fx /= f;
  c.fy /= f;
  c.cx /= f;
  c.cy /= f;
  c.width = int(std::llround(width / f));
  c.height = int(std::llround(height / f));
  return c;
}

Projection project_point(const CameraModel& cam, const Vec3& p) {
  Vec3 pc = mat_vec(cam.rotation, p) + cam.translation;
  Projection out;
  out.depth = pc[2];
  if (pc[2] <= cam.near_plane) return out;  // valid stays false
  out.u = cam.fx * pc[0] / pc[2] + cam.cx;
  out.v = cam.fy * pc[1] / pc[2] + cam.cy;
  out.valid = out.u >= 0 && out.u <= cam.width && out.v >= 0 && out.v <= cam.height;
  return out;
}

Ray pixel_ray(const CameraModel& cam, double u, double v) {
  Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  Vec3 dir_world = mat_vec(transpose(cam.rotation), dir_cam);
  return Ray{cam.position(), normalized(dir_world)};
}

Vec3 unproject_pixel(const CameraModel& cam, double u, double v, double d) {
  OMNI_CHECK(d > 0, "unproject_pixel requires d > 0");
  Ray r = pixel_ray(cam, u, v);
  return r.origin + r.direction * d;
}

double ray_depth_from_z(const CameraModel& cam, double u, double v, double z) {
  Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  return z * norm(dir_cam);
}

double z_from_ray_depth(const CameraModel& cam, double u, double v, double d) {
  Vec3 dir_cam{(u - cam.cx) / cam.fx, (v - cam.cy) / cam.fy, 1.0};
  return d / norm(dir_cam);
}

PluckerMap camera_rays_plucker(const CameraModel& cam) {
  PluckerMap map;
  map.width = cam.width;
  map.height = cam.height;
  map.data.resize(size_t(cam.width) * cam.height * 6);
  Vec3 o = cam.position();
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) {
      Ray r = pixel_ray(cam, x + 0.5, y + 0.5);
      Vec3 m = cross(o, r.direction);
      double* d = map.data.data() + (size_t(y) * cam.width + x) * 6;
      d[0] = r.direction[0];
      d[1] = r.direction[1];
      d[2] = r.direction[2];
      d[3] = m[0];
      d[4] = m[1];
      d[5] = m[2];
    }
  return map;
}

void VolumeSpec::validate() const {
  OMNI_CHECK(H >= 1 && W >= 1 && Z >= 1, "volume dims must be >= 1");
  for (int a = 0; a < 3; ++a)
    OMNI_CHECK(max_corner[a] > min_corner[a], "volume bounds: max must exceed min");
}

Vec3 VolumeSpec::voxel_size() const {
  return {(max_corner[0] - min_corner[0]) / double(H),
          (max_corner[1] - min_corner[1]) / double(W),
          (max_corner[2] - min_corner[2]) / double(Z)};
}

Vec3 voxel_to_world(const VolumeSpec& spec, int64_t h, int64_t w, int64_t z) {
  OMNI_CHECK(h >= 0 && h < spec.H && w >= 0 && w < spec.W && z >= 0 && z < spec.Z,
             "voxel index out of range");
  Vec3 vs = spec.voxel_size();
  return {spec.min_corner[0] + (double(h) + 0.5) * vs[0],
          spec.min_corner[1] + (double(w) + 0.5) * vs[1],
          spec.min_corner[2] + (double(z) + 0.5) * vs[2]};
}

PlaneUV world_to_plane_uv(const VolumeSpec& spec, const Vec3& p) {
  Vec3 vs = spec.voxel_size();
  double hc = (p[0] - spec.min_corner[0]) / vs[0] - 0.5;
  double wc = (p[1] - spec.min_corner[1]) / vs[1] - 0.5;
  double zc = (p[2] - spec.min_corner[2]) / vs[2] - 0.5;
  PlaneUV uv;
  uv.hw[0] = hc;
  uv.hw[1] = wc;
  uv.zh[0] = zc;
  uv.zh[1] = hc;
  uv.wz[0] = wc;
  uv.wz[1] = zc;
  return uv;
}

bool world_in_volume(const VolumeSpec& spec, const Vec3& p) {
  for (int a = 0; a < 3; ++a)
    if (p[a] < spec.min_corner[a] || p[a] > spec.max_corner[a]) return false;
  return true;
}

std::vector<Vec3> pillar_points(const VolumeSpec& spec, int64_t h, int64_t w, int64_t n) {
  OMNI_CHECK(n >= 1, "pillar_points requires n >= 1");
  Vec3 vs = spec.voxel_size();
  double x = spec.min_corner[0] + (double(h) + 0.5) * vs[0];
  double y = spec.min_corner[1] + (double(w) + 0.5) * vs[1];
  double zext = spec.max_corner[2] - spec.min_corner[2];
  std::vector<Vec3> pts(n);
  for (int64_t i = 0; i < n; ++i)
    pts[i] = {x, y, spec.min_corner[2] + (double(i) + 0.5) * zext / double(n)};
  return pts;
}

std::vector<Vec3> pillar_points_zh(const VolumeSpec& spec, int64_t z, int64_t h, int64_t n) {
  OMNI_CHECK(n >= 1, "pillar_points requires n >= 1");
  Vec3 vs = spec.voxel_size();
  double x = spec.min_corner[0] + (double(h) + 0.5) * vs[0];
  double zz = spec.min_corner[2] + (double(z) + 0.5) * vs[2];
  double yext = spec.max_corner[1] - spec.min_corner[1];
  std::vector<Vec3> pts(n);
  for (int64_t i = 0; i < n; ++i)
    pts[i] = {x, spec.min_corner[1] + (double(i) + 0.5) * yext / double(n), zz};
  return pts;
}

std::vector<Vec3> pillar_points_wz(const VolumeSpec& spec, int64_t w, int64_t z, int64_t n) {
  OMNI_CHECK(n >= 1, "pillar_points requires n >= 1");
  Vec3 vs = spec.voxel_size();
  double y = spec.min_corner[1] + (double(w) + 0.5) * vs[1];
  double zz = spec.min_corner[2] + (double(z) + 0.5) * vs[2];
  double xext = spec.max_corner[0] - spec.min_corner[0];
  std::vector<Vec3> pts(n);
  for (int64_t i = 0; i < n; ++i)
    pts[i] = {spec.min_corner[0] + (double(i) + 0.5) * xext / double(n), y, zz};
  return pts;
}

}  // namespace omni
