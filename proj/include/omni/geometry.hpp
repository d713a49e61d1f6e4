#pragma once

#include <array>

#include "omni/common.hpp"

namespace omni {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(const Vec3& a, double k) { return {a[0] * k, a[1] * k, a[2] * k}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double norm(const Vec3& a);
Vec3 normalized(const Vec3& a);
Vec3 mat_vec(const Mat3& m, const Vec3& v);
Mat3 mat_mul(const Mat3& a, const Mat3& b);
Mat3 transpose(const Mat3& m);
bool is_rotation(const Mat3& m, double tol = 1e-9);

// Pinhole camera; world_to_cam maps world points into the camera frame
// (x right, y down, z forward): x_cam = R * x_world + t.
struct CameraModel {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 translation{0, 0, 0};
  double near_plane = 0.01;

  Vec3 position() const;  // camera center in world coordinates
  void validate() const;
  CameraModel scaled(double factor) const;  // intrinsics for a downsampled image
};

struct Ray {
  Vec3 origin;
  Vec3 direction;  // unit
};

// Per-pixel (direction, origin x direction); 6 channels, row-major H x W.
struct PluckerMap {
  int width = 0, height = 0;
  std::vector<double> data;  // h*w*6
  const double* at(int y, int x) const { return data.data() + (size_t(y) * width + x) * 6; }
};

struct VolumeSpec {
  int64_t H = 1, W = 1, Z = 1;  // H along world x, W along y, Z along z
  Vec3 min_corner{0, 0, 0};
  Vec3 max_corner{1, 1, 1};

  void validate() const;
  Vec3 voxel_size() const;
  int64_t voxel_count() const { return H * W * Z; }
};

struct Projection {
  double u = 0, v = 0;  // continuous pixel coordinates
  double depth = 0;     // camera-frame z
  bool valid = false;
};

Projection project_point(const CameraModel& cam, const Vec3& p);

// d is distance along the unit ray through pixel center (u,v); d <= 0 throws.
Vec3 unproject_pixel(const CameraModel& cam, double u, double v, double d);

Ray pixel_ray(const CameraModel& cam, double u, double v);

// Converts a camera-frame z depth at pixel (u,v) into distance along the
// unit ray, and back.
double ray_depth_from_z(const CameraModel& cam, double u, double v, double z);
double z_from_ray_depth(const CameraModel& cam, double u, double v, double d);

PluckerMap camera_rays_plucker(const CameraModel& cam);

Vec3 voxel_to_world(const VolumeSpec& spec, int64_t h, int64_t w, int64_t z);

struct PlaneUV {
  double hw[2];  // (h, w) on the HW plane, grid units
  double zh[2];  // (z, h)
  double wz[2];  // (w, z)
};
PlaneUV world_to_plane_uv(const VolumeSpec& spec, const Vec3& p);

bool world_in_volume(const VolumeSpec& spec, const Vec3& p);

std::vector<Vec3> pillar_points(const VolumeSpec& spec, int64_t h, int64_t w, int64_t n);

// Pillars along the dropped axis of the other two planes, used by the
// cross-plane reference construction.
std::vector<Vec3> pillar_points_zh(const VolumeSpec& spec, int64_t z, int64_t h, int64_t n);
std::vector<Vec3> pillar_points_wz(const VolumeSpec& spec, int64_t w, int64_t z, int64_t n);

}  // namespace omni
