#include "omni/gaussians.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace omni {

GaussianSet merge_gaussians(const GaussianSet& gv, const GaussianSet& gp) {
  GaussianSet out;
  out.items.reserve(gv.size() + gp.size());
  out.items.insert(out.items.end(), gv.items.begin(), gv.items.end());
  out.items.insert(out.items.end(), gp.items.begin(), gp.items.end());
  return out;
}

Mat3 rotation_from_quat(const Quat& q) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z),     2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x),     1 - 2 * (x * x + y * y)};
}

Mat3 rotation_quat_partial(const Quat& q, int k) {
  double w = q[0], x = q[1], y = q[2], z = q[3];
  switch (k) {
    case 0:
      return {0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0};
    case 1:
      return {0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x};
    case 2:
      return {-4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y};
    case 3:
      return {-4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0};
    default:
      fail("rotation_quat_partial: bad component");
  }
}

Mat3 covariance_3d(const Vec3& s, const Quat& q) {
  Mat3 r = rotation_from_quat(q);
  // r * diag(s^2) * r^T
  Mat3 rd;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) rd[i * 3 + j] = r[i * 3 + j] * s[j] * s[j];
  return mat_mul(rd, transpose(r));
}

void covariance_3d_backward(const Vec3& s, const Quat& q, const Mat3& d_sigma, Vec3& d_s,
                            Quat& d_q) {
  Mat3 r = rotation_from_quat(q);
  // Symmetrize upstream grad: Sigma = R D R^T with D = diag(s^2).
  Mat3 gs;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) gs[i * 3 + j] = 0.5 * (d_sigma[i * 3 + j] + d_sigma[j * 3 + i]);
  // dL/dR = 2 * gs * R * D
  Mat3 gsr = mat_mul(gs, r);
  Mat3 d_r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) d_r[i * 3 + j] = 2.0 * gsr[i * 3 + j] * s[j] * s[j];
  // dL/dD_jj = (R^T gs R)_jj; ds_j = 2 s_j * that
  Mat3 rtgsr = mat_mul(transpose(r), gsr);
  for (int j = 0; j < 3; ++j) d_s[j] += 2.0 * s[j] * rtgsr[j * 3 + j];
  for (int k = 0; k < 4; ++k) {
    Mat3 dr = rotation_quat_partial(q, k);
    double acc = 0;
    for (int i = 0; i < 9; ++i) acc += d_r[i] * dr[i];
    d_q[k] += acc;
  }
}

namespace {

constexpr double kSH0 = 0.28209479177387814;

float to_f32(double x) { return static_cast<float>(x); }

void put_f32(std::string& buf, float f) {
  char b[4];
  std::memcpy(b, &f, 4);
  buf.append(b, 4);
}

}  // namespace

void export_ply(const GaussianSet& gs, const std::string& path) {
  std::ostringstream header;
  header << "ply\nformat binary_little_endian 1.0\n"
         << "element vertex " << gs.size() << "\n";
  const char* props[] = {"x",       "y",       "z",       "f_dc_0",  "f_dc_1",
                         "f_dc_2",  "opacity", "scale_0", "scale_1", "scale_2",
                         "rot_0",   "rot_1",   "rot_2",   "rot_3"};
  for (const char* p : props) header << "property float " << p << "\n";
  header << "property uchar source\nend_header\n";

  std::string body;
  body.reserve(gs.size() * (14 * 4 + 1));
  for (const auto& g : gs.items) {
    OMNI_CHECK(g.opacity > 0 && g.opacity < 1, "export_ply: opacity must be in (0,1)");
    OMNI_CHECK(g.scale[0] > 0 && g.scale[1] > 0 && g.scale[2] > 0,
               "export_ply: scales must be positive");
    for (int i = 0; i < 3; ++i) put_f32(body, to_f32(g.mean[i]));
    for (int i = 0; i < 3; ++i) put_f32(body, to_f32((g.color[i] - 0.5) / kSH0));
    put_f32(body, to_f32(std::log(g.opacity / (1.0 - g.opacity))));
    for (int i = 0; i < 3; ++i) put_f32(body, to_f32(std::log(g.scale[i])));
    for (int i = 0; i < 4; ++i) put_f32(body, to_f32(g.quat[i]));
    body.push_back(g.source == GaussianSource::pixel ? char(1) : char(0));
  }

  std::ofstream out(path, std::ios::binary);
  OMNI_CHECK(out.good(), "export_ply: cannot open " + path);
  out << header.str();
  out.write(body.data(), std::streamsize(body.size()));
  OMNI_CHECK(out.good(), "export_ply: write failed for " + path);
}

GaussianSet import_ply(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  OMNI_CHECK(in.good(), "import_ply: cannot open " + path);
  std::string line;
  std::getline(in, line);
  OMNI_CHECK(line == "ply", "import_ply: not a PLY file");
  std::getline(in, line);
  OMNI_CHECK(line == "format binary_little_endian 1.0", "import_ply: unsupported format");
  size_t count = 0;
  int float_props = 0;
  bool has_source = false;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "element") {
      std::string name;
      ls >> name >> count;
      OMNI_CHECK(name == "vertex", "import_ply: unexpected element " + name);
    } else if (tok == "property") {
      std::string type, name;
      ls >> type >> name;
      if (type == "float")
        float_props++;
      else if (type == "uchar" && name == "source")
        has_source = true;
      else
        fail("import_ply: unsupported property " + type + " " + name);
    }
  }
  OMNI_CHECK(float_props == 14, "import_ply: expected 14 float properties");

  GaussianSet gs;
  gs.items.resize(count);
  for (auto& g : gs.items) {
    float f[14];
    in.read(reinterpret_cast<char*>(f), sizeof(f));
    unsigned char src = 0;
    if (has_source) in.read(reinterpret_cast<char*>(&src), 1);
    OMNI_CHECK(in.good(), "import_ply: truncated body");
    g.mean = {f[0], f[1], f[2]};
    g.color = {double(f[3]) * kSH0 + 0.5, double(f[4]) * kSH0 + 0.5, double(f[5]) * kSH0 + 0.5};
    g.opacity = 1.0 / (1.0 + std::exp(-double(f[6])));
    g.scale = {std::exp(double(f[7])), std::exp(double(f[8])), std::exp(double(f[9]))};
    g.quat = {f[10], f[11], f[12], f[13]};
    g.source = src ? GaussianSource::pixel : GaussianSource::volume;
  }
  return gs;
}

}  // namespace omni
