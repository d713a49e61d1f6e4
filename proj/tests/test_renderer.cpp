#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "omni/optim.hpp"
#include "omni/renderer.hpp"

using namespace omni;

namespace {

Quat random_quat(Rng& rng) {
  Quat q{rng.normal(), rng.normal(), rng.normal(), rng.normal()};
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (auto& c : q) c /= n;
  return q;
}

CameraModel test_camera(int w = 32, int h = 32, double f = 40) {
  CameraModel cam;
  cam.fx = cam.fy = f;
  cam.width = w;
  cam.height = h;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  return cam;
}

// Random scene tuned so per-pixel opacity stacks stay far from the early
// termination threshold (keeps the tiled/brute comparison meaningful).
GaussianSet random_scene(Rng& rng, int n, const CameraModel& cam) {
  GaussianSet gs;
  for (int i = 0; i < n; ++i) {
    Gaussian3D g;
    double z = rng.uniform(2.0, 10.0);
    double u = rng.uniform(-4.0, cam.width + 4.0);
    double v = rng.uniform(-4.0, cam.height + 4.0);
    g.mean = {(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z};
    g.opacity = rng.uniform(0.02, 0.3);
    double base = rng.uniform(0.05, 0.3) * z / cam.fx * 10.0;  // ~0.5-3 px on screen
    g.scale = {base * rng.uniform(0.5, 1.5), base * rng.uniform(0.5, 1.5),
               base * rng.uniform(0.5, 1.5)};
    g.quat = random_quat(rng);
    g.color = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    gs.items.push_back(g);
  }
  return gs;
}

double max_abs_diff(const RenderOutput& a, const RenderOutput& b) {
  double m = 0;
  for (size_t i = 0; i < a.rgb.size(); ++i) m = std::max(m, std::fabs(a.rgb[i] - b.rgb[i]));
  for (size_t i = 0; i < a.depth.size(); ++i) m = std::max(m, std::fabs(a.depth[i] - b.depth[i]));
  for (size_t i = 0; i < a.alpha.size(); ++i) m = std::max(m, std::fabs(a.alpha[i] - b.alpha[i]));
  return m;
}

bool bit_identical(const RenderOutput& a, const RenderOutput& b) {
  return a.rgb == b.rgb && a.depth == b.depth && a.alpha == b.alpha;
}

}  // namespace

TEST_CASE("covariance_3d basics") {
  Mat3 s = covariance_3d({1, 2, 3}, {1, 0, 0, 0});
  Mat3 want{1, 0, 0, 0, 4, 0, 0, 0, 9};
  for (int i = 0; i < 9; ++i) CHECK(s[i] == doctest::Approx(want[i]).epsilon(1e-12));

  Rng rng(5);
  for (int t = 0; t < 20; ++t) {
    Quat q = random_quat(rng);
    double a = rng.uniform(0.1, 3.0);
    Mat3 iso = covariance_3d({a, a, a}, q);
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        CHECK(iso[i * 3 + j] == doctest::Approx(i == j ? a * a : 0.0).epsilon(1e-10));
  }
}

TEST_CASE("covariance_3d gradient matches finite differences") {
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    Vec3 s{rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0), rng.uniform(0.2, 2.0)};
    Quat q = random_quat(rng);
    Mat3 probe;
    for (auto& p : probe) p = rng.normal();
    auto loss = [&](const Vec3& ss, const Quat& qq) {
      Mat3 sig = covariance_3d(ss, qq);
      double l = 0;
      for (int i = 0; i < 9; ++i) l += probe[i] * sig[i];
      return l;
    };
    Vec3 ds{0, 0, 0};
    Quat dq{0, 0, 0, 0};
    covariance_3d_backward(s, q, probe, ds, dq);
    double h = 1e-6;
    for (int k = 0; k < 3; ++k) {
      Vec3 sp = s, sm = s;
      sp[k] += h;
      sm[k] -= h;
      double fd = (loss(sp, q) - loss(sm, q)) / (2 * h);
      CHECK(std::fabs(fd - ds[k]) / std::max({std::fabs(fd), std::fabs(ds[k]), 1e-12}) < 1e-7);
    }
    for (int k = 0; k < 4; ++k) {
      Quat qp = q, qm = q;
      qp[k] += h;
      qm[k] -= h;
      double fd = (loss(s, qp) - loss(s, qm)) / (2 * h);
      CHECK(std::fabs(fd - dq[k]) / std::max({std::fabs(fd), std::fabs(dq[k]), 1e-12}) < 1e-7);
    }
  }
}

TEST_CASE("project_splat on-axis isotropic splat") {
  CameraModel cam = test_camera(32, 32, 100);
  Gaussian3D g;
  g.mean = {0, 0, 5};
  g.scale = {0.1, 0.1, 0.1};
  auto sp = project_splat(g, cam, /*cov_regularizer=*/0.0);
  REQUIRE(sp.valid);
  CHECK(sp.mean2d[0] == doctest::Approx(16.0));
  CHECK(sp.mean2d[1] == doctest::Approx(16.0));
  CHECK(sp.depth == doctest::Approx(5.0));
  double expected = std::pow(100.0 * 0.1 / 5.0, 2);  // (f s / z)^2
  CHECK(sp.cov2d[0] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(sp.cov2d[2] == doctest::Approx(expected).epsilon(1e-9));
  CHECK(std::fabs(sp.cov2d[1]) < 1e-9);

  g.mean = {0, 0, -5};
  CHECK_FALSE(project_splat(g, cam).valid);
}

TEST_CASE("projected covariance is SPD over random draws") {
  Rng rng(23);
  CameraModel cam = test_camera(64, 48, 60);
  int checked = 0;
  for (int t = 0; t < 10000; ++t) {
    Gaussian3D g;
    g.mean = {rng.uniform(-10, 10), rng.uniform(-10, 10), rng.uniform(-5, 30)};
    g.scale = {rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0), rng.uniform(0.01, 2.0)};
    g.quat = random_quat(rng);
    auto sp = project_splat(g, cam);
    if (!sp.valid) continue;
    checked++;
    double det = sp.cov2d[0] * sp.cov2d[2] - sp.cov2d[1] * sp.cov2d[1];
    CHECK(sp.cov2d[0] > 0);
    CHECK(det > 0);
  }
  CHECK(checked > 2000);
}

TEST_CASE("render of the empty set is background") {
  CameraModel cam = test_camera();
  RenderSettings st;
  st.background = {0.2, 0.4, 0.6};
  auto out = render(GaussianSet{}, cam, st);
  for (int i = 0; i < cam.width * cam.height; ++i) {
    CHECK(out.rgb[i * 3 + 0] == 0.2);
    CHECK(out.rgb[i * 3 + 1] == 0.4);
    CHECK(out.rgb[i * 3 + 2] == 0.6);
    CHECK(out.alpha[i] == 0.0);
    CHECK(out.depth[i] == 0.0);
  }
}

TEST_CASE("single near-opaque splat at pixel center") {
  CameraModel cam = test_camera(32, 32, 40);
  // aim the splat exactly at the center of pixel (16,16)
  Gaussian3D g;
  double z = 4.0;
  g.mean = {(16.5 - cam.cx) * z / cam.fx, (16.5 - cam.cy) * z / cam.fy, z};
  g.opacity = 1.0 - 1e-9;
  g.scale = {0.5, 0.5, 0.5};
  g.color = {0.8, 0.1, 0.4};
  GaussianSet gs;
  gs.items.push_back(g);
  auto out = render(gs, cam);
  size_t pix = 16 * 32 + 16;
  CHECK(out.rgb[pix * 3 + 0] == doctest::Approx(0.999 * 0.8).epsilon(1e-6));
  CHECK(out.rgb[pix * 3 + 1] == doctest::Approx(0.999 * 0.1).epsilon(1e-6));
  CHECK(out.rgb[pix * 3 + 2] == doctest::Approx(0.999 * 0.4).epsilon(1e-6));
  CHECK(out.depth[pix] == doctest::Approx(z).epsilon(1e-9));
  CHECK(out.alpha[pix] == doctest::Approx(0.999).epsilon(1e-6));
}

TEST_CASE("grazing off-frustum splats are culled, near-edge splats are kept") {
  CameraModel cam = test_camera(32, 32, 40);
  // Far to the side at a grazing camera-z: physically invisible, but the
  // perspective linearization would inflate its footprint over the whole
  // image if it were not frustum-culled.
  Gaussian3D g;
  g.mean = {60.0, 0.0, 0.3};
  g.opacity = 0.95;
  g.scale = {2.0, 2.0, 2.0};
  GaussianSet gs;
  gs.items.push_back(g);
  auto out = render(gs, cam);
  for (double a : out.alpha) CHECK(a == 0.0);
  CHECK_FALSE(project_splat(g, cam).valid);
  CHECK(bit_identical(render(gs, cam), brute_force_render(gs, cam)));

  // A splat just outside the image edge still contributes its tail.
  Gaussian3D e;
  double z = 4.0;
  e.mean = {(33.0 - cam.cx) * z / cam.fx, 0.0, z};
  e.opacity = 0.9;
  e.scale = {0.3, 0.3, 0.3};
  GaussianSet es;
  es.items.push_back(e);
  auto edge = render(es, cam);
  double total = 0;
  for (double a : edge.alpha) total += a;
  CHECK(total > 0.0);
}

TEST_CASE("tiled render matches brute force on random scenes") {
  Rng rng(77);
  CameraModel cam = test_camera(32, 32, 40);
  double worst = 0;
  for (int scene = 0; scene < 100; ++scene) {
    GaussianSet gs = random_scene(rng, 1 + int(rng.randint(64)), cam);
    RenderSettings st;
    st.background = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    worst = std::max(worst, max_abs_diff(render(gs, cam, st), brute_force_render(gs, cam, st)));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("thresholds disabled makes tiled and brute force bit-exact") {
  Rng rng(78);
  CameraModel cam = test_camera(32, 32, 40);
  for (int scene = 0; scene < 20; ++scene) {
    GaussianSet gs = random_scene(rng, 48, cam);
    RenderSettings st = RenderSettings{}.with_thresholds_disabled();
    st.background = {0.1, 0.2, 0.3};
    CHECK(bit_identical(render(gs, cam, st), brute_force_render(gs, cam, st)));
  }
}

TEST_CASE("compositing is invariant to input order") {
  Rng rng(79);
  CameraModel cam = test_camera(32, 32, 40);
  GaussianSet gs = random_scene(rng, 32, cam);
  GaussianSet shuffled = gs;
  for (size_t i = shuffled.items.size(); i > 1; --i)
    std::swap(shuffled.items[i - 1], shuffled.items[size_t(rng.randint(int64_t(i)))]);
  CHECK(bit_identical(render(gs, cam), render(shuffled, cam)));
  // repeated renders of the same scene are bit-identical (parallel determinism)
  CHECK(bit_identical(render(gs, cam), render(gs, cam)));
}

TEST_CASE("energy bounds on random scenes") {
  Rng rng(80);
  CameraModel cam = test_camera(32, 32, 40);
  RenderSettings st;
  st.background = {0.5, 0.5, 0.5};
  for (int scene = 0; scene < 10; ++scene) {
    auto out = render(random_scene(rng, 40, cam), cam, st);
    for (double v : out.rgb) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0 + 1e-12);
    }
    for (double v : out.alpha) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("near opaque splat occludes farther splats") {
  CameraModel cam = test_camera(32, 32, 40);
  Gaussian3D near_g, far_g;
  double zn = 3.0, zf = 8.0;
  near_g.mean = {(16.5 - cam.cx) * zn / cam.fx, (16.5 - cam.cy) * zn / cam.fy, zn};
  near_g.opacity = 1.0 - 1e-9;
  near_g.scale = {2.0, 2.0, 2.0};
  near_g.color = {0, 1, 0};
  far_g.mean = {(16.5 - cam.cx) * zf / cam.fx, (16.5 - cam.cy) * zf / cam.fy, zf};
  far_g.opacity = 0.9;
  far_g.scale = {2.0, 2.0, 2.0};
  far_g.color = {1, 0, 0};
  GaussianSet gs;
  gs.items.push_back(far_g);
  gs.items.push_back(near_g);
  auto out = render(gs, cam);
  size_t pix = 16 * 32 + 16;
  CHECK(out.rgb[pix * 3 + 0] < 2e-3);  // red leakage bounded by the clip threshold
  CHECK(out.rgb[pix * 3 + 1] == doctest::Approx(0.999).epsilon(1e-3));
  CHECK(out.depth[pix] == doctest::Approx(zn).epsilon(1e-2));
}

TEST_CASE("render gradients match finite differences") {
  Rng rng(91);
  const int n = 8;
  CameraModel cam = test_camera(24, 24, 30);
  ParameterStore ps;
  std::vector<double> means, opac, scales, quats, colors;
  for (int i = 0; i < n; ++i) {
    double z = rng.uniform(2.0, 8.0);
    double u = rng.uniform(4.0, 20.0), v = rng.uniform(4.0, 20.0);
    means.push_back((u - cam.cx) * z / cam.fx);
    means.push_back((v - cam.cy) * z / cam.fy);
    means.push_back(z);
    opac.push_back(rng.uniform(-1.0, 0.5));  // sigmoid -> (0.27, 0.62)
    for (int k = 0; k < 3; ++k) scales.push_back(rng.uniform(-1.0, 0.5));
    Quat q = random_quat(rng);
    for (int k = 0; k < 4; ++k) quats.push_back(q[k]);
    for (int k = 0; k < 3; ++k) colors.push_back(rng.uniform(-1.0, 1.0));
  }
  Tensor tm = ps.add("means", {n, 3}, means);
  Tensor to = ps.add("opac", {n, 1}, opac);
  Tensor ts = ps.add("scales", {n, 3}, scales);
  Tensor tq = ps.add("quats", {n, 4}, quats);
  Tensor tc = ps.add("colors", {n, 3}, colors);

  std::vector<double> probe_v(size_t(cam.width) * cam.height * 5);
  for (auto& p : probe_v) p = rng.uniform(-1, 1);
  Tensor probe = Tensor::from({cam.height, cam.width, 5}, probe_v);

  RenderSettings st;
  st.skip_alpha = 0;  // keep the loss smooth for the finite-difference oracle
  st.stop_transmittance = 0;
  st.cull_tiles = false;
  st.background = {0.3, 0.3, 0.3};

  auto loss = [&]() {
    GaussianTensors gt;
    gt.means = tm;
    gt.opacities = sigmoid(to);
    gt.scales = mul(softplus(ts), 0.4);
    gt.quats = tq;
    gt.colors = sigmoid(tc);
    return sum(mul(render_diff(gt, cam, st), probe));
  };
  auto rep = gradient_check(loss, ps, 1e-5, 1e-4);
  for (const auto& e : rep.entries)
    if (!e.ok) MESSAGE(e.name << " max_rel_err=" << e.max_rel_err);
  CHECK(rep.ok);
  CHECK(rep.max_rel_err < 1e-4);
}

TEST_CASE("ply export/import round trip") {
  Rng rng(101);
  GaussianSet gs;
  for (int i = 0; i < 17; ++i) {
    Gaussian3D g;
    g.mean = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(-5, 5)};
    g.opacity = rng.uniform(0.05, 0.95);
    g.scale = {rng.uniform(0.01, 2), rng.uniform(0.01, 2), rng.uniform(0.01, 2)};
    g.quat = random_quat(rng);
    g.color = {rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 1)};
    g.source = (i % 2) ? GaussianSource::pixel : GaussianSource::volume;
    gs.items.push_back(g);
  }
  const std::string p1 = "test_rt1.ply", p2 = "test_rt2.ply";
  export_ply(gs, p1);
  GaussianSet back = import_ply(p1);
  REQUIRE(back.size() == gs.size());
  for (size_t i = 0; i < gs.size(); ++i) {
    const auto& a = gs.items[i];
    const auto& b = back.items[i];
    CHECK(norm(a.mean - b.mean) < 1e-5);
    CHECK(std::fabs(a.opacity - b.opacity) < 1e-5);
    CHECK(norm(a.scale - b.scale) < 1e-5);
    for (int k = 0; k < 4; ++k) CHECK(std::fabs(a.quat[k] - b.quat[k]) < 1e-6);
    CHECK(norm(a.color - b.color) < 1e-6);
    CHECK(a.source == b.source);
  }
  // bit-exact: a second export of the imported set reproduces the same bytes
  export_ply(back, p2);
  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(s1 == s2);
  CHECK(s1.find("element vertex 17") != std::string::npos);
  std::remove(p1.c_str());
  std::remove(p2.c_str());

  // empty set round trip
  export_ply(GaussianSet{}, p1);
  CHECK(import_ply(p1).size() == 0);
  std::remove(p1.c_str());
}
