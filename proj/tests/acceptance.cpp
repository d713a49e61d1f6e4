// Acceptance suite: eight end-to-end criteria, one pass/fail line each.
// Run with no arguments for the full suite, or pass criterion names
// ("P1", "P4", ...) to run a subset. Exit code 0 iff every selected
// criterion passes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "omni/train.hpp"

using namespace omni;
using Clock = std::chrono::steady_clock;

namespace {

double elapsed_s(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------- P1 ----
// Gradient integrity: every differentiable op, the renderer and the full
// composed training loss agree with 64-bit central differences.

struct P1State {
  bool ok = true;
  double worst_ops = 0, worst_render = 0, worst_loss = 0;
  std::string first_fail;
};

void p1_check(P1State& st, const std::string& label, const std::function<Tensor()>& f,
              ParameterStore& ps, double step, double tol, double& worst) {
  GradCheckReport rep = gradient_check(f, ps, step, tol, -1, 7);
  worst = std::max(worst, rep.max_rel_err);
  if (!rep.ok && st.first_fail.empty()) st.first_fail = label;
  st.ok = st.ok && rep.ok;
}

void p1_ops(P1State& st) {
  const double kStep = 1e-5, kTol = 1e-6;
  Rng rng(11);
  {  // elementwise
    ParameterStore ps;
    ps.add("x", {3, 4}, init_normal(rng, 0.6, 12));
    ps.add("y", {3, 4}, init_normal(rng, 0.6, 12));
    auto f = [&]() {
      Tensor x = ps.get("x"), y = ps.get("y");
      Tensor a = mul(sigmoid(x), softplus(y));
      Tensor b = sub(tanh(x), mul(exp(mul(y, 0.3)), 0.2));
      Tensor c = add(abs(add(x, 0.7)), silu(y));
      return add(mean(add(a, b)), mean(c));
    };
    p1_check(st, "elementwise", f, ps, kStep, kTol, st.worst_ops);
  }
  {  // matmul / linear
    ParameterStore ps;
    ps.add("a", {4, 3}, init_normal(rng, 0.5, 12));
    ps.add("b", {3, 5}, init_normal(rng, 0.5, 15));
    ps.add("w", {5, 2}, init_normal(rng, 0.5, 10));
    ps.add("bias", {2}, init_normal(rng, 0.5, 2));
    ps.add("m", {4, 5}, init_normal(rng, 0.5, 20));
    auto f = [&]() {
      Tensor h = matmul(ps.get("a"), ps.get("b"));
      Tensor o = linear(h, ps.get("w"), ps.get("bias"));
      return add(mean(o), mean(matmul_nt(ps.get("m"), ps.get("b"))));
    };
    p1_check(st, "matmul", f, ps, kStep, kTol, st.worst_ops);
  }
  {  // conv / pool / upsample
    ParameterStore ps;
    ps.add("x", {8, 8, 2}, init_normal(rng, 0.5, 128));
    ps.add("w1", {3, 3, 2, 3}, init_normal(rng, 0.3, 54));
    ps.add("b1", {3}, init_normal(rng, 0.3, 3));
    ps.add("w2", {3, 3, 3, 2}, init_normal(rng, 0.3, 54));
    ps.add("b2", {2}, init_normal(rng, 0.3, 2));
    auto f = [&]() {
      Tensor y = conv2d(ps.get("x"), ps.get("w1"), ps.get("b1"), 1, Pad::same);
      Tensor y2 = conv2d(y, ps.get("w2"), ps.get("b2"), 2, Pad::valid);
      Tensor z = avg_pool2d(y, 2);
      Tensor un = upsample_nearest(z, 2);
      Tensor ub = upsample_bilinear(z, 7, 5);
      return add(add(mean(un), mean(ub)), mean(y2));
    };
    p1_check(st, "conv", f, ps, kStep, kTol, st.worst_ops);
  }
  {  // norms / softmax
    ParameterStore ps;
    ps.add("x", {5, 6}, init_normal(rng, 0.8, 30));
    ps.add("g", {6}, init_normal(rng, 0.3, 6));
    ps.add("b", {6}, init_normal(rng, 0.3, 6));
    std::vector<double> pv(30);
    Rng prng(4);
    for (double& v : pv) v = prng.uniform(-1, 1);
    Tensor probe = Tensor::from({5, 6}, pv);
    auto f = [&]() {
      Tensor n = layer_norm(ps.get("x"), ps.get("g"), ps.get("b"));
      // softmax rows sum to one, so probe-weight it to keep gradients alive
      return add(mean(mul(softmax_rows(n), probe)),
                 mean(normalize_rows(add(ps.get("x"), 2.0))));
    };
    p1_check(st, "norm", f, ps, kStep, kTol, st.worst_ops);
  }
  {  // shape ops and reductions
    ParameterStore ps;
    ps.add("a", {3, 4}, init_normal(rng, 0.5, 12));
    ps.add("b", {2, 4}, init_normal(rng, 0.5, 8));
    ps.add("c", {5, 2}, init_normal(rng, 0.5, 10));
    auto f = [&]() {
      Tensor cat = concat_rows({ps.get("a"), ps.get("b")});             // [5,4]
      Tensor wide = concat_cols({cat, ps.get("c")});                    // [5,6]
      Tensor s = slice_cols(slice_rows(wide, 1, 5), 1, 5);              // [4,4]
      Tensor g = gather_rows(s, {0, 2, 1, 2});
      Tensor r = reshape(g, {2, 8});
      Tensor tgt = Tensor::full({2, 8}, 0.25);
      return add(add(mse(r, tgt), l1(r, tgt)), add(sum(mul(r, 0.01)), mean(r)));
    };
    p1_check(st, "shape", f, ps, kStep, kTol, st.worst_ops);
  }
  {  // scatter / bilinear sample / weighted pool
    ParameterStore ps;
    ps.add("x", {6, 3}, init_normal(rng, 0.5, 18));
    ps.add("grid", {4, 5, 3}, init_normal(rng, 0.5, 60));
    ps.add("vals", {6, 3}, init_normal(rng, 0.5, 18));
    ps.add("wts", {3, 2}, init_normal(rng, 0.5, 6));
    std::vector<double> cv = {0.3, 0.7, 1.4, 3.1, 2.6, 0.2, 1.9, 2.2, 0.8, 3.9, 2.5, 1.5};
    Tensor coords = Tensor::from({6, 2}, cv);
    auto f = [&]() {
      Tensor sc = scatter_mean(ps.get("x"), {0, 1, -1, 1, 0, 2}, 3);
      Tensor bs = bilinear_sample_2d(ps.get("grid"), coords);
      Tensor wp = weighted_pool(ps.get("vals"), ps.get("wts"));
      return add(add(mean(sc), mean(bs)), mean(wp));
    };
    p1_check(st, "gather-ops", f, ps, kStep, kTol, st.worst_ops);
  }
}

// Registers a small parameterized Gaussian group; fields are activated
// inside f so every check stays in well-conditioned ranges.
struct ParamSplats {
  std::string prefix;
  GaussianTensors activated(const ParameterStore& ps) const {
    GaussianTensors g;
    g.means = ps.get(prefix + ".means");
    g.opacities = sigmoid(ps.get(prefix + ".opac"));
    g.scales = add(mul(sigmoid(ps.get(prefix + ".scales")), 0.4), 0.05);
    g.quats = ps.get(prefix + ".quats");
    g.colors = sigmoid(ps.get(prefix + ".colors"));
    return g;
  }
};

ParamSplats add_splat_params(ParameterStore& ps, Rng& rng, const std::string& prefix, int64_t n,
                             double z0, double spread) {
  std::vector<double> means;
  for (int64_t i = 0; i < n; ++i) {
    means.push_back(rng.uniform(-spread, spread));
    means.push_back(rng.uniform(-spread, spread));
    means.push_back(z0 + rng.uniform());
  }
  ps.add(prefix + ".means", {n, 3}, means);
  ps.add(prefix + ".opac", {n, 1}, init_normal(rng, 0.5, n));
  ps.add(prefix + ".scales", {n, 3}, init_normal(rng, 0.2, 3 * n));
  ps.add(prefix + ".quats", {n, 4}, init_normal(rng, 0.4, 4 * n));
  ps.add(prefix + ".colors", {n, 3}, init_normal(rng, 0.5, 3 * n));
  return ParamSplats{prefix};
}

CameraModel simple_camera(int w, int h, double fx) {
  CameraModel cam;
  cam.width = w;
  cam.height = h;
  cam.fx = cam.fy = fx;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  return cam;
}

void p1_renderer(P1State& st) {
  ParameterStore ps;
  Rng rng(21);
  ParamSplats sp = add_splat_params(ps, rng, "g", 6, 1.5, 0.5);
  CameraModel cam = simple_camera(16, 12, 14.0);
  RenderSettings rs = RenderSettings().with_thresholds_disabled();
  std::vector<double> tgt(16 * 12 * 5);
  for (double& v : tgt) v = rng.uniform();
  Tensor target = Tensor::from({16 * 12, 5}, tgt);
  auto f = [&]() {
    return mse(reshape(render_diff(sp.activated(ps), cam, rs), {16 * 12, 5}), target);
  };
  p1_check(st, "renderer", f, ps, 1e-5, 1e-4, st.worst_render);
}

void p1_full_loss(P1State& st) {
  ParameterStore ps;
  Rng rng(31);
  ParamSplats gp = add_splat_params(ps, rng, "gp", 6, 1.4, 0.6);
  ParamSplats gv = add_splat_params(ps, rng, "gv", 6, 1.8, 0.8);
  CameraModel cam_novel = simple_camera(12, 10, 11.0);
  CameraModel cam_in = simple_camera(12, 10, 11.0);
  cam_in.translation = {0.1, -0.05, 0.0};
  const int64_t r = 12 * 10;
  RenderSettings rs = RenderSettings().with_thresholds_disabled();

  std::vector<double> tgt_full(size_t(r) * 3, 0.0), tgt_vol(size_t(r) * 3, 0.0), dp(size_t(r), 0.0);
  for (double& v : tgt_full) v = rng.uniform();
  for (double& v : tgt_vol) v = rng.uniform();
  for (double& v : dp) v = 1.0 + rng.uniform();
  VolumeMaskSet masks;
  masks.width = 12;
  masks.height = 10;
  masks.mask.emplace_back(size_t(r));
  masks.depth.push_back(dp);
  for (int64_t i = 0; i < r; ++i) masks.mask[0][size_t(i)] = (i % 4 == 0) ? 0.0 : 1.0;

  LossWeights w;  // the training weights (0.05, 1.0, 0.05, 0.01)
  auto f = [&]() {
    GaussianTensors tp = gp.activated(ps);
    GaussianTensors tv = gv.activated(ps);
    GaussianTensors all;
    all.means = concat_rows({tv.means, tp.means});
    all.opacities = concat_rows({tv.opacities, tp.opacities});
    all.scales = concat_rows({tv.scales, tp.scales});
    all.quats = concat_rows({tv.quats, tp.quats});
    all.colors = concat_rows({tv.colors, tp.colors});

    LossInputs in;
    in.width = 12;
    in.height = 10;
    Tensor ff = reshape(render_diff(all, cam_novel, rs), {r, 5});
    in.full_rgb.push_back(slice_cols(ff, 0, 3));
    in.full_target.push_back(Tensor::from({r, 3}, tgt_full));
    Tensor fv = reshape(render_diff(tv, cam_in, rs), {r, 5});
    in.vol_rgb.push_back(slice_cols(fv, 0, 3));
    in.vol_target.push_back(Tensor::from({r, 3}, tgt_vol));
    in.vol_depth.push_back(slice_cols(fv, 3, 4));
    in.gp_depth.push_back(Tensor::from({r, 1}, dp));
    return total_loss(in, masks, w).loss;
  };
  p1_check(st, "full-loss", f, ps, 1e-5, 1e-4, st.worst_loss);
}

std::pair<bool, std::string> criterion_p1() {
  P1State st;
  p1_ops(st);
  p1_renderer(st);
  p1_full_loss(st);
  std::ostringstream os;
  os << "max rel err: ops " << st.worst_ops << ", renderer " << st.worst_render << ", loss "
     << st.worst_loss;
  if (!st.ok) os << "; first failing group: " << st.first_fail;
  return {st.ok, os.str()};
}

// ---------------------------------------------------------------- P2 ----
// Tiled renderer vs brute-force reference on random scenes.

std::pair<bool, std::string> criterion_p2() {
  Rng rng(99);
  RenderSettings exact = RenderSettings().with_thresholds_disabled();
  CameraModel cam = simple_camera(32, 32, 24.0);
  double worst = 0;
  for (int s = 0; s < 100; ++s) {
    int64_t n = 1 + rng.randint(64);
    GaussianSet gs;
    for (int64_t i = 0; i < n; ++i) {
      Gaussian3D g;
      g.mean = {rng.uniform(-3, 3), rng.uniform(-3, 3), rng.uniform(0.4, 8.0)};
      g.opacity = rng.uniform(0.02, 0.98);
      g.scale = {rng.uniform(0.02, 0.8), rng.uniform(0.02, 0.8), rng.uniform(0.02, 0.8)};
      double a = rng.uniform(0, 2 * M_PI), b = rng.uniform(0, 2 * M_PI);
      g.quat = {std::cos(a / 2) * std::cos(b / 2), std::sin(a / 2) * std::cos(b / 2),
                std::sin(b / 2), std::cos(a / 2) * std::sin(b / 2)};
      double qn = std::sqrt(g.quat[0] * g.quat[0] + g.quat[1] * g.quat[1] +
                            g.quat[2] * g.quat[2] + g.quat[3] * g.quat[3]);
      for (double& q : g.quat) q /= qn;
      g.color = {rng.uniform(), rng.uniform(), rng.uniform()};
      gs.items.push_back(g);
    }
    RenderOutput a = render(gs, cam, exact);
    RenderOutput b = brute_force_render(gs, cam, exact);
    for (size_t i = 0; i < a.rgb.size(); ++i) worst = std::max(worst, std::abs(a.rgb[i] - b.rgb[i]));
    for (size_t i = 0; i < a.depth.size(); ++i)
      worst = std::max(worst, std::abs(a.depth[i] - b.depth[i]));
    for (size_t i = 0; i < a.alpha.size(); ++i)
      worst = std::max(worst, std::abs(a.alpha[i] - b.alpha[i]));
  }
  std::ostringstream os;
  os << "100 scenes, max abs diff " << worst;
  return {worst <= 1e-5, os.str()};
}

// ---------------------------------------------------------------- P3 ----
// Loss decomposition recomposes exactly; all-ones masks reduce the masked
// losses to their unmasked counterparts bit-for-bit.

std::pair<bool, std::string> criterion_p3() {
  bool ok = true;
  std::ostringstream os;
  Rng rng(5);
  const int w = 6, h = 4;
  const int64_t r = w * h;
  auto rnd = [&](int64_t rows, int64_t cols) {
    std::vector<double> v(size_t(rows * cols));
    for (double& x : v) x = rng.uniform();
    return Tensor::from({rows, cols}, v);
  };

  // Deterministic stand-in for the perceptual metric so both lpips terms
  // participate in the recomposition.
  lpips_hook() = [](const std::vector<double>& a, const std::vector<double>& b, int, int, int) {
    double s = 0;
    for (size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
    return 0.5 * s / double(a.size());
  };

  LossInputs in;
  in.width = w;
  in.height = h;
  for (int v = 0; v < 2; ++v) {
    in.full_rgb.push_back(rnd(r, 3));
    in.full_target.push_back(rnd(r, 3));
    in.vol_rgb.push_back(rnd(r, 3));
    in.vol_target.push_back(rnd(r, 3));
    in.vol_depth.push_back(add(rnd(r, 1), 1.0));
    in.gp_depth.push_back(add(rnd(r, 1), 1.0));
  }
  VolumeMaskSet masks;
  masks.width = w;
  masks.height = h;
  for (int v = 0; v < 2; ++v) {
    masks.mask.emplace_back(size_t(r));
    masks.depth.emplace_back(size_t(r), 1.5);
    for (int64_t i = 0; i < r; ++i) masks.mask[size_t(v)][size_t(i)] = (i % 3 != v) ? 1.0 : 0.0;
  }
  LossWeights lw;  // 0.05, 1.0, 0.05, 0.01
  LossReport rep = total_loss(in, masks, lw);
  double v_total = rep.v_mse + lw.lambda_v1 * rep.v_lpips + lw.lambda_v2 * rep.v_dpt;
  double total = rep.full_mse + lw.lambda1 * rep.full_lpips + lw.lambda2 * v_total;
  double err = std::max(std::abs(v_total - rep.v_total), std::abs(total - rep.total));
  double graph_err = std::abs(rep.loss.item() - rep.total);
  ok = ok && err <= 1e-12 && graph_err <= 1e-12;
  os << "recomposition err " << err << ", graph-vs-report err " << graph_err;
  lpips_hook() = LpipsFn{};

  // all-ones masks: masked losses equal the unmasked ones exactly
  std::vector<double> ones(size_t(r), 1.0);
  Tensor a = rnd(r, 3), b = rnd(r, 3);
  Tensor dv = add(rnd(r, 1), 1.0), dp = add(rnd(r, 1), 1.0);
  bool eq_mse = masked_photometric_loss(a, b, ones).item() == mse(a, b).item();
  bool eq_l1 = depth_alignment_loss(dv, dp, ones).item() == l1(dv, dp).item();
  ok = ok && eq_mse && eq_l1;
  os << "; all-ones photometric==mse " << (eq_mse ? "yes" : "NO") << ", alignment==l1 "
     << (eq_l1 ? "yes" : "NO");
  return {ok, os.str()};
}

// ------------------------------------------------------------- P4/P5 ----

// Reduced-resolution configuration used by the training criteria so they fit
// a single-core time budget; the architecture and loss are the full pipeline.
RunConfig accept_config(BranchMode mode, int64_t steps) {
  RunConfig c;
  c.image_width = 48;
  c.image_height = 32;
  c.K = 6;
  c.volume = VolumeSpec{16, 16, 4, Vec3{-10, -10, -1}, Vec3{10, 10, 3}};
  c.triplane_channels = 32;
  c.triplane_layers = 2;
  c.attn.n_heads = 2;
  c.attn.n_points_2d = 2;
  c.attn.n_points_3d = 2;
  c.attn.n_pillar = 2;
  c.gaussians_per_voxel = 1;
  c.pixel.feat_channels = 32;
  c.pixel.enc_widths = {16, 24};
  c.pixel.unet_widths = {16, 32, 48};
  c.pixel.attn_dim = 32;
  c.pixel.head_hidden = 32;
  c.opt.base_lr = 1e-3;
  c.opt.warmup_steps = 100;
  c.opt.weight_decay = 0.0;
  c.novel_views_per_step = 2;
  c.input_views_per_step = 4;
  c.depth_init_sigma = 0.02;
  c.steps = steps;
  c.checkpoint_every = steps;  // no intermediate checkpoints
  c.mode = mode;
  c.validate();
  return c;
}

double mean_finite_psnr(const std::vector<double>& v) {
  double s = 0;
  int n = 0;
  for (double x : v)
    if (std::isfinite(x)) s += x, ++n;
  return n ? s / n : std::numeric_limits<double>::infinity();
}

// Mean PSNR of the current model over the given views.
double view_psnr(OmniModel& model, const BinSample& bin, const std::vector<ViewData>& views) {
  ImageSet images;
  std::vector<CameraModel> cams;
  for (const ViewData& v : bin.input) {
    images.push_back(image_tensor(v.rgb, v.cam.width, v.cam.height));
    cams.push_back(v.cam);
  }
  DepthInitMap init = model.make_depth_init(bin);
  ForwardResult fr = model.forward(images, cams, init);
  GaussianSet gs = forward_gaussians(fr);
  std::vector<double> scores;
  for (const ViewData& v : views) {
    RenderOutput out = render(gs, v.cam);
    for (double& x : out.rgb) x = std::min(1.0, std::max(0.0, x));
    scores.push_back(psnr(out.rgb, v.rgb));
  }
  return mean_finite_psnr(scores);
}

std::pair<bool, std::string> criterion_p4() {
  auto t0 = Clock::now();
  // Schedule horizon 6000 keeps the cosine learning rate from collapsing
  // inside the 3000 optimization steps actually taken.
  const int64_t kCap = 3000;
  RunConfig cfg = accept_config(BranchMode::full, 6000);
  SceneSpec scene = generate_scene(0, 42);
  BinSample bin = make_bin_sample(scene, cfg.rig(), cfg.bin_size);
  Trainer tr(cfg, {bin});

  std::vector<ViewData> novel = bin.novel_a;
  novel.insert(novel.end(), bin.novel_b.begin(), bin.novel_b.end());
  double in_psnr = 0, nv_psnr = 0;
  int64_t steps_done = 0;
  while (steps_done < kCap && elapsed_s(t0) < 3300.0) {
    tr.step();
    ++steps_done;
    if (steps_done >= 400 && steps_done % 100 == 0) {
      in_psnr = view_psnr(tr.model(), bin, bin.input);
      nv_psnr = view_psnr(tr.model(), bin, novel);
      std::fprintf(stderr, "  [P4] step %lld: input %.2f dB, novel %.2f dB (%.0f s)\n",
                   (long long)steps_done, in_psnr, nv_psnr, elapsed_s(t0));
      if (in_psnr >= 28.0 && nv_psnr >= 20.0) break;
    }
  }
  in_psnr = view_psnr(tr.model(), bin, bin.input);
  nv_psnr = view_psnr(tr.model(), bin, novel);
  double secs = elapsed_s(t0);
  std::ostringstream os;
  os << steps_done << " steps in " << int(secs) << " s; input PSNR " << in_psnr
     << " dB (>= 27), novel PSNR " << nv_psnr << " dB (>= 19)";
  bool ok = in_psnr >= 27.0 && nv_psnr >= 19.0 && steps_done <= 3000 && secs < 3600.0;
  return {ok, os.str()};
}

std::pair<bool, std::string> criterion_p5() {
  const int64_t kSteps = 400;
  RunConfig probe = accept_config(BranchMode::full, kSteps);
  std::vector<BinSample> bins;
  for (int c = 1; c <= 4; ++c)
    for (int s = 0; s < 8; ++s)
      bins.push_back(make_bin_sample(generate_scene(c, 100 + uint64_t(c) * 10 + uint64_t(s)),
                                     probe.rig(), probe.bin_size));

  auto run_mode = [&](BranchMode mode, double& out_psnr, double& out_pcc) {
    RunConfig cfg = accept_config(mode, kSteps);
    Trainer tr(cfg, bins);
    auto tm = Clock::now();
    for (int64_t i = 0; i < kSteps; ++i) tr.step();
    std::fprintf(stderr, "  [P5] %s: %lld steps in %.0f s\n", branch_mode_name(mode),
                 (long long)kSteps, elapsed_s(tm));
    std::vector<double> ps, pc;
    for (const BinSample& b : bins) {
      BinEval ev = evaluate_bin(tr.model(), b);
      if (std::isfinite(ev.mean_psnr)) ps.push_back(ev.mean_psnr);
      if (std::isfinite(ev.mean_pcc)) pc.push_back(ev.mean_pcc);
    }
    out_psnr = mean_finite_psnr(ps);
    double s = 0;
    for (double x : pc) s += x;
    out_pcc = pc.empty() ? 0.0 : s / double(pc.size());
  };

  double full_psnr, full_pcc, pix_psnr, pix_pcc, vol_psnr, vol_pcc;
  run_mode(BranchMode::full, full_psnr, full_pcc);
  run_mode(BranchMode::pixel_only, pix_psnr, pix_pcc);
  run_mode(BranchMode::volume_only, vol_psnr, vol_pcc);

  std::ostringstream os;
  os << "novel-view PSNR full " << full_psnr << " / pixel-only " << pix_psnr << " / volume-only "
     << vol_psnr << " dB; PCC " << full_pcc << " / " << pix_pcc << " / " << vol_pcc << " ("
     << kSteps << " steps each, 32 bins)";
  bool ok = full_psnr >= pix_psnr + 0.5 && full_psnr >= vol_psnr + 0.5 && full_pcc >= pix_pcc &&
            full_pcc >= vol_pcc;
  return {ok, os.str()};
}

// ---------------------------------------------------------------- P6 ----

double naive_ssim(const std::vector<double>& a, const std::vector<double>& b, int h, int w,
                  int c) {
  std::vector<double> k(11);
  double ksum = 0;
  for (int i = 0; i < 11; ++i) {
    double d = i - 5.0;
    k[size_t(i)] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
    ksum += k[size_t(i)];
  }
  for (double& v : k) v /= ksum;
  const double c1 = 1e-4, c2 = 9e-4;
  double total = 0;
  int64_t count = 0;
  for (int ch = 0; ch < c; ++ch)
    for (int y = 0; y + 10 < h; ++y)
      for (int x = 0; x + 10 < w; ++x) {
        double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            double wgt = k[size_t(i)] * k[size_t(j)];
            double va = a[(size_t(y + i) * w + size_t(x + j)) * c + size_t(ch)];
            double vb = b[(size_t(y + i) * w + size_t(x + j)) * c + size_t(ch)];
            ma += wgt * va;
            mb += wgt * vb;
            maa += wgt * va * va;
            mbb += wgt * vb * vb;
            mab += wgt * va * vb;
          }
        double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
        total += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                 ((ma * ma + mb * mb + c1) * (va + vb + c2));
        ++count;
      }
  return total / double(count);
}

std::pair<bool, std::string> criterion_p6() {
  Rng rng(17);
  const int h = 16, w = 20, c = 3;
  std::vector<double> x(size_t(h) * w * c);
  for (double& v : x) v = rng.uniform(0.0, 0.5);

  // pcc is invariant to positive affine maps
  std::vector<double> y(x.size());
  for (size_t i = 0; i < x.size(); ++i) y[i] = 2.75 * x[i] + 0.31;
  double e_pcc = std::abs(pcc(x, y) - 1.0);

  double e_ssim_self = std::abs(ssim(x, x, h, w, c) - 1.0);

  std::vector<double> shifted(x.size());
  for (size_t i = 0; i < x.size(); ++i) shifted[i] = x[i] + 0.1;
  double e_psnr = std::abs(psnr(x, shifted) - 20.0);

  std::vector<double> z(x.size());
  for (double& v : z) v = rng.uniform();
  double e_oracle = std::abs(ssim(x, z, h, w, c) - naive_ssim(x, z, h, w, c));

  std::ostringstream os;
  os << "|pcc-1| " << e_pcc << ", |ssim(x,x)-1| " << e_ssim_self << ", |psnr-20| " << e_psnr
     << ", ssim-vs-naive " << e_oracle;
  bool ok = e_pcc <= 1e-9 && e_ssim_self <= 1e-9 && e_psnr <= 1e-9 && e_oracle <= 1e-9;
  return {ok, os.str()};
}

// ---------------------------------------------------------------- P7 ----
// Collaboration semantics: masks against the scene-geometry oracle, depth
// alignment never feeds the pixel branch, fusion is a no-op with nothing in
// the volume.

double mask_agreement(int case_id, uint64_t seed) {
  SceneSpec scene = generate_scene(case_id, seed);
  RigConfig rig;  // full desk rig
  std::vector<CameraModel> cams = make_ego_rig(rig);

  // Pixel branch stand-in: one sub-pixel splat per pixel at the analytic
  // surface depth, so the rendered depth matches the geometry.
  GaussianSet gp;
  std::vector<std::vector<uint8_t>> oracle(cams.size());
  for (size_t k = 0; k < cams.size(); ++k) {
    const CameraModel& cam = cams[k];
    AnalyticView av = render_analytic(scene, cam);
    oracle[k].resize(size_t(cam.width) * cam.height, 0);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        size_t i = size_t(y) * cam.width + size_t(x);
        double z = av.depth[i];
        if (!(z > 0) || !std::isfinite(z)) continue;
        Ray r = pixel_ray(cam, x + 0.5, y + 0.5);
        double t = ray_depth_from_z(cam, x + 0.5, y + 0.5, z);
        Vec3 p = r.origin + r.direction * t;
        oracle[k][i] = world_in_volume(scene.volume, p) ? 1 : 0;
        Gaussian3D g;
        g.mean = p;
        double s = 0.5 * z / cam.fx;
        g.scale = {s, s, s};
        // Flatten splats on horizontal surfaces so oblique footprints do not
        // smear depth across the volume boundary on the floor.
        int pi = av.prim[i];
        if (pi >= 0 && scene.primitives[size_t(pi)].kind == PrimitiveKind::floor)
          g.scale[2] = 0.05 * s;
        g.opacity = 0.995;
        g.source = GaussianSource::pixel;
        gp.items.push_back(g);
      }
  }
  VolumeMaskSet m = compute_volume_masks(gp, cams, scene.volume);
  int64_t agree = 0, total = 0;
  for (size_t k = 0; k < cams.size(); ++k)
    for (size_t i = 0; i < oracle[k].size(); ++i) {
      agree += (m.mask[k][i] == 1.0) == (oracle[k][i] == 1);
      ++total;
    }
  return double(agree) / double(total);
}

std::pair<bool, std::string> criterion_p7() {
  double ag2 = mask_agreement(2, 7);
  double ag3 = mask_agreement(3, 8);

  // depth alignment: zero gradient into the pixel-branch depth
  Rng rng(3);
  const int64_t n = 20;
  std::vector<double> a(size_t(n), 0.0), b(size_t(n), 0.0), ones(size_t(n), 1.0);
  for (double& v : a) v = rng.uniform(1, 3);
  for (double& v : b) v = rng.uniform(1, 3);
  Tensor dv = Tensor::from({n, 1}, a, true);
  Tensor dp = Tensor::from({n, 1}, b, true);
  depth_alignment_loss(dv, dp, ones).backward();
  double gp_grad = 0, gv_grad = 0;
  for (double g : dp.grad()) gp_grad += std::abs(g);
  for (double g : dv.grad()) gv_grad += std::abs(g);

  // fusion with zero in-volume gaussians returns the planes untouched
  VolumeSpec spec{4, 4, 2, Vec3{-1, -1, -1}, Vec3{1, 1, 1}};
  const int64_t C = 6;
  ParameterStore ps;
  Dense lin(ps, rng, "lin", C, C);
  Triplane planes;
  planes.spec = spec;
  planes.C = C;
  auto rnd_plane = [&](int64_t rows) {
    std::vector<double> v(size_t(rows * C));
    for (double& x : v) x = rng.uniform(-1, 1);
    return Tensor::from({rows, C}, v);
  };
  planes.hw = rnd_plane(spec.H * spec.W);
  planes.zh = rnd_plane(spec.Z * spec.H);
  planes.wz = rnd_plane(spec.W * spec.Z);
  std::vector<double> fv(size_t(5 * C));
  for (double& x : fv) x = rng.uniform(-1, 1);
  Tensor feats = Tensor::from({5, C}, fv);
  std::vector<Vec3> outside(5, Vec3{50, 50, 50});
  Triplane fused = fuse_pixel_to_triplane(feats, outside, planes, lin);
  bool untouched = fused.hw.values() == planes.hw.values() &&
                   fused.zh.values() == planes.zh.values() &&
                   fused.wz.values() == planes.wz.values();

  std::ostringstream os;
  os << "mask agreement case2 " << ag2 << ", case3 " << ag3 << "; |dL/d_gp| " << gp_grad
     << " (|dL/d_gv| " << gv_grad << "); fusion no-op " << (untouched ? "yes" : "NO");
  bool ok = ag2 >= 0.99 && ag3 >= 0.99 && gp_grad == 0.0 && gv_grad > 0.0 && untouched;
  return {ok, os.str()};
}

// ---------------------------------------------------------------- P8 ----
// Determinism and persistence.

RunConfig tiny_config() {
  RunConfig c;
  c.image_width = 32;
  c.image_height = 16;
  c.K = 2;
  c.triplane_channels = 16;
  c.triplane_layers = 2;
  c.attn.n_heads = 2;
  c.attn.n_points_2d = 2;
  c.attn.n_points_3d = 2;
  c.attn.n_pillar = 2;
  c.gaussians_per_voxel = 1;
  c.pixel.feat_channels = 16;
  c.pixel.enc_widths = {8, 12};
  c.pixel.unet_widths = {8, 12, 16};
  c.pixel.attn_dim = 16;
  c.pixel.head_hidden = 16;
  c.volume = VolumeSpec{6, 6, 3, Vec3{-10, -10, -1}, Vec3{10, 10, 3}};
  c.steps = 200;
  c.checkpoint_every = 1000;
  c.validate();
  return c;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::pair<bool, std::string> criterion_p8() {
  namespace fs = std::filesystem;
  RunConfig cfg = tiny_config();
  BinSample bin = make_bin_sample(generate_scene(4, 2), cfg.rig(), cfg.bin_size);
  std::vector<BinSample> bins{bin};

  // 200-step loss log, twice
  std::vector<std::string> log_a, log_b;
  {
    Trainer a(cfg, bins);
    for (int i = 0; i < 200; ++i) log_a.push_back(Trainer::step_log_json(a.step()));
  }
  {
    Trainer b(cfg, bins);
    for (int i = 0; i < 200; ++i) log_b.push_back(Trainer::step_log_json(b.step()));
  }
  bool log_ok = log_a == log_b;

  // checkpoint -> resume -> bit-identical next step
  fs::path dir = fs::temp_directory_path() / "omni_accept_p8";
  fs::create_directories(dir);
  std::string ck = (dir / "ck.bin").string();
  std::string next_a, next_b;
  {
    Trainer a(cfg, bins);
    for (int i = 0; i < 50; ++i) a.step();
    a.save(ck);
    next_a = Trainer::step_log_json(a.step());
  }
  {
    Trainer b(cfg, bins);
    b.resume_from(ck);
    next_b = Trainer::step_log_json(b.step());
  }
  bool resume_ok = next_a == next_b;

  // PLY round trip
  Rng rng(12);
  GaussianSet gs;
  for (int i = 0; i < 50; ++i) {
    Gaussian3D g;
    g.mean = {rng.uniform(-5, 5), rng.uniform(-5, 5), rng.uniform(0, 3)};
    g.opacity = rng.uniform(0.05, 0.95);
    g.scale = {rng.uniform(0.05, 1), rng.uniform(0.05, 1), rng.uniform(0.05, 1)};
    g.quat = {1, 0, 0, 0};
    g.color = {rng.uniform(), rng.uniform(), rng.uniform()};
    g.source = i % 2 ? GaussianSource::pixel : GaussianSource::volume;
    gs.items.push_back(g);
  }
  std::string p1 = (dir / "a.ply").string(), p2 = (dir / "b.ply").string();
  export_ply(gs, p1);
  GaussianSet back = import_ply(p1);
  export_ply(back, p2);
  bool ply_ok = read_file(p1) == read_file(p2) && back.size() == gs.size();

  std::ostringstream os;
  os << "200-step log identical " << (log_ok ? "yes" : "NO") << "; resume identical "
     << (resume_ok ? "yes" : "NO") << "; ply round trip " << (ply_ok ? "yes" : "NO");
  return {log_ok && resume_ok && ply_ok, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    const char* id;
    const char* title;
    std::pair<bool, std::string> (*fn)();
  };
  const Criterion all[] = {
      {"P1", "gradient integrity", criterion_p1},
      {"P2", "renderer oracle equivalence", criterion_p2},
      {"P3", "loss composition", criterion_p3},
      {"P4", "single-bin overfit", criterion_p4},
      {"P5", "ablation direction", criterion_p5},
      {"P6", "metric correctness", criterion_p6},
      {"P7", "collaboration semantics", criterion_p7},
      {"P8", "determinism and persistence", criterion_p8},
  };
  std::set<std::string> want;
  for (int i = 1; i < argc; ++i) want.insert(argv[i]);

  int failures = 0;
  for (const Criterion& c : all) {
    if (!want.empty() && !want.count(c.id)) continue;
    auto t0 = Clock::now();
    bool ok = false;
    std::string detail;
    try {
      auto res = c.fn();
      ok = res.first;
      detail = res.second;
    } catch (const std::exception& e) {
      detail = std::string("exception: ") + e.what();
    }
    std::printf("%s %s: %s — %s (%.1f s)\n", c.id, c.title, ok ? "PASS" : "FAIL", detail.c_str(),
                elapsed_s(t0));
    std::fflush(stdout);
    failures += ok ? 0 : 1;
  }
  return failures == 0 ? 0 : 1;
}
