// Command-line entry point: dataset generation, training, evaluation,
// novel-view rendering and gradient checking.
//
// Exit codes: 0 success, 2 validation/configuration failure, 3 numerical
// abort during training.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "omni/image_io.hpp"
#include "omni/train.hpp"

namespace fs = std::filesystem;
using namespace omni;

namespace {

int parse_case(const std::string& s) {
  if (s == "mix") return 0;
  if (s == "1" || s == "2" || s == "3" || s == "4") return s[0] - '0';
  throw std::runtime_error("gen: --case must be one of 1|2|3|4|mix, got '" + s + "'");
}

int cmd_gen(const std::string& case_str, int n, uint64_t seed, const std::string& out) {
  int case_id = parse_case(case_str);
  OMNI_CHECK(n > 0, "gen: --n must be positive");
  fs::create_directories(out);
  RigConfig rig;  // desk defaults: 112x64, hfov 70, K=6
  for (int i = 0; i < n; ++i) {
    SceneSpec scene = generate_scene(case_id, seed + static_cast<uint64_t>(i));
    BinSample bin = make_bin_sample(scene, rig, 0.8);
    char name[32];
    std::snprintf(name, sizeof(name), "bin_%04d", i);
    std::string dir = out + "/" + name;
    write_bin(dir, bin);
    std::cout << "wrote " << dir << " (case " << case_str << ", seed " << (seed + i) << ")\n";
  }
  return 0;
}

int cmd_train(const std::string& config, const std::string& data, const std::string& out,
              const std::string& resume) {
  RunConfig cfg = RunConfig::from_json_file(config);
  std::vector<BinSample> bins = load_dataset(data);
  std::cout << "loaded " << bins.size() << " bins from " << data << "\n";
  Trainer trainer(cfg, std::move(bins));
  if (!resume.empty()) {
    trainer.resume_from(resume);
    std::cout << "resumed from " << resume << " at step " << trainer.step_count() << "\n";
  }
  trainer.run(out);
  std::cout << "finished at step " << trainer.step_count() << "; checkpoints and log in " << out
            << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data, const std::string& report) {
  RunConfig cfg = checkpoint_config(ckpt);
  OmniModel model(cfg);
  uint64_t rng_state = 0;
  load_checkpoint(ckpt, model, rng_state);
  std::vector<BinSample> bins = load_dataset(data);
  std::string doc = evaluation_report(model, bins);
  std::ofstream f(report, std::ios::binary | std::ios::trunc);
  OMNI_CHECK(f.good(), "eval: cannot open report file " + report);
  f << doc << "\n";
  std::cout << "evaluated " << bins.size() << " bins, report written to " << report << "\n";
  return 0;
}

// Camera at `pos` looking along yaw/pitch (degrees, world z up) with roll
// about the view axis; intrinsics copied from the bin's input views.
CameraModel posed_camera(const CameraModel& intr, const std::vector<double>& pose) {
  double d2r = M_PI / 180.0;
  Vec3 pos{pose[0], pose[1], pose[2]};
  double yaw = pose[3] * d2r, pitch = pose[4] * d2r, roll = pose[5] * d2r;
  Vec3 f{std::cos(pitch) * std::cos(yaw), std::cos(pitch) * std::sin(yaw), std::sin(pitch)};
  Vec3 r0 = normalized(cross(f, Vec3{0, 0, 1}));
  Vec3 d0 = cross(f, r0);
  Vec3 r = r0 * std::cos(roll) + d0 * std::sin(roll);
  Vec3 d = d0 * std::cos(roll) - r0 * std::sin(roll);
  CameraModel cam = intr;
  cam.rotation = {r[0], r[1], r[2], d[0], d[1], d[2], f[0], f[1], f[2]};
  cam.translation = mat_vec(cam.rotation, pos) * -1.0;
  return cam;
}

int cmd_render(const std::string& ckpt, const std::string& scene_dir,
               const std::vector<double>& pose, const std::string& out) {
  RunConfig cfg = checkpoint_config(ckpt);
  OmniModel model(cfg);
  uint64_t rng_state = 0;
  load_checkpoint(ckpt, model, rng_state);

  BinSample bin = read_bin(scene_dir);
  OMNI_CHECK(!bin.input.empty(), "render: bin has no input views");
  OMNI_CHECK(std::abs(pose[4]) < 89.0, "render: pitch must stay clear of +-90 degrees");

  ImageSet images;
  std::vector<CameraModel> cams;
  int w = bin.input[0].cam.width, h = bin.input[0].cam.height;
  for (const ViewData& v : bin.input) {
    images.push_back(image_tensor(v.rgb, v.cam.width, v.cam.height));
    cams.push_back(v.cam);
  }
  DepthInitMap init = model.make_depth_init(bin);
  ForwardResult fr = model.forward(images, cams, init);
  GaussianSet gs = forward_gaussians(fr);

  CameraModel cam = posed_camera(bin.input[0].cam, pose);
  RenderOutput img = render(gs, cam);
  write_ppm(out, img.rgb, w, h);

  fs::path ply = fs::path(out);
  ply.replace_extension(".ply");
  export_ply(gs, ply.string());
  std::cout << "rendered " << gs.size() << " gaussians to " << out << " (splats: " << ply.string()
            << ")\n";
  return 0;
}

// ---- gradcheck ----

bool print_report(const std::string& module, const GradCheckReport& rep) {
  for (const GradCheckEntry& e : rep.entries) {
    if (!e.ok)
      std::cout << "  FAIL " << e.name << " max_rel_err=" << e.max_rel_err << " ("
                << e.checked << " elems)\n";
  }
  std::cout << (rep.ok ? "PASS" : "FAIL") << " " << module << " max_rel_err=" << rep.max_rel_err
            << "\n";
  return rep.ok;
}

bool gradcheck_ops() {
  ParameterStore ps;
  Rng rng(11);
  ps.add("a", {4, 3}, init_normal(rng, 0.5, 12));
  ps.add("b", {3, 5}, init_normal(rng, 0.5, 15));
  ps.add("g", {5}, init_normal(rng, 0.2, 5));
  ps.add("c", {4, 5}, init_normal(rng, 0.5, 20));
  auto f = [&]() {
    Tensor a = ps.get("a"), b = ps.get("b"), c = ps.get("c");
    Tensor h = silu(matmul(a, b));
    Tensor n = layer_norm(h, ps.get("g"), Tensor::zeros({5}));
    Tensor s = softmax_rows(add(n, mul(tanh(c), 0.7)));
    Tensor out = mean(mul(s, exp(mul(h, 0.2))));
    return add(add(out, mse(sigmoid(a), Tensor::full({4, 3}, 0.4))),
               mean(abs(softplus(matmul_nt(c, b)))));
  };
  return print_report("ops", gradient_check(f, ps, 1e-5, 1e-6, -1, 7));
}

bool gradcheck_renderer() {
  ParameterStore ps;
  Rng rng(21);
  const int64_t n = 6;
  std::vector<double> means;
  for (int64_t i = 0; i < n; ++i) {
    means.push_back(rng.uniform() - 0.5);
    means.push_back(rng.uniform() - 0.5);
    means.push_back(1.5 + rng.uniform());
  }
  ps.add("means", {n, 3}, means);
  ps.add("opac", {n, 1}, init_normal(rng, 0.5, n));
  ps.add("scales", {n, 3}, init_normal(rng, 0.2, 3 * n));
  ps.add("quats", {n, 4}, init_normal(rng, 0.4, 4 * n));
  ps.add("colors", {n, 3}, init_normal(rng, 0.5, 3 * n));

  CameraModel cam;
  cam.width = 16;
  cam.height = 12;
  cam.fx = cam.fy = 14.0;
  cam.cx = 8.0;
  cam.cy = 6.0;
  RenderSettings rs = RenderSettings().with_thresholds_disabled();
  std::vector<double> tgt(16 * 12 * 5);
  for (double& v : tgt) v = rng.uniform();
  Tensor target = Tensor::from({16 * 12, 5}, tgt);
  auto f = [&]() {
    GaussianTensors gt;
    gt.means = ps.get("means");
    gt.opacities = sigmoid(ps.get("opac"));
    gt.scales = add(mul(sigmoid(ps.get("scales")), 0.4), 0.05);
    gt.quats = ps.get("quats");
    gt.colors = sigmoid(ps.get("colors"));
    return mse(reshape(render_diff(gt, cam, rs), {16 * 12, 5}), target);
  };
  return print_report("renderer", gradient_check(f, ps, 1e-5, 1e-4, -1, 7));
}

bool gradcheck_loss() {
  ParameterStore ps;
  Rng rng(31);
  const int wid = 6, hei = 4, r = wid * hei;
  ps.add("full", {r, 3}, init_normal(rng, 0.5, 3 * r));
  ps.add("vol", {r, 3}, init_normal(rng, 0.5, 3 * r));
  ps.add("dv", {r, 1}, init_normal(rng, 0.3, r));

  std::vector<double> tgt_full(3 * r), tgt_vol(3 * r), dp(r);
  for (double& v : tgt_full) v = rng.uniform();
  for (double& v : tgt_vol) v = rng.uniform();
  for (double& v : dp) v = 1.0 + rng.uniform();
  VolumeMaskSet masks;
  masks.width = wid;
  masks.height = hei;
  masks.mask.emplace_back(r);
  masks.depth.push_back(dp);
  for (int i = 0; i < r; ++i) masks.mask[0][i] = (i % 3 == 0) ? 0.0 : 1.0;

  LossWeights w;
  auto f = [&]() {
    LossInputs in;
    in.width = wid;
    in.height = hei;
    in.full_rgb.push_back(sigmoid(ps.get("full")));
    in.full_target.push_back(Tensor::from({r, 3}, tgt_full));
    in.vol_rgb.push_back(sigmoid(ps.get("vol")));
    in.vol_target.push_back(Tensor::from({r, 3}, tgt_vol));
    in.vol_depth.push_back(add(softplus(ps.get("dv")), 0.5));
    in.gp_depth.push_back(Tensor::from({r, 1}, dp));
    return total_loss(in, masks, w).loss;
  };
  return print_report("loss", gradient_check(f, ps, 1e-5, 1e-5, -1, 7));
}

// End-to-end check through the full network on a miniature configuration:
// encoder, multi-view U-Net, pixel head, triplane encoder with fusion and
// voxel head, down to rendered novel views.
bool gradcheck_model() {
  RunConfig cfg;
  cfg.image_width = 32;
  cfg.image_height = 16;
  cfg.K = 2;
  cfg.triplane_channels = 16;
  cfg.triplane_layers = 2;
  cfg.attn.n_heads = 2;
  cfg.attn.n_points_2d = 2;
  cfg.attn.n_points_3d = 2;
  cfg.attn.n_pillar = 2;
  cfg.gaussians_per_voxel = 1;
  cfg.pixel.feat_channels = 16;
  cfg.pixel.enc_widths = {8, 12};
  cfg.pixel.unet_widths = {8, 12, 16};
  cfg.pixel.attn_dim = 16;
  cfg.pixel.head_hidden = 16;
  cfg.volume = VolumeSpec{6, 6, 3, Vec3{-10, -10, -1}, Vec3{10, 10, 3}};
  cfg.validate();

  RigConfig rig = cfg.rig();
  SceneSpec scene = generate_scene(4, 3);
  BinSample bin = make_bin_sample(scene, rig, cfg.bin_size);

  OmniModel model(cfg);
  ImageSet images;
  std::vector<CameraModel> cams;
  for (const ViewData& v : bin.input) {
    images.push_back(image_tensor(v.rgb, v.cam.width, v.cam.height));
    cams.push_back(v.cam);
  }
  DepthInitMap init = model.make_depth_init(bin);
  // Probe losses (random linear functionals of every output head) keep the
  // objective smooth: finite differences across the discrete splat-culling
  // and fusion-binning decisions would otherwise dominate the comparison.
  Rng prng(99);
  auto probe = [&](const Tensor& t) {
    std::vector<double> v(t.values().size());
    for (double& x : v) x = prng.uniform() * 0.1 - 0.05;
    return sum(mul(t, Tensor::from(t.shape(), std::move(v))));
  };
  auto f = [&]() {
    ForwardResult fr = model.forward(images, cams, init);
    prng = Rng(99);
    Tensor loss = Tensor::scalar(0.0);
    if (fr.has_pixel) {
      loss = add(loss, probe(fr.pixel.g.means));
      loss = add(loss, probe(fr.pixel.g.opacities));
      loss = add(loss, probe(fr.pixel.g.scales));
      loss = add(loss, probe(fr.pixel.g.colors));
    }
    if (fr.has_volume) {
      loss = add(loss, probe(fr.volume.means));
      loss = add(loss, probe(fr.volume.opacities));
      loss = add(loss, probe(fr.volume.colors));
    }
    return loss;
  };
  return print_report("model", gradient_check(f, model.params(), 1e-4, 1e-4, 1, 7));
}

int cmd_gradcheck(const std::string& module) {
  bool ok = true;
  bool ran = false;
  if (module == "all" || module == "ops") ok &= gradcheck_ops(), ran = true;
  if (module == "all" || module == "renderer") ok &= gradcheck_renderer(), ran = true;
  if (module == "all" || module == "loss") ok &= gradcheck_loss(), ran = true;
  if (module == "all" || module == "model") ok &= gradcheck_model(), ran = true;
  OMNI_CHECK(ran, "gradcheck: unknown module '" + module + "' (ops|renderer|loss|model|all)");
  return ok ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"omni: ego-centric gaussian reconstruction toolkit"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset of bins");
  std::string gen_case = "mix", gen_out;
  int gen_n = 1;
  uint64_t gen_seed = 0;
  gen->add_option("--case", gen_case, "scene case: 1|2|3|4|mix")->required();
  gen->add_option("--n", gen_n, "number of bins")->required();
  gen->add_option("--seed", gen_seed, "base seed")->required();
  gen->add_option("--out", gen_out, "output dataset directory")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  std::string tr_config, tr_data, tr_out, tr_resume;
  train->add_option("--config", tr_config, "run config JSON")->required();
  train->add_option("--data", tr_data, "dataset root")->required();
  train->add_option("--out", tr_out, "run output directory")->required();
  train->add_option("--resume", tr_resume, "checkpoint to resume from");

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  std::string ev_ckpt, ev_data, ev_report;
  ev->add_option("--ckpt", ev_ckpt, "checkpoint file")->required();
  ev->add_option("--data", ev_data, "dataset root")->required();
  ev->add_option("--report", ev_report, "JSON report output path")->required();

  auto* rn = app.add_subcommand("render", "render a novel view from a checkpoint");
  std::string rn_ckpt, rn_scene, rn_out;
  std::vector<double> rn_pose;
  rn->add_option("--ckpt", rn_ckpt, "checkpoint file")->required();
  rn->add_option("--scene", rn_scene, "bin directory")->required();
  rn->add_option("--pose", rn_pose, "x y z yaw pitch roll (meters / degrees)")
      ->expected(6)
      ->required();
  rn->add_option("--out", rn_out, "output PPM path (a .ply is written alongside)")->required();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  std::string gc_module = "all";
  gc->add_option("--module", gc_module, "ops|renderer|loss|model|all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen(gen_case, gen_n, gen_seed, gen_out);
    if (train->parsed()) return cmd_train(tr_config, tr_data, tr_out, tr_resume);
    if (ev->parsed()) return cmd_eval(ev_ckpt, ev_data, ev_report);
    if (rn->parsed()) return cmd_render(rn_ckpt, rn_scene, rn_pose, rn_out);
    if (gc->parsed()) return cmd_gradcheck(gc_module);
  } catch (const NumericalAbort& e) {
    std::cerr << "numerical abort: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
