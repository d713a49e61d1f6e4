#include "omni/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace omni {

namespace {

using json = nlohmann::json;

// ---- binary checkpoint primitives (native little-endian) ----

constexpr char kMagic[5] = {'O', 'M', 'N', 'I', '1'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T take(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  OMNI_CHECK(is.good(), "checkpoint: truncated file");
  return v;
}

void put_string(std::ostream& os, const std::string& s) {
  put<uint64_t>(os, s.size());
  os.write(s.data(), std::streamsize(s.size()));
}

std::string take_string(std::istream& is) {
  uint64_t n = take<uint64_t>(is);
  std::string s(n, '\0');
  is.read(s.data(), std::streamsize(n));
  OMNI_CHECK(is.good(), "checkpoint: truncated string");
  return s;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  put<uint64_t>(os, v.size());
  os.write(reinterpret_cast<const char*>(v.data()), std::streamsize(v.size() * sizeof(double)));
}

std::vector<double> take_doubles(std::istream& is) {
  uint64_t n = take<uint64_t>(is);
  std::vector<double> v(size_t(n), 0.0);
  is.read(reinterpret_cast<char*>(v.data()), std::streamsize(n * sizeof(double)));
  OMNI_CHECK(is.good(), "checkpoint: truncated data");
  return v;
}

void open_checkpoint(std::ifstream& f, const std::string& path) {
  f.open(path, std::ios::binary);
  OMNI_CHECK(f.good(), "checkpoint: cannot open " + path);
  char magic[5];
  f.read(magic, 5);
  OMNI_CHECK(f.good() && std::equal(magic, magic + 5, kMagic),
             "checkpoint: bad magic in " + path);
  uint32_t version = take<uint32_t>(f);
  OMNI_CHECK(version == kVersion, "checkpoint: unsupported version");
}

}  // namespace

void save_checkpoint(const std::string& path, const OmniModel& model, uint64_t rng_state) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  OMNI_CHECK(f.good(), "checkpoint: cannot write " + path);
  f.write(kMagic, 5);
  put<uint32_t>(f, kVersion);
  put_string(f, model.config().to_json_text());
  put<int64_t>(f, model.params().step_count);
  put<uint64_t>(f, rng_state);

  const auto& entries = model.params().entries();
  put<uint64_t>(f, entries.size());
  for (const auto& [name, e] : entries) {
    put_string(f, name);
    put<uint32_t>(f, uint32_t(e.t.shape().size()));
    for (int64_t d : e.t.shape()) put<int64_t>(f, d);
    put_doubles(f, e.t.values());
    put_doubles(f, e.m);
    put_doubles(f, e.v);
  }
  OMNI_CHECK(f.good(), "checkpoint: write failed for " + path);
}

RunConfig checkpoint_config(const std::string& path) {
  std::ifstream f;
  open_checkpoint(f, path);
  return RunConfig::from_json_text(take_string(f));
}

void load_checkpoint(const std::string& path, OmniModel& model, uint64_t& rng_state) {
  std::ifstream f;
  open_checkpoint(f, path);
  std::string cfg_json = take_string(f);
  OMNI_CHECK(cfg_json == model.config().to_json_text(),
             "checkpoint: config does not match the model it is being loaded into");
  model.params().step_count = take<int64_t>(f);
  rng_state = take<uint64_t>(f);

  uint64_t n = take<uint64_t>(f);
  auto& entries = model.params().entries();
  OMNI_CHECK(n == entries.size(), "checkpoint: parameter count mismatch");
  for (uint64_t i = 0; i < n; ++i) {
    std::string name = take_string(f);
    auto it = entries.find(name);
    OMNI_CHECK(it != entries.end(), "checkpoint: unknown parameter " + name);
    uint32_t ndim = take<uint32_t>(f);
    Shape shape;
    for (uint32_t d = 0; d < ndim; ++d) shape.push_back(take<int64_t>(f));
    OMNI_CHECK(shape == it->second.t.shape(), "checkpoint: shape mismatch for " + name);
    std::vector<double> vals = take_doubles(f);
    OMNI_CHECK(int64_t(vals.size()) == it->second.t.numel(),
               "checkpoint: value count mismatch for " + name);
    it->second.t.values() = std::move(vals);
    it->second.m = take_doubles(f);
    it->second.v = take_doubles(f);
  }
}

// ---- training ----

namespace {

GaussianTensors merge_gaussian_tensors(const GaussianTensors& a, const GaussianTensors& b) {
  GaussianTensors g;
  g.means = concat_rows({a.means, b.means});
  g.opacities = concat_rows({a.opacities, b.opacities});
  g.scales = concat_rows({a.scales, b.scales});
  g.quats = concat_rows({a.quats, b.quats});
  g.colors = concat_rows({a.colors, b.colors});
  return g;
}

// Deterministic sample of k distinct indices out of n (partial Fisher-Yates).
std::vector<size_t> pick_indices(Rng& rng, size_t n, size_t k) {
  std::vector<size_t> idx(n);
  std::iota(idx.begin(), idx.end(), size_t(0));
  k = std::min(k, n);
  for (size_t i = 0; i < k; ++i)
    std::swap(idx[i], idx[i + size_t(rng.randint(int64_t(n - i)))]);
  idx.resize(k);
  return idx;
}

void dump_abort_diagnostics(int64_t step, const LossReport& rep, const ParameterStore& ps) {
  std::fprintf(stderr, "non-finite loss at step %lld\n", (long long)step);
  std::fprintf(stderr,
               "  components: total=%g full_mse=%g full_lpips=%g v_mse=%g v_lpips=%g "
               "v_dpt=%g v_total=%g\n",
               rep.total, rep.full_mse, rep.full_lpips, rep.v_mse, rep.v_lpips, rep.v_dpt,
               rep.v_total);
  std::fprintf(stderr, "  parameter norms:\n");
  for (const auto& [name, e] : ps.entries()) {
    double s = 0;
    for (double x : e.t.values()) s += x * x;
    std::fprintf(stderr, "    %-40s %g\n", name.c_str(), std::sqrt(s));
  }
}

}  // namespace

GaussianSet forward_gaussians(const ForwardResult& fr) {
  GaussianSet gv, gp;
  if (fr.has_volume) gv = to_gaussian_set(fr.volume, GaussianSource::volume);
  if (fr.has_pixel) gp = to_gaussian_set(fr.pixel.g, GaussianSource::pixel);
  return merge_gaussians(gv, gp);
}

Trainer::Trainer(const RunConfig& cfg, std::vector<BinSample> bins)
    : cfg_(cfg), model_(cfg), bins_(std::move(bins)), rng_(cfg.train_seed) {
  OMNI_CHECK(!bins_.empty(), "Trainer: empty dataset");
  for (const auto& b : bins_) {
    OMNI_CHECK(int(b.input.size()) == cfg_.K, "Trainer: bin input view count != k");
    OMNI_CHECK(b.input[0].cam.width == cfg_.image_width &&
                   b.input[0].cam.height == cfg_.image_height,
               "Trainer: bin resolution does not match the config");
  }
}

StepLog Trainer::step() {
  const size_t bi = size_t(rng_.randint(int64_t(bins_.size())));
  const BinSample& bin = bins_[bi];
  const int w = cfg_.image_width, h = cfg_.image_height;
  const int64_t R = int64_t(w) * int64_t(h);

  ImageSet images;
  std::vector<CameraModel> cams;
  for (const auto& v : bin.input) {
    images.push_back(image_tensor(v.rgb, w, h));
    cams.push_back(v.cam);
  }
  DepthInitMap init = model_.make_depth_init(bin);
  ForwardResult fr = model_.forward(images, cams, init);

  GaussianTensors g_all = fr.has_volume && fr.has_pixel
                              ? merge_gaussian_tensors(fr.volume, fr.pixel.g)
                              : (fr.has_volume ? fr.volume : fr.pixel.g);

  LossInputs in;
  in.width = w;
  in.height = h;

  // The full-set photometric loss supervises renders of the input frame and
  // of the novel rigs: every step draws input_views_per_step input views and
  // novel_views_per_step novel views.
  std::vector<const ViewData*> full_views;
  {
    std::vector<const ViewData*> novel_pool;
    for (const auto& v : bin.novel_a) novel_pool.push_back(&v);
    for (const auto& v : bin.novel_b) novel_pool.push_back(&v);
    for (size_t i : pick_indices(rng_, novel_pool.size(), size_t(cfg_.novel_views_per_step)))
      full_views.push_back(novel_pool[i]);
    for (size_t i : pick_indices(rng_, bin.input.size(), size_t(cfg_.input_views_per_step)))
      full_views.push_back(&bin.input[i]);
  }
  for (const ViewData* v : full_views) {
    Tensor flat = reshape(render_diff(g_all, v->cam), {R, 5});
    in.full_rgb.push_back(slice_cols(flat, 0, 3));
    in.full_target.push_back(Tensor::from({R, 3}, v->rgb));
  }

  VolumeMaskSet masks;
  masks.width = w;
  masks.height = h;
  const bool vol_loss = fr.has_volume && cfg_.use_decomposition && cfg_.weights.lambda2 > 0;
  if (vol_loss) {
    std::vector<size_t> vidx =
        pick_indices(rng_, bin.input.size(), size_t(cfg_.input_views_per_step));
    if (fr.has_pixel) {
      std::vector<CameraModel> vcams;
      for (size_t i : vidx) vcams.push_back(bin.input[i].cam);
      GaussianSet gp_set = to_gaussian_set(fr.pixel.g, GaussianSource::pixel);
      masks = compute_volume_masks(gp_set, vcams, cfg_.volume);
    }
    for (size_t j = 0; j < vidx.size(); ++j) {
      const ViewData& v = bin.input[vidx[j]];
      Tensor flat = reshape(render_diff(fr.volume, v.cam), {R, 5});
      in.vol_rgb.push_back(slice_cols(flat, 0, 3));
      in.vol_target.push_back(Tensor::from({R, 3}, v.rgb));
      Tensor dv = slice_cols(flat, 3, 4);
      in.vol_depth.push_back(dv);
      if (fr.has_pixel) {
        in.gp_depth.push_back(Tensor::from({R, 1}, masks.depth[j]));
      } else {
        // Volume-only ablation: no pixel branch exists, so supervise every
        // pixel and make the alignment target the branch's own (detached)
        // depth, which zeroes that term exactly.
        masks.mask.push_back(std::vector<double>(size_t(R), 1.0));
        masks.depth.push_back(std::vector<double>(size_t(R), 0.0));
        in.gp_depth.push_back(detach(dv));
      }
    }
  }

  LossReport rep = total_loss(in, masks, cfg_.weights);

  const int64_t step_idx = model_.params().step_count;
  if (!std::isfinite(rep.total)) {
    dump_abort_diagnostics(step_idx, rep, model_.params());
    throw NumericalAbort("non-finite loss at step " + std::to_string(step_idx));
  }

  model_.params().zero_grads();
  rep.loss.backward();
  double lr = adam_cosine_step(model_.params(), cfg_.opt);

  StepLog log;
  log.step = step_idx;
  log.lr = lr;
  log.report = rep;
  log.bin_index = bi;
  return log;
}

std::string Trainer::step_log_json(const StepLog& log) {
  json j;
  j["step"] = log.step;
  j["bin"] = log.bin_index;
  j["lr"] = log.lr;
  j["total"] = log.report.total;
  j["full_mse"] = log.report.full_mse;
  j["full_lpips"] = log.report.full_lpips;
  j["v_mse"] = log.report.v_mse;
  j["v_lpips"] = log.report.v_lpips;
  j["v_dpt"] = log.report.v_dpt;
  j["v_total"] = log.report.v_total;
  j["masked_fraction"] = log.report.masked_fraction;
  return j.dump();
}

void Trainer::run(const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  std::ofstream log(out_dir + "/train_log.jsonl",
                    step_count() == 0 ? std::ios::trunc : std::ios::app);
  OMNI_CHECK(log.good(), "train: cannot open log in " + out_dir);

  while (step_count() < cfg_.steps) {
    StepLog sl = step();
    log << step_log_json(sl) << "\n";
    if (step_count() % cfg_.checkpoint_every == 0 && step_count() < cfg_.steps)
      save(out_dir + "/checkpoint_" + std::to_string(step_count()) + ".bin");
  }
  log.flush();
  save(out_dir + "/checkpoint_final.bin");
}

void Trainer::resume_from(const std::string& path) {
  uint64_t state = rng_.state();
  load_checkpoint(path, model_, state);
  rng_.set_state(state);
}

// ---- evaluation ----

BinEval aggregate_metrics(const std::vector<std::vector<double>>& pred_rgb,
                          const std::vector<std::vector<double>>& gt_rgb,
                          const std::vector<std::vector<double>>& pred_depth,
                          const std::vector<std::vector<double>>& gt_depth, int width,
                          int height) {
  OMNI_CHECK(pred_rgb.size() == gt_rgb.size() && pred_depth.size() == gt_depth.size() &&
                 pred_rgb.size() == pred_depth.size(),
             "aggregate_metrics: view count mismatch");
  BinEval ev;
  double psum = 0, ssum = 0, csum = 0;
  int64_t pn = 0;
  for (size_t i = 0; i < pred_rgb.size(); ++i) {
    double p = psnr(pred_rgb[i], gt_rgb[i]);
    double s = ssim(pred_rgb[i], gt_rgb[i], height, width, 3);
    double c = pcc(pred_depth[i], gt_depth[i]);
    ev.psnr.push_back(p);
    ev.ssim.push_back(s);
    ev.pcc.push_back(c);
    if (std::isinf(p))
      ev.psnr_inf_count++;
    else {
      psum += p;
      pn++;
    }
    ssum += s;
    csum += c;
  }
  size_t n = pred_rgb.size();
  ev.mean_psnr = pn > 0 ? psum / double(pn) : std::numeric_limits<double>::infinity();
  ev.mean_ssim = n ? ssum / double(n) : 0;
  ev.mean_pcc = n ? csum / double(n) : 0;
  return ev;
}

BinEval evaluate_bin(OmniModel& model, const BinSample& bin) {
  const RunConfig& cfg = model.config();
  const int w = cfg.image_width, h = cfg.image_height;
  ImageSet images;
  std::vector<CameraModel> cams;
  for (const auto& v : bin.input) {
    images.push_back(image_tensor(v.rgb, w, h));
    cams.push_back(v.cam);
  }
  ForwardResult fr = model.forward(images, cams, model.make_depth_init(bin));
  GaussianSet gs = forward_gaussians(fr);

  std::vector<std::vector<double>> pr, gr, pd, gd;
  auto add_views = [&](const std::vector<ViewData>& views) {
    for (const auto& v : views) {
      RenderOutput r = render(gs, v.cam);
      for (double& x : r.rgb) x = std::clamp(x, 0.0, 1.0);
      pr.push_back(std::move(r.rgb));
      gr.push_back(v.rgb);
      pd.push_back(std::move(r.depth));
      gd.push_back(v.depth);
    }
  };
  add_views(bin.novel_a);
  add_views(bin.novel_b);
  return aggregate_metrics(pr, gr, pd, gd, w, h);
}

std::string evaluation_report(OmniModel& model, const std::vector<BinSample>& bins) {
  json bins_j = json::array();
  double psum = 0, ssum = 0, csum = 0;
  int64_t pn = 0, inf_total = 0;
  for (size_t i = 0; i < bins.size(); ++i) {
    BinEval ev = evaluate_bin(model, bins[i]);
    json b;
    b["index"] = i;
    b["scene_case"] = bins[i].scene.scene_case;
    b["seed"] = bins[i].scene.seed;
    b["psnr"] = std::isinf(ev.mean_psnr) ? json("inf") : json(ev.mean_psnr);
    b["ssim"] = ev.mean_ssim;
    b["pcc"] = ev.mean_pcc;
    b["psnr_inf_count"] = ev.psnr_inf_count;
    json pv = json::array();
    for (size_t v = 0; v < ev.psnr.size(); ++v)
      pv.push_back({{"psnr", std::isinf(ev.psnr[v]) ? json("inf") : json(ev.psnr[v])},
                    {"ssim", ev.ssim[v]},
                    {"pcc", ev.pcc[v]}});
    b["per_view"] = pv;
    bins_j.push_back(b);
    if (!std::isinf(ev.mean_psnr)) {
      psum += ev.mean_psnr;
      pn++;
    }
    inf_total += ev.psnr_inf_count;
    ssum += ev.mean_ssim;
    csum += ev.mean_pcc;
  }
  json rep;
  rep["bins"] = bins_j;
  rep["mean"] = {
      {"psnr", pn > 0 ? json(psum / double(pn)) : json("inf")},
      {"ssim", bins.empty() ? 0.0 : ssum / double(bins.size())},
      {"pcc", bins.empty() ? 0.0 : csum / double(bins.size())},
      {"psnr_inf_count", inf_total}};
  return rep.dump(2);
}

std::vector<BinSample> load_dataset(const std::string& root) {
  namespace fs = std::filesystem;
  OMNI_CHECK(fs::is_directory(root), "load_dataset: not a directory: " + root);
  std::vector<std::string> dirs;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory() && fs::exists(e.path() / "manifest.json"))
      dirs.push_back(e.path().string());
  std::sort(dirs.begin(), dirs.end());
  OMNI_CHECK(!dirs.empty(), "load_dataset: no bin directories under " + root);
  std::vector<BinSample> bins;
  for (const auto& d : dirs) bins.push_back(read_bin(d));
  return bins;
}

}  // namespace omni
