#pragma once

#include "omni/metrics.hpp"
#include "omni/model.hpp"

namespace omni {

// Thrown when a training step produces a non-finite loss; the diagnostic
// dump (step, loss components, parameter norms) has already been written to
// stderr when this propagates.
struct NumericalAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---- checkpointing ----

// Binary checkpoint: magic, version, normalized config JSON, step count,
// training RNG state, then every named parameter with its Adam moments.
// save -> load -> save is byte-identical.
void save_checkpoint(const std::string& path, const OmniModel& model, uint64_t rng_state);

// Reads just the embedded config (to construct a matching model).
RunConfig checkpoint_config(const std::string& path);

// Restores parameters, Adam state, step count and RNG state into a model
// built from the same config.
void load_checkpoint(const std::string& path, OmniModel& model, uint64_t& rng_state);

// ---- training ----

struct StepLog {
  int64_t step = 0;   // index of the completed step (0-based)
  double lr = 0;
  LossReport report;
  size_t bin_index = 0;
};

class Trainer {
 public:
  Trainer(const RunConfig& cfg, std::vector<BinSample> bins);

  // One optimization step: sample a bin and views, forward, loss, backward,
  // Adam. Throws NumericalAbort on a non-finite loss.
  StepLog step();

  // Runs to cfg.steps with JSONL logging to <out_dir>/train_log.jsonl and
  // checkpoints every cfg.checkpoint_every steps plus a final one at
  // <out_dir>/checkpoint_final.bin.
  void run(const std::string& out_dir);

  void save(const std::string& path) const { save_checkpoint(path, model_, rng_.state()); }
  void resume_from(const std::string& path);

  OmniModel& model() { return model_; }
  int64_t step_count() const { return model_.params().step_count; }

  static std::string step_log_json(const StepLog& log);  // one JSONL line

 private:
  RunConfig cfg_;
  OmniModel model_;
  std::vector<BinSample> bins_;
  mutable Rng rng_;
};

// ---- evaluation ----

struct BinEval {
  std::vector<double> psnr, ssim, pcc;  // one entry per novel view
  double mean_psnr = 0, mean_ssim = 0, mean_pcc = 0;
  int64_t psnr_inf_count = 0;  // views excluded from the PSNR mean
};

// Per-view image/depth metrics; PSNR +inf views are excluded from the mean
// and counted (all-inf means report mean_psnr = inf).
BinEval aggregate_metrics(const std::vector<std::vector<double>>& pred_rgb,
                          const std::vector<std::vector<double>>& gt_rgb,
                          const std::vector<std::vector<double>>& pred_depth,
                          const std::vector<std::vector<double>>& gt_depth, int width,
                          int height);

// Inference on the bin's input views, then novel-view rendering of the
// merged Gaussian set and metrics against the bin's ground truth.
BinEval evaluate_bin(OmniModel& model, const BinSample& bin);

// JSON report over a dataset of bins (written by the eval command).
std::string evaluation_report(OmniModel& model, const std::vector<BinSample>& bins);

// Loads every bin directory under a dataset root (subdirectories containing
// manifest.json), sorted by name.
std::vector<BinSample> load_dataset(const std::string& root);

// Merged renderable snapshot of a forward result (volume + pixel).
GaussianSet forward_gaussians(const ForwardResult& fr);

}  // namespace omni
