#pragma once

#include <functional>

#include "omni/nn.hpp"

namespace omni {

struct AdamSchedule {
  double base_lr = 1e-4;
  int64_t warmup_steps = 1000;
  int64_t total_steps = 100000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;  // decoupled
  double grad_clip = 1.0;      // global norm
  bool lenient = false;        // non-finite grads: skip step instead of throwing
};

// Linear warmup then cosine decay; factor in [0,1].
double lr_factor(const AdamSchedule& s, int64_t step);

// One optimizer step over every parameter in the store using the gradients
// currently accumulated on them. Returns the applied learning rate.
double adam_cosine_step(ParameterStore& store, const AdamSchedule& schedule);

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  int64_t checked = 0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_err = 0.0;
  bool ok = true;
};

// Compares analytic gradients of f() (a scalar-valued graph over the store's
// parameters, rebuilt on every call) against central differences.
// max_elems_per_param < 0 checks every element; otherwise a deterministic
// random sample of that many elements per parameter.
GradCheckReport gradient_check(const std::function<Tensor()>& f, ParameterStore& store,
                               double step = 1e-5, double tol = 1e-6,
                               int64_t max_elems_per_param = -1, uint64_t seed = 7);

}  // namespace omni
