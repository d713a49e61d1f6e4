#include "omni/optim.hpp"

#include <cmath>
#include <iostream>

namespace omni {

double lr_factor(const AdamSchedule& s, int64_t step) {
  if (s.warmup_steps > 0 && step < s.warmup_steps)
    return double(step + 1) / double(s.warmup_steps);
  double denom = double(std::max<int64_t>(s.total_steps - s.warmup_steps, 1));
  double progress = double(step - s.warmup_steps) / denom;
  progress = std::clamp(progress, 0.0, 1.0);
  return 0.5 * (1.0 + std::cos(3.14159265358979323846 * progress));
}

double adam_cosine_step(ParameterStore& store, const AdamSchedule& sch) {
  OMNI_CHECK(store.step_count < sch.total_steps, "optimizer past total_steps");

  double sq = 0.0;
  bool finite = true;
  for (auto& [name, e] : store.entries()) {
    const auto& g = e.t.grad();
    for (double x : g) {
      if (!std::isfinite(x)) finite = false;
      sq += x * x;
    }
  }
  if (!finite) {
    if (!sch.lenient) fail("non-finite gradient in optimizer step");
    std::cerr << "[optim] non-finite gradients at step " << store.step_count
              << ", skipping update\n";
    store.step_count++;
    return 0.0;
  }
  double gnorm = std::sqrt(sq);
  double clip = (sch.grad_clip > 0 && gnorm > sch.grad_clip) ? sch.grad_clip / gnorm : 1.0;

  double lr = sch.base_lr * lr_factor(sch, store.step_count);
  int64_t t = store.step_count + 1;
  double bc1 = 1.0 - std::pow(sch.beta1, double(t));
  double bc2 = 1.0 - std::pow(sch.beta2, double(t));

  for (auto& [name, e] : store.entries()) {
    auto& v = e.t.values();
    const auto& g = e.t.grad();
    for (size_t i = 0; i < v.size(); ++i) {
      double gi = g[i] * clip;
      e.m[i] = sch.beta1 * e.m[i] + (1 - sch.beta1) * gi;
      e.v[i] = sch.beta2 * e.v[i] + (1 - sch.beta2) * gi * gi;
      double mhat = e.m[i] / bc1;
      double vhat = e.v[i] / bc2;
      v[i] -= lr * (mhat / (std::sqrt(vhat) + sch.eps) + sch.weight_decay * v[i]);
    }
  }
  store.step_count++;
  return lr;
}

GradCheckReport gradient_check(const std::function<Tensor()>& f, ParameterStore& store,
                               double step, double tol, int64_t max_elems_per_param,
                               uint64_t seed) {
  GradCheckReport report;

  store.zero_grads();
  Tensor loss = f();
  OMNI_CHECK(std::isfinite(loss.item()), "gradient_check: non-finite loss");
  loss.backward();

  // snapshot analytic grads (the FD evaluations below rebuild the graph)
  std::map<std::string, std::vector<double>> analytic;
  for (auto& [name, e] : store.entries()) analytic[name] = e.t.grad();

  Rng rng(seed);
  for (auto& [name, e] : store.entries()) {
    GradCheckEntry ent;
    ent.name = name;
    auto& vals = e.t.values();
    int64_t n = int64_t(vals.size());
    std::vector<int64_t> idx;
    if (max_elems_per_param < 0 || max_elems_per_param >= n) {
      idx.resize(n);
      for (int64_t i = 0; i < n; ++i) idx[i] = i;
    } else {
      for (int64_t i = 0; i < max_elems_per_param; ++i) idx.push_back(rng.randint(n));
    }
    for (int64_t i : idx) {
      double saved = vals[i];
      vals[i] = saved + step;
      double fp = f().item();
      vals[i] = saved - step;
      double fm = f().item();
      vals[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        fail("gradient_check: non-finite loss while perturbing " + name);
      double numeric = (fp - fm) / (2 * step);
      double a = analytic[name][i];
      // The denominator floor keeps finite-difference resolution noise on
      // near-zero gradients (about eps * |loss| / step) from reading as a
      // large relative error.
      double rel = std::fabs(a - numeric) / std::max({std::fabs(a), std::fabs(numeric), 1e-6});
      ent.max_rel_err = std::max(ent.max_rel_err, rel);
      ent.checked++;
    }
    ent.ok = ent.max_rel_err < tol;
    report.max_rel_err = std::max(report.max_rel_err, ent.max_rel_err);
    report.ok = report.ok && ent.ok;
    report.entries.push_back(std::move(ent));
  }
  return report;
}

}  // namespace omni
