#include "omni/nn.hpp"

#include <cmath>

namespace omni {

Tensor ParameterStore::add(const std::string& name, Shape shape, std::vector<double> init) {
  OMNI_CHECK(!entries_.count(name), "duplicate parameter name: " + name);
  Tensor t = Tensor::from(std::move(shape), std::move(init), true);
  Entry e;
  e.t = t;
  e.m.assign(t.numel(), 0.0);
  e.v.assign(t.numel(), 0.0);
  entries_.emplace(name, std::move(e));
  return t;
}

Tensor ParameterStore::get(const std::string& name) const {
  auto it = entries_.find(name);
  OMNI_CHECK(it != entries_.end(), "unknown parameter: " + name);
  return it->second.t;
}

void ParameterStore::zero_grads() {
  for (auto& [_, e] : entries_) e.t.zero_grad();
}

int64_t ParameterStore::total_scalars() const {
  int64_t n = 0;
  for (const auto& [_, e] : entries_) n += e.t.numel();
  return n;
}

std::vector<double> init_uniform_fan_in(Rng& rng, int64_t fan_in, int64_t n) {
  double bound = 1.0 / std::sqrt(double(std::max<int64_t>(fan_in, 1)));
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return v;
}

std::vector<double> init_normal(Rng& rng, double stddev, int64_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal() * stddev;
  return v;
}

Dense::Dense(ParameterStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
             bool zero_init) {
  w = ps.add(name + ".w", {in, out},
             zero_init ? std::vector<double>(in * out, 0.0)
                       : init_uniform_fan_in(rng, in, in * out));
  b = ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
}

Conv::Conv(ParameterStore& ps, Rng& rng, const std::string& name, int k, int64_t in,
           int64_t out, int stride_, Pad pad_) {
  w = ps.add(name + ".w", {k, k, in, out}, init_uniform_fan_in(rng, k * k * in, k * k * in * out));
  b = ps.add(name + ".b", {out}, std::vector<double>(out, 0.0));
  stride = stride_;
  pad = pad_;
}

Norm::Norm(ParameterStore& ps, const std::string& name, int64_t c) {
  gamma = ps.add(name + ".g", {c}, std::vector<double>(c, 1.0));
  beta = ps.add(name + ".b", {c}, std::vector<double>(c, 0.0));
}

}  // namespace omni
