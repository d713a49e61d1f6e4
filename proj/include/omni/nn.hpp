#pragma once

#include <map>
#include <string>

#include "omni/tensor.hpp"

namespace omni {

// Named parameters plus Adam moment buffers. std::map keeps iteration order
// deterministic for the optimizer, checkpointing and gradient checks.
class ParameterStore {
 public:
  struct Entry {
    Tensor t;
    std::vector<double> m, v;  // Adam first/second moments
  };

  Tensor add(const std::string& name, Shape shape, std::vector<double> init);
  Tensor get(const std::string& name) const;
  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  std::map<std::string, Entry>& entries() { return entries_; }
  const std::map<std::string, Entry>& entries() const { return entries_; }

  void zero_grads();
  int64_t step_count = 0;
  int64_t total_scalars() const;

 private:
  std::map<std::string, Entry> entries_;
};

// fan-in uniform init for weights
std::vector<double> init_uniform_fan_in(Rng& rng, int64_t fan_in, int64_t n);
std::vector<double> init_normal(Rng& rng, double stddev, int64_t n);

struct Dense {
  Tensor w, b;
  Dense() = default;
  Dense(ParameterStore& ps, Rng& rng, const std::string& name, int64_t in, int64_t out,
        bool zero_init = false);
  Tensor operator()(const Tensor& x) const { return linear(x, w, b); }
};

struct Conv {
  Tensor w, b;
  int stride = 1;
  Pad pad = Pad::same;
  Conv() = default;
  Conv(ParameterStore& ps, Rng& rng, const std::string& name, int k, int64_t in, int64_t out,
       int stride = 1, Pad pad = Pad::same);
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

struct Norm {
  Tensor gamma, beta;
  Norm() = default;
  Norm(ParameterStore& ps, const std::string& name, int64_t c);
  Tensor operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }
};

}  // namespace omni
