#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "mevo/autodiff.hpp"
#include "mevo/rng.hpp"

namespace mevo::nn {

// Named trainable leaves, collected from each network for the optimizer and
// the checkpoint writer. Order is deterministic (collection order).
using ParamList = std::vector<std::pair<std::string, ag::Var>>;

struct Conv2d {
  ag::Var w;  // [Co,Ci,kh,kw]
  ag::Var b;  // [Co]
  int stride = 1;
  int pad = 0;

  Conv2d() = default;

  // He-uniform init scaled by `gain`; gain 0 zero-initializes the layer.
  Conv2d(int cin, int cout, int k, int stride_, Rng& rng, double gain = 1.0)
      : stride(stride_), pad(k / 2) {
    Tensor wt({cout, cin, k, k});
    const double limit = gain * std::sqrt(6.0 / (cin * k * k));
    for (std::int64_t i = 0; i < wt.size(); ++i) wt[i] = rng.uniform(-limit, limit);
    w = ag::parameter(std::move(wt));
    b = ag::parameter(Tensor({cout}));
  }

  ag::Var operator()(const ag::Var& x) const { return ag::conv2d(x, w, b, stride, pad); }

  void collect(const std::string& prefix, ParamList& out) const {
    out.emplace_back(prefix + ".w", w);
    out.emplace_back(prefix + ".b", b);
  }
};

inline ag::Var conv_elu(const Conv2d& c, const ag::Var& x) { return ag::elu(c(x)); }

// Residual block: x + conv2(elu(conv1(x))). Keeps the channel count; the
// second conv is zero-initialized so the block starts as the identity.
struct ResBlock {
  Conv2d c1, c2;

  ResBlock() = default;
  ResBlock(int channels, Rng& rng)
      : c1(channels, channels, 3, 1, rng), c2(channels, channels, 3, 1, rng, 0.0) {}

  ag::Var operator()(const ag::Var& x) const { return x + c2(ag::elu(c1(x))); }

  void collect(const std::string& prefix, ParamList& out) const {
    c1.collect(prefix + ".c1", out);
    c2.collect(prefix + ".c2", out);
  }
};

inline void zero_grads(ParamList& params) {
  for (auto& [name, v] : params) v.zero_grad();
}

inline std::int64_t param_count(const ParamList& params) {
  std::int64_t n = 0;
  for (const auto& [name, v] : params) n += v.value().size();
  return n;
}

}  // namespace mevo::nn
