#pragma once

#include <functional>
#include <stdexcept>
#include <string>

#include "mevo/keypoints.hpp"
#include "mevo/nn.hpp"
#include "mevo/types.hpp"

namespace mevo {

struct OdeConfig {
  enum class Solver { euler, rk4 };
  enum class GradientMode { backprop, adjoint };

  Solver solver = Solver::rk4;
  int steps = 4;
  GradientMode gradient_mode = GradientMode::backprop;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("OdeConfig: steps must be >= 1");
  }
};

// Thrown when an ODE intermediate state stops being finite.
class NumericalDivergenceError : public std::runtime_error {
 public:
  NumericalDivergenceError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

// Coarse dense-motion regressor. Takes K+1 Gaussian-encoded displacement
// channels (channel 0 all-zero for the background) concatenated with the
// frame downsampled to motion resolution, and emits softmax-normalized
// coefficient maps plus a nonnegative per-view confidence mask.
class CoarseMotionNet {
 public:
  CoarseMotionNet() = default;
  CoarseMotionNet(int num_keypoints, int base_channels, Rng& rng);

  struct Output {
    ag::Var alpha;       // [K+1,h,w], channels sum to 1 per pixel
    ag::Var confidence;  // [1,h,w], in (0,1)
  };

  Output operator()(const ag::Var& heatmaps, const ag::Var& frame_small) const;

  void collect_params(const std::string& prefix, nn::ParamList& out) const;
  int num_keypoints() const { return k_; }

 private:
  int k_ = 0;
  nn::Conv2d stem_, down_, mid_, up_;
  nn::Conv2d head_alpha_, head_conf_;
};

// field(x) = sum_i alpha[i](x) * delta[i]; deltas is [K+1,2] with row 0 the
// static background term.
ag::Var regress_coarse_field(const ag::Var& alpha, const ag::Var& deltas);
DeformationField regress_coarse_field(const Tensor& alpha, const DisplacementSet& deltas);

// Motion-evolution dynamics f(field, t). The time is appended to the field
// as a constant broadcast channel.
class OdeDynamicsNet {
 public:
  OdeDynamicsNet() = default;
  OdeDynamicsNet(int base_channels, Rng& rng);

  ag::Var operator()(const ag::Var& field, double t) const;

  void collect_params(const std::string& prefix, nn::ParamList& out) const;

 private:
  nn::Conv2d c1_, c2_, head_;
};

using DynamicsFn = std::function<ag::Var(const ag::Var& field, double t)>;

// Integrates d(field)/dt = dynamics(field, t) over t in [0,1] with the
// configured fixed-step solver. `backprop` differentiates through the solver
// steps; `adjoint` integrates the adjoint system backwards in time, trading
// graph memory for a second pass (dynamics_params lists the trainable leaves
// the adjoint must accumulate into).
ag::Var evolve_field(const ag::Var& initial, const DynamicsFn& dynamics, const OdeConfig& cfg,
                     const nn::ParamList& dynamics_params = {});

DeformationField evolve_field(const DeformationField& initial, const OdeDynamicsNet& dynamics,
                              const OdeConfig& cfg);

// The networks the dense-motion pipeline composes.
struct MotionSystem {
  const KeypointExtractor* keypoints = nullptr;
  const CoarseMotionNet* coarse = nullptr;
  const OdeDynamicsNet* dynamics = nullptr;
};

struct DenseMotionConfig {
  double heatmap_sigma = 0.15;  // Gaussian encoding width, normalized units
  int motion_scale = 4;         // motion grid = frame resolution / motion_scale
  OdeConfig ode;
  bool motion_evolution = true;

  void validate() const {
    ode.validate();
    if (heatmap_sigma <= 0) throw std::invalid_argument("DenseMotionConfig: sigma must be positive");
    if (motion_scale < 1) throw std::invalid_argument("DenseMotionConfig: motion_scale must be >= 1");
  }
};

struct DenseMotionResult {
  ag::Var field;        // [2,h,w] at motion resolution
  ag::Var field_full;   // upsampled to frame resolution
  ag::Var coarse;       // the initial field before evolution
  ag::Var alpha;        // coefficient maps
  ag::Var confidence;   // [1,h,w]
  ag::Var deltas;       // [K+1,2]
  ag::Var view_kps;     // [K,2]
};

// Full dense-motion pass for one view against precomputed driving keypoints.
DenseMotionResult dense_motion_from_kps(const ag::Var& view_frame, const ag::Var& drv_kps,
                                        const MotionSystem& nets, const DenseMotionConfig& cfg);

// Spec-level entry point: extracts keypoints from both frames itself and
// returns the frame-resolution deformation field.
DeformationField dense_motion(const Frame& src, const Frame& drv, const MotionSystem& nets,
                              const DenseMotionConfig& cfg);

}  // namespace mevo
