#include "mevo/motion.hpp"

#include <cmath>

#include "mevo/image_ops.hpp"

namespace mevo {

namespace {

void check_finite_state(const Tensor& state, int step, const char* where) {
  if (!state.all_finite())
    throw NumericalDivergenceError(
        step, std::string("evolve_field: non-finite state in ") + where + " at step " +
                  std::to_string(step));
}

}  // namespace

// ---------------- coarse motion ----------------

CoarseMotionNet::CoarseMotionNet(int num_keypoints, int base_channels, Rng& rng) : k_(num_keypoints) {
  if (num_keypoints < 1) throw std::invalid_argument("CoarseMotionNet: K must be >= 1");
  const int cin = (num_keypoints + 1) + 3;
  const int c = base_channels, c2 = 2 * base_channels;
  stem_ = nn::Conv2d(cin, c, 3, 1, rng);
  down_ = nn::Conv2d(c, c2, 3, 2, rng);
  mid_ = nn::Conv2d(c2, c2, 3, 1, rng);
  up_ = nn::Conv2d(c2, c, 3, 1, rng);
  head_alpha_ = nn::Conv2d(c, num_keypoints + 1, 1, 1, rng, 0.5);
  head_conf_ = nn::Conv2d(c, 1, 1, 1, rng, 0.5);
}

CoarseMotionNet::Output CoarseMotionNet::operator()(const ag::Var& heatmaps,
                                                    const ag::Var& frame_small) const {
  if (heatmaps.value().dim(0) != k_ + 1)
    throw std::invalid_argument("CoarseMotionNet: expected K+1 heatmap channels");
  if (heatmaps.value().dim(1) != frame_small.value().dim(1) ||
      heatmaps.value().dim(2) != frame_small.value().dim(2))
    throw std::invalid_argument("CoarseMotionNet: heatmap and frame resolutions differ");

  ag::Var x = nn::conv_elu(stem_, ag::concat_channels({heatmaps, frame_small}));
  ag::Var skip = x;
  x = nn::conv_elu(down_, x);
  x = nn::conv_elu(mid_, x);
  x = ag::resize_bilinear(x, skip.value().dim(1), skip.value().dim(2));
  x = ag::elu(up_(x) + skip);
  return {ag::softmax_channels(head_alpha_(x)), ag::sigmoid(head_conf_(x))};
}

void CoarseMotionNet::collect_params(const std::string& prefix, nn::ParamList& out) const {
  stem_.collect(prefix + ".stem", out);
  down_.collect(prefix + ".down", out);
  mid_.collect(prefix + ".mid", out);
  up_.collect(prefix + ".up", out);
  head_alpha_.collect(prefix + ".alpha", out);
  head_conf_.collect(prefix + ".conf", out);
}

ag::Var regress_coarse_field(const ag::Var& alpha, const ag::Var& deltas) {
  const Tensor& a = alpha.value();
  const Tensor& d = deltas.value();
  if (a.rank() != 3) throw std::invalid_argument("regress_coarse_field: alpha must be [K+1,H,W]");
  if (d.rank() != 2 || d.dim(1) != 2)
    throw std::invalid_argument("regress_coarse_field: deltas must be [K+1,2]");
  if (a.dim(0) != d.dim(0))
    throw std::invalid_argument("regress_coarse_field: channel count " + std::to_string(a.dim(0)) +
                                " does not match displacement count " + std::to_string(d.dim(0)));
  const int k1 = a.dim(0), h = a.dim(1), w = a.dim(2);
  const std::int64_t hw = static_cast<std::int64_t>(h) * w;

  Tensor out({2, h, w});
  for (int i = 0; i < k1; ++i) {
    const double dx = d.at(i, 0), dy = d.at(i, 1);
    const double* ai = a.data() + i * hw;
    for (std::int64_t p = 0; p < hw; ++p) {
      out[p] += ai[p] * dx;
      out[hw + p] += ai[p] * dy;
    }
  }

  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  node->parents = {alpha.node(), deltas.node()};
  node->requires_grad = alpha.requires_grad() || deltas.requires_grad();
  if (node->requires_grad) {
    node->backprop = [alpha, deltas, k1, hw](ag::Node& n) {
      const double* g0 = n.grad.data();
      const double* g1 = n.grad.data() + hw;
      if (alpha.requires_grad()) {
        alpha.node()->ensure_grad();
        const Tensor& d = deltas.value();
        double* da = alpha.node()->grad.data();
        for (int i = 0; i < k1; ++i) {
          const double dx = d.at(i, 0), dy = d.at(i, 1);
          for (std::int64_t p = 0; p < hw; ++p) da[i * hw + p] += g0[p] * dx + g1[p] * dy;
        }
      }
      if (deltas.requires_grad()) {
        deltas.node()->ensure_grad();
        const Tensor& a = alpha.value();
        for (int i = 0; i < k1; ++i) {
          double sx = 0.0, sy = 0.0;
          const double* ai = a.data() + i * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            sx += ai[p] * g0[p];
            sy += ai[p] * g1[p];
          }
          deltas.node()->grad.at(i, 0) += sx;
          deltas.node()->grad.at(i, 1) += sy;
        }
      }
    };
  }
  return ag::Var(std::move(node));
}

DeformationField regress_coarse_field(const Tensor& alpha, const DisplacementSet& deltas) {
  Tensor d({deltas.count(), 2});
  for (int i = 0; i < deltas.count(); ++i) {
    d.at(i, 0) = deltas.deltas[static_cast<std::size_t>(i)].x;
    d.at(i, 1) = deltas.deltas[static_cast<std::size_t>(i)].y;
  }
  DeformationField f;
  f.flow = regress_coarse_field(ag::constant(alpha), ag::constant(d)).value();
  return f;
}

// ---------------- ODE dynamics ----------------

OdeDynamicsNet::OdeDynamicsNet(int base_channels, Rng& rng) {
  c1_ = nn::Conv2d(3, base_channels, 3, 1, rng);
  c2_ = nn::Conv2d(base_channels, base_channels, 3, 1, rng);
  head_ = nn::Conv2d(base_channels, 2, 3, 1, rng, 0.0);  // zero dynamics at init
}

ag::Var OdeDynamicsNet::operator()(const ag::Var& field, double t) const {
  const Tensor& v = field.value();
  ag::Var tchan = ag::constant(Tensor::full({1, v.dim(1), v.dim(2)}, t));
  ag::Var x = ag::concat_channels({field, tchan});
  x = nn::conv_elu(c1_, x);
  x = nn::conv_elu(c2_, x);
  return head_(x);
}

void OdeDynamicsNet::collect_params(const std::string& prefix, nn::ParamList& out) const {
  c1_.collect(prefix + ".c1", out);
  c2_.collect(prefix + ".c2", out);
  head_.collect(prefix + ".head", out);
}

// ---------------- solvers ----------------

namespace {

// One fixed step of the configured solver on the live tape.
ag::Var solver_step(const ag::Var& state, double t, double h, const DynamicsFn& f,
                    OdeConfig::Solver solver, int step_index) {
  ag::Var next;
  if (solver == OdeConfig::Solver::euler) {
    next = state + ag::scale(f(state, t), h);
  } else {
    ag::Var k1 = f(state, t);
    ag::Var k2 = f(state + ag::scale(k1, 0.5 * h), t + 0.5 * h);
    ag::Var k3 = f(state + ag::scale(k2, 0.5 * h), t + 0.5 * h);
    ag::Var k4 = f(state + ag::scale(k3, h), t + h);
    next = state + ag::scale(k1 + ag::scale(k2, 2.0) + ag::scale(k3, 2.0) + k4, h / 6.0);
  }
  check_finite_state(next.value(), step_index, "solver step");
  return next;
}

// Forward + adjoint-mode machinery. The augmented reverse state carries the
// field, the adjoint, and the parameter accumulators; vector-Jacobian
// products come from a fresh local tape at each evaluation point.
struct AugmentedState {
  Tensor field;
  Tensor adjoint;
  std::vector<Tensor> param_grads;
};

struct AugmentedDeriv {
  Tensor dfield;
  Tensor dadjoint;
  std::vector<Tensor> dparams;
};

class AdjointEvaluator {
 public:
  AdjointEvaluator(const DynamicsFn& f, const nn::ParamList& params) : f_(f), params_(params) {}

  AugmentedDeriv operator()(const AugmentedState& s, double t) const {
    AugmentedDeriv d;
    // the local VJP backward below writes into the live parameter grads;
    // snapshot them first and restore afterwards so contributions already
    // accumulated by the outer pass survive
    std::vector<Tensor> saved;
    saved.reserve(params_.size());
    for (const auto& [name, p] : params_) {
      auto& pv = const_cast<ag::Var&>(p);
      pv.node()->ensure_grad();
      saved.push_back(pv.grad());
      pv.grad().fill(0.0);
    }

    ag::Var leaf = ag::parameter(s.field);
    ag::Var y = f_(leaf, t);
    ag::Var pseudo = ag::sum(y * ag::constant(s.adjoint));
    leaf.zero_grad();
    ag::backward(pseudo);

    d.dfield = y.value();
    d.dadjoint = leaf.grad();
    for (std::int64_t i = 0; i < d.dadjoint.size(); ++i) d.dadjoint[i] = -d.dadjoint[i];
    d.dparams.reserve(params_.size());
    for (std::size_t pi = 0; pi < params_.size(); ++pi) {
      auto& pv = const_cast<ag::Var&>(params_[pi].second);
      Tensor g = pv.grad();
      for (std::int64_t i = 0; i < g.size(); ++i) g[i] = -g[i];
      d.dparams.push_back(std::move(g));
      pv.grad() = saved[pi];
    }
    return d;
  }

 private:
  const DynamicsFn& f_;
  const nn::ParamList& params_;
};

AugmentedState axpy(const AugmentedState& s, double c, const AugmentedDeriv& d) {
  AugmentedState out = s;
  for (std::int64_t i = 0; i < out.field.size(); ++i) out.field[i] += c * d.dfield[i];
  for (std::int64_t i = 0; i < out.adjoint.size(); ++i) out.adjoint[i] += c * d.dadjoint[i];
  for (std::size_t p = 0; p < out.param_grads.size(); ++p)
    for (std::int64_t i = 0; i < out.param_grads[p].size(); ++i)
      out.param_grads[p][i] += c * d.dparams[p][i];
  return out;
}

void axpy_deriv(AugmentedDeriv& acc, double c, const AugmentedDeriv& d) {
  for (std::int64_t i = 0; i < acc.dfield.size(); ++i) acc.dfield[i] += c * d.dfield[i];
  for (std::int64_t i = 0; i < acc.dadjoint.size(); ++i) acc.dadjoint[i] += c * d.dadjoint[i];
  for (std::size_t p = 0; p < acc.dparams.size(); ++p)
    for (std::int64_t i = 0; i < acc.dparams[p].size(); ++i) acc.dparams[p][i] += c * d.dparams[p][i];
}

}  // namespace

ag::Var evolve_field(const ag::Var& initial, const DynamicsFn& dynamics, const OdeConfig& cfg,
                     const nn::ParamList& dynamics_params) {
  cfg.validate();
  const Tensor& v0 = initial.value();
  if (v0.rank() != 3 || v0.dim(0) != 2)
    throw std::invalid_argument("evolve_field: initial state must be [2,H,W]");
  check_finite_state(v0, 0, "initial state");
  const double h = 1.0 / cfg.steps;

  if (cfg.gradient_mode == OdeConfig::GradientMode::backprop) {
    ag::Var state = initial;
    for (int s = 0; s < cfg.steps; ++s) state = solver_step(state, s * h, h, dynamics, cfg.solver, s + 1);
    return state;
  }

  // Adjoint mode: integrate forward without retaining the graph, then solve
  // the augmented system backwards inside the node's backprop closure.
  Tensor forward_end = v0;
  {
    ag::Var state = ag::constant(v0);
    for (int s = 0; s < cfg.steps; ++s) state = solver_step(state, s * h, h, dynamics, cfg.solver, s + 1);
    forward_end = state.value();
  }

  auto node = std::make_shared<ag::Node>();
  node->value = forward_end;
  node->parents.push_back(initial.node());
  node->requires_grad = initial.requires_grad();
  for (const auto& [name, p] : dynamics_params) {
    node->parents.push_back(p.node());
    if (p.requires_grad()) node->requires_grad = true;
  }
  if (node->requires_grad) {
    // capture by value: the closure owns what it needs to re-integrate
    DynamicsFn f = dynamics;
    nn::ParamList params = dynamics_params;
    OdeConfig c = cfg;
    Tensor end_state = forward_end;
    node->backprop = [initial, f, params, c, end_state, h](ag::Node& n) {
      AdjointEvaluator eval(f, params);
      AugmentedState s;
      s.field = end_state;
      s.adjoint = n.grad;
      for (const auto& [name, p] : params) s.param_grads.push_back(Tensor::zeros(p.value().shape()));

      for (int step = c.steps; step >= 1; --step) {
        const double t1 = step * h;  // integrating from t1 down to t1-h
        if (c.solver == OdeConfig::Solver::euler) {
          AugmentedDeriv d = eval(s, t1);
          s = axpy(s, -h, d);
        } else {
          AugmentedDeriv k1 = eval(s, t1);
          AugmentedDeriv k2 = eval(axpy(s, -0.5 * h, k1), t1 - 0.5 * h);
          AugmentedDeriv k3 = eval(axpy(s, -0.5 * h, k2), t1 - 0.5 * h);
          AugmentedDeriv k4 = eval(axpy(s, -h, k3), t1 - h);
          AugmentedDeriv sum = k1;
          axpy_deriv(sum, 2.0, k2);
          axpy_deriv(sum, 2.0, k3);
          axpy_deriv(sum, 1.0, k4);
          // divide the accumulated tableau by 6 via the axpy scale
          s = axpy(s, -h / 6.0, sum);
        }
        check_finite_state(s.adjoint, step, "adjoint step");
      }

      if (initial.requires_grad()) {
        initial.node()->ensure_grad();
        double* dst = initial.node()->grad.data();
        for (std::int64_t i = 0; i < s.adjoint.size(); ++i) dst[i] += s.adjoint[i];
      }
      for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = const_cast<ag::Var&>(params[pi].second);
        if (!p.requires_grad()) continue;
        p.node()->ensure_grad();
        double* dst = p.grad().data();
        const Tensor& src = s.param_grads[pi];
        for (std::int64_t i = 0; i < src.size(); ++i) dst[i] += src[i];
      }
    };
  }
  return ag::Var(std::move(node));
}

DeformationField evolve_field(const DeformationField& initial, const OdeDynamicsNet& dynamics,
                              const OdeConfig& cfg) {
  initial.validate();
  DynamicsFn f = [&dynamics](const ag::Var& s, double t) { return dynamics(s, t); };
  DeformationField out;
  out.flow = evolve_field(ag::constant(initial.flow), f, cfg).value();
  return out;
}

// ---------------- dense motion pipeline ----------------

DenseMotionResult dense_motion_from_kps(const ag::Var& view_frame, const ag::Var& drv_kps,
                                        const MotionSystem& nets, const DenseMotionConfig& cfg) {
  cfg.validate();
  if (!nets.keypoints || !nets.coarse || !nets.dynamics)
    throw std::invalid_argument("dense_motion: missing networks");
  const Tensor& v = view_frame.value();
  const int mh = v.dim(1) / cfg.motion_scale, mw = v.dim(2) / cfg.motion_scale;

  DenseMotionResult r;
  r.view_kps = (*nets.keypoints)(view_frame);
  r.deltas = sparse_displacements(r.view_kps, drv_kps);

  // K driving-centered Gaussian channels behind an all-zero background channel
  ag::Var gauss = ag::gaussian_heatmap(drv_kps, cfg.heatmap_sigma, mh, mw);
  ag::Var bg = ag::constant(Tensor({1, mh, mw}));
  ag::Var encoding = ag::concat_channels({bg, gauss});
  ag::Var frame_small = ag::resize_bilinear(view_frame, mh, mw);

  auto out = (*nets.coarse)(encoding, frame_small);
  r.alpha = out.alpha;
  r.confidence = out.confidence;
  r.coarse = regress_coarse_field(r.alpha, r.deltas);

  if (cfg.motion_evolution) {
    nn::ParamList dyn_params;
    nets.dynamics->collect_params("fe", dyn_params);
    DynamicsFn f = [net = nets.dynamics](const ag::Var& s, double t) { return (*net)(s, t); };
    r.field = evolve_field(r.coarse, f, cfg.ode, dyn_params);
  } else {
    r.field = r.coarse;
  }
  r.field_full = ag::resize_bilinear(r.field, v.dim(1), v.dim(2));
  return r;
}

DeformationField dense_motion(const Frame& src, const Frame& drv, const MotionSystem& nets,
                              const DenseMotionConfig& cfg) {
  if (src.height() != drv.height() || src.width() != drv.width())
    throw std::invalid_argument("dense_motion: frames must share dimensions");
  ag::Var drv_kps = (*nets.keypoints)(ag::constant(drv.data));
  auto r = dense_motion_from_kps(ag::constant(src.data), drv_kps, nets, cfg);
  DeformationField f;
  f.flow = r.field_full.value();
  return f;
}

}  // namespace mevo
