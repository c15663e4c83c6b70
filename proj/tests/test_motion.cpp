#include <doctest.h>

#include <cmath>

#include "mevo/model.hpp"
#include "mevo/motion.hpp"
#include "test_util.hpp"

using namespace mevo;
using testutil::gradient_check;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

Tensor softmaxed_alpha(int channels, int h, int w, Rng& rng) {
  return ag::softmax_channels(ag::constant(random_tensor({channels, h, w}, rng, -2, 2))).value();
}

ModelConfig probe_config() {
  ModelConfig c;
  c.frame_size = 16;
  c.num_keypoints = 4;
  c.base_channels = 4;
  c.motion_scale = 4;
  c.ode.steps = 2;
  return c;
}

}  // namespace

TEST_CASE("regress_coarse_field") {
  SUBCASE("background winning everywhere gives the zero field") {
    Tensor alpha({3, 4, 4});
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 4; ++x) alpha.at(0, y, x) = 1.0;
    DisplacementSet d{{{0, 0}, {0.5, -0.2}, {0.1, 0.9}}};
    DeformationField f = regress_coarse_field(alpha, d);
    CHECK(f.flow.min() == 0.0);
    CHECK(f.flow.max() == 0.0);
  }
  SUBCASE("single active coefficient copies its displacement") {
    Tensor alpha({2, 3, 3});
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) alpha.at(1, y, x) = 1.0;
    DisplacementSet d{{{0, 0}, {0.1, 0.0}}};
    DeformationField f = regress_coarse_field(alpha, d);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) {
        CHECK(f.flow.at(0, y, x) == doctest::Approx(0.1));
        CHECK(f.flow.at(1, y, x) == doctest::Approx(0.0));
      }
  }
  SUBCASE("matches the per-pixel weighted-sum oracle") {
    Rng rng(17);
    Tensor alpha = softmaxed_alpha(3, 5, 6, rng);
    DisplacementSet d{{{0, 0}, {0.3, -0.1}, {-0.25, 0.4}}};
    DeformationField f = regress_coarse_field(alpha, d);
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 6; ++x) {
        double ex = 0.0, ey = 0.0;
        for (int i = 0; i < 3; ++i) {
          ex += alpha.at(i, y, x) * d.deltas[static_cast<std::size_t>(i)].x;
          ey += alpha.at(i, y, x) * d.deltas[static_cast<std::size_t>(i)].y;
        }
        CHECK(std::fabs(f.flow.at(0, y, x) - ex) < 1e-6);
        CHECK(std::fabs(f.flow.at(1, y, x) - ey) < 1e-6);
      }
  }
  SUBCASE("zero displacements give a zero field regardless of alpha") {
    Rng rng(18);
    Tensor alpha = softmaxed_alpha(4, 4, 4, rng);
    DisplacementSet d{{{0, 0}, {0, 0}, {0, 0}, {0, 0}}};
    DeformationField f = regress_coarse_field(alpha, d);
    CHECK(f.flow.min() == 0.0);
    CHECK(f.flow.max() == 0.0);
  }
  SUBCASE("channel mismatch is rejected") {
    Tensor alpha({3, 4, 4});
    DisplacementSet d{{{0, 0}, {0.1, 0.1}}};
    CHECK_THROWS_AS(regress_coarse_field(alpha, d), std::invalid_argument);
  }
  SUBCASE("gradients") {
    Rng rng(19);
    ag::Var alpha = ag::parameter(random_tensor({3, 4, 4}, rng));
    ag::Var deltas = ag::parameter(random_tensor({3, 2}, rng, -0.5, 0.5));
    ag::Var w = ag::constant(random_tensor({2, 4, 4}, rng));
    CHECK(gradient_check([&] { return ag::sum(regress_coarse_field(alpha, deltas) * w); },
                         {alpha, deltas}) < 1e-6);
  }
}

TEST_CASE("coefficient maps are softmax-normalized per pixel") {
  Rng rng(4);
  CoarseMotionNet fc(4, 4, rng);
  Rng dr(5);
  ag::Var heat = ag::constant(random_tensor({5, 8, 8}, dr, 0.0, 0.2));
  ag::Var frame = ag::constant(random_tensor({3, 8, 8}, dr, 0.0, 1.0));
  auto out = fc(heat, frame);
  const Tensor& a = out.alpha.value();
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) {
      double s = 0.0;
      for (int c = 0; c < 5; ++c) s += a.at(c, y, x);
      CHECK(std::fabs(s - 1.0) <= 1e-6);
    }
  CHECK(out.confidence.value().min() >= 0.0);
}

TEST_CASE("evolve_field solves simple dynamics exactly") {
  Rng rng(33);
  Tensor t0 = random_tensor({2, 4, 4}, rng, -0.5, 0.5);

  SUBCASE("zero dynamics is the identity") {
    DynamicsFn zero = [](const ag::Var& s, double) {
      return ag::constant(Tensor::zeros(s.value().shape()));
    };
    for (auto solver : {OdeConfig::Solver::euler, OdeConfig::Solver::rk4}) {
      OdeConfig cfg;
      cfg.solver = solver;
      cfg.steps = 3;
      Tensor out = evolve_field(ag::constant(t0), zero, cfg).value();
      CHECK(max_abs_diff(out, t0) == 0.0);
    }
  }
  SUBCASE("constant dynamics integrates to initial + c") {
    Tensor c({2, 4, 4});
    Rng cr(3);
    for (std::int64_t i = 0; i < c.size(); ++i) c[i] = cr.uniform(-0.3, 0.3);
    DynamicsFn constant_fn = [&c](const ag::Var&, double) { return ag::constant(c); };
    for (auto solver : {OdeConfig::Solver::euler, OdeConfig::Solver::rk4}) {
      for (int steps : {1, 3, 7}) {
        OdeConfig cfg;
        cfg.solver = solver;
        cfg.steps = steps;
        Tensor out = evolve_field(ag::constant(t0), constant_fn, cfg).value();
        for (std::int64_t i = 0; i < out.size(); ++i)
          CHECK(std::fabs(out[i] - (t0[i] + c[i])) < 1e-12);
      }
    }
  }
  SUBCASE("linear dynamics reaches e * initial with rk4/4") {
    DynamicsFn linear = [](const ag::Var& s, double) { return s; };
    OdeConfig cfg;
    cfg.solver = OdeConfig::Solver::rk4;
    cfg.steps = 4;
    Tensor out = evolve_field(ag::constant(t0), linear, cfg).value();
    const double e = std::exp(1.0);
    for (std::int64_t i = 0; i < out.size(); ++i)
      CHECK(std::fabs(out[i] - e * t0[i]) / std::max(1e-12, std::fabs(e * t0[i])) < 1e-4);
  }
}

TEST_CASE("solver convergence orders on smooth dynamics") {
  Rng rng(34);
  Tensor t0 = random_tensor({2, 3, 3}, rng, 0.2, 1.0);
  DynamicsFn linear = [](const ag::Var& s, double) { return s; };
  const double e = std::exp(1.0);

  auto max_err = [&](OdeConfig::Solver solver, int steps) {
    OdeConfig cfg;
    cfg.solver = solver;
    cfg.steps = steps;
    Tensor out = evolve_field(ag::constant(t0), linear, cfg).value();
    double m = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) m = std::max(m, std::fabs(out[i] - e * t0[i]));
    return m;
  };

  const double order_euler = std::log2(max_err(OdeConfig::Solver::euler, 8) /
                                       max_err(OdeConfig::Solver::euler, 16));
  CHECK(order_euler > 0.5);
  CHECK(order_euler < 1.5);

  const double order_rk4 =
      std::log2(max_err(OdeConfig::Solver::rk4, 2) / max_err(OdeConfig::Solver::rk4, 4));
  CHECK(order_rk4 > 3.5);
  CHECK(order_rk4 < 4.5);
}

TEST_CASE("evolve_field gradients match finite differences") {
  Rng rng(35);
  OdeDynamicsNet fe(4, rng);
  nn::ParamList params;
  fe.collect_params("fe", params);
  DynamicsFn f = [&fe](const ag::Var& s, double t) { return fe(s, t); };

  ag::Var init = ag::parameter(random_tensor({2, 4, 4}, rng, -0.4, 0.4));
  OdeConfig cfg;
  cfg.steps = 2;
  double err = gradient_check([&] { return ag::mean(evolve_field(init, f, cfg, params)); }, {init},
                              1e-5, 16);
  CHECK(err < 1e-4);
}

TEST_CASE("backprop and adjoint gradient modes agree") {
  Rng rng(36);
  OdeDynamicsNet fe(4, rng);
  nn::ParamList params;
  fe.collect_params("fe", params);
  DynamicsFn f = [&fe](const ag::Var& s, double t) { return fe(s, t); };
  Tensor t0 = random_tensor({2, 4, 4}, rng, -0.4, 0.4);

  auto grads_for = [&](OdeConfig::GradientMode mode) {
    OdeConfig cfg;
    cfg.solver = OdeConfig::Solver::rk4;
    cfg.steps = 4;
    cfg.gradient_mode = mode;
    ag::Var init = ag::parameter(t0);
    nn::zero_grads(params);
    ag::Var loss = ag::mean(evolve_field(init, f, cfg, params));
    ag::backward(loss);
    std::vector<Tensor> out;
    out.push_back(init.grad());
    for (auto& [name, p] : params) out.push_back(p.grad());
    return out;
  };

  auto backprop = grads_for(OdeConfig::GradientMode::backprop);
  auto adjoint = grads_for(OdeConfig::GradientMode::adjoint);
  REQUIRE(backprop.size() == adjoint.size());
  for (std::size_t i = 0; i < backprop.size(); ++i) {
    for (std::int64_t j = 0; j < backprop[i].size(); ++j) {
      const double a = backprop[i][j], b = adjoint[i][j];
      CHECK(std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)}) < 1e-3);
    }
  }
}

TEST_CASE("divergent dynamics raise a numerical-divergence error naming the step") {
  Rng rng(37);
  Tensor t0 = random_tensor({2, 3, 3}, rng, 0.5, 1.0);
  DynamicsFn blowup = [](const ag::Var& s, double) { return ag::scale(s, 1e200); };
  OdeConfig cfg;
  cfg.steps = 3;
  try {
    evolve_field(ag::constant(t0), blowup, cfg);
    FAIL("expected NumericalDivergenceError");
  } catch (const NumericalDivergenceError& e) {
    CHECK(e.step() >= 1);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("ode config validation") {
  OdeConfig cfg;
  cfg.steps = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dense_motion composition") {
  Rng rng(40);
  Model model(probe_config(), rng);

  SUBCASE("identical frames with silent dynamics give the zero field") {
    // zero the dynamics head: F_E == 0 for every input
    nn::ParamList params = model.params();
    for (auto& [name, p] : params)
      if (name.rfind("fe.head", 0) == 0) p.value().fill(0.0);
    Rng dr(8);
    Frame f;
    f.data = random_tensor({3, 16, 16}, dr, 0.0, 1.0);
    DeformationField field = dense_motion(f, f, model.motion_system(), model.dense_motion_config(true));
    CHECK(field.flow.min() == 0.0);
    CHECK(field.flow.max() == 0.0);
  }

  SUBCASE("with evolution ablated the output equals the coarse field exactly") {
    Rng dr(9);
    Frame src, drv;
    src.data = random_tensor({3, 16, 16}, dr, 0.0, 1.0);
    drv.data = random_tensor({3, 16, 16}, dr, 0.0, 1.0);
    ag::Var drv_kps = model.fk(ag::constant(drv.data));
    auto r = dense_motion_from_kps(ag::constant(src.data), drv_kps, model.motion_system(),
                                   model.dense_motion_config(false));
    CHECK(max_abs_diff(r.field.value(), r.coarse.value()) == 0.0);
  }

  SUBCASE("pipeline gradient w.r.t. a keypoint-extractor weight") {
    Rng dr(10);
    Frame src, drv;
    src.data = random_tensor({3, 16, 16}, dr, 0.0, 1.0);
    drv.data = random_tensor({3, 16, 16}, dr, 0.0, 1.0);
    nn::ParamList params = model.params();
    ag::Var probe;
    for (auto& [name, p] : params)
      if (name == "fk.head.w") probe = p;
    REQUIRE(probe.defined());
    auto build = [&] {
      ag::Var drv_kps = model.fk(ag::constant(drv.data));
      auto r = dense_motion_from_kps(ag::constant(src.data), drv_kps, model.motion_system(),
                                     model.dense_motion_config(true));
      return ag::mean(r.field);
    };
    CHECK(gradient_check(build, {probe}, 1e-5, 10) < 1e-3);
  }
}
