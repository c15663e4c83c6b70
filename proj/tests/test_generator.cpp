#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "mevo/model.hpp"
#include "test_util.hpp"

using namespace mevo;
using testutil::gradient_check;
using testutil::max_abs_diff;
using testutil::random_tensor;

namespace {

ModelConfig probe_config() {
  ModelConfig c;
  c.frame_size = 16;
  c.num_keypoints = 3;
  c.base_channels = 4;
  c.motion_scale = 4;
  c.ode.steps = 2;
  return c;
}

Frame random_frame(int size, Rng& rng) {
  Frame f;
  f.data = random_tensor({3, size, size}, rng, 0.0, 1.0);
  return f;
}

}  // namespace

TEST_CASE("generator encode") {
  Rng rng(60);
  Generator fg(4, rng);
  Rng dr(61);
  ag::Var frame = ag::constant(random_tensor({3, 16, 16}, dr, 0.0, 1.0));

  SUBCASE("deterministic") {
    CHECK(max_abs_diff(fg.encode(frame).value(), fg.encode(frame).value()) == 0.0);
  }
  SUBCASE("bottleneck at 1/4 resolution") {
    Tensor f = fg.encode(frame).value();
    CHECK(f.dim(0) == fg.bottleneck_channels());
    CHECK(f.dim(1) == 4);
    CHECK(f.dim(2) == 4);
  }
  SUBCASE("gradient w.r.t. input") {
    ag::Var leaf = ag::parameter(frame.value());
    CHECK(gradient_check([&] { return ag::mean(fg.encode(leaf)); }, {leaf}, 1e-5, 30) < 1e-4);
  }
  SUBCASE("rejects bad input shapes") {
    CHECK_THROWS_AS(fg.encode(ag::constant(Tensor({3, 18, 18}))), std::invalid_argument);
    CHECK_THROWS_AS(fg.encode(ag::constant(Tensor({1, 16, 16}))), std::invalid_argument);
  }
}

TEST_CASE("normalize_confidences") {
  SUBCASE("identical masks split weight evenly") {
    Tensor raw = Tensor::full({4, 3, 3}, 0.7);
    Tensor norm = normalize_confidences(ag::constant(raw)).value();
    for (std::int64_t i = 0; i < norm.size(); ++i) CHECK(norm[i] == doctest::Approx(0.25).epsilon(1e-9));
  }
  SUBCASE("single view gets weight one") {
    Tensor raw = Tensor::full({1, 3, 3}, 0.2);
    Tensor norm = normalize_confidences(ag::constant(raw)).value();
    for (std::int64_t i = 0; i < norm.size(); ++i) CHECK(norm[i] == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("all-zero pixels resolve to equal weights via epsilon smoothing") {
    Tensor raw({2, 2, 2});
    Tensor norm = normalize_confidences(ag::constant(raw)).value();
    for (std::int64_t i = 0; i < norm.size(); ++i) CHECK(norm[i] == doctest::Approx(0.5).epsilon(1e-9));
  }
  SUBCASE("per-pixel sums are one for random nonnegative masks") {
    Rng rng(62);
    Tensor raw = random_tensor({3, 5, 5}, rng, 0.0, 2.0);
    raw.at(0, 1, 1) = raw.at(1, 1, 1) = raw.at(2, 1, 1) = 0.0;
    Tensor norm = normalize_confidences(ag::constant(raw)).value();
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x) {
        double s = 0.0;
        for (int v = 0; v < 3; ++v) s += norm.at(v, y, x);
        CHECK(std::fabs(s - 1.0) <= 1e-6);
      }
  }
  SUBCASE("negative raw confidence is rejected") {
    Tensor raw({2, 2, 2});
    raw.at(0, 0, 0) = -0.1;
    CHECK_THROWS_AS(normalize_confidences(ag::constant(raw)), std::invalid_argument);
  }
  SUBCASE("vector interface round-trips") {
    std::vector<Tensor> raw(3, Tensor::full({1, 4, 4}, 0.5));
    auto norm = normalize_confidences(raw);
    REQUIRE(norm.size() == 3);
    for (const auto& m : norm)
      for (std::int64_t i = 0; i < m.size(); ++i) CHECK(m[i] == doctest::Approx(1.0 / 3.0));
  }
  SUBCASE("gradient") {
    Rng rng(63);
    ag::Var raw = ag::parameter(random_tensor({3, 3, 3}, rng, 0.1, 1.0));
    ag::Var w = ag::constant(random_tensor({3, 3, 3}, rng));
    CHECK(gradient_check([&] { return ag::sum(normalize_confidences(raw) * w); }, {raw}) < 1e-6);
  }
}

TEST_CASE("fuse_views") {
  Rng rng(64);
  auto mk_feats = [&](int n) {
    std::vector<ag::Var> v;
    for (int i = 0; i < n; ++i) v.push_back(ag::constant(random_tensor({4, 3, 3}, rng)));
    return v;
  };

  SUBCASE("degenerate weights select one view") {
    auto motion = mk_feats(2);
    auto app = mk_feats(2);
    std::vector<ag::Var> masks = {ag::constant(Tensor::full({1, 3, 3}, 1.0)),
                                  ag::constant(Tensor::zeros({1, 3, 3}))};
    auto [fm, fapp] = fuse_views(motion, app, masks);
    CHECK(max_abs_diff(fm.value(), motion[0].value()) == 0.0);
    CHECK(max_abs_diff(fapp.value(), app[0].value()) == 0.0);
  }
  SUBCASE("matches the brute-force weighted sum") {
    auto motion = mk_feats(3);
    auto app = mk_feats(3);
    Tensor raw = random_tensor({3, 3, 3}, rng, 0.0, 1.0);
    ag::Var norm = normalize_confidences(ag::constant(raw));
    std::vector<ag::Var> masks;
    for (int j = 0; j < 3; ++j) masks.push_back(ag::slice_channels(norm, j, 1));
    auto [fm, fapp] = fuse_views(motion, app, masks);
    for (int c = 0; c < 4; ++c)
      for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
          double em = 0.0, ea = 0.0;
          for (int j = 0; j < 3; ++j) {
            em += norm.value().at(j, y, x) * motion[static_cast<std::size_t>(j)].value().at(c, y, x);
            ea += norm.value().at(j, y, x) * app[static_cast<std::size_t>(j)].value().at(c, y, x);
          }
          CHECK(std::fabs(fm.value().at(c, y, x) - em) < 1e-6);
          CHECK(std::fabs(fapp.value().at(c, y, x) - ea) < 1e-6);
        }
  }
  SUBCASE("permutation equivariance") {
    auto motion = mk_feats(3);
    auto app = mk_feats(3);
    Tensor raw = random_tensor({3, 3, 3}, rng, 0.1, 1.0);
    ag::Var norm = normalize_confidences(ag::constant(raw));
    std::vector<ag::Var> masks;
    for (int j = 0; j < 3; ++j) masks.push_back(ag::slice_channels(norm, j, 1));

    auto [fm, fapp] = fuse_views(motion, app, masks);
    std::vector<std::size_t> perm = {2, 0, 1};
    std::vector<ag::Var> pm, pa, pk;
    for (auto j : perm) {
      pm.push_back(motion[j]);
      pa.push_back(app[j]);
      pk.push_back(masks[j]);
    }
    auto [fm2, fapp2] = fuse_views(pm, pa, pk);
    CHECK(max_abs_diff(fm.value(), fm2.value()) < 1e-6);
    CHECK(max_abs_diff(fapp.value(), fapp2.value()) < 1e-6);
  }
  SUBCASE("count mismatch is rejected") {
    auto motion = mk_feats(2);
    auto app = mk_feats(3);
    std::vector<ag::Var> masks = {ag::constant(Tensor({1, 3, 3})), ag::constant(Tensor({1, 3, 3}))};
    CHECK_THROWS_AS(fuse_views(motion, app, masks), std::invalid_argument);
  }
}

TEST_CASE("generator decode") {
  Rng rng(65);
  Generator fg(4, rng);
  Rng dr(66);
  ag::Var fm = ag::constant(random_tensor({fg.bottleneck_channels(), 4, 4}, dr, -2.0, 2.0));
  ag::Var fapp = ag::constant(random_tensor({fg.bottleneck_channels(), 4, 4}, dr, -2.0, 2.0));

  SUBCASE("output is bounded in [0,1] with frame dims") {
    Tensor out = fg.decode(fm, fapp).value();
    CHECK(out.dim(0) == 3);
    CHECK(out.dim(1) == 16);
    CHECK(out.dim(2) == 16);
    CHECK(out.min() >= 0.0);
    CHECK(out.max() <= 1.0);
  }
  SUBCASE("deterministic") {
    CHECK(max_abs_diff(fg.decode(fm, fapp).value(), fg.decode(fm, fapp).value()) == 0.0);
  }
  SUBCASE("appearance branch carries gradient") {
    ag::Var leaf = ag::parameter(fapp.value());
    leaf.zero_grad();
    ag::backward(ag::mean(fg.decode(fm, leaf)));
    double gsum = 0.0;
    for (std::int64_t i = 0; i < leaf.grad().size(); ++i) gsum += std::fabs(leaf.grad()[i]);
    CHECK(gsum > 0.0);
    CHECK(gradient_check([&] { return ag::mean(fg.decode(fm, leaf)); }, {leaf}, 1e-5, 20) < 1e-4);
  }
  SUBCASE("dimension mismatch is rejected") {
    ag::Var bad = ag::constant(Tensor({fg.bottleneck_channels(), 8, 8}));
    CHECK_THROWS_AS(fg.decode(fm, bad), std::invalid_argument);
  }
}

TEST_CASE("synthesize") {
  Rng rng(67);
  Model model(probe_config(), rng);
  Rng dr(68);
  ViewBundle bundle;
  bundle.source = random_frame(16, dr);
  bundle.references.push_back(random_frame(16, dr));
  bundle.references.push_back(random_frame(16, dr));
  Frame driving = random_frame(16, dr);

  SUBCASE("deterministic given frozen networks") {
    auto a = synthesize(model, bundle, driving, AblationSpec{});
    auto b = synthesize(model, bundle, driving, AblationSpec{});
    CHECK(max_abs_diff(a.frame.value(), b.frame.value()) == 0.0);
  }
  SUBCASE("output shape equals driving shape and diagnostics are finite") {
    auto r = synthesize(model, bundle, driving, AblationSpec{});
    CHECK(r.frame.value().dim(1) == 16);
    CHECK(r.frame.value().dim(2) == 16);
    CHECK(r.frame.value().min() >= 0.0);
    CHECK(r.frame.value().max() <= 1.0);
    CHECK(r.motion.size() == 3);
    CHECK(r.masks.size() == 3);
    CHECK(r.diagnostics_finite());
  }
  SUBCASE("no_appearance duplicates the motion-warped features") {
    auto r = synthesize(model, bundle, driving, AblationSpec::preset("no_appearance"));
    CHECK(r.appearance_fields.empty());
    for (std::size_t j = 0; j < r.warped_features.size(); ++j)
      CHECK(max_abs_diff(r.appearance_features[j].value(), r.warped_features[j].value()) == 0.0);
  }
  SUBCASE("single_view ablation and N=0 both reduce to the source-only pipeline") {
    auto ablated = synthesize(model, bundle, driving, AblationSpec::preset("single_view"));
    ViewBundle solo;
    solo.source = bundle.source;
    auto n0 = synthesize(model, solo, driving, AblationSpec{});
    CHECK(ablated.motion.size() == 1);
    CHECK(n0.masks.empty());
    CHECK(max_abs_diff(ablated.frame.value(), n0.frame.value()) == 0.0);
    CHECK(max_abs_diff(ablated.fused_motion.value(), ablated.warped_features[0].value()) == 0.0);
  }
  SUBCASE("every trainable group receives gradient") {
    // randomize the zero-initialized appearance head so no branch is silent
    nn::ParamList params = model.params();
    Rng wr(99);
    for (auto& [name, p] : params)
      if (name.rfind("fa.head", 0) == 0)
        for (std::int64_t i = 0; i < p.value().size(); ++i) p.value()[i] = wr.uniform(-0.05, 0.05);

    nn::zero_grads(params);
    auto r = synthesize(model, bundle, driving, AblationSpec{});
    ag::backward(ag::mean_abs_diff(r.frame, ag::constant(driving.data)));
    for (const char* group : {"fk.", "fc.", "fe.", "fa.", "fg."}) {
      double gsum = 0.0;
      for (auto& [name, p] : params)
        if (name.rfind(group, 0) == 0)
          for (std::int64_t i = 0; i < p.grad().size(); ++i) gsum += std::fabs(p.grad()[i]);
      INFO("group ", group);
      CHECK(gsum > 0.0);
    }
  }
}

TEST_CASE("ablation presets") {
  CHECK(AblationSpec::preset_names().size() == 4);
  CHECK(AblationSpec::preset("full").name() == "full");
  CHECK(AblationSpec::preset("no_motion_evolution").motion_evolution == false);
  CHECK(AblationSpec::preset("no_appearance").appearance_assist == false);
  CHECK(AblationSpec::preset("single_view").multi_view == false);
  CHECK_THROWS_AS(AblationSpec::preset("bogus"), std::invalid_argument);
}
