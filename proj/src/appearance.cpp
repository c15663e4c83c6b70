#include "mevo/appearance.hpp"

#include "mevo/autodiff.hpp"

namespace mevo {

AppearanceFlowNet::AppearanceFlowNet(int feature_channels, int base_channels, Rng& rng) {
  const int c = base_channels, c2 = 2 * base_channels;
  stem_ = nn::Conv2d(feature_channels + 3, c, 3, 1, rng);
  down_ = nn::Conv2d(c, c2, 3, 2, rng);
  up_ = nn::Conv2d(c2, c, 3, 1, rng);
  head_ = nn::Conv2d(c, 2, 1, 1, rng, 0.0);  // zero-init: identity flow at start
}

ag::Var AppearanceFlowNet::operator()(const ag::Var& warped_features,
                                      const ag::Var& frame_small) const {
  const Tensor& f = warped_features.value();
  if (!f.all_finite()) throw std::invalid_argument("AppearanceFlowNet: non-finite features");
  if (f.dim(1) != frame_small.value().dim(1) || f.dim(2) != frame_small.value().dim(2))
    throw std::invalid_argument("AppearanceFlowNet: feature and frame resolutions differ");
  ag::Var x = nn::conv_elu(stem_, ag::concat_channels({warped_features, frame_small}));
  ag::Var skip = x;
  x = nn::conv_elu(down_, x);
  x = ag::resize_bilinear(x, f.dim(1), f.dim(2));
  x = ag::elu(up_(x) + skip);
  return head_(x);
}

void AppearanceFlowNet::collect_params(const std::string& prefix, nn::ParamList& out) const {
  stem_.collect(prefix + ".stem", out);
  down_.collect(prefix + ".down", out);
  up_.collect(prefix + ".up", out);
  head_.collect(prefix + ".head", out);
}

ag::Var apply_appearance_flow(const ag::Var& motion_warped, const ag::Var& app_field) {
  return ag::grid_sample(motion_warped, app_field);
}

Tensor apply_appearance_flow(const Tensor& motion_warped, const DeformationField& app_field) {
  return apply_appearance_flow(ag::constant(motion_warped), ag::constant(app_field.flow)).value();
}

}  // namespace mevo
