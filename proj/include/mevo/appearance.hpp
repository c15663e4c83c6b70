#pragma once

#include "mevo/nn.hpp"
#include "mevo/types.hpp"

namespace mevo {

// Self-appearance flow predictor. Sees the motion-warped features together
// with the view frame downsampled to feature resolution, and emits a second
// deformation field that re-samples the warped features to fill regions the
// motion warp could not reach. The head is zero-initialized so the flow
// starts as the identity.
class AppearanceFlowNet {
 public:
  AppearanceFlowNet() = default;
  AppearanceFlowNet(int feature_channels, int base_channels, Rng& rng);

  ag::Var operator()(const ag::Var& warped_features, const ag::Var& frame_small) const;

  void collect_params(const std::string& prefix, nn::ParamList& out) const;

 private:
  nn::Conv2d stem_, down_, up_, head_;
};

// F_App = warp(motion-warped features, appearance field). The appearance
// flow acts on features that are already in the driving domain.
ag::Var apply_appearance_flow(const ag::Var& motion_warped, const ag::Var& app_field);
Tensor apply_appearance_flow(const Tensor& motion_warped, const DeformationField& app_field);

}  // namespace mevo
