#pragma once

#include <utility>
#include <vector>

#include "mevo/nn.hpp"
#include "mevo/types.hpp"

namespace mevo {

// Encoder-decoder image generator. The encoder downsamples twice (features at
// 1/4 resolution); the decoder consumes the fused motion-warped and
// appearance-warped features and reconstructs a [0,1] frame through a
// sigmoid head.
class Generator {
 public:
  Generator() = default;
  Generator(int base_channels, Rng& rng);

  ag::Var encode(const ag::Var& frame) const;
  Frame encode_frame(const Frame& frame) const = delete;  // use encode
  ag::Var decode(const ag::Var& fused_motion, const ag::Var& fused_appearance) const;

  int bottleneck_channels() const { return bottleneck_; }

  void collect_params(const std::string& prefix, nn::ParamList& out) const;

 private:
  int bottleneck_ = 0;
  nn::Conv2d enc_stem_, enc_down1_, enc_down2_;
  nn::Conv2d merge_;
  nn::ResBlock res1_, res2_;
  nn::Conv2d up1_, up2_, head_;
};

// (C^j + eps) / sum_j (C^j + eps) across views, eps = 1e-6. Works on a
// stacked [V,H,W] tensor; every pixel column sums to one, including pixels
// where all raw masks are zero.
ag::Var normalize_confidences(const ag::Var& stacked_raw);
std::vector<Tensor> normalize_confidences(const std::vector<Tensor>& raw);

// Per-pixel weighted sums of the per-view motion-warped and appearance
// features. masks[j] is [1,H,W] and must already be normalized.
std::pair<ag::Var, ag::Var> fuse_views(const std::vector<ag::Var>& motion_features,
                                       const std::vector<ag::Var>& appearance_features,
                                       const std::vector<ag::Var>& masks);

}  // namespace mevo
