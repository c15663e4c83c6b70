#pragma once

#include <string>
#include <vector>

#include "mevo/image_ops.hpp"
#include "mevo/nn.hpp"
#include "mevo/types.hpp"

namespace mevo {

struct KeypointExtractorConfig {
  int num_keypoints = 10;
  int base_channels = 32;
  int depth = 3;  // stride-2 stages below full resolution
  int input_height = 64;
  int input_width = 64;
  int heatmap_height = 32;
  int heatmap_width = 32;

  void validate() const;
};

// Self-supervised keypoint extractor: hourglass encoder-decoder with additive
// skips producing K heatmap logits, turned into coordinates by a per-channel
// spatial softmax followed by soft-argmax.
class KeypointExtractor {
 public:
  KeypointExtractor() = default;
  KeypointExtractor(const KeypointExtractorConfig& cfg, Rng& rng);

  // Heatmap logits [K, H', W'] for a [3,H,W] frame.
  ag::Var heatmap_logits(const ag::Var& frame) const;

  // Keypoints [K,2] in normalized coordinates.
  ag::Var operator()(const ag::Var& frame) const;

  // Normalization + expectation tail, exposed so heatmap-level behaviour can
  // be probed directly.
  static ag::Var keypoints_from_logits(const ag::Var& logits);

  KeypointSet extract(const Frame& frame) const;

  void collect_params(const std::string& prefix, nn::ParamList& out) const;
  const KeypointExtractorConfig& config() const { return cfg_; }

 private:
  KeypointExtractorConfig cfg_;
  nn::Conv2d stem_;
  std::vector<nn::Conv2d> down_;
  std::vector<nn::Conv2d> up_;
  nn::Conv2d head_;
  int up_steps_ = 0;
};

// Keypoint displacements with the reserved static-background slot: row 0 is
// exactly (0,0), row i >= 1 is src[i-1] - drv[i-1].
DisplacementSet sparse_displacements(const KeypointSet& src, const KeypointSet& drv);
ag::Var sparse_displacements(const ag::Var& src, const ag::Var& drv);

}  // namespace mevo
