#include "mevo/keypoints.hpp"

#include <stdexcept>

namespace mevo {

namespace {

bool is_pow2_multiple(int full, int reduced) {
  // true if full == reduced * 2^m for some m >= 0
  if (reduced < 1 || full < reduced) return false;
  while (full > reduced) {
    if (full % 2) return false;
    full /= 2;
  }
  return full == reduced;
}

}  // namespace

void KeypointExtractorConfig::validate() const {
  if (num_keypoints < 1) throw std::invalid_argument("KeypointExtractorConfig: K must be >= 1");
  if (heatmap_height < 8 || heatmap_width < 8)
    throw std::invalid_argument("KeypointExtractorConfig: heatmap resolution must be >= 8");
  if (depth < 1) throw std::invalid_argument("KeypointExtractorConfig: depth must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("KeypointExtractorConfig: channels must be >= 1");
  if (!is_pow2_multiple(input_height, heatmap_height) || !is_pow2_multiple(input_width, heatmap_width))
    throw std::invalid_argument(
        "KeypointExtractorConfig: input dims must be the heatmap resolution times a power of two");
  if (input_height >> depth < 1 || input_width >> depth < 1 || input_height % (1 << depth) ||
      input_width % (1 << depth))
    throw std::invalid_argument("KeypointExtractorConfig: input dims incompatible with depth");
  if (heatmap_height < input_height >> depth || heatmap_width < input_width >> depth)
    throw std::invalid_argument("KeypointExtractorConfig: heatmap resolution below the bottleneck");
}

KeypointExtractor::KeypointExtractor(const KeypointExtractorConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg.validate();
  const int cap = 2 * cfg.base_channels;
  auto ch = [&](int level) { return level == 0 ? cfg.base_channels : cap; };

  int m = 0;  // heatmap level: heatmap res = input / 2^m
  while (cfg.input_height >> m > cfg.heatmap_height) ++m;
  up_steps_ = cfg.depth - m;

  stem_ = nn::Conv2d(3, ch(0), 3, 1, rng);
  for (int l = 1; l <= cfg.depth; ++l) down_.emplace_back(ch(l - 1), ch(l), 3, 2, rng);
  for (int l = cfg.depth - 1; l >= m; --l) up_.emplace_back(ch(l + 1), ch(l), 3, 1, rng);
  head_ = nn::Conv2d(ch(m), cfg.num_keypoints, 1, 1, rng, 3.0);
}

ag::Var KeypointExtractor::heatmap_logits(const ag::Var& frame) const {
  const Tensor& v = frame.value();
  if (v.rank() != 3 || v.dim(0) != 3)
    throw std::invalid_argument("KeypointExtractor: expected a [3,H,W] frame");
  if (v.dim(1) != cfg_.input_height || v.dim(2) != cfg_.input_width)
    throw std::invalid_argument("KeypointExtractor: frame dims do not match the configured input size");

  std::vector<ag::Var> enc;
  ag::Var x = nn::conv_elu(stem_, frame);
  enc.push_back(x);
  for (const auto& d : down_) {
    x = nn::conv_elu(d, x);
    enc.push_back(x);
  }
  // walk back up to the heatmap resolution, adding encoder skips
  int level = cfg_.depth;
  for (int u = 0; u < up_steps_; ++u, --level) {
    const int nh = x.value().dim(1) * 2, nw = x.value().dim(2) * 2;
    ag::Var y = up_[static_cast<std::size_t>(u)](ag::resize_bilinear(x, nh, nw));
    x = ag::elu(y + enc[static_cast<std::size_t>(level - 1)]);
  }
  return head_(x);
}

ag::Var KeypointExtractor::keypoints_from_logits(const ag::Var& logits) {
  return ag::soft_argmax(ag::spatial_softmax(logits));
}

ag::Var KeypointExtractor::operator()(const ag::Var& frame) const {
  return keypoints_from_logits(heatmap_logits(frame));
}

KeypointSet KeypointExtractor::extract(const Frame& frame) const {
  return KeypointSet::from_tensor((*this)(ag::constant(frame.data)).value());
}

void KeypointExtractor::collect_params(const std::string& prefix, nn::ParamList& out) const {
  stem_.collect(prefix + ".stem", out);
  for (std::size_t i = 0; i < down_.size(); ++i) down_[i].collect(prefix + ".down" + std::to_string(i), out);
  for (std::size_t i = 0; i < up_.size(); ++i) up_[i].collect(prefix + ".up" + std::to_string(i), out);
  head_.collect(prefix + ".head", out);
}

DisplacementSet sparse_displacements(const KeypointSet& src, const KeypointSet& drv) {
  if (src.count() != drv.count())
    throw std::invalid_argument("sparse_displacements: keypoint counts differ");
  DisplacementSet d;
  d.deltas.resize(static_cast<std::size_t>(src.count()) + 1);
  d.deltas[0] = {0.0, 0.0};
  for (int i = 0; i < src.count(); ++i)
    d.deltas[static_cast<std::size_t>(i) + 1] =
        src.points[static_cast<std::size_t>(i)] - drv.points[static_cast<std::size_t>(i)];
  return d;
}

ag::Var sparse_displacements(const ag::Var& src, const ag::Var& drv) {
  const Tensor& s = src.value();
  const Tensor& d = drv.value();
  if (s.rank() != 2 || d.rank() != 2 || s.dim(1) != 2 || d.dim(1) != 2)
    throw std::invalid_argument("sparse_displacements: expected [K,2] keypoints");
  if (s.dim(0) != d.dim(0)) throw std::invalid_argument("sparse_displacements: keypoint counts differ");
  const int k = s.dim(0);
  Tensor out({k + 1, 2});
  for (int i = 0; i < k; ++i) {
    out.at(i + 1, 0) = s.at(i, 0) - d.at(i, 0);
    out.at(i + 1, 1) = s.at(i, 1) - d.at(i, 1);
  }
  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  node->parents = {src.node(), drv.node()};
  node->requires_grad = src.requires_grad() || drv.requires_grad();
  if (node->requires_grad) {
    node->backprop = [src, drv, k](ag::Node& n) {
      if (src.requires_grad()) {
        src.node()->ensure_grad();
        for (int i = 0; i < k; ++i) {
          src.node()->grad.at(i, 0) += n.grad.at(i + 1, 0);
          src.node()->grad.at(i, 1) += n.grad.at(i + 1, 1);
        }
      }
      if (drv.requires_grad()) {
        drv.node()->ensure_grad();
        for (int i = 0; i < k; ++i) {
          drv.node()->grad.at(i, 0) -= n.grad.at(i + 1, 0);
          drv.node()->grad.at(i, 1) -= n.grad.at(i + 1, 1);
        }
      }
    };
  }
  return ag::Var(std::move(node));
}

}  // namespace mevo
