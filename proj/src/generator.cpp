#include "mevo/generator.hpp"

#include "mevo/autodiff.hpp"

namespace mevo {

namespace {

// The pixel lane carries logit-space intensities shifted positive, so the
// decoder's ELUs act linearly on it and the sigmoid head inverts it exactly.
constexpr double kLogitShift = 4.0;
constexpr double kLogitEps = 0.02;

// Bias output channel `dst` toward passing input channel `src` through: the
// drawn random row is damped (kept nonzero so every branch still carries
// gradient) and a strong center tap is added.
void make_passthrough_row(nn::Conv2d& conv, int dst, int src, double gain, double damp = 0.02) {
  Tensor& w = conv.w.value();
  const int ci = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  for (int i = 0; i < ci; ++i)
    for (int y = 0; y < kh; ++y)
      for (int x = 0; x < kw; ++x) {
        double& v = w[((static_cast<std::int64_t>(dst) * ci + i) * kh + y) * kw + x];
        v *= damp;
        if (i == src && y == kh / 2 && x == kw / 2) v += gain;
      }
  conv.b.value()[dst] *= damp;
}

}  // namespace

Generator::Generator(int base_channels, Rng& rng) {
  const int c = base_channels, c2 = 2 * base_channels;
  // three bottleneck channels carry the downsampled frame itself, so warped
  // pixel evidence reaches the decoder directly
  bottleneck_ = c2 + 3;
  enc_stem_ = nn::Conv2d(3, c, 3, 1, rng);
  enc_down1_ = nn::Conv2d(c, c2, 3, 2, rng);
  enc_down2_ = nn::Conv2d(c2, c2, 3, 2, rng);
  merge_ = nn::Conv2d(2 * bottleneck_, c2, 1, 1, rng);
  res1_ = nn::ResBlock(c2, rng);
  res2_ = nn::ResBlock(c2, rng);
  up1_ = nn::Conv2d(c2, c, 3, 1, rng);
  up2_ = nn::Conv2d(c, c, 3, 1, rng);
  head_ = nn::Conv2d(c, 3, 3, 1, rng);

  // the decoder starts as a pixel lane: channels 0..2 of every stage pass
  // the warped pixels through untouched, and the head reads them back with
  // a sigmoid-linearizing gain. Training refines from "warp the source"
  // instead of from scratch.
  for (int ch = 0; ch < 3; ++ch) {
    make_passthrough_row(merge_, ch, ch, 1.0);
    make_passthrough_row(up1_, ch, ch, 1.0);
    make_passthrough_row(up2_, ch, ch, 1.0);
    make_passthrough_row(head_, ch, ch, 1.0);
    head_.b.value()[ch] = -kLogitShift;  // sigmoid undoes the logit lane exactly
  }
}

ag::Var Generator::encode(const ag::Var& frame) const {
  const Tensor& v = frame.value();
  if (v.rank() != 3 || v.dim(0) != 3) throw std::invalid_argument("Generator::encode: expected [3,H,W]");
  if (v.dim(1) % 4 || v.dim(2) % 4)
    throw std::invalid_argument("Generator::encode: frame dims must be divisible by 4");
  ag::Var x = nn::conv_elu(enc_stem_, frame);
  x = nn::conv_elu(enc_down1_, x);
  x = nn::conv_elu(enc_down2_, x);
  ag::Var pixels = ag::resize_bilinear(frame, v.dim(1) / 4, v.dim(2) / 4);
  pixels = ag::add_scalar(ag::logit_clamped(pixels, kLogitEps), kLogitShift);
  return ag::concat_channels({pixels, x});
}

ag::Var Generator::decode(const ag::Var& fused_motion, const ag::Var& fused_appearance) const {
  check_same_shape(fused_motion.value(), fused_appearance.value(), "Generator::decode");
  const int h = fused_motion.value().dim(1), w = fused_motion.value().dim(2);
  ag::Var x = nn::conv_elu(merge_, ag::concat_channels({fused_motion, fused_appearance}));
  x = res1_(x);
  x = res2_(x);
  x = nn::conv_elu(up1_, ag::resize_bilinear(x, 2 * h, 2 * w));
  x = nn::conv_elu(up2_, ag::resize_bilinear(x, 4 * h, 4 * w));
  return ag::sigmoid(head_(x));
}

void Generator::collect_params(const std::string& prefix, nn::ParamList& out) const {
  enc_stem_.collect(prefix + ".enc_stem", out);
  enc_down1_.collect(prefix + ".enc_down1", out);
  enc_down2_.collect(prefix + ".enc_down2", out);
  merge_.collect(prefix + ".merge", out);
  res1_.collect(prefix + ".res1", out);
  res2_.collect(prefix + ".res2", out);
  up1_.collect(prefix + ".up1", out);
  up2_.collect(prefix + ".up2", out);
  head_.collect(prefix + ".head", out);
}

ag::Var normalize_confidences(const ag::Var& stacked_raw) {
  const Tensor& v = stacked_raw.value();
  if (v.rank() != 3 || v.dim(0) < 1)
    throw std::invalid_argument("normalize_confidences: expected [V,H,W] with V >= 1");
  if (!v.all_finite()) throw std::invalid_argument("normalize_confidences: non-finite mask values");
  if (v.min() < 0.0) throw std::invalid_argument("normalize_confidences: negative raw confidence");
  constexpr double eps = 1e-6;
  const int views = v.dim(0);
  const std::int64_t hw = static_cast<std::int64_t>(v.dim(1)) * v.dim(2);

  Tensor out(v.shape());
  Tensor inv_sums({v.dim(1), v.dim(2)});
  for (std::int64_t p = 0; p < hw; ++p) {
    double s = 0.0;
    for (int j = 0; j < views; ++j) s += v[j * hw + p] + eps;
    const double inv = 1.0 / s;
    inv_sums[p] = inv;
    for (int j = 0; j < views; ++j) out[j * hw + p] = (v[j * hw + p] + eps) * inv;
  }

  Tensor cached = out;
  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  node->parents = {stacked_raw.node()};
  node->requires_grad = stacked_raw.requires_grad();
  if (node->requires_grad) {
    node->backprop = [stacked_raw, cached, inv_sums, views, hw](ag::Node& n) {
      stacked_raw.node()->ensure_grad();
      double* dst = stacked_raw.node()->grad.data();
      const double* y = cached.data();
      const double* g = n.grad.data();
      for (std::int64_t p = 0; p < hw; ++p) {
        double dot = 0.0;
        for (int j = 0; j < views; ++j) dot += g[j * hw + p] * y[j * hw + p];
        const double inv = inv_sums[p];
        for (int j = 0; j < views; ++j) dst[j * hw + p] += (g[j * hw + p] - dot) * inv;
      }
    };
  }
  return ag::Var(std::move(node));
}

std::vector<Tensor> normalize_confidences(const std::vector<Tensor>& raw) {
  if (raw.empty()) throw std::invalid_argument("normalize_confidences: need at least one view");
  const int h = raw[0].dim(1), w = raw[0].dim(2);
  Tensor stacked({static_cast<int>(raw.size()), h, w});
  for (std::size_t j = 0; j < raw.size(); ++j) {
    if (raw[j].rank() != 3 || raw[j].dim(0) != 1 || raw[j].dim(1) != h || raw[j].dim(2) != w)
      throw std::invalid_argument("normalize_confidences: masks must all be [1,H,W] of one size");
    std::copy(raw[j].data(), raw[j].data() + raw[j].size(),
              stacked.data() + static_cast<std::int64_t>(j) * h * w);
  }
  Tensor norm = normalize_confidences(ag::constant(stacked)).value();
  std::vector<Tensor> out;
  for (std::size_t j = 0; j < raw.size(); ++j) {
    Tensor m({1, h, w});
    std::copy(norm.data() + static_cast<std::int64_t>(j) * h * w,
              norm.data() + static_cast<std::int64_t>(j + 1) * h * w, m.data());
    out.push_back(std::move(m));
  }
  return out;
}

std::pair<ag::Var, ag::Var> fuse_views(const std::vector<ag::Var>& motion_features,
                                       const std::vector<ag::Var>& appearance_features,
                                       const std::vector<ag::Var>& masks) {
  if (motion_features.empty() || motion_features.size() != appearance_features.size() ||
      motion_features.size() != masks.size())
    throw std::invalid_argument("fuse_views: view counts do not match");
  ag::Var fused_motion, fused_app;
  for (std::size_t j = 0; j < masks.size(); ++j) {
    check_same_shape(motion_features[j].value(), motion_features[0].value(), "fuse_views");
    check_same_shape(appearance_features[j].value(), motion_features[j].value(), "fuse_views");
    ag::Var m = ag::broadcast_mul(masks[j], motion_features[j]);
    ag::Var a = ag::broadcast_mul(masks[j], appearance_features[j]);
    fused_motion = j == 0 ? m : fused_motion + m;
    fused_app = j == 0 ? a : fused_app + a;
  }
  return {fused_motion, fused_app};
}

}  // namespace mevo
