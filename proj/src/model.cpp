#include "mevo/model.hpp"

#include <stdexcept>

#include "mevo/autodiff.hpp"

namespace mevo {

AblationSpec AblationSpec::preset(const std::string& name) {
  if (name == "full") return {true, true, true};
  if (name == "no_motion_evolution") return {false, true, true};
  if (name == "no_appearance") return {true, false, true};
  if (name == "single_view") return {true, true, false};
  throw std::invalid_argument("AblationSpec: unknown preset '" + name + "'");
}

const std::vector<std::string>& AblationSpec::preset_names() {
  static const std::vector<std::string> names = {"full", "no_motion_evolution", "no_appearance",
                                                 "single_view"};
  return names;
}

std::string AblationSpec::name() const {
  for (const auto& n : preset_names()) {
    AblationSpec p = preset(n);
    if (p.motion_evolution == motion_evolution && p.appearance_assist == appearance_assist &&
        p.multi_view == multi_view)
      return n;
  }
  return "custom";
}

void ModelConfig::validate() const {
  if (frame_size < 8 || frame_size % 4)
    throw std::invalid_argument("ModelConfig: frame_size must be >= 8 and divisible by 4");
  if (num_keypoints < 1) throw std::invalid_argument("ModelConfig: K must be >= 1");
  if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
  if (motion_scale < 1 || frame_size % motion_scale)
    throw std::invalid_argument("ModelConfig: motion_scale must divide frame_size");
  ode.validate();
}

KeypointExtractorConfig ModelConfig::keypoint_config() const {
  KeypointExtractorConfig kc;
  kc.num_keypoints = num_keypoints;
  kc.base_channels = base_channels;
  kc.input_height = frame_size;
  kc.input_width = frame_size;
  kc.heatmap_height = frame_size / 2;
  kc.heatmap_width = frame_size / 2;
  // shallower hourglass for small probe models
  kc.depth = frame_size >= 32 ? 3 : 2;
  return kc;
}

Model::Model(const ModelConfig& config, Rng& rng) : cfg(config) {
  cfg.validate();
  fk = KeypointExtractor(cfg.keypoint_config(), rng);
  fc = CoarseMotionNet(cfg.num_keypoints, cfg.base_channels, rng);
  fe = OdeDynamicsNet(cfg.base_channels, rng);
  fg = Generator(cfg.base_channels, rng);
  fa = AppearanceFlowNet(fg.bottleneck_channels(), cfg.base_channels, rng);
}

nn::ParamList Model::params() const {
  nn::ParamList out;
  fk.collect_params("fk", out);
  fc.collect_params("fc", out);
  fe.collect_params("fe", out);
  fa.collect_params("fa", out);
  fg.collect_params("fg", out);
  return out;
}

DenseMotionConfig Model::dense_motion_config(bool motion_evolution) const {
  DenseMotionConfig d;
  d.heatmap_sigma = cfg.heatmap_sigma;
  d.motion_scale = cfg.motion_scale;
  d.ode = cfg.ode;
  d.motion_evolution = motion_evolution;
  return d;
}

void ViewBundle::validate() const {
  source.validate();
  for (const auto& r : references) {
    r.validate();
    if (r.height() != source.height() || r.width() != source.width())
      throw std::invalid_argument("ViewBundle: reference dims differ from source");
  }
}

bool SynthesisResult::diagnostics_finite() const {
  auto ok = [](const ag::Var& v) { return !v.defined() || v.value().all_finite(); };
  if (!ok(frame) || !ok(fused_motion) || !ok(fused_appearance) || !ok(driving_kps)) return false;
  for (const auto& m : motion)
    if (!ok(m.field) || !ok(m.field_full) || !ok(m.coarse) || !ok(m.alpha) || !ok(m.confidence) ||
        !ok(m.deltas) || !ok(m.view_kps))
      return false;
  for (const auto& v : warped_features)
    if (!ok(v)) return false;
  for (const auto& v : appearance_fields)
    if (!ok(v)) return false;
  for (const auto& v : appearance_features)
    if (!ok(v)) return false;
  for (const auto& v : masks)
    if (!ok(v)) return false;
  return true;
}

SynthesisResult synthesize(const Model& model, const ViewBundle& bundle, const Frame& driving,
                           const AblationSpec& ablation) {
  bundle.validate();
  driving.validate();
  if (driving.height() != bundle.source.height() || driving.width() != bundle.source.width())
    throw std::invalid_argument("synthesize: driving dims differ from source");

  const int fh = driving.height() / 4, fw = driving.width() / 4;  // generator feature resolution
  MotionSystem nets = model.motion_system();
  DenseMotionConfig mcfg = model.dense_motion_config(ablation.motion_evolution);

  std::vector<const Frame*> views;
  views.push_back(&bundle.source);
  if (ablation.multi_view)
    for (const auto& r : bundle.references) views.push_back(&r);

  SynthesisResult res;
  res.driving_kps = (*nets.keypoints)(ag::constant(driving.data));

  std::vector<ag::Var> raw_masks;
  for (const Frame* view : views) {
    ag::Var frame = ag::constant(view->data);
    DenseMotionResult dm = dense_motion_from_kps(frame, res.driving_kps, nets, mcfg);

    ag::Var features = model.fg.encode(frame);
    ag::Var field_feat = ag::resize_bilinear(dm.field, fh, fw);
    ag::Var warped = ag::grid_sample(features, field_feat);
    res.warped_features.push_back(warped);

    ag::Var app_features;
    if (ablation.appearance_assist) {
      ag::Var frame_small = ag::resize_bilinear(frame, fh, fw);
      ag::Var app_field = model.fa(warped, frame_small);
      res.appearance_fields.push_back(app_field);
      app_features = apply_appearance_flow(warped, app_field);
    } else {
      app_features = warped;  // decoder arity unchanged under the ablation
    }
    res.appearance_features.push_back(app_features);
    raw_masks.push_back(ag::resize_bilinear(dm.confidence, fh, fw));
    res.motion.push_back(std::move(dm));
  }

  if (views.size() == 1) {
    res.fused_motion = res.warped_features[0];
    res.fused_appearance = res.appearance_features[0];
  } else {
    ag::Var norm = normalize_confidences(ag::concat_channels(raw_masks));
    for (std::size_t j = 0; j < views.size(); ++j)
      res.masks.push_back(ag::slice_channels(norm, static_cast<int>(j), 1));
    auto fused = fuse_views(res.warped_features, res.appearance_features, res.masks);
    res.fused_motion = fused.first;
    res.fused_appearance = fused.second;
  }

  res.frame = model.fg.decode(res.fused_motion, res.fused_appearance);
  return res;
}

}  // namespace mevo
