#pragma once

#include <string>
#include <vector>

#include "mevo/appearance.hpp"
#include "mevo/generator.hpp"
#include "mevo/motion.hpp"

namespace mevo {

// Component on/off switches matching the ablation table presets.
struct AblationSpec {
  bool motion_evolution = true;
  bool appearance_assist = true;
  bool multi_view = true;

  static AblationSpec preset(const std::string& name);
  static const std::vector<std::string>& preset_names();
  std::string name() const;
};

struct ModelConfig {
  int frame_size = 64;
  int num_keypoints = 10;
  int base_channels = 32;
  int motion_scale = 4;
  double heatmap_sigma = 0.15;
  OdeConfig ode;

  void validate() const;
  KeypointExtractorConfig keypoint_config() const;
};

// All trainable networks plus their wiring configuration.
struct Model {
  ModelConfig cfg;
  KeypointExtractor fk;
  CoarseMotionNet fc;
  OdeDynamicsNet fe;
  AppearanceFlowNet fa;
  Generator fg;

  Model() = default;
  Model(const ModelConfig& cfg, Rng& rng);

  nn::ParamList params() const;
  MotionSystem motion_system() const { return {&fk, &fc, &fe}; }
  DenseMotionConfig dense_motion_config(bool motion_evolution) const;
};

// Source plus N reference views of the same identity.
struct ViewBundle {
  Frame source;
  std::vector<Frame> references;

  void validate() const;
};

struct SynthesisResult {
  ag::Var frame;  // generated [3,H,W]
  std::vector<DenseMotionResult> motion;       // per view
  std::vector<ag::Var> warped_features;        // motion-warped, per view
  std::vector<ag::Var> appearance_fields;      // per view (undefined when ablated)
  std::vector<ag::Var> appearance_features;    // per view
  std::vector<ag::Var> masks;                  // normalized, per view (empty when single view)
  ag::Var fused_motion, fused_appearance;
  ag::Var driving_kps;

  bool diagnostics_finite() const;
};

// Full forward pass: per-view dense motion -> encode + warp -> appearance
// flow -> confidence fusion -> decode. With multi_view off (or no
// references) only the source view feeds the decoder; with
// appearance_assist off the motion-warped features stand in for the
// appearance features so the decoder input arity never changes.
SynthesisResult synthesize(const Model& model, const ViewBundle& bundle, const Frame& driving,
                           const AblationSpec& ablation);

}  // namespace mevo
