#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mevo/metrics.hpp"
#include "mevo/train.hpp"

namespace mevo {

// Deterministic image-based keypoint supplier for AKD, standing in for the
// pretrained detectors the paper evaluates with.
class KeypointOracle {
 public:
  virtual ~KeypointOracle() = default;
  virtual KeypointSet detect(const Frame& frame) const = 0;
  virtual std::string name() const = 0;
};

// Soft centroid of each channel-dominance map (K=3): tracks where the red-,
// green- and blue-leaning content sits.
class ColorCentroidOracle : public KeypointOracle {
 public:
  KeypointSet detect(const Frame& frame) const override;
  std::string name() const override { return "color-centroid"; }
};

struct InferenceContext {
  const Model* model = nullptr;
  AblationSpec ablation;
  const FeatureExtractor* features = nullptr;  // perceptual-distance metric
  const Embedder* embedder = nullptr;          // FID / CSIM
  const KeypointOracle* oracle = nullptr;      // AKD; omitted from reports when null

  void validate() const;
};

struct GenerationResult {
  VideoClip frames;
  MetricReport report;
};

// Video reconstruction: frame 0 is the source, references are drawn from the
// same clip, every remaining frame drives one output. Metrics compare
// against the driving frames.
GenerationResult reconstruct(const InferenceContext& ctx, const VideoClip& clip, int n_refs,
                             Rng& rng);

// Motion transfer: the source clip provides identity (frame 0 + references),
// every driving-clip frame drives one output. FID and CSIM compare against
// source-video frames; AKD (when an oracle is configured) compares against
// the driving frames.
GenerationResult animate(const InferenceContext& ctx, const VideoClip& source_clip,
                         const VideoClip& driving_clip, int n_refs, Rng& rng);

// Mean-over-clips reconstruction metrics for one dataset split.
MetricReport evaluate_reconstruction(const InferenceContext& ctx, const ClipDataset& dataset,
                                     const std::string& split, int n_refs, std::uint64_t seed);

struct AblationRow {
  std::string preset;
  MetricReport report;
};

// Trains and evaluates each ablation preset with identical seeds and data.
std::vector<AblationRow> run_ablations(const ClipDataset& dataset, const TrainConfig& base_config);

std::string serialize_ablation_table(const std::vector<AblationRow>& rows);
std::vector<AblationRow> parse_ablation_table(const std::string& text);

// Evaluates one trained model while varying the reference count at test time.
std::vector<std::pair<int, MetricReport>> run_reference_sweep(const InferenceContext& ctx,
                                                              const ClipDataset& dataset,
                                                              const std::vector<int>& n_values,
                                                              std::uint64_t seed);

// Frame-pair metrics between two directories of equal-length clips (the CLI
// `evaluate` surface). `metric_names` picks a subset; empty means all.
MetricReport evaluate_directories(const std::filesystem::path& generated,
                                  const std::filesystem::path& real,
                                  const std::vector<std::string>& metric_names);

}  // namespace mevo
