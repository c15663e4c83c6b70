#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "mevo/losses.hpp"
#include "mevo/types.hpp"

namespace mevo {

// Pluggable frame embedder standing in for the pretrained networks the
// published FID/CSIM numbers rely on. Both built-ins are deterministic.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::vector<double> embed(const Frame& frame) const = 0;
  virtual int dim() const = 0;
  virtual std::string name() const = 0;
};

// Fixed random projection of the 16x16 downsampled frame.
class FixedRandomEmbedder : public Embedder {
 public:
  explicit FixedRandomEmbedder(std::uint64_t seed = 0xE3BEDDE2ull, int dim = 16);
  std::vector<double> embed(const Frame& frame) const override;
  int dim() const override { return dim_; }
  std::string name() const override { return "fixed-random"; }

 private:
  int dim_;
  Tensor projection_;  // [dim, 768]
};

// The frame itself, downsampled to 4x4 RGB (48 dims).
class IdentityDownsampleEmbedder : public Embedder {
 public:
  std::vector<double> embed(const Frame& frame) const override;
  int dim() const override { return 48; }
  std::string name() const override { return "identity-downsample"; }
};

class DegenerateEmbeddingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---- per-frame metrics ----

// Mean absolute difference over pixels and channels.
double l1_metric(const Frame& gen, const Frame& real);

// 10*log10(peak^2/MSE); identical frames clamp to the 99 dB sentinel.
double psnr(const Frame& gen, const Frame& real, double peak = 1.0);

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, C1=(0.01)^2, C2=(0.03)^2.
double ssim(const Frame& gen, const Frame& real);

// Multi-scale SSIM with the standard 5-level weights (renormalized when fewer
// levels are requested). levels=1 reduces exactly to ssim.
double ms_ssim(const Frame& gen, const Frame& real, int levels = 5);

// Largest level count the frame size supports (window 11, capped at 5).
int max_ms_ssim_levels(int height, int width);

// Perceptual distance in the default feature space (the LPIPS seam; reported
// as "perc" since no pretrained calibration is bundled).
double perceptual_distance(const Frame& gen, const Frame& real, const FeatureExtractor& fx);

// ---- set metrics ----

// Frechet distance between Gaussians fitted to the two embedding sets
// (rows = samples). Sample covariance (n-1); a 1e-6 ridge is added when a
// set is smaller than dim+1.
double fid_from_embeddings(const std::vector<std::vector<double>>& a,
                           const std::vector<std::vector<double>>& b);
double fid(const std::vector<Frame>& gen, const std::vector<Frame>& real, const Embedder& embedder);

// Mean Euclidean keypoint distance in pixel units over all (frame, keypoint)
// pairs; keypoints are in normalized coordinates of a height x width frame.
double akd(const std::vector<KeypointSet>& gen, const std::vector<KeypointSet>& real, int height,
           int width);

double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);
double csim(const Frame& gen, const Frame& real, const Embedder& embedder);

// ---- reports ----

struct MetricRecord {
  std::string name;
  std::string direction;  // "down" or "up"
  double value = 0.0;
  int frames = 0;
  std::vector<double> series;
  std::string note;
};

struct MetricReport {
  std::string dataset;
  std::string task;
  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<MetricRecord> records;

  void add(MetricRecord r) { records.push_back(std::move(r)); }
  const MetricRecord* find(const std::string& name) const;

  std::string serialize() const;
  static MetricReport parse(const std::string& text);
};

// The paper's better-is annotation for each metric name.
std::string metric_direction(const std::string& name);

}  // namespace mevo
