#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "mevo/image_ops.hpp"
#include "mevo/keypoints.hpp"
#include "mevo/nn.hpp"
#include "mevo/types.hpp"

namespace mevo {

// Frozen five-stage conv feature pyramid used as the perceptual feature
// space. Weights are seed-fixed constants, so losses built on it are
// deterministic and dependency-free; a pretrained backbone can be swapped in
// through the same call shape.
class FeatureExtractor {
 public:
  static constexpr int kStages = 5;

  explicit FeatureExtractor(std::uint64_t seed = 0x5EEDFACEull);

  // V1..V5, each [C,H,W] at the input resolution.
  std::vector<ag::Var> operator()(const ag::Var& image) const;

 private:
  std::vector<nn::Conv2d> convs_;
};

// Multi-resolution perceptual reconstruction loss:
// sum over extractor stages i and pyramid levels j of mean |Vi(gen_j) - Vi(drv_j)|.
// Pyramid depth is 4 levels, reduced when the frames are too small to keep
// every level at least 4x4.
ag::Var perceptual_loss(const ag::Var& generated, const ag::Var& driving,
                        const FeatureExtractor& fx);
double perceptual_loss(const Frame& generated, const Frame& driving, const FeatureExtractor& fx);

struct GeometricTransformParams {
  double max_rotation_deg = 15.0;
  double min_scale = 0.9;
  double max_scale = 1.1;
  double max_translation = 0.1;
  bool use_tps = true;
  int tps_grid = 5;
  double tps_sigma = 0.05;
};

// Random invertible warp used by the equivariance loss: a similarity
// transform (rotation, isotropic scale, translation) optionally perturbed by
// a thin-plate-spline displacement on a control grid. The same map applies
// to keypoints in closed form and to images through the sampling warp.
class GeometricTransform {
 public:
  GeometricTransform() = default;  // identity

  static GeometricTransform identity() { return {}; }
  static GeometricTransform similarity(double rotation_deg, double scale, double tx, double ty);
  static GeometricTransform random(Rng& rng, const GeometricTransformParams& params = {});

  Vec2 transform_point(Vec2 p) const;
  // 2x2 Jacobian of the point map at p, rows (d out_x, d out_y), cols (d px, d py).
  void point_jacobian(Vec2 p, double jac[4]) const;

  // Differentiable point transform on a [K,2] keypoint tensor.
  ag::Var transform_points(const ag::Var& kps) const;

  // flow(x) = Q(x) - x: warping with it resamples the image through the map.
  DeformationField image_flow(int height, int width) const;
  Frame transform_image(const Frame& frame) const;
  ag::Var transform_image(const ag::Var& frame) const;

 private:
  double a00_ = 1.0, a01_ = 0.0, a10_ = 0.0, a11_ = 1.0;
  double tx_ = 0.0, ty_ = 0.0;
  bool has_tps_ = false;
  std::vector<Vec2> centers_;
  std::vector<Vec2> weights_;      // TPS kernel weights per center, x/y displacement
  Vec2 poly_const_{}, poly_x_{}, poly_y_{};  // TPS polynomial part per displacement coord

  void solve_tps(const std::vector<Vec2>& displacements);
};

using KeypointFn = std::function<ag::Var(const ag::Var& frame)>;

// mean |extract(frame) - Q(extract(frame resampled through Q))| over the K
// keypoints and both coordinates. Exactly zero under the identity transform.
ag::Var equivariance_loss(const KeypointFn& extractor, const Frame& frame,
                          const GeometricTransform& transform);
ag::Var equivariance_loss(const KeypointExtractor& extractor, const Frame& frame,
                          const GeometricTransform& transform);

// L = L_percep + lambda * L_equiv, lambda > 0.
ag::Var total_loss(const ag::Var& perceptual, const ag::Var& equivariance, double lambda);
double total_loss(double perceptual, double equivariance, double lambda);

}  // namespace mevo
