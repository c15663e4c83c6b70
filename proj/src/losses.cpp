#include "mevo/losses.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>

namespace mevo {

// ---------------- feature extractor ----------------

FeatureExtractor::FeatureExtractor(std::uint64_t seed) {
  Rng rng(seed);
  const int chans[kStages + 1] = {3, 8, 8, 16, 16, 16};
  for (int i = 0; i < kStages; ++i) {
    nn::Conv2d c(chans[i], chans[i + 1], 3, 1, rng);
    if (i == 0) {
      // stage 1 reserves three identity taps: V1 carries the raw pixels, so
      // the loss keeps a direct multi-scale intensity term alongside the
      // random projections
      Tensor& w = c.w.value();
      for (int co = 0; co < 3; ++co) {
        c.b.value()[co] = 0.0;
        for (int ci = 0; ci < 3; ++ci)
          for (int y = 0; y < 3; ++y)
            for (int x = 0; x < 3; ++x)
              w[((static_cast<std::int64_t>(co) * 3 + ci) * 3 + y) * 3 + x] =
                  (ci == co && y == 1 && x == 1) ? 1.0 : 0.0;
      }
    }
    // freeze: re-wrap the drawn weights as constants
    c.w = ag::constant(c.w.value());
    c.b = ag::constant(c.b.value());
    convs_.push_back(std::move(c));
  }
}

std::vector<ag::Var> FeatureExtractor::operator()(const ag::Var& image) const {
  std::vector<ag::Var> features;
  features.reserve(kStages);
  ag::Var x = image;
  for (const auto& c : convs_) {
    x = ag::elu(c(x));
    features.push_back(x);
  }
  return features;
}

// ---------------- perceptual loss ----------------

ag::Var perceptual_loss(const ag::Var& generated, const ag::Var& driving,
                        const FeatureExtractor& fx) {
  check_same_shape(generated.value(), driving.value(), "perceptual_loss");
  const int levels = max_pyramid_levels(generated.value().dim(1), generated.value().dim(2), 4);
  auto pyr_g = downsample_pyramid(generated, levels);
  auto pyr_d = downsample_pyramid(driving, levels);
  ag::Var loss;
  for (int j = 0; j < levels; ++j) {
    auto vg = fx(pyr_g[static_cast<std::size_t>(j)]);
    auto vd = fx(pyr_d[static_cast<std::size_t>(j)]);
    for (int i = 0; i < FeatureExtractor::kStages; ++i) {
      ag::Var term = ag::mean_abs_diff(vg[static_cast<std::size_t>(i)], vd[static_cast<std::size_t>(i)]);
      loss = loss.defined() ? loss + term : term;
    }
  }
  return loss;
}

double perceptual_loss(const Frame& generated, const Frame& driving, const FeatureExtractor& fx) {
  return perceptual_loss(ag::constant(generated.data), ag::constant(driving.data), fx).value().item();
}

// ---------------- geometric transform ----------------

namespace {

// r^2 log r, the thin-plate kernel; 0 at r = 0.
inline double tps_kernel(double r2) { return r2 > 0.0 ? 0.5 * r2 * std::log(r2) : 0.0; }

}  // namespace

GeometricTransform GeometricTransform::similarity(double rotation_deg, double scale, double tx,
                                                  double ty) {
  GeometricTransform t;
  const double rad = rotation_deg * 3.14159265358979323846 / 180.0;
  t.a00_ = scale * std::cos(rad);
  t.a01_ = -scale * std::sin(rad);
  t.a10_ = scale * std::sin(rad);
  t.a11_ = scale * std::cos(rad);
  t.tx_ = tx;
  t.ty_ = ty;
  return t;
}

GeometricTransform GeometricTransform::random(Rng& rng, const GeometricTransformParams& p) {
  GeometricTransform t = similarity(rng.uniform(-p.max_rotation_deg, p.max_rotation_deg),
                                    rng.uniform(p.min_scale, p.max_scale),
                                    rng.uniform(-p.max_translation, p.max_translation),
                                    rng.uniform(-p.max_translation, p.max_translation));
  if (p.use_tps) {
    if (p.tps_grid < 2) throw std::invalid_argument("GeometricTransform: tps_grid must be >= 2");
    t.has_tps_ = true;
    for (int gy = 0; gy < p.tps_grid; ++gy)
      for (int gx = 0; gx < p.tps_grid; ++gx)
        t.centers_.push_back({-1.0 + 2.0 * gx / (p.tps_grid - 1), -1.0 + 2.0 * gy / (p.tps_grid - 1)});
    std::vector<Vec2> disp(t.centers_.size());
    for (auto& d : disp) d = {rng.normal(0.0, p.tps_sigma), rng.normal(0.0, p.tps_sigma)};
    t.solve_tps(disp);
  }
  return t;
}

void GeometricTransform::solve_tps(const std::vector<Vec2>& displacements) {
  const int n = static_cast<int>(centers_.size());
  Eigen::MatrixXd sys = Eigen::MatrixXd::Zero(n + 3, n + 3);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double dx = centers_[i].x - centers_[j].x;
      const double dy = centers_[i].y - centers_[j].y;
      sys(i, j) = tps_kernel(dx * dx + dy * dy);
    }
    sys(i, i) += 1e-9;  // conditioning ridge
    sys(i, n) = 1.0;
    sys(i, n + 1) = centers_[i].x;
    sys(i, n + 2) = centers_[i].y;
    sys(n, i) = 1.0;
    sys(n + 1, i) = centers_[i].x;
    sys(n + 2, i) = centers_[i].y;
  }
  Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
  for (int i = 0; i < n; ++i) {
    rhs(i, 0) = displacements[static_cast<std::size_t>(i)].x;
    rhs(i, 1) = displacements[static_cast<std::size_t>(i)].y;
  }
  Eigen::MatrixXd sol = sys.fullPivLu().solve(rhs);
  weights_.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) weights_[static_cast<std::size_t>(i)] = {sol(i, 0), sol(i, 1)};
  poly_const_ = {sol(n, 0), sol(n, 1)};
  poly_x_ = {sol(n + 1, 0), sol(n + 1, 1)};
  poly_y_ = {sol(n + 2, 0), sol(n + 2, 1)};
}

Vec2 GeometricTransform::transform_point(Vec2 p) const {
  Vec2 out{a00_ * p.x + a01_ * p.y + tx_, a10_ * p.x + a11_ * p.y + ty_};
  if (has_tps_) {
    double dx = poly_const_.x + poly_x_.x * p.x + poly_y_.x * p.y;
    double dy = poly_const_.y + poly_x_.y * p.x + poly_y_.y * p.y;
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      const double ux = p.x - centers_[i].x, uy = p.y - centers_[i].y;
      const double k = tps_kernel(ux * ux + uy * uy);
      dx += weights_[i].x * k;
      dy += weights_[i].y * k;
    }
    out.x += dx;
    out.y += dy;
  }
  return out;
}

void GeometricTransform::point_jacobian(Vec2 p, double jac[4]) const {
  jac[0] = a00_;
  jac[1] = a01_;
  jac[2] = a10_;
  jac[3] = a11_;
  if (has_tps_) {
    jac[0] += poly_x_.x;
    jac[1] += poly_y_.x;
    jac[2] += poly_x_.y;
    jac[3] += poly_y_.y;
    for (std::size_t i = 0; i < centers_.size(); ++i) {
      const double ux = p.x - centers_[i].x, uy = p.y - centers_[i].y;
      const double r2 = ux * ux + uy * uy;
      if (r2 <= 0.0) continue;
      const double dk = std::log(r2) + 1.0;  // d(k)/d(p) = (log r^2 + 1) * u
      jac[0] += weights_[i].x * dk * ux;
      jac[1] += weights_[i].x * dk * uy;
      jac[2] += weights_[i].y * dk * ux;
      jac[3] += weights_[i].y * dk * uy;
    }
  }
}

ag::Var GeometricTransform::transform_points(const ag::Var& kps) const {
  const Tensor& p = kps.value();
  if (p.rank() != 2 || p.dim(1) != 2)
    throw std::invalid_argument("GeometricTransform: expected [K,2] keypoints");
  const int k = p.dim(0);
  Tensor out({k, 2});
  for (int i = 0; i < k; ++i) {
    Vec2 q = transform_point({p.at(i, 0), p.at(i, 1)});
    out.at(i, 0) = q.x;
    out.at(i, 1) = q.y;
  }
  auto node = std::make_shared<ag::Node>();
  node->value = std::move(out);
  node->parents = {kps.node()};
  node->requires_grad = kps.requires_grad();
  if (node->requires_grad) {
    GeometricTransform self = *this;
    node->backprop = [kps, self, k](ag::Node& n) {
      kps.node()->ensure_grad();
      const Tensor& p = kps.value();
      for (int i = 0; i < k; ++i) {
        double jac[4];
        self.point_jacobian({p.at(i, 0), p.at(i, 1)}, jac);
        const double g0 = n.grad.at(i, 0), g1 = n.grad.at(i, 1);
        kps.node()->grad.at(i, 0) += jac[0] * g0 + jac[2] * g1;
        kps.node()->grad.at(i, 1) += jac[1] * g0 + jac[3] * g1;
      }
    };
  }
  return ag::Var(std::move(node));
}

DeformationField GeometricTransform::image_flow(int height, int width) const {
  DeformationField f(height, width);
  for (int y = 0; y < height; ++y) {
    const double gy = height > 1 ? -1.0 + 2.0 * y / (height - 1) : 0.0;
    for (int x = 0; x < width; ++x) {
      const double gx = width > 1 ? -1.0 + 2.0 * x / (width - 1) : 0.0;
      Vec2 q = transform_point({gx, gy});
      f.flow.at(0, y, x) = q.x - gx;
      f.flow.at(1, y, x) = q.y - gy;
    }
  }
  return f;
}

Frame GeometricTransform::transform_image(const Frame& frame) const {
  Frame out;
  out.data = warp(frame.data, image_flow(frame.height(), frame.width()).flow);
  return out;
}

ag::Var GeometricTransform::transform_image(const ag::Var& frame) const {
  DeformationField f = image_flow(frame.value().dim(1), frame.value().dim(2));
  return ag::grid_sample(frame, ag::constant(f.flow));
}

// ---------------- equivariance loss ----------------

ag::Var equivariance_loss(const KeypointFn& extractor, const Frame& frame,
                          const GeometricTransform& transform) {
  frame.validate();
  ag::Var image = ag::constant(frame.data);
  ag::Var kps_direct = extractor(image);
  ag::Var kps_warped = extractor(transform.transform_image(image));
  return ag::mean_abs_diff(kps_direct, transform.transform_points(kps_warped));
}

ag::Var equivariance_loss(const KeypointExtractor& extractor, const Frame& frame,
                          const GeometricTransform& transform) {
  return equivariance_loss([&extractor](const ag::Var& f) { return extractor(f); }, frame, transform);
}

// ---------------- total loss ----------------

ag::Var total_loss(const ag::Var& perceptual, const ag::Var& equivariance, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("total_loss: lambda must be > 0");
  return perceptual + ag::scale(equivariance, lambda);
}

double total_loss(double perceptual, double equivariance, double lambda) {
  if (lambda <= 0.0) throw std::invalid_argument("total_loss: lambda must be > 0");
  return perceptual + lambda * equivariance;
}

}  // namespace mevo
