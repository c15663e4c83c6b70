#include "mevo/image_ops.hpp"

#include <cmath>
#include <stdexcept>

namespace mevo {

Tensor identity_grid(int height, int width) {
  if (height < 2 || width < 2) throw std::invalid_argument("identity_grid: dimensions must be >= 2");
  Tensor g({2, height, width});
  for (int y = 0; y < height; ++y) {
    const double gy = -1.0 + 2.0 * y / (height - 1);
    for (int x = 0; x < width; ++x) {
      g.at(0, y, x) = -1.0 + 2.0 * x / (width - 1);
      g.at(1, y, x) = gy;
    }
  }
  return g;
}

Tensor warp(const Tensor& input, const Tensor& flow) {
  return ag::grid_sample(ag::constant(input), ag::constant(flow)).value();
}

Frame warp(const Frame& frame, const DeformationField& field) {
  field.validate();
  Frame out;
  out.data = warp(frame.data, field.flow);
  // border-clamped sampling of an in-range image stays in range
  return out;
}

Tensor resize_bilinear(const Tensor& input, int out_h, int out_w) {
  return ag::resize_bilinear(ag::constant(input), out_h, out_w).value();
}

KeypointSet soft_argmax(const Tensor& heatmap) {
  return KeypointSet::from_tensor(ag::soft_argmax(ag::constant(heatmap)).value());
}

Tensor gaussian_heatmap(const KeypointSet& keypoints, double sigma, int height, int width) {
  return ag::gaussian_heatmap(ag::constant(keypoints.to_tensor()), sigma, height, width).value();
}

Tensor avg_pool2(const Tensor& input) { return ag::avg_pool2(ag::constant(input)).value(); }

int max_pyramid_levels(int height, int width, int max_levels) {
  int levels = 1;
  int h = height, w = width;
  while (levels < max_levels && h / 2 >= 4 && w / 2 >= 4) {
    h /= 2;
    w /= 2;
    ++levels;
  }
  return levels;
}

std::vector<ag::Var> downsample_pyramid(const ag::Var& image, int levels) {
  if (levels < 1) throw std::invalid_argument("downsample_pyramid: levels must be >= 1");
  std::vector<ag::Var> out;
  out.reserve(static_cast<std::size_t>(levels));
  out.push_back(image);
  for (int l = 1; l < levels; ++l) {
    const Tensor& prev = out.back().value();
    if (prev.dim(1) / 2 < 4 || prev.dim(2) / 2 < 4)
      throw std::invalid_argument("downsample_pyramid: level " + std::to_string(l) +
                                  " would fall below 4x4");
    out.push_back(ag::avg_pool2(out.back()));
  }
  return out;
}

std::vector<Frame> downsample_pyramid(const Frame& frame, int levels) {
  auto vars = downsample_pyramid(ag::constant(frame.data), levels);
  std::vector<Frame> out;
  out.reserve(vars.size());
  for (auto& v : vars) {
    Frame f;
    f.data = v.value();
    out.push_back(std::move(f));
  }
  return out;
}

}  // namespace mevo
