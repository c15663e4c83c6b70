#pragma once

#include <vector>

#include "mevo/autodiff.hpp"
#include "mevo/types.hpp"

namespace mevo {

// Normalized coordinate grid, [2,H,W] with channel 0 the x coordinate
// (varies along width) and channel 1 the y coordinate. Pixel centers sit on
// the grid points; corners are exactly (-1,-1) and (+1,+1).
Tensor identity_grid(int height, int width);

// Bilinear warp with border clamping. Output pixel p samples the input at
// identity_grid(p) + flow(p); flow may have a different spatial size than
// the input, in which case the output takes the flow's size.
Tensor warp(const Tensor& input, const Tensor& flow);
Frame warp(const Frame& frame, const DeformationField& field);

// Bilinear resize (a warp by the zero field at the target size).
Tensor resize_bilinear(const Tensor& input, int out_h, int out_w);

// Expectation of the coordinate grid under spatially normalized heatmaps.
KeypointSet soft_argmax(const Tensor& heatmap);

// Per-keypoint Gaussian heatmaps, unit spatial sum per channel.
Tensor gaussian_heatmap(const KeypointSet& keypoints, double sigma, int height, int width);

// 2x average pooling.
Tensor avg_pool2(const Tensor& input);

// Image pyramid at scales 1, 1/2, ..., 1/2^(levels-1); level 0 is the input.
// Throws if any level would fall below 4x4.
std::vector<Frame> downsample_pyramid(const Frame& frame, int levels);
std::vector<ag::Var> downsample_pyramid(const ag::Var& image, int levels);

// Largest pyramid depth (capped at max_levels) keeping every level >= 4x4.
int max_pyramid_levels(int height, int width, int max_levels);

}  // namespace mevo
