#pragma once

#include <stdexcept>
#include <vector>

#include "mevo/tensor.hpp"

namespace mevo {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

inline Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
inline Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
inline Vec2 operator*(double c, Vec2 a) { return {c * a.x, c * a.y}; }

// RGB image with values in [0,1], stored [3,H,W].
struct Frame {
  Tensor data;

  Frame() = default;
  explicit Frame(int height, int width) : data({3, height, width}) {}

  int height() const { return data.dim(1); }
  int width() const { return data.dim(2); }

  static Frame from_tensor(Tensor t) {
    Frame f;
    f.data = std::move(t);
    f.validate();
    return f;
  }

  void validate() const {
    if (data.rank() != 3 || data.dim(0) != 3) throw std::invalid_argument("Frame: expected [3,H,W]");
    if (data.dim(1) < 4 || data.dim(2) < 4) throw std::invalid_argument("Frame: dimensions must be >= 4");
    if (!data.all_finite()) throw std::invalid_argument("Frame: non-finite values");
    if (data.min() < 0.0 || data.max() > 1.0) throw std::invalid_argument("Frame: values outside [0,1]");
  }
};

using VideoClip = std::vector<Frame>;

// K keypoints in normalized coordinates ((-1,-1) top-left, (+1,+1) bottom-right).
struct KeypointSet {
  std::vector<Vec2> points;

  int count() const { return static_cast<int>(points.size()); }

  Tensor to_tensor() const {
    Tensor t({count(), 2});
    for (int i = 0; i < count(); ++i) {
      t.at(i, 0) = points[static_cast<std::size_t>(i)].x;
      t.at(i, 1) = points[static_cast<std::size_t>(i)].y;
    }
    return t;
  }

  static KeypointSet from_tensor(const Tensor& t) {
    if (t.rank() != 2 || t.dim(1) != 2) throw std::invalid_argument("KeypointSet: expected [K,2]");
    KeypointSet s;
    s.points.resize(static_cast<std::size_t>(t.dim(0)));
    for (int i = 0; i < t.dim(0); ++i) s.points[static_cast<std::size_t>(i)] = {t.at(i, 0), t.at(i, 1)};
    return s;
  }
};

// K+1 displacements; index 0 is the static-background term and is always (0,0).
struct DisplacementSet {
  std::vector<Vec2> deltas;

  int count() const { return static_cast<int>(deltas.size()); }
};

// Per-pixel offsets in normalized coordinates, stored [2,H,W] with channel 0
// the x offset and channel 1 the y offset. Sampling semantics: output pixel p
// reads the input at identity_grid(p) + flow(p). The zero field is the
// identity warp.
struct DeformationField {
  Tensor flow;

  DeformationField() = default;
  explicit DeformationField(int height, int width) : flow({2, height, width}) {}

  int height() const { return flow.dim(1); }
  int width() const { return flow.dim(2); }

  void validate() const {
    if (flow.rank() != 3 || flow.dim(0) != 2) throw std::invalid_argument("DeformationField: expected [2,H,W]");
    if (!flow.all_finite()) throw std::invalid_argument("DeformationField: non-finite values");
  }
};

}  // namespace mevo
