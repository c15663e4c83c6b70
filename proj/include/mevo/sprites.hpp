#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mevo/rng.hpp"
#include "mevo/types.hpp"

namespace mevo {

enum class ShapeKind { disc, square, triangle };

struct SpriteShape {
  ShapeKind kind = ShapeKind::disc;
  double size = 6.0;  // half-extent / circumradius, pixels
  double color[3] = {1.0, 0.0, 0.0};
  Vec2 base;                 // orbit center, pixels
  Vec2 amp;                  // sinusoid amplitude, pixels
  Vec2 omega;                // rad per frame
  Vec2 phase;
  double rot0 = 0.0, rot_speed = 0.0;
  std::vector<Vec2> walk;    // per-frame random-walk offset, pixels

  Vec2 center(int t) const;
  double rotation(int t) const { return rot0 + rot_speed * t; }
};

struct SpriteSceneConfig {
  int frame_size = 64;
  int length = 16;
  int min_shapes = 1;
  int max_shapes = 3;
  double min_size = 9.0;
  double max_size = 13.0;
  double max_amp = 10.0;       // sinusoid amplitude bound, pixels
  double min_omega = 0.2;      // sinusoid speed range, rad per frame
  double max_omega = 0.35;
  double walk_sigma = 0.2;     // per-frame random-walk step
  double walk_max = 1.0;       // cumulative walk clamp
  double margin = 1.0;         // minimum distance from the canvas border
  double edge_softness = 3.5;  // soft-edge width, pixels
  bool static_scene = false;   // zero motion everywhere

  void validate() const;
};

// A procedurally generated moving-sprites clip with exact ground truth:
// trajectories are closed form, so keypoints and pairwise dense flow come
// for free. Identity = shape set + colors + background texture.
struct SpriteScene {
  SpriteSceneConfig config;
  std::uint64_t seed = 0;
  std::vector<SpriteShape> shapes;
  double bg_base[3] = {0.3, 0.3, 0.3};
  double bg_amp[3] = {0.1, 0.1, 0.1};
  double bg_freq[6] = {0.1, 0.1, 0.1, 0.1, 0.1, 0.1};   // fx,fy per channel
  double bg_phase[6] = {0, 0, 0, 0, 0, 0};

  Frame render_frame(int t) const;
  VideoClip render() const;

  // shape centers plus vertices, normalized coordinates
  KeypointSet keypoints(int t) const;
  int keypoints_per_frame() const;

  // flow such that warping frame t0 with it approximates frame t1
  DeformationField flow(int t0, int t1) const;
};

SpriteScene generate_scene(std::uint64_t seed, const SpriteSceneConfig& config);

// ---- on-disk dataset ----

struct DatasetConfig {
  int train_identities = 20;
  int test_identities = 5;
  SpriteSceneConfig scene;
};

struct ClipRef {
  std::string split;     // "train" or "test"
  std::string identity;  // directory name
  std::string clip;      // directory name
  int length = 0;
};

// Layout: <root>/<split>/<identity>/<clip>/frame_%05d.png plus a manifest.
class ClipDataset {
 public:
  static void generate(const std::filesystem::path& root, std::uint64_t seed,
                       const DatasetConfig& config);
  static ClipDataset open(const std::filesystem::path& root);

  const std::vector<ClipRef>& clips(const std::string& split) const;
  VideoClip load_clip(const ClipRef& ref) const;
  const std::filesystem::path& root() const { return root_; }
  int frame_size() const { return frame_size_; }
  std::uint64_t seed() const { return seed_; }

  // true when no identity appears in both splits
  bool splits_disjoint() const;

 private:
  std::filesystem::path root_;
  std::uint64_t seed_ = 0;
  int frame_size_ = 0;
  std::vector<ClipRef> train_, test_;
};

struct TrainingItem {
  Frame source;
  std::vector<Frame> references;
  Frame driving;
  std::vector<int> frame_indices;  // source, refs..., driving
};

// Draws source, N references and a driving frame (all distinct) from one clip.
TrainingItem sample_training_item(const VideoClip& clip, Rng& rng, int n_refs);

// Dataset-level variant: picks a training clip first.
TrainingItem sample_training_item(const ClipDataset& dataset, Rng& rng, int n_refs);

}  // namespace mevo
