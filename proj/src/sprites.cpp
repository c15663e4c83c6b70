#include "mevo/sprites.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "mevo/image_io.hpp"

namespace mevo {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Local {
  double x, y;
};

// world -> shape-local (undo translation and rotation)
inline Local to_local(const SpriteShape& s, int t, double px, double py) {
  const Vec2 c = s.center(t);
  const double th = -s.rotation(t);
  const double dx = px - c.x, dy = py - c.y;
  return {dx * std::cos(th) - dy * std::sin(th), dx * std::sin(th) + dy * std::cos(th)};
}

// signed distance to the shape boundary in local coordinates (< 0 inside);
// polygon corners use the max-of-half-planes approximation
inline double signed_distance_local(const SpriteShape& s, const Local& p) {
  switch (s.kind) {
    case ShapeKind::disc:
      return std::sqrt(p.x * p.x + p.y * p.y) - s.size;
    case ShapeKind::square:
      return std::max(std::fabs(p.x), std::fabs(p.y)) - s.size;
    case ShapeKind::triangle: {
      // equilateral triangle, circumradius size, one vertex pointing up
      double vx[3], vy[3];
      for (int k = 0; k < 3; ++k) {
        const double a = -kPi / 2 + 2.0 * kPi * k / 3.0;
        vx[k] = s.size * std::cos(a);
        vy[k] = s.size * std::sin(a);
      }
      double sd = -1e30;
      for (int k = 0; k < 3; ++k) {
        const int j = (k + 1) % 3;
        double ex = vy[j] - vy[k], ey = -(vx[j] - vx[k]);
        const double len = std::hypot(ex, ey);
        ex /= len;
        ey /= len;
        if (ex * -vx[k] + ey * -vy[k] > 0) {  // orient outward (centroid is inside)
          ex = -ex;
          ey = -ey;
        }
        sd = std::max(sd, ex * (p.x - vx[k]) + ey * (p.y - vy[k]));
      }
      return sd;
    }
  }
  return 1e30;
}

inline bool contains_local(const SpriteShape& s, const Local& p) {
  return signed_distance_local(s, p) <= 0.0;
}

// vertices in local coordinates (before rotation)
std::vector<Vec2> local_vertices(const SpriteShape& s) {
  std::vector<Vec2> v;
  switch (s.kind) {
    case ShapeKind::disc:
      for (int k = 0; k < 4; ++k) {
        const double a = kPi * k / 2.0;
        v.push_back({s.size * std::cos(a), s.size * std::sin(a)});
      }
      break;
    case ShapeKind::square:
      v = {{-s.size, -s.size}, {s.size, -s.size}, {s.size, s.size}, {-s.size, s.size}};
      break;
    case ShapeKind::triangle:
      for (int k = 0; k < 3; ++k) {
        const double a = -kPi / 2 + 2.0 * kPi * k / 3.0;
        v.push_back({s.size * std::cos(a), s.size * std::sin(a)});
      }
      break;
  }
  return v;
}

int vertex_count(ShapeKind k) { return k == ShapeKind::triangle ? 3 : 4; }

}  // namespace

Vec2 SpriteShape::center(int t) const {
  Vec2 c = base;
  c.x += amp.x * std::sin(omega.x * t + phase.x);
  c.y += amp.y * std::sin(omega.y * t + phase.y);
  if (!walk.empty()) {
    const std::size_t i = std::min(static_cast<std::size_t>(t), walk.size() - 1);
    c.x += walk[i].x;
    c.y += walk[i].y;
  }
  return c;
}

void SpriteSceneConfig::validate() const {
  if (frame_size < 16) throw std::invalid_argument("SpriteSceneConfig: frame_size must be >= 16");
  if (length < 1) throw std::invalid_argument("SpriteSceneConfig: length must be >= 1");
  if (min_shapes < 1 || max_shapes < min_shapes || max_shapes > 3)
    throw std::invalid_argument("SpriteSceneConfig: shape count must be within [1,3]");
  if (min_size <= 0 || max_size < min_size)
    throw std::invalid_argument("SpriteSceneConfig: bad size range");
  if (min_omega < 0 || max_omega < min_omega)
    throw std::invalid_argument("SpriteSceneConfig: bad omega range");
  // worst-case excursion from the orbit center must fit on the canvas
  const double reach = max_size + max_amp + walk_max + margin;
  if (2.0 * reach >= frame_size)
    throw std::invalid_argument("SpriteSceneConfig: shapes cannot stay on canvas (reach " +
                                std::to_string(reach) + " vs frame " + std::to_string(frame_size) +
                                ")");
}

SpriteScene generate_scene(std::uint64_t seed, const SpriteSceneConfig& config) {
  config.validate();
  SpriteScene scene;
  scene.config = config;
  scene.seed = seed;
  Rng rng(seed ^ 0x5CE4E5EEDull);

  for (int c = 0; c < 3; ++c) {
    scene.bg_base[c] = rng.uniform(0.25, 0.45);
    scene.bg_amp[c] = rng.uniform(0.03, 0.08);
    scene.bg_freq[2 * c] = rng.uniform(0.04, 0.12);
    scene.bg_freq[2 * c + 1] = rng.uniform(0.04, 0.12);
    scene.bg_phase[2 * c] = rng.uniform(0.0, 2 * kPi);
    scene.bg_phase[2 * c + 1] = rng.uniform(0.0, 2 * kPi);
  }

  const int n_shapes =
      config.min_shapes + static_cast<int>(rng.uniform_int(
                              static_cast<std::uint64_t>(config.max_shapes - config.min_shapes + 1)));

  // distinct saturated colors
  const double palette[6][3] = {{0.95, 0.2, 0.15}, {0.15, 0.55, 0.95}, {0.2, 0.85, 0.3},
                                {0.95, 0.85, 0.2}, {0.85, 0.25, 0.85}, {0.95, 0.55, 0.15}};
  int color_order[6] = {0, 1, 2, 3, 4, 5};
  for (int i = 5; i > 0; --i) std::swap(color_order[i], color_order[rng.uniform_int(i + 1)]);

  for (int i = 0; i < n_shapes; ++i) {
    SpriteShape s;
    s.kind = static_cast<ShapeKind>(rng.uniform_int(3));
    s.size = rng.uniform(config.min_size, config.max_size);
    for (int c = 0; c < 3; ++c) s.color[c] = palette[color_order[i]][c];

    // anywhere on canvas, keeping orbit centers apart (rejection with fallback)
    const double reach = s.size + config.max_amp + config.walk_max + config.margin;
    const double lo = reach, hi = config.frame_size - 1 - reach;
    for (int attempt = 0; attempt < 40; ++attempt) {
      s.base.x = rng.uniform(lo, hi);
      s.base.y = rng.uniform(lo, hi);
      bool clear = true;
      for (const auto& other : scene.shapes) {
        const double dx = s.base.x - other.base.x, dy = s.base.y - other.base.y;
        if (std::sqrt(dx * dx + dy * dy) < 0.9 * (s.size + other.size)) clear = false;
      }
      if (clear) break;
    }

    if (!config.static_scene) {
      s.amp = {rng.uniform(0.3 * config.max_amp, config.max_amp),
               rng.uniform(0.3 * config.max_amp, config.max_amp)};
      s.omega = {rng.uniform(config.min_omega, config.max_omega),
                 rng.uniform(config.min_omega, config.max_omega)};
      s.phase = {rng.uniform(0.0, 2 * kPi), rng.uniform(0.0, 2 * kPi)};
      s.rot0 = rng.uniform(0.0, 2 * kPi);
      s.rot_speed = s.kind == ShapeKind::disc ? 0.0 : rng.uniform(-0.08, 0.08);
      s.walk.resize(static_cast<std::size_t>(config.length));
      Vec2 acc{0, 0};
      for (int t = 0; t < config.length; ++t) {
        acc.x = std::clamp(acc.x + rng.normal(0.0, config.walk_sigma), -config.walk_max,
                           config.walk_max);
        acc.y = std::clamp(acc.y + rng.normal(0.0, config.walk_sigma), -config.walk_max,
                           config.walk_max);
        s.walk[static_cast<std::size_t>(t)] = acc;
      }
    }
    scene.shapes.push_back(std::move(s));
  }
  return scene;
}

Frame SpriteScene::render_frame(int t) const {
  const int n = config.frame_size;
  const double soft = std::max(config.edge_softness, 1e-6);
  Frame f(n, n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double acc[3];
      for (int c = 0; c < 3; ++c)
        acc[c] = bg_base[c] + bg_amp[c] * std::sin(bg_freq[2 * c] * x + bg_phase[2 * c]) *
                                  std::sin(bg_freq[2 * c + 1] * y + bg_phase[2 * c + 1]);
      // painter's order: later shapes composite over earlier ones
      for (const auto& s : shapes) {
        const double sd = signed_distance_local(s, to_local(s, t, x, y));
        const double cov = std::clamp(0.5 - sd / soft, 0.0, 1.0);
        if (cov <= 0.0) continue;
        for (int c = 0; c < 3; ++c) acc[c] = acc[c] * (1.0 - cov) + s.color[c] * cov;
      }
      for (int c = 0; c < 3; ++c) f.data.at(c, y, x) = std::clamp(acc[c], 0.0, 1.0);
    }
  }
  return f;
}

VideoClip SpriteScene::render() const {
  VideoClip clip;
  clip.reserve(static_cast<std::size_t>(config.length));
  for (int t = 0; t < config.length; ++t) clip.push_back(render_frame(t));
  return clip;
}

int SpriteScene::keypoints_per_frame() const {
  int n = 0;
  for (const auto& s : shapes) n += 1 + vertex_count(s.kind);
  return n;
}

KeypointSet SpriteScene::keypoints(int t) const {
  KeypointSet out;
  const double half = (config.frame_size - 1) / 2.0;
  auto to_norm = [half](Vec2 p) { return Vec2{p.x / half - 1.0, p.y / half - 1.0}; };
  for (const auto& s : shapes) {
    const Vec2 c = s.center(t);
    out.points.push_back(to_norm(c));
    const double th = s.rotation(t);
    for (const Vec2& v : local_vertices(s)) {
      const double wx = c.x + v.x * std::cos(th) - v.y * std::sin(th);
      const double wy = c.y + v.x * std::sin(th) + v.y * std::cos(th);
      out.points.push_back(to_norm({wx, wy}));
    }
  }
  return out;
}

DeformationField SpriteScene::flow(int t0, int t1) const {
  const int n = config.frame_size;
  DeformationField field(n, n);
  const double half = (n - 1) / 2.0;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      double fx = 0.0, fy = 0.0;
      for (auto it = shapes.rbegin(); it != shapes.rend(); ++it) {
        const Local l = to_local(*it, t1, x, y);
        if (!contains_local(*it, l)) continue;
        // rigid shape: carry the local point back to its t0 position
        const Vec2 c0 = it->center(t0);
        const double th0 = it->rotation(t0);
        const double sx = c0.x + l.x * std::cos(th0) - l.y * std::sin(th0);
        const double sy = c0.y + l.x * std::sin(th0) + l.y * std::cos(th0);
        fx = (sx - x) / half;
        fy = (sy - y) / half;
        break;
      }
      field.flow.at(0, y, x) = fx;
      field.flow.at(1, y, x) = fy;
    }
  }
  return field;
}

// ---------------- dataset ----------------

namespace {

std::string identity_name(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "id_%05d", index);
  return buf;
}

}  // namespace

void ClipDataset::generate(const std::filesystem::path& root, std::uint64_t seed,
                           const DatasetConfig& config) {
  config.scene.validate();
  if (config.train_identities < 1 || config.test_identities < 1)
    throw std::invalid_argument("ClipDataset: need at least one identity per split");
  std::filesystem::create_directories(root);

  std::ostringstream manifest;
  manifest << "# mevo sprite dataset manifest v1\n";
  manifest << "seed " << seed << "\n";
  manifest << "frame_size " << config.scene.frame_size << "\n";
  manifest << "clip_length " << config.scene.length << "\n";

  Rng master(seed);
  int index = 0;
  for (const auto& [split, count] :
       {std::pair<const char*, int>{"train", config.train_identities},
        std::pair<const char*, int>{"test", config.test_identities}}) {
    for (int i = 0; i < count; ++i, ++index) {
      const std::uint64_t scene_seed = master.fork(static_cast<std::uint64_t>(index)).next_u64();
      SpriteScene scene = generate_scene(scene_seed, config.scene);
      const std::string id = identity_name(index);
      save_frames(scene.render(), root / split / id / "clip_00");
      manifest << "identity " << split << " " << id << " clip_00 " << config.scene.length << "\n";
    }
  }

  std::ofstream mf(root / "manifest.txt");
  if (!mf) throw std::runtime_error("ClipDataset: cannot write manifest in " + root.string());
  mf << manifest.str();
}

ClipDataset ClipDataset::open(const std::filesystem::path& root) {
  std::ifstream mf(root / "manifest.txt");
  if (!mf) throw std::runtime_error("ClipDataset: no manifest in " + root.string());
  ClipDataset ds;
  ds.root_ = root;
  std::string line;
  while (std::getline(mf, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    if (tag == "seed") {
      ls >> ds.seed_;
    } else if (tag == "frame_size") {
      ls >> ds.frame_size_;
    } else if (tag == "clip_length") {
      // informational
    } else if (tag == "identity") {
      ClipRef ref;
      ls >> ref.split >> ref.identity >> ref.clip >> ref.length;
      if (ref.split == "train")
        ds.train_.push_back(std::move(ref));
      else if (ref.split == "test")
        ds.test_.push_back(std::move(ref));
      else
        throw std::runtime_error("ClipDataset: unknown split '" + ref.split + "'");
    } else {
      throw std::runtime_error("ClipDataset: unknown manifest tag '" + tag + "'");
    }
  }
  return ds;
}

const std::vector<ClipRef>& ClipDataset::clips(const std::string& split) const {
  if (split == "train") return train_;
  if (split == "test") return test_;
  throw std::invalid_argument("ClipDataset: unknown split '" + split + "'");
}

VideoClip ClipDataset::load_clip(const ClipRef& ref) const {
  return load_frames(root_ / ref.split / ref.identity / ref.clip);
}

bool ClipDataset::splits_disjoint() const {
  std::set<std::string> train_ids, test_ids;
  for (const auto& r : train_) train_ids.insert(r.identity);
  for (const auto& r : test_) test_ids.insert(r.identity);
  for (const auto& id : train_ids)
    if (test_ids.count(id)) return false;
  return true;
}

TrainingItem sample_training_item(const VideoClip& clip, Rng& rng, int n_refs) {
  if (n_refs < 0) throw std::invalid_argument("sample_training_item: negative reference count");
  const int needed = n_refs + 2;
  if (static_cast<int>(clip.size()) < needed)
    throw std::invalid_argument("sample_training_item: clip too short (" +
                                std::to_string(clip.size()) + " frames, need " +
                                std::to_string(needed) + ")");
  // partial Fisher-Yates for distinct indices
  std::vector<int> idx(clip.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  for (int i = 0; i < needed; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(idx.size() - static_cast<std::size_t>(i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  TrainingItem item;
  item.frame_indices.assign(idx.begin(), idx.begin() + needed);
  item.source = clip[static_cast<std::size_t>(item.frame_indices[0])];
  for (int i = 0; i < n_refs; ++i)
    item.references.push_back(clip[static_cast<std::size_t>(item.frame_indices[static_cast<std::size_t>(i) + 1])]);
  item.driving = clip[static_cast<std::size_t>(item.frame_indices[static_cast<std::size_t>(needed) - 1])];
  return item;
}

TrainingItem sample_training_item(const ClipDataset& dataset, Rng& rng, int n_refs) {
  const auto& refs = dataset.clips("train");
  if (refs.empty()) throw std::invalid_argument("sample_training_item: empty train split");
  const auto& ref = refs[rng.uniform_int(refs.size())];
  VideoClip clip = dataset.load_clip(ref);
  return sample_training_item(clip, rng, n_refs);
}

}  // namespace mevo
