#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mevo/image_io.hpp"
#include "mevo/image_ops.hpp"
#include "mevo/sprites.hpp"
#include "test_util.hpp"

using namespace mevo;
namespace fs = std::filesystem;
using testutil::max_abs_diff;

namespace {

fs::path temp_dir(const char* name) {
  fs::path p = fs::temp_directory_path() / "mevo_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

SpriteSceneConfig fast_scene() {
  SpriteSceneConfig c;
  c.frame_size = 64;
  c.length = 8;
  return c;
}

}  // namespace

TEST_CASE("sprite scenes are deterministic per seed") {
  SpriteSceneConfig cfg = fast_scene();
  SpriteScene a = generate_scene(77, cfg);
  SpriteScene b = generate_scene(77, cfg);
  VideoClip ca = a.render(), cb = b.render();
  REQUIRE(ca.size() == cb.size());
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(max_abs_diff(ca[i].data, cb[i].data) == 0.0);

  SpriteScene c = generate_scene(78, cfg);
  CHECK(max_abs_diff(a.render_frame(0).data, c.render_frame(0).data) > 0.0);
}

TEST_CASE("ground-truth flow warps one frame onto the next") {
  SpriteScene scene = generate_scene(123, fast_scene());
  for (int t = 0; t < 3; ++t) {
    Frame ft = scene.render_frame(t);
    Frame ft1 = scene.render_frame(t + 1);
    DeformationField gt = scene.flow(t, t + 1);
    Frame warped = warp(ft, gt);
    double l1 = 0.0;
    for (std::int64_t i = 0; i < ft1.data.size(); ++i) l1 += std::fabs(warped.data[i] - ft1.data[i]);
    l1 /= static_cast<double>(ft1.data.size());
    CHECK(l1 < 0.02);
  }
}

TEST_CASE("static scenes are constant with zero flow") {
  SpriteSceneConfig cfg = fast_scene();
  cfg.static_scene = true;
  SpriteScene scene = generate_scene(9, cfg);
  Frame f0 = scene.render_frame(0);
  Frame f5 = scene.render_frame(5);
  CHECK(max_abs_diff(f0.data, f5.data) == 0.0);
  DeformationField gt = scene.flow(0, 5);
  CHECK(gt.flow.min() == 0.0);
  CHECK(gt.flow.max() == 0.0);
}

TEST_CASE("ground-truth keypoints round-trip through gaussian rendering") {
  SpriteScene scene = generate_scene(5, fast_scene());
  KeypointSet gt = scene.keypoints(3);
  REQUIRE(gt.count() == scene.keypoints_per_frame());
  Tensor hm = gaussian_heatmap(gt, 0.08, 64, 64);
  KeypointSet rec = soft_argmax(hm);
  const double px = 2.0 / 63.0;  // one pixel, normalized
  for (int i = 0; i < gt.count(); ++i) {
    CHECK(std::fabs(rec.points[i].x - gt.points[i].x) < 2 * px);
    CHECK(std::fabs(rec.points[i].y - gt.points[i].y) < 2 * px);
  }
}

TEST_CASE("configs that cannot keep shapes on canvas are rejected") {
  SpriteSceneConfig cfg = fast_scene();
  cfg.max_size = 20.0;
  cfg.max_amp = 12.0;
  CHECK_THROWS_AS(generate_scene(1, cfg), std::invalid_argument);
}

TEST_CASE("png round trip stays within quantization error") {
  Rng rng(31);
  Frame f;
  f.data = testutil::random_tensor({3, 20, 14}, rng, 0.0, 1.0);
  fs::path dir = temp_dir("png_roundtrip");
  write_png(dir / "a.png", f);
  Frame back = read_png(dir / "a.png");
  REQUIRE(back.height() == 20);
  REQUIRE(back.width() == 14);
  CHECK(max_abs_diff(back.data, f.data) <= 1.0 / 255.0);
}

TEST_CASE("png reader handles filtered scanlines") {
  // 2x2 RGB image, row 0 Sub-filtered, row 1 Up-filtered
  const unsigned char raw[] = {1, 10, 20, 30, 5, 5, 5, 2, 3, 4, 3, 1, 1, 1};
  uLongf bound = compressBound(sizeof(raw));
  std::vector<unsigned char> compressed(bound);
  REQUIRE(compress2(compressed.data(), &bound, raw, sizeof(raw), 6) == Z_OK);
  compressed.resize(bound);

  auto put32 = [](std::vector<unsigned char>& v, std::uint32_t x) {
    v.push_back(static_cast<unsigned char>(x >> 24));
    v.push_back(static_cast<unsigned char>(x >> 16));
    v.push_back(static_cast<unsigned char>(x >> 8));
    v.push_back(static_cast<unsigned char>(x));
  };
  auto chunk = [&](std::vector<unsigned char>& out, const char* type,
                   const std::vector<unsigned char>& data) {
    put32(out, static_cast<std::uint32_t>(data.size()));
    std::size_t start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), data.begin(), data.end());
    uLong crc = crc32(crc32(0L, Z_NULL, 0), out.data() + start, static_cast<uInt>(out.size() - start));
    put32(out, static_cast<std::uint32_t>(crc));
  };

  std::vector<unsigned char> ihdr;
  put32(ihdr, 2);
  put32(ihdr, 2);
  ihdr.insert(ihdr.end(), {8, 2, 0, 0, 0});
  std::vector<unsigned char> png = {137, 80, 78, 71, 13, 10, 26, 10};
  chunk(png, "IHDR", ihdr);
  chunk(png, "IDAT", compressed);
  chunk(png, "IEND", {});

  fs::path dir = temp_dir("png_filters");
  {
    std::ofstream f(dir / "filtered.png", std::ios::binary);
    f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
  }
  Frame img = read_png(dir / "filtered.png");
  // defiltered pixels: (10,20,30),(15,25,35) / (13,24,33),(16,26,36)
  CHECK(img.data.at(0, 0, 0) == doctest::Approx(10.0 / 255));
  CHECK(img.data.at(2, 0, 1) == doctest::Approx(35.0 / 255));
  CHECK(img.data.at(1, 1, 0) == doctest::Approx(24.0 / 255));
  CHECK(img.data.at(0, 1, 1) == doctest::Approx(16.0 / 255));
}

TEST_CASE("clip io error paths") {
  SUBCASE("empty directory") {
    fs::path dir = temp_dir("empty_clip");
    CHECK_THROWS_AS(load_frames(dir), std::runtime_error);
  }
  SUBCASE("mixed frame sizes name the offender") {
    fs::path dir = temp_dir("mixed_clip");
    Frame a(8, 8), b(8, 10);
    a.data.fill(0.5);
    b.data.fill(0.5);
    write_png(dir / "frame_00000.png", a);
    write_png(dir / "frame_00001.png", b);
    try {
      load_frames(dir);
      FAIL("expected an error");
    } catch (const std::runtime_error& e) {
      CHECK(std::string(e.what()).find("frame_00001.png") != std::string::npos);
    }
  }
  SUBCASE("save then load a rendered clip") {
    SpriteSceneConfig cfg = fast_scene();
    cfg.length = 3;
    VideoClip clip = generate_scene(2, cfg).render();
    fs::path dir = temp_dir("clip_roundtrip");
    save_frames(clip, dir);
    VideoClip back = load_frames(dir);
    REQUIRE(back.size() == clip.size());
    for (std::size_t i = 0; i < clip.size(); ++i)
      CHECK(max_abs_diff(back[i].data, clip[i].data) <= 1.0 / 255.0);
  }
}

TEST_CASE("dataset generation and layout") {
  fs::path root = temp_dir("dataset");
  DatasetConfig cfg;
  cfg.train_identities = 3;
  cfg.test_identities = 2;
  cfg.scene = fast_scene();
  ClipDataset::generate(root, 42, cfg);

  CHECK(fs::exists(root / "manifest.txt"));
  CHECK(fs::exists(root / "train" / "id_00000" / "clip_00" / "frame_00000.png"));
  CHECK(fs::exists(root / "test" / "id_00003" / "clip_00" / "frame_00007.png"));

  ClipDataset ds = ClipDataset::open(root);
  CHECK(ds.clips("train").size() == 3);
  CHECK(ds.clips("test").size() == 2);
  CHECK(ds.frame_size() == 64);
  CHECK(ds.seed() == 42);
  CHECK(ds.splits_disjoint());

  VideoClip clip = ds.load_clip(ds.clips("test")[0]);
  CHECK(clip.size() == 8);

  SUBCASE("byte-for-byte determinism across generations") {
    fs::path root2 = temp_dir("dataset2");
    ClipDataset::generate(root2, 42, cfg);
    for (const auto& rel : {"train/id_00001/clip_00/frame_00004.png",
                            "test/id_00004/clip_00/frame_00000.png", "manifest.txt"}) {
      std::ifstream f1(root / rel, std::ios::binary), f2(root2 / rel, std::ios::binary);
      std::string s1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
      std::string s2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
      CHECK(s1 == s2);
      CHECK(!s1.empty());
    }
  }
}

TEST_CASE("training item sampling") {
  SpriteSceneConfig cfg = fast_scene();
  VideoClip clip = generate_scene(11, cfg).render();

  SUBCASE("N=3 draws five distinct frames") {
    Rng rng(1);
    TrainingItem item = sample_training_item(clip, rng, 3);
    CHECK(item.references.size() == 3);
    CHECK(item.frame_indices.size() == 5);
    for (std::size_t i = 0; i < item.frame_indices.size(); ++i)
      for (std::size_t j = i + 1; j < item.frame_indices.size(); ++j)
        CHECK(item.frame_indices[i] != item.frame_indices[j]);
  }
  SUBCASE("N=0 gives source and driving only") {
    Rng rng(2);
    TrainingItem item = sample_training_item(clip, rng, 0);
    CHECK(item.references.empty());
    CHECK(item.frame_indices.size() == 2);
  }
  SUBCASE("same seed reproduces the sample") {
    Rng r1(3), r2(3);
    TrainingItem a = sample_training_item(clip, r1, 2);
    TrainingItem b = sample_training_item(clip, r2, 2);
    CHECK(a.frame_indices == b.frame_indices);
  }
  SUBCASE("short clips are rejected") {
    VideoClip small(clip.begin(), clip.begin() + 3);
    Rng rng(4);
    CHECK_THROWS_AS(sample_training_item(small, rng, 3), std::invalid_argument);
  }
}
