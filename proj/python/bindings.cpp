#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mevo/checkpoint.hpp"
#include "mevo/image_io.hpp"
#include "mevo/image_ops.hpp"
#include "mevo/pipeline.hpp"

namespace py = pybind11;
using namespace mevo;

namespace {

// [C,H,W] tensor <-> [H,W,C] numpy image
py::array_t<double> chw_to_numpy(const Tensor& t) {
  const int c = t.dim(0), h = t.dim(1), w = t.dim(2);
  py::array_t<double> out({h, w, c});
  auto r = out.mutable_unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) r(y, x, ch) = t.at(ch, y, x);
  return out;
}

Tensor numpy_to_chw(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 3) throw std::invalid_argument("expected an [H,W,C] array");
  const int h = static_cast<int>(arr.shape(0));
  const int w = static_cast<int>(arr.shape(1));
  const int c = static_cast<int>(arr.shape(2));
  Tensor t({c, h, w});
  auto r = arr.unchecked<3>();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ch = 0; ch < c; ++ch) t.at(ch, y, x) = r(y, x, ch);
  return t;
}

Frame numpy_to_frame(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  return Frame::from_tensor(numpy_to_chw(arr));
}

py::array_t<double> kps_to_numpy(const KeypointSet& k) {
  py::array_t<double> out({k.count(), 2});
  auto r = out.mutable_unchecked<2>();
  for (int i = 0; i < k.count(); ++i) {
    r(i, 0) = k.points[static_cast<std::size_t>(i)].x;
    r(i, 1) = k.points[static_cast<std::size_t>(i)].y;
  }
  return out;
}

KeypointSet numpy_to_kps(const py::array_t<double, py::array::c_style | py::array::forcecast>& arr) {
  if (arr.ndim() != 2 || arr.shape(1) != 2) throw std::invalid_argument("expected a [K,2] array");
  KeypointSet k;
  auto r = arr.unchecked<2>();
  for (py::ssize_t i = 0; i < arr.shape(0); ++i) k.points.push_back({r(i, 0), r(i, 1)});
  return k;
}

using NpImage = py::array_t<double, py::array::c_style | py::array::forcecast>;

py::dict report_to_dict(const MetricReport& rep) {
  py::dict out;
  out["task"] = rep.task;
  out["dataset"] = rep.dataset;
  py::dict metrics;
  for (const auto& r : rep.records) {
    py::dict m;
    m["value"] = r.value;
    m["direction"] = r.direction;
    m["frames"] = r.frames;
    m["series"] = r.series;
    if (!r.note.empty()) m["note"] = r.note;
    metrics[py::str(r.name)] = m;
  }
  out["metrics"] = metrics;
  return out;
}

// Checkpoint-backed inference handle.
class PyModel {
 public:
  explicit PyModel(const std::string& ckpt_path) : trainer_(Trainer::from_checkpoint(ckpt_path)) {}

  py::array_t<double> synthesize_frame(const NpImage& source, const std::vector<NpImage>& references,
                                       const NpImage& driving) {
    ViewBundle bundle;
    bundle.source = numpy_to_frame(source);
    for (const auto& r : references) bundle.references.push_back(numpy_to_frame(r));
    auto res = synthesize(trainer_.model(), bundle, numpy_to_frame(driving),
                          trainer_.config().ablation());
    return chw_to_numpy(res.frame.value());
  }

  py::array_t<double> keypoints(const NpImage& frame) {
    return kps_to_numpy(trainer_.model().fk.extract(numpy_to_frame(frame)));
  }

  py::dict reconstruct_clip(const std::string& clip_dir, int n_refs, std::uint64_t seed) {
    EvalParts parts;
    InferenceContext ctx = context(parts);
    Rng rng(seed);
    GenerationResult res = reconstruct(ctx, load_frames(clip_dir), n_refs, rng);
    py::dict out = report_to_dict(res.report);
    py::list frames;
    for (const auto& f : res.frames) frames.append(chw_to_numpy(f.data));
    out["frames"] = frames;
    return out;
  }

  std::string config_text() { return trainer_.config().serialize(); }
  int iteration() { return trainer_.iteration(); }

 private:
  struct EvalParts {
    FixedRandomEmbedder embedder;
    ColorCentroidOracle oracle;
    FeatureExtractor features;
  };

  InferenceContext context(EvalParts& parts) {
    InferenceContext ctx;
    ctx.model = &trainer_.model();
    ctx.ablation = trainer_.config().ablation();
    ctx.features = &parts.features;
    ctx.embedder = &parts.embedder;
    ctx.oracle = &parts.oracle;
    return ctx;
  }

  Trainer trainer_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "motion transfer with ODE-refined dense motion fields";

  m.def("identity_grid", [](int h, int w) { return chw_to_numpy(identity_grid(h, w)); },
        py::arg("height"), py::arg("width"),
        "Normalized coordinate grid [H,W,2] with channels (x, y).");

  m.def("warp",
        [](const NpImage& image, const NpImage& flow) {
          return chw_to_numpy(warp(numpy_to_chw(image), numpy_to_chw(flow)));
        },
        py::arg("image"), py::arg("flow"),
        "Bilinear border-clamped warp; flow is [H,W,2] of normalized offsets.");

  m.def("soft_argmax",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& heatmap) {
          if (heatmap.ndim() != 3) throw std::invalid_argument("expected [K,H,W]");
          Tensor t({static_cast<int>(heatmap.shape(0)), static_cast<int>(heatmap.shape(1)),
                    static_cast<int>(heatmap.shape(2))});
          std::copy(heatmap.data(), heatmap.data() + t.size(), t.data());
          return kps_to_numpy(soft_argmax(t));
        },
        py::arg("heatmap"), "Expected coordinates [K,2] of normalized [K,H,W] heatmaps.");

  m.def("gaussian_heatmap",
        [](const py::array_t<double, py::array::c_style | py::array::forcecast>& kps, double sigma,
           int height, int width) {
          Tensor hm = gaussian_heatmap(numpy_to_kps(kps), sigma, height, width);
          py::array_t<double> out({hm.dim(0), hm.dim(1), hm.dim(2)});
          std::copy(hm.data(), hm.data() + hm.size(), out.mutable_data());
          return out;
        },
        py::arg("keypoints"), py::arg("sigma"), py::arg("height"), py::arg("width"));

  m.def("downsample_pyramid",
        [](const NpImage& image, int levels) {
          auto pyr = downsample_pyramid(Frame::from_tensor(numpy_to_chw(image)), levels);
          py::list out;
          for (const auto& f : pyr) out.append(chw_to_numpy(f.data));
          return out;
        },
        py::arg("image"), py::arg("levels"));

  m.def("l1",
        [](const NpImage& a, const NpImage& b) { return l1_metric(numpy_to_frame(a), numpy_to_frame(b)); });
  m.def("psnr", [](const NpImage& a, const NpImage& b, double peak) {
          return psnr(numpy_to_frame(a), numpy_to_frame(b), peak);
        },
        py::arg("gen"), py::arg("real"), py::arg("peak") = 1.0);
  m.def("ssim",
        [](const NpImage& a, const NpImage& b) { return ssim(numpy_to_frame(a), numpy_to_frame(b)); });
  m.def("ms_ssim",
        [](const NpImage& a, const NpImage& b, int levels) {
          return ms_ssim(numpy_to_frame(a), numpy_to_frame(b), levels);
        },
        py::arg("gen"), py::arg("real"), py::arg("levels") = 5);
  m.def("fid_from_embeddings", &fid_from_embeddings, py::arg("a"), py::arg("b"));
  m.def("csim", [](const NpImage& a, const NpImage& b) {
    FixedRandomEmbedder emb;
    return csim(numpy_to_frame(a), numpy_to_frame(b), emb);
  });

  m.def("generate_sprite_clip",
        [](std::uint64_t seed, int length, int frame_size) {
          SpriteSceneConfig cfg;
          cfg.length = length;
          cfg.frame_size = frame_size;
          SpriteScene scene = generate_scene(seed, cfg);
          py::list frames, keypoints;
          for (int t = 0; t < length; ++t) {
            frames.append(chw_to_numpy(scene.render_frame(t).data));
            keypoints.append(kps_to_numpy(scene.keypoints(t)));
          }
          py::dict out;
          out["frames"] = frames;
          out["keypoints"] = keypoints;
          return out;
        },
        py::arg("seed"), py::arg("length") = 16, py::arg("frame_size") = 64);

  m.def("make_dataset",
        [](const std::string& root, std::uint64_t seed, int train, int test, int frame_size,
           int clip_length) {
          DatasetConfig cfg;
          cfg.train_identities = train;
          cfg.test_identities = test;
          cfg.scene.frame_size = frame_size;
          cfg.scene.length = clip_length;
          ClipDataset::generate(root, seed, cfg);
        },
        py::arg("root"), py::arg("seed") = 42, py::arg("train") = 20, py::arg("test") = 5,
        py::arg("frame_size") = 64, py::arg("clip_length") = 16);

  m.def("train",
        [](const std::string& data_root, const std::string& ckpt_out, const std::string& config_text) {
          TrainConfig cfg = TrainConfig::parse(config_text);
          apply_env_seed_override(cfg);
          Trainer trainer(cfg);
          TrainOutcome outcome = trainer.run(ClipDataset::open(data_root));
          trainer.save_checkpoint(ckpt_out);
          return outcome.total;
        },
        py::arg("data_root"), py::arg("ckpt_out"), py::arg("config_text"),
        "Train from a config document; returns the per-iteration total loss.");

  py::class_<PyModel>(m, "Model")
      .def(py::init<const std::string&>(), py::arg("checkpoint"))
      .def("synthesize", &PyModel::synthesize_frame, py::arg("source"), py::arg("references"),
           py::arg("driving"))
      .def("keypoints", &PyModel::keypoints, py::arg("frame"))
      .def("reconstruct", &PyModel::reconstruct_clip, py::arg("clip_dir"), py::arg("n_refs") = 3,
           py::arg("seed") = 7)
      .def("config_text", &PyModel::config_text)
      .def_property_readonly("iteration", &PyModel::iteration);
}
