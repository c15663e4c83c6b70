#include "mevo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "mevo/image_io.hpp"
#include "mevo/image_ops.hpp"

namespace mevo {

// ---------------- keypoint oracle ----------------

KeypointSet ColorCentroidOracle::detect(const Frame& frame) const {
  const int h = frame.height(), w = frame.width();
  KeypointSet out;
  for (int c = 0; c < 3; ++c) {
    double sum = 0.0, cx = 0.0, cy = 0.0;
    for (int y = 0; y < h; ++y) {
      const double gy = -1.0 + 2.0 * y / (h - 1);
      for (int x = 0; x < w; ++x) {
        const double v = frame.data.at(c, y, x);
        const double mean =
            (frame.data.at(0, y, x) + frame.data.at(1, y, x) + frame.data.at(2, y, x)) / 3.0;
        const double wgt = std::max(0.0, v - mean);
        sum += wgt;
        cx += wgt * (-1.0 + 2.0 * x / (w - 1));
        cy += wgt * gy;
      }
    }
    if (sum > 1e-12)
      out.points.push_back({cx / sum, cy / sum});
    else
      out.points.push_back({0.0, 0.0});
  }
  return out;
}

// ---------------- shared helpers ----------------

void InferenceContext::validate() const {
  if (!model) throw std::invalid_argument("InferenceContext: missing model");
  if (!features) throw std::invalid_argument("InferenceContext: missing feature extractor");
  if (!embedder) throw std::invalid_argument("InferenceContext: missing embedder");
}

namespace {

std::vector<Frame> pick_references(const VideoClip& clip, int n_refs, Rng& rng) {
  // distinct non-source indices
  const int t = static_cast<int>(clip.size());
  std::vector<int> idx(static_cast<std::size_t>(t) - 1);
  for (int i = 1; i < t; ++i) idx[static_cast<std::size_t>(i) - 1] = i;
  for (int i = 0; i < n_refs; ++i) {
    const int j = i + static_cast<int>(rng.uniform_int(idx.size() - static_cast<std::size_t>(i)));
    std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
  }
  std::vector<Frame> refs;
  refs.reserve(static_cast<std::size_t>(n_refs));
  for (int i = 0; i < n_refs; ++i) refs.push_back(clip[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
  return refs;
}

double mean_of(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

MetricRecord make_record(const std::string& name, std::vector<double> series, std::string note = "") {
  MetricRecord r;
  r.name = name;
  r.direction = metric_direction(name);
  r.series = std::move(series);
  r.value = mean_of(r.series);
  r.frames = static_cast<int>(r.series.size());
  r.note = std::move(note);
  return r;
}

MetricRecord make_scalar_record(const std::string& name, double value, int frames,
                                std::string note = "") {
  MetricRecord r;
  r.name = name;
  r.direction = metric_direction(name);
  r.value = value;
  r.frames = frames;
  r.note = std::move(note);
  return r;
}

// Per-frame + set metrics for generated frames vs. their per-frame real
// counterparts; FID/CSIM real side can differ from the pairwise side.
MetricReport score_generation(const InferenceContext& ctx, const VideoClip& generated,
                              const VideoClip& pairwise_real, const VideoClip& distribution_real,
                              bool include_pairwise) {
  MetricReport rep;
  const int n = static_cast<int>(generated.size());
  const int levels = max_ms_ssim_levels(generated[0].height(), generated[0].width());

  if (include_pairwise) {
    std::vector<double> l1s, percs, psnrs, ssims, msssims;
    for (int i = 0; i < n; ++i) {
      const Frame& g = generated[static_cast<std::size_t>(i)];
      const Frame& r = pairwise_real[static_cast<std::size_t>(i)];
      l1s.push_back(l1_metric(g, r));
      percs.push_back(perceptual_distance(g, r, *ctx.features));
      psnrs.push_back(psnr(g, r));
      ssims.push_back(ssim(g, r));
      msssims.push_back(ms_ssim(g, r, levels));
    }
    rep.add(make_record("l1", std::move(l1s)));
    rep.add(make_record("perc", std::move(percs), "default feature pyramid (LPIPS seam)"));
    rep.add(make_record("psnr", std::move(psnrs)));
    rep.add(make_record("ssim", std::move(ssims)));
    rep.add(make_record("ms_ssim", std::move(msssims)));
  }

  rep.add(make_scalar_record("fid", fid(generated, distribution_real, *ctx.embedder), n,
                             "embedder: " + ctx.embedder->name()));

  if (ctx.oracle) {
    std::vector<KeypointSet> gen_kps, real_kps;
    for (int i = 0; i < n; ++i) {
      gen_kps.push_back(ctx.oracle->detect(generated[static_cast<std::size_t>(i)]));
      real_kps.push_back(ctx.oracle->detect(pairwise_real[static_cast<std::size_t>(i)]));
    }
    rep.add(make_scalar_record(
        "akd", akd(gen_kps, real_kps, generated[0].height(), generated[0].width()), n,
        "oracle: " + ctx.oracle->name()));
  }

  std::vector<double> csims;
  for (int i = 0; i < n; ++i) {
    const Frame& real = distribution_real[static_cast<std::size_t>(i) % distribution_real.size()];
    csims.push_back(csim(generated[static_cast<std::size_t>(i)], real, *ctx.embedder));
  }
  rep.add(make_record("csim", std::move(csims), "embedder: " + ctx.embedder->name()));
  return rep;
}

}  // namespace

// ---------------- reconstruction / animation ----------------

GenerationResult reconstruct(const InferenceContext& ctx, const VideoClip& clip, int n_refs,
                             Rng& rng) {
  ctx.validate();
  if (static_cast<int>(clip.size()) < n_refs + 2)
    throw std::invalid_argument("reconstruct: clip needs at least n_refs + 2 frames");

  ViewBundle bundle;
  bundle.source = clip[0];
  bundle.references = pick_references(clip, n_refs, rng);

  GenerationResult out;
  VideoClip driving(clip.begin() + 1, clip.end());
  for (const Frame& drv : driving)
    out.frames.push_back(
        Frame::from_tensor(synthesize(*ctx.model, bundle, drv, ctx.ablation).frame.value()));

  out.report = score_generation(ctx, out.frames, driving, driving, true);
  out.report.task = "reconstruction";
  out.report.meta.emplace_back("n_refs", std::to_string(n_refs));
  return out;
}

GenerationResult animate(const InferenceContext& ctx, const VideoClip& source_clip,
                         const VideoClip& driving_clip, int n_refs, Rng& rng) {
  ctx.validate();
  if (static_cast<int>(source_clip.size()) < n_refs + 1)
    throw std::invalid_argument("animate: source clip needs at least n_refs + 1 frames");
  if (driving_clip.empty()) throw std::invalid_argument("animate: empty driving clip");

  ViewBundle bundle;
  bundle.source = source_clip[0];
  bundle.references = pick_references(source_clip, n_refs, rng);

  GenerationResult out;
  for (const Frame& drv : driving_clip)
    out.frames.push_back(
        Frame::from_tensor(synthesize(*ctx.model, bundle, drv, ctx.ablation).frame.value()));

  // identity metrics compare against the source video; AKD against driving
  out.report = score_generation(ctx, out.frames, driving_clip, source_clip, false);
  out.report.task = "animation";
  out.report.meta.emplace_back("n_refs", std::to_string(n_refs));
  return out;
}

MetricReport evaluate_reconstruction(const InferenceContext& ctx, const ClipDataset& dataset,
                                     const std::string& split, int n_refs, std::uint64_t seed) {
  const auto& refs = dataset.clips(split);
  if (refs.empty()) throw std::invalid_argument("evaluate_reconstruction: empty split " + split);
  std::vector<MetricReport> reports;
  Rng rng(seed);
  for (const auto& ref : refs) {
    VideoClip clip = dataset.load_clip(ref);
    reports.push_back(reconstruct(ctx, clip, n_refs, rng).report);
  }

  MetricReport agg;
  agg.task = "reconstruction";
  agg.dataset = dataset.root().filename().string() + "/" + split;
  agg.meta.emplace_back("n_refs", std::to_string(n_refs));
  agg.meta.emplace_back("clips", std::to_string(reports.size()));
  for (const auto& r0 : reports[0].records) {
    std::vector<double> per_clip;
    int frames = 0;
    for (const auto& rep : reports) {
      const MetricRecord* rec = rep.find(r0.name);
      per_clip.push_back(rec->value);
      frames += rec->frames;
    }
    MetricRecord rec = make_record(r0.name, std::move(per_clip), r0.note);
    rec.frames = frames;
    agg.add(std::move(rec));
  }
  return agg;
}

// ---------------- ablations and sweeps ----------------

std::vector<AblationRow> run_ablations(const ClipDataset& dataset, const TrainConfig& base_config) {
  std::vector<AblationRow> rows;
  for (const std::string& preset : AblationSpec::preset_names()) {
    TrainConfig cfg = base_config;
    cfg.apply_ablation(AblationSpec::preset(preset));
    Trainer trainer(cfg);
    trainer.run(dataset);

    FixedRandomEmbedder embedder;
    ColorCentroidOracle oracle;
    InferenceContext ctx;
    ctx.model = &trainer.model();
    ctx.ablation = cfg.ablation();
    ctx.features = &trainer.feature_extractor();
    ctx.embedder = &embedder;
    ctx.oracle = &oracle;
    MetricReport rep = evaluate_reconstruction(ctx, dataset, "test", cfg.n_refs, cfg.seed + 1);
    rep.meta.emplace_back("preset", preset);
    rows.push_back({preset, std::move(rep)});
  }
  return rows;
}

std::string serialize_ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "# mevo ablation table v1\n";
  for (const auto& row : rows) {
    os << "begin preset " << row.preset << "\n";
    os << row.report.serialize();
    os << "end preset " << row.preset << "\n";
  }
  return os.str();
}

std::vector<AblationRow> parse_ablation_table(const std::string& text) {
  std::vector<AblationRow> rows;
  std::istringstream is(text);
  std::string line;
  std::string current;
  std::ostringstream body;
  while (std::getline(is, line)) {
    if (line.rfind("begin preset ", 0) == 0) {
      current = line.substr(13);
      body.str("");
    } else if (line.rfind("end preset ", 0) == 0) {
      if (line.substr(11) != current)
        throw std::invalid_argument("ablation table: mismatched preset sections");
      rows.push_back({current, MetricReport::parse(body.str())});
      current.clear();
    } else if (!current.empty()) {
      body << line << "\n";
    }
  }
  if (!current.empty()) throw std::invalid_argument("ablation table: unterminated section");
  return rows;
}

std::vector<std::pair<int, MetricReport>> run_reference_sweep(const InferenceContext& ctx,
                                                              const ClipDataset& dataset,
                                                              const std::vector<int>& n_values,
                                                              std::uint64_t seed) {
  ctx.validate();
  if (!ctx.ablation.multi_view)
    throw std::invalid_argument("run_reference_sweep: model was trained without multi-view fusion");
  std::vector<std::pair<int, MetricReport>> out;
  for (int n : n_values) {
    for (const auto& ref : dataset.clips("test"))
      if (n > ref.length - 2)
        throw std::invalid_argument("run_reference_sweep: N=" + std::to_string(n) +
                                    " exceeds clip length - 2");
    MetricReport rep = evaluate_reconstruction(ctx, dataset, "test", n, seed);
    out.emplace_back(n, std::move(rep));
  }
  return out;
}

// ---------------- directory evaluation ----------------

MetricReport evaluate_directories(const std::filesystem::path& generated,
                                  const std::filesystem::path& real,
                                  const std::vector<std::string>& metric_names) {
  VideoClip gen = load_frames(generated);
  VideoClip ref = load_frames(real);
  if (gen.size() != ref.size())
    throw std::invalid_argument("evaluate: clip lengths differ (" + std::to_string(gen.size()) +
                                " vs " + std::to_string(ref.size()) + ")");
  if (gen[0].height() != ref[0].height() || gen[0].width() != ref[0].width())
    throw std::invalid_argument("evaluate: frame sizes differ");

  auto wanted = [&](const std::string& name) {
    return metric_names.empty() ||
           std::find(metric_names.begin(), metric_names.end(), name) != metric_names.end();
  };

  FeatureExtractor fx;
  FixedRandomEmbedder embedder;
  ColorCentroidOracle oracle;
  const int n = static_cast<int>(gen.size());
  const int levels = max_ms_ssim_levels(gen[0].height(), gen[0].width());

  MetricReport rep;
  rep.task = "evaluate";
  auto per_frame = [&](const std::string& name, auto&& fn) {
    if (!wanted(name)) return;
    std::vector<double> series;
    for (int i = 0; i < n; ++i)
      series.push_back(fn(gen[static_cast<std::size_t>(i)], ref[static_cast<std::size_t>(i)]));
    rep.add(make_record(name, std::move(series)));
  };
  per_frame("l1", [](const Frame& a, const Frame& b) { return l1_metric(a, b); });
  per_frame("perc", [&](const Frame& a, const Frame& b) { return perceptual_distance(a, b, fx); });
  per_frame("psnr", [](const Frame& a, const Frame& b) { return psnr(a, b); });
  per_frame("ssim", [](const Frame& a, const Frame& b) { return ssim(a, b); });
  per_frame("ms_ssim",
            [&](const Frame& a, const Frame& b) { return ms_ssim(a, b, levels); });
  per_frame("csim", [&](const Frame& a, const Frame& b) { return csim(a, b, embedder); });

  if (wanted("fid"))
    rep.add(make_scalar_record("fid", fid(gen, ref, embedder), n, "embedder: " + embedder.name()));
  if (wanted("akd")) {
    std::vector<KeypointSet> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(oracle.detect(gen[static_cast<std::size_t>(i)]));
      b.push_back(oracle.detect(ref[static_cast<std::size_t>(i)]));
    }
    rep.add(make_scalar_record("akd", akd(a, b, gen[0].height(), gen[0].width()), n,
                               "oracle: " + oracle.name()));
  }
  return rep;
}

}  // namespace mevo
