#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "mevo/checkpoint.hpp"
#include "mevo/image_io.hpp"
#include "mevo/pipeline.hpp"

namespace fs = std::filesystem;
using namespace mevo;

namespace {

std::vector<int> parse_int_list(const std::string& csv) {
  std::vector<int> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(std::stoi(item));
  return out;
}

std::vector<std::string> parse_str_list(const std::string& csv) {
  std::vector<std::string> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

struct EvalKit {
  FixedRandomEmbedder embedder;
  ColorCentroidOracle oracle;
  FeatureExtractor features;

  InferenceContext context(const Trainer& trainer) {
    InferenceContext ctx;
    ctx.model = &trainer.model();
    ctx.ablation = trainer.config().ablation();
    ctx.features = &features;
    ctx.embedder = &embedder;
    ctx.oracle = &oracle;
    return ctx;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mevo: unsupervised motion transfer with ODE-refined dense motion"};
  app.require_subcommand(1);

  // ---- make-data ----
  auto* mk = app.add_subcommand("make-data", "generate a synthetic sprite-video dataset");
  std::string mk_out;
  std::uint64_t mk_seed = 42;
  int mk_train = 20, mk_test = 5, mk_size = 64, mk_len = 16;
  mk->add_option("--out", mk_out, "dataset root directory")->required();
  mk->add_option("--seed", mk_seed, "generation seed");
  mk->add_option("--train", mk_train, "training identities");
  mk->add_option("--test", mk_test, "test identities");
  mk->add_option("--frame-size", mk_size, "frame resolution");
  mk->add_option("--clip-length", mk_len, "frames per clip");

  // ---- train ----
  auto* tr = app.add_subcommand("train", "train a model on a dataset");
  std::string tr_config, tr_data, tr_out, tr_curve;
  tr->add_option("--config", tr_config, "train config file")->required();
  tr->add_option("--data", tr_data, "dataset root")->required();
  tr->add_option("--out", tr_out, "output checkpoint path")->required();
  tr->add_option("--curve", tr_curve, "also write the loss curve to this file");

  // ---- reconstruct ----
  auto* rc = app.add_subcommand("reconstruct", "reconstruct a clip from its own first frame");
  std::string rc_ckpt, rc_clip, rc_out, rc_report;
  int rc_refs = 3;
  std::uint64_t rc_seed = 7;
  rc->add_option("--ckpt", rc_ckpt, "checkpoint path")->required();
  rc->add_option("--clip", rc_clip, "clip directory")->required();
  rc->add_option("--refs", rc_refs, "reference view count");
  rc->add_option("--out", rc_out, "output frame directory")->required();
  rc->add_option("--report", rc_report, "also write the metric report to this file");
  rc->add_option("--seed", rc_seed, "reference sampling seed");

  // ---- animate ----
  auto* an = app.add_subcommand("animate", "drive a source identity with another clip's motion");
  std::string an_ckpt, an_src, an_drv, an_out, an_report;
  int an_refs = 3;
  std::uint64_t an_seed = 7;
  an->add_option("--ckpt", an_ckpt, "checkpoint path")->required();
  an->add_option("--source-clip", an_src, "source clip directory")->required();
  an->add_option("--driving-clip", an_drv, "driving clip directory")->required();
  an->add_option("--refs", an_refs, "reference view count");
  an->add_option("--out", an_out, "output frame directory")->required();
  an->add_option("--report", an_report, "also write the metric report to this file");
  an->add_option("--seed", an_seed, "reference sampling seed");

  // ---- evaluate ----
  auto* ev = app.add_subcommand("evaluate", "metrics between two frame directories");
  std::string ev_gen, ev_real, ev_metrics, ev_out;
  ev->add_option("--gen", ev_gen, "generated frames directory")->required();
  ev->add_option("--real", ev_real, "real frames directory")->required();
  ev->add_option("--metrics", ev_metrics, "comma-separated subset (default: all)");
  ev->add_option("--out", ev_out, "also write the report to this file");

  // ---- ablate ----
  auto* ab = app.add_subcommand("ablate", "train and evaluate every ablation preset");
  std::string ab_config, ab_data, ab_out;
  ab->add_option("--config", ab_config, "train config file")->required();
  ab->add_option("--data", ab_data, "dataset root")->required();
  ab->add_option("--out", ab_out, "output report file")->required();

  // ---- sweep-refs ----
  auto* sw = app.add_subcommand("sweep-refs", "evaluate a checkpoint at several reference counts");
  std::string sw_ckpt, sw_data, sw_n = "1,2,3", sw_out;
  std::uint64_t sw_seed = 7;
  sw->add_option("--ckpt", sw_ckpt, "checkpoint path")->required();
  sw->add_option("--data", sw_data, "dataset root")->required();
  sw->add_option("--n", sw_n, "comma-separated reference counts");
  sw->add_option("--out", sw_out, "also write the combined report to this file");
  sw->add_option("--seed", sw_seed, "evaluation seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*mk) {
      DatasetConfig cfg;
      cfg.train_identities = mk_train;
      cfg.test_identities = mk_test;
      cfg.scene.frame_size = mk_size;
      cfg.scene.length = mk_len;
      ClipDataset::generate(mk_out, mk_seed, cfg);
      std::cout << "dataset written to " << mk_out << " (" << mk_train << " train / " << mk_test
                << " test identities)\n";
    } else if (*tr) {
      TrainConfig cfg = TrainConfig::from_file(tr_config);
      apply_env_seed_override(cfg);
      ClipDataset data = ClipDataset::open(tr_data);
      Trainer trainer(cfg);
      TrainOutcome outcome = trainer.run(data);
      trainer.save_checkpoint(tr_out);
      std::cout << "trained " << cfg.iterations << " iterations; loss " << outcome.total.front()
                << " -> " << outcome.total.back() << "\n";
      std::cout << "checkpoint written to " << tr_out << "\n";
      if (!tr_curve.empty()) {
        std::ostringstream os;
        os << "# iteration total perceptual equivariance\n";
        for (std::size_t i = 0; i < outcome.total.size(); ++i)
          os << i << " " << outcome.total[i] << " " << outcome.perceptual[i] << " "
             << outcome.equivariance[i] << "\n";
        write_text(tr_curve, os.str());
      }
    } else if (*rc) {
      Trainer trainer = Trainer::from_checkpoint(rc_ckpt);
      EvalKit kit;
      InferenceContext ctx = kit.context(trainer);
      VideoClip clip = load_frames(rc_clip);
      Rng rng(rc_seed);
      GenerationResult res = reconstruct(ctx, clip, rc_refs, rng);
      save_frames(res.frames, rc_out);
      const std::string report = res.report.serialize();
      std::cout << report;
      if (!rc_report.empty()) write_text(rc_report, report);
    } else if (*an) {
      Trainer trainer = Trainer::from_checkpoint(an_ckpt);
      EvalKit kit;
      InferenceContext ctx = kit.context(trainer);
      VideoClip source = load_frames(an_src);
      VideoClip driving = load_frames(an_drv);
      Rng rng(an_seed);
      GenerationResult res = animate(ctx, source, driving, an_refs, rng);
      save_frames(res.frames, an_out);
      const std::string report = res.report.serialize();
      std::cout << report;
      if (!an_report.empty()) write_text(an_report, report);
    } else if (*ev) {
      MetricReport rep = evaluate_directories(ev_gen, ev_real, parse_str_list(ev_metrics));
      const std::string report = rep.serialize();
      std::cout << report;
      if (!ev_out.empty()) write_text(ev_out, report);
    } else if (*ab) {
      TrainConfig cfg = TrainConfig::from_file(ab_config);
      apply_env_seed_override(cfg);
      ClipDataset data = ClipDataset::open(ab_data);
      std::vector<AblationRow> rows = run_ablations(data, cfg);
      const std::string table = serialize_ablation_table(rows);
      write_text(ab_out, table);
      std::cout << table;
    } else if (*sw) {
      Trainer trainer = Trainer::from_checkpoint(sw_ckpt);
      EvalKit kit;
      InferenceContext ctx = kit.context(trainer);
      ClipDataset data = ClipDataset::open(sw_data);
      auto reports = run_reference_sweep(ctx, data, parse_int_list(sw_n), sw_seed);
      std::ostringstream os;
      os << "# mevo reference sweep v1\n";
      for (auto& [n, rep] : reports) {
        rep.meta.emplace_back("sweep_n", std::to_string(n));
        os << "begin n " << n << "\n" << rep.serialize() << "end n " << n << "\n";
      }
      std::cout << os.str();
      if (!sw_out.empty()) write_text(sw_out, os.str());
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
