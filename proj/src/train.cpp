#include "mevo/train.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "mevo/checkpoint.hpp"

namespace mevo {

// ---------------- config ----------------

void TrainConfig::validate() const {
  if (lambda <= 0.0) throw std::invalid_argument("TrainConfig: lambda must be > 0");
  if (n_refs < 0) throw std::invalid_argument("TrainConfig: n_refs must be >= 0");
  if (iterations < 1) throw std::invalid_argument("TrainConfig: iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (learning_rate <= 0.0) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (solver != "euler" && solver != "rk4")
    throw std::invalid_argument("TrainConfig: solver must be euler or rk4");
  if (gradient_mode != "backprop" && gradient_mode != "adjoint")
    throw std::invalid_argument("TrainConfig: gradient_mode must be backprop or adjoint");
  model_config().validate();
}

ModelConfig TrainConfig::model_config() const {
  ModelConfig m;
  m.frame_size = frame_size;
  m.num_keypoints = num_keypoints;
  m.base_channels = base_channels;
  m.motion_scale = motion_scale;
  m.heatmap_sigma = heatmap_sigma;
  m.ode.solver = solver == "euler" ? OdeConfig::Solver::euler : OdeConfig::Solver::rk4;
  m.ode.steps = ode_steps;
  m.ode.gradient_mode = gradient_mode == "adjoint" ? OdeConfig::GradientMode::adjoint
                                                   : OdeConfig::GradientMode::backprop;
  return m;
}

AblationSpec TrainConfig::ablation() const {
  return {motion_evolution, appearance_assist, multi_view};
}

void TrainConfig::apply_ablation(const AblationSpec& spec) {
  motion_evolution = spec.motion_evolution;
  appearance_assist = spec.appearance_assist;
  multi_view = spec.multi_view;
}

std::string TrainConfig::serialize() const {
  std::ostringstream os;
  os << "# mevo train config\n";
  os << "frame_size " << frame_size << "\n";
  os << "num_keypoints " << num_keypoints << "\n";
  os << "base_channels " << base_channels << "\n";
  os << "motion_scale " << motion_scale << "\n";
  os << "heatmap_sigma " << heatmap_sigma << "\n";
  os << "n_refs " << n_refs << "\n";
  os << "lambda " << lambda << "\n";
  os << "learning_rate " << learning_rate << "\n";
  os << "batch_size " << batch_size << "\n";
  os << "iterations " << iterations << "\n";
  os << "seed " << seed << "\n";
  os << "solver " << solver << "\n";
  os << "ode_steps " << ode_steps << "\n";
  os << "gradient_mode " << gradient_mode << "\n";
  os << "motion_evolution " << (motion_evolution ? "true" : "false") << "\n";
  os << "appearance_assist " << (appearance_assist ? "true" : "false") << "\n";
  os << "multi_view " << (multi_view ? "true" : "false") << "\n";
  os << "equivariance_tps " << (equivariance_tps ? "true" : "false") << "\n";
  return os.str();
}

namespace {

bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("TrainConfig: bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

TrainConfig TrainConfig::parse(const std::string& text) {
  TrainConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string key, value;
    if (!(ls >> key >> value)) continue;
    if (key == "frame_size") cfg.frame_size = std::stoi(value);
    else if (key == "num_keypoints") cfg.num_keypoints = std::stoi(value);
    else if (key == "base_channels") cfg.base_channels = std::stoi(value);
    else if (key == "motion_scale") cfg.motion_scale = std::stoi(value);
    else if (key == "heatmap_sigma") cfg.heatmap_sigma = std::stod(value);
    else if (key == "n_refs") cfg.n_refs = std::stoi(value);
    else if (key == "lambda") cfg.lambda = std::stod(value);
    else if (key == "learning_rate") cfg.learning_rate = std::stod(value);
    else if (key == "batch_size") cfg.batch_size = std::stoi(value);
    else if (key == "iterations") cfg.iterations = std::stoi(value);
    else if (key == "seed") cfg.seed = std::stoull(value);
    else if (key == "solver") cfg.solver = value;
    else if (key == "ode_steps") cfg.ode_steps = std::stoi(value);
    else if (key == "gradient_mode") cfg.gradient_mode = value;
    else if (key == "motion_evolution") cfg.motion_evolution = parse_bool(value, key);
    else if (key == "appearance_assist") cfg.appearance_assist = parse_bool(value, key);
    else if (key == "multi_view") cfg.multi_view = parse_bool(value, key);
    else if (key == "equivariance_tps") cfg.equivariance_tps = parse_bool(value, key);
    else if (key == "ablation") cfg.apply_ablation(AblationSpec::preset(value));
    else throw std::invalid_argument("TrainConfig: unknown key '" + key + "'");
  }
  cfg.validate();
  return cfg;
}

TrainConfig TrainConfig::from_file(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("TrainConfig: cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return parse(ss.str());
}

void TrainConfig::to_file(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("TrainConfig: cannot write " + path.string());
  f << serialize();
}

void apply_env_seed_override(TrainConfig& cfg) {
  if (const char* env = std::getenv("MOTION_EVOLVE_SEED")) cfg.seed = std::stoull(env);
}

// ---------------- optimizer ----------------

AdamOptimizer::AdamOptimizer(nn::ParamList params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& [name, p] : params_) {
    m_.push_back(Tensor::zeros(p.value().shape()));
    v_.push_back(Tensor::zeros(p.value().shape()));
  }
}

void AdamOptimizer::zero_grad() {
  for (auto& [name, p] : params_) p.zero_grad();
}

void AdamOptimizer::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i].second;
    p.node()->ensure_grad();
    Tensor& g = p.grad();
    Tensor& m = m_[i];
    Tensor& v = v_[i];
    double* pv = p.value().data();
    for (std::int64_t j = 0; j < g.size(); ++j) {
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * g[j];
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      pv[j] -= lr_ * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

// ---------------- trainer ----------------

namespace {

Rng model_rng(std::uint64_t seed) { return Rng(seed ^ 0x0DE1BEEFull); }

}  // namespace

Trainer::Trainer(const TrainConfig& cfg)
    : cfg_(cfg),
      fx_(),
      data_rng_(Rng(cfg.seed).fork(1)),
      transform_rng_(Rng(cfg.seed).fork(2)) {
  cfg_.validate();
  Rng wr = model_rng(cfg.seed);
  model_ = Model(cfg.model_config(), wr);
  opt_ = AdamOptimizer(model_.params(), cfg.learning_rate);
}

Trainer::ItemLoss Trainer::item_loss(const TrainingItem& item) {
  ViewBundle bundle;
  bundle.source = item.source;
  bundle.references = item.references;
  SynthesisResult synth = synthesize(model_, bundle, item.driving, cfg_.ablation());

  ItemLoss loss;
  loss.perceptual = perceptual_loss(synth.frame, ag::constant(item.driving.data), fx_);
  GeometricTransformParams tp;
  tp.use_tps = cfg_.equivariance_tps;
  GeometricTransform t = GeometricTransform::random(transform_rng_, tp);
  loss.equivariance = equivariance_loss(model_.fk, item.driving, t);
  loss.total = total_loss(loss.perceptual, loss.equivariance, cfg_.lambda);
  return loss;
}

Trainer::ItemLoss Trainer::checked_item_loss(const TrainingItem& item) {
  ItemLoss loss;
  try {
    loss = item_loss(item);
  } catch (const NumericalDivergenceError& e) {
    throw TrainingDivergedError(iteration_, "training diverged at iteration " +
                                                std::to_string(iteration_) + ": " + e.what());
  }
  if (!std::isfinite(loss.total.value().item()))
    throw TrainingDivergedError(
        iteration_, "training diverged: non-finite loss at iteration " + std::to_string(iteration_));
  return loss;
}

double Trainer::step(const ClipDataset& dataset) {
  opt_.zero_grad();
  double total = 0.0;
  for (int b = 0; b < cfg_.batch_size; ++b) {
    TrainingItem item = sample_training_item(dataset, data_rng_, cfg_.n_refs);
    ItemLoss loss = checked_item_loss(item);
    total += loss.total.value().item();
    ag::backward(ag::scale(loss.total, 1.0 / cfg_.batch_size));
  }
  opt_.step();
  ++iteration_;
  return total / cfg_.batch_size;
}

TrainOutcome Trainer::run(const ClipDataset& dataset) {
  TrainOutcome out;
  out.total.reserve(static_cast<std::size_t>(cfg_.iterations));
  for (int it = 0; it < cfg_.iterations; ++it) {
    opt_.zero_grad();
    double total = 0.0, percep = 0.0, equiv = 0.0;
    for (int b = 0; b < cfg_.batch_size; ++b) {
      TrainingItem item = sample_training_item(dataset, data_rng_, cfg_.n_refs);
      ItemLoss loss = checked_item_loss(item);
      total += loss.total.value().item();
      percep += loss.perceptual.value().item();
      equiv += loss.equivariance.value().item();
      ag::backward(ag::scale(loss.total, 1.0 / cfg_.batch_size));
    }
    opt_.step();
    ++iteration_;
    out.total.push_back(total / cfg_.batch_size);
    out.perceptual.push_back(percep / cfg_.batch_size);
    out.equivariance.push_back(equiv / cfg_.batch_size);
  }
  return out;
}

void Trainer::save_checkpoint(const std::filesystem::path& path) const {
  checkpoint::save(path, *this);
}

Trainer Trainer::from_checkpoint(const std::filesystem::path& path) {
  return checkpoint::load(path);
}

}  // namespace mevo
