#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mevo/losses.hpp"
#include "mevo/model.hpp"
#include "mevo/sprites.hpp"

namespace mevo {

struct TrainConfig {
  // model
  int frame_size = 64;
  int num_keypoints = 10;
  int base_channels = 32;
  int motion_scale = 4;
  double heatmap_sigma = 0.15;

  // optimization
  int n_refs = 3;
  double lambda = 10.0;
  double learning_rate = 2e-4;
  int batch_size = 1;
  int iterations = 500;
  std::uint64_t seed = 42;

  // ODE solver
  std::string solver = "rk4";            // euler | rk4
  int ode_steps = 4;
  std::string gradient_mode = "backprop";  // backprop | adjoint

  // components
  bool motion_evolution = true;
  bool appearance_assist = true;
  bool multi_view = true;

  // equivariance transform family
  bool equivariance_tps = true;

  void validate() const;
  ModelConfig model_config() const;
  AblationSpec ablation() const;
  void apply_ablation(const AblationSpec& spec);

  // whitespace-separated key/value text document
  std::string serialize() const;
  static TrainConfig parse(const std::string& text);
  static TrainConfig from_file(const std::filesystem::path& path);
  void to_file(const std::filesystem::path& path) const;
};

// Replaces the seed when MOTION_EVOLVE_SEED is set in the environment.
void apply_env_seed_override(TrainConfig& cfg);

class TrainingDivergedError : public std::runtime_error {
 public:
  TrainingDivergedError(int iteration, const std::string& what)
      : std::runtime_error(what), iteration_(iteration) {}
  int iteration() const { return iteration_; }

 private:
  int iteration_;
};

class AdamOptimizer {
 public:
  AdamOptimizer() = default;
  AdamOptimizer(nn::ParamList params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8);

  void zero_grad();
  void step();

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }
  const nn::ParamList& params() const { return params_; }
  Tensor& first_moment(std::size_t i) { return m_[i]; }
  Tensor& second_moment(std::size_t i) { return v_[i]; }

 private:
  nn::ParamList params_;
  std::vector<Tensor> m_, v_;
  double lr_ = 0.0, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  std::int64_t t_ = 0;
};

struct TrainOutcome {
  std::vector<double> total;
  std::vector<double> perceptual;
  std::vector<double> equivariance;
};

// Owns the model, optimizer and RNG streams for one training run.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  // Runs cfg.iterations optimizer steps over items sampled from the train split.
  TrainOutcome run(const ClipDataset& dataset);

  // One optimizer step over `batch_size` sampled items; returns the mean total loss.
  double step(const ClipDataset& dataset);

  // Loss terms for a single item on the live tape.
  struct ItemLoss {
    ag::Var total, perceptual, equivariance;
  };
  ItemLoss item_loss(const TrainingItem& item);
  ItemLoss checked_item_loss(const TrainingItem& item);

  const Model& model() const { return model_; }
  Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int iteration() const { return iteration_; }
  const FeatureExtractor& feature_extractor() const { return fx_; }

  void save_checkpoint(const std::filesystem::path& path) const;
  static Trainer from_checkpoint(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  Model model_;
  FeatureExtractor fx_;
  AdamOptimizer opt_;
  Rng data_rng_;
  Rng transform_rng_;
  int iteration_ = 0;

  friend struct CheckpointCodec;
};

}  // namespace mevo
