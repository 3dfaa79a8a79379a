#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tdnet/dataset.hpp"
#include "tdnet/losses.hpp"
#include "tdnet/network.hpp"
#include "tdnet/preprocessing.hpp"

namespace tdnet {

struct TrainConfig {
  // model
  int num_classes = 4;
  int num_decoders = 3;
  std::vector<int> dilation_rates = {1, 3, 6};
  std::vector<std::string> init_schemes;  // empty = cycle of defaults
  int base_channels = 16;
  int depth = 5;
  std::array<double, 2> bottleneck_dropout_range = {0.0, 0.5};

  // losses
  double alpha = 10.0;
  double beta = 1.0;
  bool uncertainty_weighting = true;
  std::string affinity_norm = "l1";  // or "frobenius"

  // optimization
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double poly_power = 0.9;
  int batch_size = 1;
  std::array<int64_t, 3> patch_size = {80, 96, 96};
  int64_t t_max = 60000;

  // data
  std::string dataset_dir;
  double window = 400.0;
  double level = 50.0;

  // run
  std::string output_dir;
  uint64_t seed = 42;
  int64_t validation_interval = 0;  // 0 = max(t_max/20, 100)
  std::string resume;               // checkpoint path, empty = fresh start
  int64_t stop_iter = 0;            // pause after this iteration; 0 = t_max

  void validate() const;  // throws std::invalid_argument naming the field
  int64_t effective_validation_interval() const;
  TDNetConfig model_config() const;
  ConsistencyOptions consistency_options() const;
};

/// Reads a flat JSON document whose keys mirror TrainConfig field names.
/// Unknown keys and type mismatches throw std::invalid_argument naming the
/// key. Missing keys keep their defaults.
TrainConfig train_config_from_json_text(const std::string& text);
TrainConfig load_train_config(const std::string& path);
std::string train_config_to_json_text(const TrainConfig& cfg);

/// Applies one "key=value" override on top of a config. The value is parsed
/// as JSON (so arrays and numbers work) and falls back to a plain string.
void apply_override(TrainConfig& cfg, const std::string& assignment);

/// lr0 * (1 - t/t_max)^power, with t clamped into [0, t_max].
double poly_lr(double lr0, int64_t t, int64_t t_max, double power = 0.9);

/// SGD with momentum. Weight decay is added to the gradient for parameters
/// with the decay flag (convolution kernels and biases but not normalization
/// scale/shift). A zero learning rate leaves parameter bits untouched.
class SgdOptimizer {
 public:
  SgdOptimizer(double momentum, double weight_decay)
      : momentum_(momentum), weight_decay_(weight_decay) {}

  void step(std::vector<Param>& params, double lr);

  std::vector<Tensor>& velocity() { return vel_; }
  const std::vector<Tensor>& velocity() const { return vel_; }

 private:
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> vel_;  // sized on first step
};

struct TrainStepResult {
  LossBreakdown loss;
  double lr = 0.0;
};

/// One optimization step at iteration t: forward every patch in the batch in
/// training mode, average the losses, backpropagate, and apply SGD at the
/// poly learning rate. Throws std::runtime_error with the batch id and the
/// term breakdown if the loss is not finite.
TrainStepResult train_step(TDNet& net, SgdOptimizer& opt, const std::vector<PatchPair>& batch,
                           int64_t t, const TrainConfig& cfg);

// ---------------------------------------------------------------------------
// Checkpoints

struct CheckpointMeta {
  TrainConfig cfg;
  int64_t next_t = 0;
  double best_dsc = -1.0;
  int64_t best_iter = -1;
};

void save_checkpoint(const std::string& path, const TrainConfig& cfg, const TDNet& net,
                     const SgdOptimizer& opt, int64_t next_t, double best_dsc,
                     int64_t best_iter);

/// Reads only the header (config and counters), not the weights.
CheckpointMeta peek_checkpoint(const std::string& path);

/// Restores weights (and velocity when opt is given) into a network built
/// from the stored config. Layout mismatches throw std::runtime_error.
CheckpointMeta load_checkpoint(const std::string& path, TDNet& net, SgdOptimizer* opt);

// ---------------------------------------------------------------------------
// Full loop

struct TrainResult {
  int64_t iterations = 0;
  double best_val_dsc = -1.0;
  int64_t best_iteration = -1;
  std::string latest_checkpoint;
  std::string best_checkpoint;
};

/// Runs cfg.t_max iterations over the train split of cfg.dataset_dir,
/// logging every iteration to output_dir/train_log.csv, validating every
/// effective_validation_interval() iterations on the val split (Dice of the
/// sliding-window argmax against dense labels, patch-sized stride), and
/// writing latest.ckpt plus best.ckpt under cfg.output_dir. Honors
/// cfg.resume. `progress` (when given) receives one line per validation.
TrainResult run_training(const TrainConfig& cfg,
                         const std::function<void(const std::string&)>& progress = {});

}  // namespace tdnet
