#pragma once

#include <map>
#include <string>
#include <vector>

#include "brst/corpus.hpp"
#include "brst/features.hpp"
#include "brst/model.hpp"
#include "brst/tape.hpp"

namespace brst {

struct TrainConfig {
  double lambda = 0.3;  // CTC weight in the joint objective
  double peak_lr = 0.002;
  int64_t warmup_steps = 25000;
  double grad_clip = 5.0;
  int batch_size = 8;
  int64_t max_steps = 1000;
  double label_smoothing = 0.0;
  uint64_t seed = 0;
  int64_t checkpoint_every = 0;  // 0: final checkpoint only
  bool use_spec_augment = true;
  SpecAugmentConfig spec_augment;

  void validate() const;
};

// Linear warmup to peak_lr at warmup_steps, then inverse-sqrt decay.
double lr_at(int64_t step, const TrainConfig& cfg);

struct LossBreakdown {
  double joint = 0.0;
  double ctc = 0.0;
  double att = 0.0;
};

// lambda * ctc_nll + (1 - lambda) * attention teacher-forced nll over
// sos+target -> target+eos. Differentiable through the active tape.
Tensor joint_loss(const ModelParams& params, const Array& features, const TokenSequence& target, double lambda, double label_smoothing = 0.0, LossBreakdown* breakdown = nullptr);

// First/second Adam moments, aligned with ModelParams::named_params()
// order, plus the resume cursor into the shuffled corpus.
struct OptimizerState {
  std::vector<Array> m;
  std::vector<Array> v;
  int64_t step = 0;
  int64_t epoch = 0;
  int64_t batch_in_epoch = 0;

  static OptimizerState init(const ModelParams& params);
};

struct TrainExample {
  Array features;  // CMVN-normalized (and augmented, during training)
  TokenSequence target;
};

struct StepMetrics {
  int64_t step = 0;
  double loss = 0.0;
  double ctc_loss = 0.0;
  double att_loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// Forward/backward over the batch, global-norm clip, Adam update
// (beta1 0.9, beta2 0.98, eps 1e-9). Deterministic for a fixed batch.
StepMetrics train_step(ModelParams& params, OptimizerState& opt, const std::vector<TrainExample>& batch, const TrainConfig& cfg);

// Clip + Adam only; gradients must already sit on the parameters.
// Returns the pre-clip global gradient norm.
double apply_adam_update(ModelParams& params, OptimizerState& opt, double lr, double grad_clip);

struct TrainResult {
  std::string final_checkpoint;
  std::string metrics_csv;
  int64_t steps_run = 0;
};

// Epochs over the length-bucketed, seed-shuffled corpus with per-epoch
// SpecAugment; writes metrics.csv, periodic checkpoints, and a final
// checkpoint (plus .opt sidecars) under out_dir. Passing a resume
// checkpoint continues its optimizer state and data cursor exactly.
TrainResult run_training(const std::vector<ManifestEntry>& corpus, const TrainConfig& cfg, const ModelConfig& model_cfg, const Vocabulary& vocab, const std::string& out_dir, const std::string& resume_checkpoint = "");

void save_optimizer_state(const OptimizerState& opt, const ModelParams& params, const std::string& path);
OptimizerState load_optimizer_state(const ModelParams& params, const std::string& path);

// Flat key=value config file (keys like train.lambda, model.d_model).
using ConfigMap = std::map<std::string, std::string>;
ConfigMap read_config_file(const std::string& path);
void write_config_file(const std::string& path, const ModelConfig& model_cfg, const TrainConfig& train_cfg);
void apply_config(const ConfigMap& kv, ModelConfig& model_cfg, TrainConfig& train_cfg);

}  // namespace brst
