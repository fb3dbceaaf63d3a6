#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "debias/adapter.hpp"
#include "debias/calibration_loss.hpp"
#include "debias/embeddings.hpp"
#include "debias/similarity.hpp"

namespace debias {

enum class TrainMode { Ours, CeOnly, PullCloser, PushAway };
enum class Stage { Pretrain, Finetune, Both };

TrainMode parse_train_mode(std::string_view name);
std::string_view to_string(TrainMode mode);
Stage parse_stage(std::string_view name);
std::string_view to_string(Stage stage);

struct TrainConfig {
  double alpha = 2.0;
  double lr = 2e-3;
  double lr_small = 2e-4;
  bool use_small_lr = false;
  std::size_t batch_size = 32;
  std::size_t pretrain_iters_per_shot = 300;
  std::size_t finetune_iters_per_shot = 500;
  std::size_t shots = 4;
  std::size_t rank = 2;
  double dropout_p = 0.25;
  std::optional<double> temperature;  // overrides the dataset's τ
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Ours;
  Stage stage = Stage::Both;
  PredictMode prompt_mode = PredictMode::FullPrompt;
  /// Calibration term over the whole support set instead of the batch.
  bool tb_over_support = false;
  /// Let the calibration term update the text adapter too.
  bool tb_updates_text = false;
  std::optional<std::size_t> empty_count;
  std::size_t log_interval = 100;
  std::size_t log_bin_size = 50;

  void validate() const;
  double base_lr() const { return use_small_lr ? lr_small : lr; }
  double tau(const EmbeddingDataset& ds) const { return temperature.value_or(ds.temperature); }
};

std::string config_to_json(const TrainConfig& cfg);
/// Overlays the keys present in `json` onto `base`. Unknown keys throw
/// InvalidConfig.
TrainConfig config_from_json(const std::string& json, TrainConfig base = {});

/// Cosine-decayed step size at step t of T.
double cosine_lr(double base, std::size_t t, std::size_t total);

struct LogRecord {
  std::size_t iteration = 0;
  std::string stage;
  double lr = 0.0;
  double loss = 0.0;
  double ce = 0.0;
  double tb = 0.0;
  std::optional<double> pearson;      // binned, over the eval samples
  std::optional<double> raw_pearson;
  double accuracy = 0.0;              // over the eval samples
  double support_tss_std = 0.0;
};

class TrainLog {
 public:
  /// Throws InvalidConfig unless iterations strictly increase.
  void append(LogRecord record);
  const std::vector<LogRecord>& records() const { return records_; }
  void extend(const TrainLog& other);
  std::size_t total_iterations = 0;

  std::string to_jsonl() const;

 private:
  std::vector<LogRecord> records_;
};

struct SupportSplit {
  std::vector<std::size_t> support;   // class-major
  std::vector<std::size_t> held_out;  // ascending
};

/// `shots` random samples per class for training, the rest held out.
SupportSplit few_shot_split(const EmbeddingDataset& ds, std::size_t shots, std::uint64_t seed);

/// One minibatch worth of inputs, before any adapter is applied.
struct BatchInputs {
  std::span<const Embedding> samples;
  std::span<const std::size_t> labels;
  std::span<const Embedding> prompts;  // class embeddings, finetune only
  std::span<const Embedding> empties;  // empty when there is no calibration term
  std::span<const Embedding> support;  // whole support set, tb_over_support only
};

struct StepResult {
  LossValue loss;
  double ce = 0.0;
  double tb = 0.0;
  AdapterGrads visual;
  AdapterGrads text;

  explicit StepResult(const AdapterModel& m) : visual(m.visual), text(m.text) {}
};

/// Forward and backward pass of one training step. Dropout masks are drawn
/// from `drop_rng` (samples, then prompts, then support) and `empty_rng`.
StepResult step_gradients(const AdapterModel& model, const BatchInputs& in, const TrainConfig& cfg, double tau,
                          bool fine, Rng& drop_rng, Rng& empty_rng);

struct TrainResult {
  AdapterModel model;
  TrainLog log;
};

/// Freshly initialized adapters for `cfg.seed` (B = 0, so the identity).
AdapterModel initial_model(const EmbeddingDataset& ds, const TrainConfig& cfg);

/// Stage 1: calibration loss alone for pretrain_iters_per_shot × shots steps.
TrainResult pretrain(const EmbeddingDataset& ds, const SupportSplit& split, AdapterModel model,
                     const TrainConfig& cfg, std::size_t iteration_offset = 0);

/// Stage 2: cross-entropy plus the mode's calibration term for
/// finetune_iters_per_shot × shots steps.
TrainResult finetune(const EmbeddingDataset& ds, const SupportSplit& split, AdapterModel model,
                     const TrainConfig& cfg, std::size_t iteration_offset = 0);

/// Stage 1 (mode ours only) then stage 2, as selected by cfg.stage.
TrainResult run_two_stage(const EmbeddingDataset& ds, const SupportSplit& split, const TrainConfig& cfg);

/// Population std of TSS over `indices`, through the model.
double support_tss_std(const EmbeddingDataset& ds, const AdapterModel& model, const std::vector<std::size_t>& indices);

}  // namespace debias
