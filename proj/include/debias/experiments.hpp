#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/bias_analysis.hpp"
#include "debias/trainer.hpp"

namespace debias {

/// One trained run scored on its held-out split.
struct RunOutcome {
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::Ours;
  double accuracy = 0.0;
  std::optional<double> pearson;
  double support_tss_std_init = 0.0;
  double support_tss_std_final = 0.0;
};

/// Splits with `cfg.shots` under `cfg.seed`, trains with run_two_stage and
/// reports on the held-out samples.
RunOutcome train_and_score(const EmbeddingDataset& ds, const TrainConfig& cfg, std::size_t bin_size);

struct SweepRow {
  std::size_t empty_count = 0;
  std::vector<double> accuracies;  // one per seed
  double mean = 0.0;
  double stddev = 0.0;  // population
};

/// Held-out accuracy spread across seeds for each empty-prompt count, rows
/// in ascending count order.
std::vector<SweepRow> empty_count_sweep(const EmbeddingDataset& ds, const TrainConfig& base,
                                        std::span<const std::size_t> counts, std::span<const std::uint64_t> seeds,
                                        std::size_t bin_size);

std::string sweep_to_json(const std::vector<SweepRow>& rows);

}  // namespace debias
