#include "debias/experiments.hpp"

#include <algorithm>
#include <cmath>

#include <json.hpp>

#include "debias/errors.hpp"

namespace debias {

RunOutcome train_and_score(const EmbeddingDataset& ds, const TrainConfig& cfg, std::size_t bin_size) {
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto init = initial_model(ds, cfg);
  const auto result = run_two_stage(ds, split, cfg);

  ReportOptions opts;
  opts.bin_size = bin_size;
  opts.mode = cfg.prompt_mode;
  opts.subset = split.held_out;
  const auto rep = bias_report(ds, result.model, opts);

  RunOutcome out;
  out.seed = cfg.seed;
  out.mode = cfg.mode;
  out.accuracy = rep.accuracy;
  out.pearson = rep.pearson;
  out.support_tss_std_init = support_tss_std(ds, init, split.support);
  out.support_tss_std_final = support_tss_std(ds, result.model, split.support);
  return out;
}

std::vector<SweepRow> empty_count_sweep(const EmbeddingDataset& ds, const TrainConfig& base,
                                        std::span<const std::size_t> counts, std::span<const std::uint64_t> seeds,
                                        std::size_t bin_size) {
  if (counts.empty() || seeds.empty()) throw Error(ErrorKind::EmptyInput, "sweep needs counts and seeds");
  std::vector<std::size_t> sorted(counts.begin(), counts.end());
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  std::vector<SweepRow> rows;
  for (std::size_t count : sorted) {
    SweepRow row;
    row.empty_count = count;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.seed = seed;
      cfg.empty_count = count;
      row.accuracies.push_back(train_and_score(ds, cfg, bin_size).accuracy);
    }
    const double n = static_cast<double>(row.accuracies.size());
    for (double a : row.accuracies) row.mean += a / n;
    double ss = 0.0;
    for (double a : row.accuracies) ss += (a - row.mean) * (a - row.mean);
    row.stddev = std::sqrt(ss / n);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string sweep_to_json(const std::vector<SweepRow>& rows) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& r : rows) {
    j.push_back({{"empty_count", r.empty_count}, {"accuracies", r.accuracies}, {"mean", r.mean}, {"std", r.stddev}});
  }
  return j.dump(2);
}

}  // namespace debias
