#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "debias/adapter.hpp"
#include "debias/embeddings.hpp"
#include "debias/similarity.hpp"

namespace debias {

struct BinRow {
  double tss_mean = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

/// Stable sort by TSS, equal-size bins, partial last bin dropped.
std::vector<BinRow> binned_accuracy(std::span<const double> tss_values, const std::vector<bool>& correct,
                                    std::size_t bin_size);

/// Sample Pearson coefficient. Throws LengthMismatch, InsufficientData
/// (fewer than 2 points) or DegenerateVariance (a constant input).
double pearson(std::span<const double> xs, std::span<const double> ys);

/// Fraction of samples right with class names only and wrong with the template.
double misclassification_ratio(std::span<const std::size_t> pred_class_only,
                               std::span<const std::size_t> pred_with_template,
                               std::span<const std::size_t> labels);

/// Population variance; needs at least 2 values.
double accuracy_variance_over_templates(std::span<const double> per_template_accuracies);

struct ReportOptions {
  std::size_t bin_size = 50;
  PredictMode mode = PredictMode::FullPrompt;
  /// Restrict to these sample indices (e.g. the held-out split).
  std::optional<std::vector<std::size_t>> subset;
};

struct BiasReport {
  std::vector<BinRow> bins;
  std::optional<double> pearson;       // over (bin tss_mean, bin accuracy)
  std::string pearson_error;           // set when pearson is unavailable
  std::optional<double> raw_pearson;   // over (sample tss, correct 0/1)
  std::optional<double> misclassification_ratio;
  double accuracy = 0.0;
  std::vector<double> per_class_accuracy;  // NaN for classes with no samples
  double accuracy_variance = 0.0;          // across classes that have samples
  std::vector<double> template_accuracies; // one per full-prompt bank
  std::optional<double> template_accuracy_variance;
  double tss_mean = 0.0;
  double tss_std = 0.0;
  std::size_t samples = 0;
};

BiasReport bias_report(const EmbeddingDataset& ds, const ReportOptions& options = {});
BiasReport bias_report(const EmbeddingDataset& ds, const AdapterModel& model, const ReportOptions& options = {});

}  // namespace debias
