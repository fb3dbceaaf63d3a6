#include "debias/bias_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "debias/errors.hpp"

namespace debias {

std::vector<BinRow> binned_accuracy(std::span<const double> tss_values, const std::vector<bool>& correct,
                                    std::size_t bin_size) {
  if (tss_values.size() != correct.size()) throw Error(ErrorKind::LengthMismatch, "tss vs correct flags");
  if (bin_size == 0) throw Error(ErrorKind::InvalidConfig, "bin_size must be positive");
  const std::size_t n = tss_values.size();
  if (n < bin_size) {
    throw Error(ErrorKind::InsufficientSamples,
                std::to_string(n) + " samples < bin size " + std::to_string(bin_size));
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return tss_values[a] < tss_values[b]; });

  std::vector<BinRow> bins;
  for (std::size_t start = 0; start + bin_size <= n; start += bin_size) {
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t i = start; i < start + bin_size; ++i) {
      sum += tss_values[order[i]];
      hits += correct[order[i]] ? 1 : 0;
    }
    bins.push_back({sum / static_cast<double>(bin_size),
                    static_cast<double>(hits) / static_cast<double>(bin_size), bin_size});
  }
  return bins;
}

double pearson(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorKind::LengthMismatch, "pearson inputs differ in length");
  const std::size_t n = xs.size();
  if (n < 2) throw Error(ErrorKind::InsufficientData, "pearson needs at least 2 points");
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += xs[i];
    my += ys[i];
  }
  mx /= static_cast<double>(n);
  my /= static_cast<double>(n);
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = xs[i] - mx;
    const double dy = ys[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorKind::DegenerateVariance, "constant input to pearson");
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double misclassification_ratio(std::span<const std::size_t> pred_class_only,
                               std::span<const std::size_t> pred_with_template,
                               std::span<const std::size_t> labels) {
  if (pred_class_only.size() != labels.size() || pred_with_template.size() != labels.size()) {
    throw Error(ErrorKind::LengthMismatch, "prediction and label lists differ in length");
  }
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no samples");
  std::size_t flipped = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (pred_class_only[i] == labels[i] && pred_with_template[i] != labels[i]) ++flipped;
  }
  return static_cast<double>(flipped) / static_cast<double>(labels.size());
}

double accuracy_variance_over_templates(std::span<const double> values) {
  if (values.size() < 2) throw Error(ErrorKind::InsufficientData, "variance needs at least 2 values");
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size());
}

namespace {

std::vector<std::size_t> pick(std::span<const std::size_t> all, const std::vector<std::size_t>& idx) {
  std::vector<std::size_t> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(all[i]);
  return out;
}

}  // namespace

BiasReport bias_report(const EmbeddingDataset& ds, const ReportOptions& options) {
  ds.validate();
  if (!ds.prompts.template_embedding) throw Error(ErrorKind::MissingPromptBank, "no template embedding");

  std::vector<std::size_t> idx;
  if (options.subset) {
    idx = *options.subset;
    for (std::size_t i : idx) {
      if (i >= ds.samples.size()) throw Error(ErrorKind::LengthMismatch, "subset index out of range");
    }
  } else {
    idx.resize(ds.samples.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
  }
  if (idx.empty()) throw Error(ErrorKind::EmptyInput, "no samples to report on");

  const auto samples = ds.sample_embeddings(idx);
  const auto all_labels = ds.labels();
  const auto labels = pick(all_labels, idx);
  const auto preds = predict_with(samples, class_embeddings(ds.prompts, options.mode));

  BiasReport rep;
  rep.samples = idx.size();
  std::vector<double> tss_values(samples.size());
  std::vector<bool> correct(samples.size());
  std::vector<double> correct_d(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    tss_values[i] = tss(samples[i], *ds.prompts.template_embedding);
    correct[i] = preds[i] == labels[i];
    correct_d[i] = correct[i] ? 1.0 : 0.0;
  }
  rep.accuracy = accuracy(preds, labels);

  double m = 0.0;
  for (double v : tss_values) m += v;
  m /= static_cast<double>(tss_values.size());
  double ss = 0.0;
  for (double v : tss_values) ss += (v - m) * (v - m);
  rep.tss_mean = m;
  rep.tss_std = std::sqrt(ss / static_cast<double>(tss_values.size()));

  rep.bins = binned_accuracy(tss_values, correct, options.bin_size);
  std::vector<double> bx, by;
  for (const auto& b : rep.bins) {
    bx.push_back(b.tss_mean);
    by.push_back(b.accuracy);
  }
  try {
    rep.pearson = pearson(bx, by);
  } catch (const Error& e) {
    rep.pearson_error = e.what();
  }
  try {
    rep.raw_pearson = pearson(tss_values, correct_d);
  } catch (const Error&) {
  }

  if (!ds.prompts.class_name_embeddings.empty()) {
    const auto only = predict_with(samples, ds.prompts.class_name_embeddings);
    const auto with_template = options.mode == PredictMode::ClassOnly
                                   ? predict_with(samples, class_embeddings(ds.prompts, PredictMode::FullPrompt))
                                   : preds;
    if (options.mode != PredictMode::ClassOnly || !ds.prompts.full_prompt_banks.empty()) {
      rep.misclassification_ratio = misclassification_ratio(only, with_template, labels);
    }
  }

  const std::size_t k = ds.prompts.num_classes();
  std::vector<std::size_t> hits(k, 0), totals(k, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++totals[labels[i]];
    if (correct[i]) ++hits[labels[i]];
  }
  std::vector<double> present;
  rep.per_class_accuracy.assign(k, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t c = 0; c < k; ++c) {
    if (totals[c] == 0) continue;
    rep.per_class_accuracy[c] = static_cast<double>(hits[c]) / static_cast<double>(totals[c]);
    present.push_back(rep.per_class_accuracy[c]);
  }
  rep.accuracy_variance = present.size() >= 2 ? accuracy_variance_over_templates(present) : 0.0;

  for (const auto& bank : ds.prompts.full_prompt_banks) {
    rep.template_accuracies.push_back(accuracy(predict_with(samples, bank), labels));
  }
  if (rep.template_accuracies.size() >= 2) {
    rep.template_accuracy_variance = accuracy_variance_over_templates(rep.template_accuracies);
  }
  return rep;
}

BiasReport bias_report(const EmbeddingDataset& ds, const AdapterModel& model, const ReportOptions& options) {
  return bias_report(adapt_dataset(ds, model), options);
}

}  // namespace debias
