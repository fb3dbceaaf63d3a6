#include "debias/similarity.hpp"

#include <cmath>
#include <string>

#include "debias/errors.hpp"

namespace debias {

double cosine(const Embedding& a, const Embedding& b) {
  if (a.dim() != b.dim()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::to_string(a.dim()) + " vs " + std::to_string(b.dim()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) s += a[i] * b[i];
  return s;
}

LogitMatrix logits(std::span<const Embedding> samples, std::span<const Embedding> classes) {
  if (samples.empty() || classes.empty()) throw Error(ErrorKind::EmptyInput, "logits need samples and classes");
  LogitMatrix out{Matrix(samples.size(), classes.size())};
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t k = 0; k < classes.size(); ++k) out.values(i, k) = cosine(samples[i], classes[k]);
  }
  return out;
}

ProbMatrix softmax_rows(const LogitMatrix& l, double tau) {
  if (!(tau > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "tau = " + std::to_string(tau));
  const Matrix& in = l.values;
  ProbMatrix out{Matrix(in.rows(), in.cols())};
  for (std::size_t i = 0; i < in.rows(); ++i) {
    auto row = in.row(i);
    auto dst = out.values.row(i);
    double mx = row.empty() ? 0.0 : row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (std::size_t k = 0; k < row.size(); ++k) {
      dst[k] = std::exp((row[k] - mx) / tau);
      z += dst[k];
    }
    for (double& p : dst) p /= z;
  }
  return out;
}

PredictMode parse_predict_mode(std::string_view name) {
  if (name == "class_only") return PredictMode::ClassOnly;
  if (name == "full_prompt") return PredictMode::FullPrompt;
  if (name == "multi_template_mean") return PredictMode::MultiTemplateMean;
  throw Error(ErrorKind::InvalidConfig, "unknown predict mode '" + std::string(name) + "'");
}

std::string_view to_string(PredictMode mode) {
  switch (mode) {
    case PredictMode::ClassOnly: return "class_only";
    case PredictMode::FullPrompt: return "full_prompt";
    case PredictMode::MultiTemplateMean: return "multi_template_mean";
  }
  return "unknown";
}

std::vector<Embedding> class_embeddings(const PromptBank& prompts, PredictMode mode) {
  switch (mode) {
    case PredictMode::ClassOnly:
      if (prompts.class_name_embeddings.empty()) {
        throw Error(ErrorKind::MissingPromptBank, "no class-name embeddings");
      }
      return prompts.class_name_embeddings;
    case PredictMode::FullPrompt:
      if (prompts.full_prompt_banks.empty()) throw Error(ErrorKind::MissingPromptBank, "no full-prompt bank");
      return prompts.full_prompt_banks.front();
    case PredictMode::MultiTemplateMean: {
      if (prompts.full_prompt_banks.empty()) throw Error(ErrorKind::MissingPromptBank, "no full-prompt bank");
      const std::size_t k = prompts.full_prompt_banks.front().size();
      std::vector<Embedding> out;
      out.reserve(k);
      for (std::size_t c = 0; c < k; ++c) {
        const std::size_t d = prompts.full_prompt_banks.front()[c].dim();
        std::vector<double> acc(d, 0.0);
        for (const auto& bank : prompts.full_prompt_banks) {
          for (std::size_t j = 0; j < d; ++j) acc[j] += bank[c][j];
        }
        for (double& x : acc) x /= static_cast<double>(prompts.full_prompt_banks.size());
        out.push_back(normalize(acc));
      }
      return out;
    }
  }
  throw Error(ErrorKind::InvalidConfig, "bad predict mode");
}

std::vector<std::size_t> argmax_rows(const Matrix& m) {
  std::vector<std::size_t> out(m.rows(), 0);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto row = m.row(i);
    std::size_t best = 0;
    for (std::size_t k = 1; k < row.size(); ++k) {
      if (row[k] > row[best]) best = k;
    }
    out[i] = best;
  }
  return out;
}

std::vector<std::size_t> predict_with(std::span<const Embedding> samples,
                                      std::span<const Embedding> classes) {
  if (samples.empty()) return {};
  return argmax_rows(logits(samples, classes).values);
}

std::vector<std::size_t> predict(const EmbeddingDataset& ds, PredictMode mode) {
  const auto classes = class_embeddings(ds.prompts, mode);
  return predict_with(ds.sample_embeddings(), classes);
}

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels) {
  if (predictions.size() != labels.size()) throw Error(ErrorKind::LengthMismatch, "predictions vs labels");
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "accuracy of zero samples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hit += predictions[i] == labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

}  // namespace debias
