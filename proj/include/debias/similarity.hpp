#pragma once

#include <cstddef>
#include <span>
#include <string_view>
#include <vector>

#include "debias/embeddings.hpp"
#include "debias/matrix.hpp"

namespace debias {

/// Cosine logits l(i,k) = f_i · t_k, N×K.
struct LogitMatrix {
  Matrix values;
};

/// Row-stochastic posteriors, N×K.
struct ProbMatrix {
  Matrix values;
};

/// Dot product of two unit embeddings. Throws DimensionMismatch.
double cosine(const Embedding& a, const Embedding& b);

// Template-, class- and prompt-sample similarity. All are the same cosine;
// the names document which text embedding is on the right.
inline double tss(const Embedding& sample, const Embedding& templ) { return cosine(sample, templ); }
inline double css(const Embedding& sample, const Embedding& class_name) { return cosine(sample, class_name); }
inline double pss(const Embedding& sample, const Embedding& prompt) { return cosine(sample, prompt); }

LogitMatrix logits(std::span<const Embedding> samples, std::span<const Embedding> classes);

/// Softmax of l/τ per row, max-subtracted.
ProbMatrix softmax_rows(const LogitMatrix& l, double tau);

enum class PredictMode { ClassOnly, FullPrompt, MultiTemplateMean };

PredictMode parse_predict_mode(std::string_view name);
std::string_view to_string(PredictMode mode);

/// Text embeddings used as class weights for `mode`. MultiTemplateMean
/// averages every full-prompt bank per class and renormalizes.
std::vector<Embedding> class_embeddings(const PromptBank& prompts, PredictMode mode);

/// Argmax per row; exact ties go to the lowest class index.
std::vector<std::size_t> argmax_rows(const Matrix& m);

std::vector<std::size_t> predict_with(std::span<const Embedding> samples,
                                      std::span<const Embedding> classes);
std::vector<std::size_t> predict(const EmbeddingDataset& ds, PredictMode mode);

double accuracy(std::span<const std::size_t> predictions, std::span<const std::size_t> labels);

}  // namespace debias
