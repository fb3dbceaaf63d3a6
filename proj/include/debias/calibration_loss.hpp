#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <string>

#include "debias/embeddings.hpp"
#include "debias/matrix.hpp"
#include "debias/similarity.hpp"

namespace debias {

/// Scalar loss plus gradients keyed by input name. Each gradient has the
/// shape of its input (one row per embedding).
struct LossValue {
  double value = 0.0;
  std::map<std::string, Matrix> grads;
};

/// Template-bias calibration loss: mean cross-entropy between each empty
/// prompt's softmax over the batch samples and the uniform target.
/// Grads: "empties" (E×d), "samples" (B×d). Minimum is ln B.
LossValue template_bias_loss(std::span<const Embedding> empties, std::span<const Embedding> samples, double tau);

/// Mean NLL of the true class. Grad "scaled_logits" is (P − Y)/N, the
/// gradient with respect to l/τ.
LossValue cross_entropy(const ProbMatrix& prob, std::span<const std::size_t> labels);

/// Fused softmax cross-entropy. Grad "logits" is (P − Y)/(Nτ).
LossValue cross_entropy_from_logits(const LogitMatrix& l, std::span<const std::size_t> labels, double tau);

/// Cross-entropy of cosine logits between samples and class embeddings.
/// Grads: "samples" (N×d), "classes" (K×d).
LossValue classification_loss(std::span<const Embedding> samples, std::span<const Embedding> classes,
                              std::span<const std::size_t> labels, double tau);

/// ce + α·tb, values and gradients alike.
LossValue fine_tune_loss(const LossValue& ce, const LossValue& tb, double alpha);

/// sign · mean over (empty, sample) pairs of their cosine. sign = −1 pulls
/// samples toward the template, +1 pushes them away.
/// Grads: "empties", "samples".
LossValue mean_similarity_loss(std::span<const Embedding> empties, std::span<const Embedding> samples, double sign);

}  // namespace debias
