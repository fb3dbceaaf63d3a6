#include "debias/calibration_loss.hpp"

#include <cmath>
#include <limits>

#include "debias/errors.hpp"

namespace debias {

namespace {

void check_dims(std::span<const Embedding> a, std::span<const Embedding> b) {
  const std::size_t d = a.empty() ? (b.empty() ? 0 : b[0].dim()) : a[0].dim();
  for (const auto& e : a) {
    if (e.dim() != d) throw Error(ErrorKind::DimensionMismatch, "mixed embedding dimensions");
  }
  for (const auto& e : b) {
    if (e.dim() != d) throw Error(ErrorKind::DimensionMismatch, "mixed embedding dimensions");
  }
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw Error(ErrorKind::NonPositiveTemperature, "tau = " + std::to_string(tau));
  }
}

double log_sum_exp(std::span<const double> z) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double v : z) mx = std::max(mx, v);
  double s = 0.0;
  for (double v : z) s += std::exp(v - mx);
  return mx + std::log(s);
}

// dL/dz (rows × cols) into gradients of the two embedding lists, z = a_i·b_k/τ.
void chain_bilinear(const Matrix& dz, std::span<const Embedding> a, std::span<const Embedding> b, double tau,
                    Matrix& ga, Matrix& gb) {
  const std::size_t d = a[0].dim();
  ga = Matrix(a.size(), d);
  gb = Matrix(b.size(), d);
  for (std::size_t i = 0; i < a.size(); ++i) {
    for (std::size_t k = 0; k < b.size(); ++k) {
      const double w = dz(i, k) / tau;
      if (w == 0.0) continue;
      auto gai = ga.row(i);
      auto gbk = gb.row(k);
      for (std::size_t j = 0; j < d; ++j) {
        gai[j] += w * b[k][j];
        gbk[j] += w * a[i][j];
      }
    }
  }
}

}  // namespace

LossValue template_bias_loss(std::span<const Embedding> empties, std::span<const Embedding> samples, double tau) {
  check_tau(tau);
  if (samples.size() < 2) throw Error(ErrorKind::BatchTooSmall, "batch of " + std::to_string(samples.size()));
  if (empties.empty()) throw Error(ErrorKind::EmptyInput, "no empty prompts");
  check_dims(empties, samples);

  const std::size_t e = empties.size();
  const std::size_t b = samples.size();
  const double inv_b = 1.0 / static_cast<double>(b);
  const double inv_e = 1.0 / static_cast<double>(e);

  Matrix dz(e, b);
  double total = 0.0;
  std::vector<double> z(b);
  for (std::size_t i = 0; i < e; ++i) {
    double mean_z = 0.0;
    for (std::size_t k = 0; k < b; ++k) {
      z[k] = cosine(empties[i], samples[k]) / tau;
      mean_z += z[k];
    }
    mean_z *= inv_b;
    const double lse = log_sum_exp(z);
    // −(1/B) Σ_k ln p_k = lse − mean(z)
    total += lse - mean_z;
    for (std::size_t k = 0; k < b; ++k) dz(i, k) = inv_e * (std::exp(z[k] - lse) - inv_b);
  }

  LossValue out;
  out.value = total * inv_e;
  chain_bilinear(dz, empties, samples, tau, out.grads["empties"], out.grads["samples"]);
  return out;
}

LossValue cross_entropy(const ProbMatrix& prob, std::span<const std::size_t> labels) {
  const Matrix& p = prob.values;
  if (labels.size() != p.rows()) throw Error(ErrorKind::LengthMismatch, "labels vs probability rows");
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no rows");
  const double inv_n = 1.0 / static_cast<double>(p.rows());
  LossValue out;
  Matrix g(p.rows(), p.cols());
  for (std::size_t i = 0; i < p.rows(); ++i) {
    if (labels[i] >= p.cols()) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]));
    out.value -= std::log(p(i, labels[i])) * inv_n;
    for (std::size_t k = 0; k < p.cols(); ++k) g(i, k) = (p(i, k) - (k == labels[i] ? 1.0 : 0.0)) * inv_n;
  }
  out.grads["scaled_logits"] = std::move(g);
  return out;
}

LossValue cross_entropy_from_logits(const LogitMatrix& l, std::span<const std::size_t> labels, double tau) {
  check_tau(tau);
  const Matrix& m = l.values;
  if (labels.size() != m.rows()) throw Error(ErrorKind::LengthMismatch, "labels vs logit rows");
  if (labels.empty()) throw Error(ErrorKind::EmptyInput, "no rows");
  const double inv_n = 1.0 / static_cast<double>(m.rows());
  LossValue out;
  Matrix g(m.rows(), m.cols());
  std::vector<double> z(m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    if (labels[i] >= m.cols()) throw Error(ErrorKind::LabelOutOfRange, "label " + std::to_string(labels[i]));
    for (std::size_t k = 0; k < m.cols(); ++k) z[k] = m(i, k) / tau;
    const double lse = log_sum_exp(z);
    out.value += (lse - z[labels[i]]) * inv_n;
    for (std::size_t k = 0; k < m.cols(); ++k) {
      g(i, k) = (std::exp(z[k] - lse) - (k == labels[i] ? 1.0 : 0.0)) * inv_n / tau;
    }
  }
  out.grads["logits"] = std::move(g);
  return out;
}

LossValue classification_loss(std::span<const Embedding> samples, std::span<const Embedding> classes,
                              std::span<const std::size_t> labels, double tau) {
  check_dims(samples, classes);
  const auto l = logits(samples, classes);
  auto ce = cross_entropy_from_logits(l, labels, tau);
  LossValue out;
  out.value = ce.value;
  // grads["logits"] already carries 1/τ; chain with τ = 1.
  chain_bilinear(ce.grads.at("logits"), samples, classes, 1.0, out.grads["samples"], out.grads["classes"]);
  return out;
}

LossValue fine_tune_loss(const LossValue& ce, const LossValue& tb, double alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::NegativeAlpha, "alpha = " + std::to_string(alpha));
  LossValue out = ce;
  out.value = ce.value + alpha * tb.value;
  for (const auto& [name, g] : tb.grads) {
    auto it = out.grads.find(name);
    if (it == out.grads.end()) {
      Matrix scaled = g;
      for (double& x : scaled.flat()) x *= alpha;
      out.grads.emplace(name, std::move(scaled));
      continue;
    }
    if (!it->second.same_shape(g)) throw Error(ErrorKind::ShapeMismatch, "gradient '" + name + "' shapes differ");
    if (alpha == 0.0) continue;  // keep ce bit-exact, signed zeros included
    auto dst = it->second.flat();
    auto src = g.flat();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += alpha * src[i];
  }
  return out;
}

LossValue mean_similarity_loss(std::span<const Embedding> empties, std::span<const Embedding> samples, double sign) {
  if (empties.empty() || samples.empty()) throw Error(ErrorKind::EmptyInput, "need empties and samples");
  check_dims(empties, samples);
  const double w = sign / static_cast<double>(empties.size() * samples.size());
  LossValue out;
  Matrix dz(empties.size(), samples.size(), w);
  for (std::size_t i = 0; i < empties.size(); ++i) {
    for (std::size_t k = 0; k < samples.size(); ++k) out.value += w * cosine(empties[i], samples[k]);
  }
  chain_bilinear(dz, empties, samples, 1.0, out.grads["empties"], out.grads["samples"]);
  return out;
}

}  // namespace debias
