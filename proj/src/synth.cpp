#include "debias/synth.hpp"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "debias/blob_io.hpp"
#include "debias/empty_prompts.hpp"
#include "debias/errors.hpp"
#include "debias/rng.hpp"

namespace debias {

void SynthConfig::validate() const {
  if (classes < 2) throw Error(ErrorKind::InvalidConfig, "need at least 2 classes");
  if (dim < classes + 1) {
    throw Error(ErrorKind::DimensionTooSmall,
                "dim " + std::to_string(dim) + " < classes + 1 = " + std::to_string(classes + 1));
  }
  if (empty_count < 1) throw Error(ErrorKind::InvalidConfig, "empty_count must be >= 1");
  if (template_count < 1) throw Error(ErrorKind::InvalidConfig, "template_count must be >= 1");
  if (!(class_signal > 0.0)) throw Error(ErrorKind::InvalidConfig, "class_signal must be positive");
  if (class_noise < 0.0 || sample_noise < 0.0 || bias_spread < 0.0 || empty_noise < 0.0 || template_jitter < 0.0) {
    throw Error(ErrorKind::InvalidConfig, "noise and spread parameters must be >= 0");
  }
  if (!(template_mix >= 0.0 && template_mix <= 1.0)) throw Error(ErrorKind::InvalidConfig, "template_mix must be in [0, 1]");
  if (!(temperature > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "temperature must be positive");
}

namespace {

// Normalize, then round to float so the value survives the float32 blob.
Embedding stored(std::vector<double> v) {
  auto e = normalize(v);
  std::vector<double> r(e.values().begin(), e.values().end());
  for (double& x : r) x = blob::round_to_f32(x);
  return Embedding::from_unit(std::move(r));
}

std::vector<double> gaussian(Rng& rng, std::size_t d, double scale) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal() * scale;
  return v;
}

// Gram-Schmidt (twice, for stability) over n Gaussian vectors.
std::vector<std::vector<double>> orthonormal(Rng& rng, std::size_t n, std::size_t d) {
  std::vector<std::vector<double>> basis;
  while (basis.size() < n) {
    auto v = gaussian(rng, d, 1.0);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& b : basis) {
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += v[j] * b[j];
        for (std::size_t j = 0; j < d; ++j) v[j] -= dot * b[j];
      }
    }
    double n2 = 0.0;
    for (double x : v) n2 += x * x;
    if (n2 < 1e-12) continue;
    const double inv = 1.0 / std::sqrt(n2);
    for (double& x : v) x *= inv;
    basis.push_back(std::move(v));
  }
  return basis;
}

}  // namespace

EmbeddingDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t d = cfg.dim;
  const std::size_t k = cfg.classes;
  const double noise_scale = 1.0 / std::sqrt(static_cast<double>(d));
  Rng rng(cfg.seed);

  auto basis = orthonormal(rng, k + 1, d);
  const std::vector<double> t = basis[k];
  std::vector<std::vector<double>> mu(k);
  for (std::size_t c = 0; c < k; ++c) {
    mu[c] = basis[c];
    for (double& x : mu[c]) x *= cfg.class_signal;
  }

  std::vector<std::size_t> perm(k);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<double> mix(k);
  for (std::size_t c = 0; c < k; ++c) {
    mix[c] = cfg.template_mix * static_cast<double>(perm[c]) / static_cast<double>(k - 1);
  }

  EmbeddingDataset ds;
  ds.dim = d;
  ds.temperature = cfg.temperature;
  auto& p = ds.prompts;
  for (std::size_t c = 0; c < k; ++c) p.class_names.push_back("class_" + std::to_string(c));

  for (std::size_t c = 0; c < k; ++c) {
    auto v = gaussian(rng, d, cfg.class_noise * noise_scale);
    for (std::size_t j = 0; j < d; ++j) v[j] += mu[c][j];
    p.class_name_embeddings.push_back(stored(std::move(v)));
  }

  const char* template_names[] = {"a photo of a {}.", "a picture of a {}.", "an image of a {}.",
                                  "a photo of the {}.", "a close-up photo of a {}.", "a rendering of a {}.",
                                  "art of the {}."};
  for (std::size_t b = 0; b < cfg.template_count; ++b) {
    std::vector<double> tb = t;
    if (b > 0) {
      auto jitter = gaussian(rng, d, cfg.template_jitter * noise_scale);
      for (std::size_t j = 0; j < d; ++j) tb[j] += jitter[j];
      const auto unit = normalize(tb);
      tb.assign(unit.values().begin(), unit.values().end());
    }
    std::vector<Embedding> bank;
    for (std::size_t c = 0; c < k; ++c) {
      std::vector<double> v(d);
      for (std::size_t j = 0; j < d; ++j) v[j] = (1.0 - mix[c]) * mu[c][j] + mix[c] * tb[j];
      bank.push_back(stored(std::move(v)));
    }
    p.full_prompt_banks.push_back(std::move(bank));
    p.templates.push_back(b < std::size(template_names) ? template_names[b] : "template " + std::to_string(b) + " {}");
  }

  p.template_embedding = stored(t);

  const auto vocab = default_vocabulary();
  for (std::size_t e = 0; e < cfg.empty_count; ++e) {
    auto v = gaussian(rng, d, cfg.empty_noise * noise_scale);
    for (std::size_t j = 0; j < d; ++j) v[j] += t[j];
    p.empty_prompt_embeddings.push_back(stored(std::move(v)));
    p.empty_words.push_back(e < vocab.words.size() ? vocab.words[e] : "empty_" + std::to_string(e));
  }

  ds.samples.reserve(k * cfg.samples_per_class);
  for (std::size_t c = 0; c < k; ++c) {
    for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
      auto v = gaussian(rng, d, cfg.sample_noise * noise_scale);
      const double beta = rng.uniform(0.0, cfg.bias_spread);
      for (std::size_t j = 0; j < d; ++j) v[j] += mu[c][j] + beta * t[j];
      ds.samples.push_back({stored(std::move(v)), c, "c" + std::to_string(c) + "_" + std::to_string(i)});
    }
  }
  return ds;
}

}  // namespace debias
