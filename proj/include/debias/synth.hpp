#pragma once

#include <cstddef>
#include <cstdint>

#include "debias/embeddings.hpp"

namespace debias {

struct SynthConfig {
  std::size_t dim = 64;
  std::size_t classes = 10;
  std::size_t samples_per_class = 200;
  double class_signal = 0.2;   // norm of each class prototype
  double class_noise = 0.05;   // σ_c, on class-name embeddings
  double sample_noise = 0.3;   // σ_s
  double bias_spread = 0.5;    // β_max
  double template_mix = 0.3;   // δ, largest per-class template weight
  double empty_noise = 0.1;    // σ_e
  std::size_t empty_count = 25;
  std::size_t template_count = 1;
  double template_jitter = 0.3;  // spread of extra template directions
  double temperature = kDefaultTemperature;
  std::uint64_t seed = 0;

  /// Throws InvalidConfig or DimensionTooSmall.
  void validate() const;
};

/// Planted-bias dataset. Prototypes μ_c are orthogonal to each other and to
/// the template direction t. Class c mixes t into its full prompt with
/// weight δ·a_c, where the affinities a_c are a seeded permutation of
/// 0, 1/(K−1), ..., 1. Samples get β·t with β ~ U[0, β_max], so high-TSS
/// samples drift toward high-affinity classes.
///
/// All stored values are float32-representable, so a save/load round trip
/// is exact.
EmbeddingDataset generate(const SynthConfig& cfg);

}  // namespace debias
