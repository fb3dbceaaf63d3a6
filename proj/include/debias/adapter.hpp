#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "debias/embeddings.hpp"
#include "debias/matrix.hpp"
#include "debias/rng.hpp"

namespace debias {

/// Residual low-rank map e -> normalize(e + B·A·drop(e)) on embedding space.
struct LowRankAdapter {
  std::size_t dim = 0;
  std::size_t rank = 0;
  double dropout_p = 0.0;
  Matrix down;  // A, rank × dim
  Matrix up;    // B, dim × rank, zero at init

  /// A ~ U(-1/√d, 1/√d), B = 0.
  static LowRankAdapter init(std::size_t dim, std::size_t rank, double dropout_p, Rng& rng);
  /// A = 0, B = 0.
  static LowRankAdapter zeros(std::size_t dim, std::size_t rank, double dropout_p);

  bool operator==(const LowRankAdapter&) const = default;
};

struct AdapterModel {
  LowRankAdapter visual;
  LowRankAdapter text;

  static AdapterModel init(std::size_t dim, std::size_t rank, double dropout_p, Rng& rng);
  bool operator==(const AdapterModel&) const = default;
};

/// Intermediate values kept by the forward pass for backprop.
struct AdapterTrace {
  std::vector<double> input;    // x after dropout
  std::vector<double> hidden;   // A·x
  double pre_norm = 1.0;        // ‖e + B·h‖
  Embedding output;
};

struct AdapterGrads {
  Matrix down;
  Matrix up;

  explicit AdapterGrads(const LowRankAdapter& a)
      : down(a.down.rows(), a.down.cols()), up(a.up.rows(), a.up.cols()) {}
};

/// `rng` is only drawn from when training with dropout_p > 0.
Embedding apply_adapter(const LowRankAdapter& adapter, const Embedding& e, bool training, Rng* rng);

AdapterTrace adapter_forward(const LowRankAdapter& adapter, const Embedding& e, bool training, Rng* rng);

/// Accumulates dL/dA and dL/dB given dL/d(output).
void adapter_backward(const LowRankAdapter& adapter, const AdapterTrace& trace,
                      std::span<const double> grad_out, AdapterGrads& acc);

/// Eval-mode application to a list.
std::vector<Embedding> apply_all(const LowRankAdapter& adapter, std::span<const Embedding> es);

/// Copy of `ds` with samples through the visual adapter and all text
/// embeddings through the text adapter.
EmbeddingDataset adapt_dataset(const EmbeddingDataset& ds, const AdapterModel& model);

struct Checkpoint {
  AdapterModel model;
  std::uint64_t seed = 0;
  std::string config_json = "{}";  // echo of the training config
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest_path);
Checkpoint load_checkpoint(const std::filesystem::path& manifest_path);

}  // namespace debias
