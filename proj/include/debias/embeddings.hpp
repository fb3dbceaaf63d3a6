#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace debias {

/// Tolerance on |‖e‖ − 1| for stored embeddings.
inline constexpr double kUnitNormTolerance = 1e-4;
/// Default softmax temperature (logit scale 100).
inline constexpr double kDefaultTemperature = 0.01;

/// A unit-norm feature vector of dimension ≥ 2.
class Embedding {
 public:
  Embedding() = default;

  /// Wraps values that are already unit-norm within `tolerance`.
  /// Throws FormatError otherwise; the values are kept bit-for-bit.
  static Embedding from_unit(std::vector<double> values, double tolerance = kUnitNormTolerance);

  std::size_t dim() const noexcept { return values_.size(); }
  std::span<const double> values() const noexcept { return values_; }
  double operator[](std::size_t i) const { return values_[i]; }
  double norm() const;

  bool operator==(const Embedding&) const = default;

 private:
  friend Embedding normalize(std::span<const double> raw);
  explicit Embedding(std::vector<double> values) : values_(std::move(values)) {}

  std::vector<double> values_;
};

/// v / ‖v‖. Throws NonFinite on NaN/Inf, ZeroVector when ‖v‖ ≤ 1e-12.
Embedding normalize(std::span<const double> raw);

struct SampleRecord {
  Embedding embedding;
  std::size_t label = 0;
  std::string id;
};

/// Text-side embeddings. Any list may be empty when the producer did not
/// export it; consumers raise MissingPromptBank on demand.
struct PromptBank {
  std::vector<std::string> class_names;                  // K
  std::vector<Embedding> class_name_embeddings;          // bare class names, K or 0
  std::vector<std::vector<Embedding>> full_prompt_banks; // one K-list per template
  std::vector<std::string> templates;                    // label per bank, may be empty
  std::optional<Embedding> template_embedding;           // blank template
  std::vector<std::string> empty_words;                  // E
  std::vector<Embedding> empty_prompt_embeddings;        // E

  std::size_t num_classes() const noexcept { return class_names.size(); }
};

struct EmbeddingDataset {
  std::size_t dim = 0;
  double temperature = kDefaultTemperature;
  std::vector<SampleRecord> samples;
  PromptBank prompts;

  /// Throws on any broken invariant (dimension, label range, τ, K ≥ 2).
  void validate() const;

  std::vector<std::size_t> labels() const;
  std::vector<Embedding> sample_embeddings() const;
  std::vector<Embedding> sample_embeddings(std::span<const std::size_t> indices) const;
};

struct SaveOptions {
  /// Written into the manifest; tells the loader to renormalize rows whose
  /// norm is outside tolerance instead of rejecting the file.
  bool renormalize = false;
};

/// Reads a manifest (JSON) and its float32 blob.
EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path);

/// Writes `<stem>.json` style manifest at `manifest_path` and the blob next to
/// it as `<stem>.bin`. Both files are fully determined by the dataset.
void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& manifest_path,
                  const SaveOptions& options = {});

}  // namespace debias
