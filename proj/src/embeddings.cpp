#include "debias/embeddings.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "debias/blob_io.hpp"
#include "debias/errors.hpp"

namespace debias {

namespace blob {

void append_f32(std::vector<std::uint8_t>& out, std::span<const double> values) {
  for (double v : values) {
    const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(v));
    out.push_back(static_cast<std::uint8_t>(bits & 0xffu));
    out.push_back(static_cast<std::uint8_t>((bits >> 8) & 0xffu));
    out.push_back(static_cast<std::uint8_t>((bits >> 16) & 0xffu));
    out.push_back(static_cast<std::uint8_t>((bits >> 24) & 0xffu));
  }
}

std::vector<double> read_f32(std::span<const std::uint8_t> bytes, std::size_t offset,
                             std::size_t count) {
  if (offset + count * 4 > bytes.size()) {
    throw Error(ErrorKind::FormatError, "blob too short for requested section");
  }
  std::vector<double> out(count);
  const std::uint8_t* p = bytes.data() + offset;
  for (std::size_t i = 0; i < count; ++i, p += 4) {
    const std::uint32_t bits = static_cast<std::uint32_t>(p[0]) |
                               (static_cast<std::uint32_t>(p[1]) << 8) |
                               (static_cast<std::uint32_t>(p[2]) << 16) |
                               (static_cast<std::uint32_t>(p[3]) << 24);
    out[i] = static_cast<double>(std::bit_cast<float>(bits));
  }
  return out;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  std::vector<std::uint8_t> bytes(size);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size))) {
    throw Error(ErrorKind::IoError, "short read on " + path.string());
  }
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::IoError, "write failed on " + path.string());
}

double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace blob

namespace {

double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

constexpr const char* kFormatTag = "debias.embeddings";
constexpr int kFormatVersion = 1;

}  // namespace

double Embedding::norm() const { return l2_norm(values_); }

Embedding Embedding::from_unit(std::vector<double> values, double tolerance) {
  if (values.size() < 2) throw Error(ErrorKind::DimensionMismatch, "embedding dimension < 2");
  for (double x : values) {
    if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "embedding has NaN/Inf entry");
  }
  const double n = l2_norm(values);
  if (std::abs(n - 1.0) > tolerance) {
    throw Error(ErrorKind::FormatError, "embedding norm " + std::to_string(n) + " is not unit");
  }
  return Embedding(std::move(values));
}

Embedding normalize(std::span<const double> raw) {
  for (double x : raw) {
    if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "vector has NaN/Inf entry");
  }
  const double n = l2_norm(raw);
  if (n <= 1e-12) throw Error(ErrorKind::ZeroVector, "cannot normalize a zero vector");
  std::vector<double> out(raw.begin(), raw.end());
  for (double& x : out) x /= n;
  return Embedding(std::move(out));
}

void EmbeddingDataset::validate() const {
  if (dim < 2) throw Error(ErrorKind::DimensionMismatch, "dim must be >= 2");
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    throw Error(ErrorKind::NonPositiveTemperature, "temperature must be positive");
  }
  const std::size_t k = prompts.num_classes();
  if (k < 2) throw Error(ErrorKind::InvalidConfig, "need at least 2 classes");

  auto check_dim = [&](const Embedding& e, const char* what) {
    if (e.dim() != dim) {
      throw Error(ErrorKind::DimensionMismatch,
                  std::string(what) + " has dimension " + std::to_string(e.dim()) +
                      ", expected " + std::to_string(dim));
    }
  };
  for (const auto& s : samples) {
    check_dim(s.embedding, "sample");
    if (s.label >= k) {
      throw Error(ErrorKind::LabelOutOfRange,
                  "label " + std::to_string(s.label) + " >= K=" + std::to_string(k));
    }
  }
  if (!prompts.class_name_embeddings.empty() && prompts.class_name_embeddings.size() != k) {
    throw Error(ErrorKind::LengthMismatch, "class-name embeddings must number K");
  }
  for (const auto& e : prompts.class_name_embeddings) check_dim(e, "class-name embedding");
  for (const auto& bank : prompts.full_prompt_banks) {
    if (bank.size() != k) throw Error(ErrorKind::LengthMismatch, "full-prompt bank must number K");
    for (const auto& e : bank) check_dim(e, "full-prompt embedding");
  }
  if (!prompts.templates.empty() && prompts.templates.size() != prompts.full_prompt_banks.size()) {
    throw Error(ErrorKind::LengthMismatch, "one template label per full-prompt bank");
  }
  if (prompts.template_embedding) check_dim(*prompts.template_embedding, "template embedding");
  if (prompts.empty_words.size() != prompts.empty_prompt_embeddings.size()) {
    throw Error(ErrorKind::LengthMismatch, "empty words and empty embeddings differ in count");
  }
  for (const auto& e : prompts.empty_prompt_embeddings) check_dim(e, "empty-prompt embedding");
}

std::vector<std::size_t> EmbeddingDataset::labels() const {
  std::vector<std::size_t> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

std::vector<Embedding> EmbeddingDataset::sample_embeddings() const {
  std::vector<Embedding> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.embedding);
  return out;
}

std::vector<Embedding> EmbeddingDataset::sample_embeddings(std::span<const std::size_t> indices) const {
  std::vector<Embedding> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(samples.at(i).embedding);
  return out;
}

namespace {

struct Layout {
  std::size_t samples = 0;
  std::size_t class_name_rows = 0;
  std::size_t banks = 0;
  std::size_t classes = 0;
  std::size_t template_rows = 0;
  std::size_t empties = 0;

  std::size_t total_rows() const {
    return samples + class_name_rows + banks * classes + template_rows + empties;
  }
};

template <typename T>
T require(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) throw Error(ErrorKind::FormatError, std::string("manifest missing '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("manifest field '") + key + "': " + e.what());
  }
}

}  // namespace

EmbeddingDataset load_dataset(const std::filesystem::path& manifest_path) {
  const auto text = blob::read_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, std::string("manifest is not JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kFormatTag) {
    throw Error(ErrorKind::FormatError, "manifest 'format' tag missing or wrong");
  }
  if (require<int>(j, "version") != kFormatVersion) {
    throw Error(ErrorKind::FormatError, "unsupported manifest version");
  }

  EmbeddingDataset ds;
  ds.dim = require<std::size_t>(j, "dim");
  ds.temperature = require<double>(j, "temperature");
  const bool renormalize = j.value("renormalize", false);
  ds.prompts.class_names = require<std::vector<std::string>>(j, "class_names");
  ds.prompts.empty_words = j.value("empty_words", std::vector<std::string>{});
  ds.prompts.templates = j.value("templates", std::vector<std::string>{});
  if (ds.dim < 2) throw Error(ErrorKind::DimensionMismatch, "dim must be >= 2");

  const auto& counts = j.at("counts");
  Layout layout;
  layout.samples = require<std::size_t>(counts, "samples");
  layout.classes = require<std::size_t>(counts, "classes");
  layout.class_name_rows = require<std::size_t>(counts, "class_name_rows");
  layout.banks = require<std::size_t>(counts, "prompt_banks");
  layout.template_rows = require<std::size_t>(counts, "template_rows");
  layout.empties = require<std::size_t>(counts, "empty_prompts");

  if (layout.classes != ds.prompts.class_names.size()) {
    throw Error(ErrorKind::FormatError, "counts.classes disagrees with class_names");
  }
  if (layout.class_name_rows != 0 && layout.class_name_rows != layout.classes) {
    throw Error(ErrorKind::FormatError, "class_name_rows must be 0 or K");
  }
  if (layout.template_rows > 1) throw Error(ErrorKind::FormatError, "template_rows must be 0 or 1");
  if (layout.empties != ds.prompts.empty_words.size()) {
    throw Error(ErrorKind::FormatError, "counts.empty_prompts disagrees with empty_words");
  }

  const auto labels = require<std::vector<std::int64_t>>(j, "labels");
  const auto ids = j.value("ids", std::vector<std::string>{});
  if (labels.size() != layout.samples || (!ids.empty() && ids.size() != layout.samples)) {
    throw Error(ErrorKind::FormatError, "labels/ids length disagrees with counts.samples");
  }

  const std::size_t row_bytes = ds.dim * 4;
  const auto& sections = j.at("sections");
  const std::size_t expected[] = {
      0,
      layout.samples * row_bytes,
      (layout.samples + layout.class_name_rows) * row_bytes,
      (layout.samples + layout.class_name_rows + layout.banks * layout.classes) * row_bytes,
      (layout.samples + layout.class_name_rows + layout.banks * layout.classes + layout.template_rows) *
          row_bytes,
  };
  const char* names[] = {"samples", "class_names", "full_prompts", "template", "empty_prompts"};
  for (int i = 0; i < 5; ++i) {
    if (require<std::size_t>(sections, names[i]) != expected[i]) {
      throw Error(ErrorKind::FormatError, std::string("section '") + names[i] + "' offset is inconsistent");
    }
  }

  const auto blob_name = require<std::string>(j, "blob");
  const auto bytes = blob::read_file(manifest_path.parent_path() / blob_name);
  if (bytes.size() != layout.total_rows() * row_bytes) {
    throw Error(ErrorKind::FormatError, "blob has " + std::to_string(bytes.size()) + " bytes, expected " +
                                            std::to_string(layout.total_rows() * row_bytes));
  }

  std::size_t offset = 0;
  auto next_row = [&]() {
    auto values = blob::read_f32(bytes, offset, ds.dim);
    offset += row_bytes;
    for (double x : values) {
      if (!std::isfinite(x)) throw Error(ErrorKind::NonFinite, "blob row has NaN/Inf");
    }
    const double n = l2_norm(values);
    if (std::abs(n - 1.0) > kUnitNormTolerance) {
      if (!renormalize) {
        throw Error(ErrorKind::FormatError,
                    "row norm " + std::to_string(n) + " outside tolerance and renormalize is false");
      }
      return normalize(values);
    }
    return Embedding::from_unit(std::move(values));
  };

  ds.samples.reserve(layout.samples);
  for (std::size_t i = 0; i < layout.samples; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= layout.classes) {
      throw Error(ErrorKind::LabelOutOfRange,
                  "label " + std::to_string(labels[i]) + " at row " + std::to_string(i));
    }
    SampleRecord rec;
    rec.embedding = next_row();
    rec.label = static_cast<std::size_t>(labels[i]);
    rec.id = ids.empty() ? std::to_string(i) : ids[i];
    ds.samples.push_back(std::move(rec));
  }
  for (std::size_t i = 0; i < layout.class_name_rows; ++i) {
    ds.prompts.class_name_embeddings.push_back(next_row());
  }
  for (std::size_t b = 0; b < layout.banks; ++b) {
    std::vector<Embedding> bank;
    for (std::size_t c = 0; c < layout.classes; ++c) bank.push_back(next_row());
    ds.prompts.full_prompt_banks.push_back(std::move(bank));
  }
  if (layout.template_rows == 1) ds.prompts.template_embedding = next_row();
  for (std::size_t i = 0; i < layout.empties; ++i) {
    ds.prompts.empty_prompt_embeddings.push_back(next_row());
  }

  ds.validate();
  return ds;
}

void save_dataset(const EmbeddingDataset& ds, const std::filesystem::path& manifest_path,
                  const SaveOptions& options) {
  ds.validate();
  const std::size_t k = ds.prompts.num_classes();
  Layout layout;
  layout.samples = ds.samples.size();
  layout.classes = k;
  layout.class_name_rows = ds.prompts.class_name_embeddings.size();
  layout.banks = ds.prompts.full_prompt_banks.size();
  layout.template_rows = ds.prompts.template_embedding ? 1 : 0;
  layout.empties = ds.prompts.empty_prompt_embeddings.size();

  std::vector<std::uint8_t> bytes;
  bytes.reserve(layout.total_rows() * ds.dim * 4);
  std::vector<std::int64_t> labels;
  std::vector<std::string> ids;
  for (const auto& s : ds.samples) {
    blob::append_f32(bytes, s.embedding.values());
    labels.push_back(static_cast<std::int64_t>(s.label));
    ids.push_back(s.id);
  }
  for (const auto& e : ds.prompts.class_name_embeddings) blob::append_f32(bytes, e.values());
  for (const auto& bank : ds.prompts.full_prompt_banks) {
    for (const auto& e : bank) blob::append_f32(bytes, e.values());
  }
  if (ds.prompts.template_embedding) blob::append_f32(bytes, ds.prompts.template_embedding->values());
  for (const auto& e : ds.prompts.empty_prompt_embeddings) blob::append_f32(bytes, e.values());

  const std::size_t row_bytes = ds.dim * 4;
  std::size_t cursor = 0;
  nlohmann::json sections;
  sections["samples"] = cursor;
  cursor += layout.samples * row_bytes;
  sections["class_names"] = cursor;
  cursor += layout.class_name_rows * row_bytes;
  sections["full_prompts"] = cursor;
  cursor += layout.banks * k * row_bytes;
  sections["template"] = cursor;
  cursor += layout.template_rows * row_bytes;
  sections["empty_prompts"] = cursor;

  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  nlohmann::json j;
  j["format"] = kFormatTag;
  j["version"] = kFormatVersion;
  j["dim"] = ds.dim;
  j["temperature"] = ds.temperature;
  j["renormalize"] = options.renormalize;
  j["class_names"] = ds.prompts.class_names;
  j["empty_words"] = ds.prompts.empty_words;
  j["templates"] = ds.prompts.templates;
  j["counts"] = {{"samples", layout.samples},
                 {"classes", k},
                 {"class_name_rows", layout.class_name_rows},
                 {"prompt_banks", layout.banks},
                 {"template_rows", layout.template_rows},
                 {"empty_prompts", layout.empties}};
  j["blob"] = blob_path.filename().string();
  j["sections"] = sections;
  j["labels"] = labels;
  j["ids"] = ids;

  blob::write_file(blob_path, bytes);
  blob::write_text(manifest_path, j.dump(2) + "\n");
}

}  // namespace debias
