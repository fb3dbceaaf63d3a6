#include "debias/adapter.hpp"

#include <cmath>

#include <json.hpp>

#include "debias/blob_io.hpp"
#include "debias/errors.hpp"

namespace debias {

LowRankAdapter LowRankAdapter::zeros(std::size_t dim, std::size_t rank, double dropout_p) {
  if (dim < 2) throw Error(ErrorKind::InvalidConfig, "adapter dim must be >= 2");
  if (rank == 0 || rank > dim) throw Error(ErrorKind::InvalidConfig, "adapter rank must be in [1, dim]");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout_p must be in [0, 1)");
  LowRankAdapter a;
  a.dim = dim;
  a.rank = rank;
  a.dropout_p = dropout_p;
  a.down = Matrix(rank, dim);
  a.up = Matrix(dim, rank);
  return a;
}

LowRankAdapter LowRankAdapter::init(std::size_t dim, std::size_t rank, double dropout_p, Rng& rng) {
  auto a = zeros(dim, rank, dropout_p);
  const double bound = 1.0 / std::sqrt(static_cast<double>(dim));
  for (double& w : a.down.flat()) w = rng.uniform(-bound, bound);
  return a;
}

AdapterModel AdapterModel::init(std::size_t dim, std::size_t rank, double dropout_p, Rng& rng) {
  AdapterModel m;
  m.visual = LowRankAdapter::init(dim, rank, dropout_p, rng);
  m.text = LowRankAdapter::init(dim, rank, dropout_p, rng);
  return m;
}

AdapterTrace adapter_forward(const LowRankAdapter& adapter, const Embedding& e, bool training, Rng* rng) {
  const std::size_t d = adapter.dim;
  if (e.dim() != d) {
    throw Error(ErrorKind::DimensionMismatch,
                "adapter dim " + std::to_string(d) + ", embedding dim " + std::to_string(e.dim()));
  }
  AdapterTrace t;
  t.input.assign(e.values().begin(), e.values().end());
  if (training && adapter.dropout_p > 0.0) {
    if (rng == nullptr) throw Error(ErrorKind::InvalidConfig, "dropout needs an rng");
    const double keep = 1.0 / (1.0 - adapter.dropout_p);
    for (double& x : t.input) x = rng->uniform() < adapter.dropout_p ? 0.0 : x * keep;
  }

  t.hidden.assign(adapter.rank, 0.0);
  for (std::size_t r = 0; r < adapter.rank; ++r) {
    auto row = adapter.down.row(r);
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += row[j] * t.input[j];
    t.hidden[r] = s;
  }

  std::vector<double> u(e.values().begin(), e.values().end());
  bool moved = false;
  for (std::size_t i = 0; i < d; ++i) {
    double delta = 0.0;
    for (std::size_t r = 0; r < adapter.rank; ++r) delta += adapter.up(i, r) * t.hidden[r];
    if (delta != 0.0) moved = true;
    u[i] += delta;
  }
  if (!moved) {
    // Zero update: exact identity, no renormalization round-off.
    t.pre_norm = e.norm();
    t.output = e;
    return t;
  }
  double n2 = 0.0;
  for (double x : u) n2 += x * x;
  t.pre_norm = std::sqrt(n2);
  t.output = normalize(u);
  return t;
}

Embedding apply_adapter(const LowRankAdapter& adapter, const Embedding& e, bool training, Rng* rng) {
  return adapter_forward(adapter, e, training, rng).output;
}

void adapter_backward(const LowRankAdapter& adapter, const AdapterTrace& trace,
                      std::span<const double> grad_out, AdapterGrads& acc) {
  const std::size_t d = adapter.dim;
  const auto y = trace.output.values();
  // d/du of u/‖u‖ applied to g: (g − y(y·g)) / ‖u‖.
  double yg = 0.0;
  for (std::size_t i = 0; i < d; ++i) yg += y[i] * grad_out[i];
  std::vector<double> gu(d);
  for (std::size_t i = 0; i < d; ++i) gu[i] = (grad_out[i] - y[i] * yg) / trace.pre_norm;

  std::vector<double> gh(adapter.rank, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t r = 0; r < adapter.rank; ++r) {
      acc.up(i, r) += gu[i] * trace.hidden[r];
      gh[r] += adapter.up(i, r) * gu[i];
    }
  }
  for (std::size_t r = 0; r < adapter.rank; ++r) {
    auto row = acc.down.row(r);
    for (std::size_t j = 0; j < d; ++j) row[j] += gh[r] * trace.input[j];
  }
}

std::vector<Embedding> apply_all(const LowRankAdapter& adapter, std::span<const Embedding> es) {
  std::vector<Embedding> out;
  out.reserve(es.size());
  for (const auto& e : es) out.push_back(apply_adapter(adapter, e, false, nullptr));
  return out;
}

EmbeddingDataset adapt_dataset(const EmbeddingDataset& ds, const AdapterModel& model) {
  EmbeddingDataset out = ds;
  for (auto& s : out.samples) s.embedding = apply_adapter(model.visual, s.embedding, false, nullptr);
  auto& p = out.prompts;
  p.class_name_embeddings = apply_all(model.text, p.class_name_embeddings);
  for (auto& bank : p.full_prompt_banks) bank = apply_all(model.text, bank);
  if (p.template_embedding) p.template_embedding = apply_adapter(model.text, *p.template_embedding, false, nullptr);
  p.empty_prompt_embeddings = apply_all(model.text, p.empty_prompt_embeddings);
  return out;
}

namespace {

constexpr const char* kCheckpointTag = "debias.checkpoint";

struct TensorSlot {
  const char* name;
  Matrix LowRankAdapter::*field;
  LowRankAdapter AdapterModel::*owner;
};

constexpr TensorSlot kSlots[] = {
    {"visual.down", &LowRankAdapter::down, &AdapterModel::visual},
    {"visual.up", &LowRankAdapter::up, &AdapterModel::visual},
    {"text.down", &LowRankAdapter::down, &AdapterModel::text},
    {"text.up", &LowRankAdapter::up, &AdapterModel::text},
};

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& manifest_path) {
  const auto& m = ckpt.model;
  if (m.visual.dim != m.text.dim || m.visual.rank != m.text.rank) {
    throw Error(ErrorKind::ShapeMismatch, "visual and text adapters differ in shape");
  }
  std::vector<std::uint8_t> bytes;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& slot : kSlots) {
    const Matrix& t = (m.*slot.owner).*slot.field;
    tensors.push_back({{"name", slot.name}, {"rows", t.rows()}, {"cols", t.cols()}, {"offset", bytes.size()}});
    blob::append_f32(bytes, t.flat());
  }
  auto blob_path = manifest_path;
  blob_path.replace_extension(".bin");

  nlohmann::json config;
  try {
    config = nlohmann::json::parse(ckpt.config_json);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, std::string("config echo is not JSON: ") + e.what());
  }
  nlohmann::json j;
  j["format"] = kCheckpointTag;
  j["version"] = 1;
  j["dim"] = m.visual.dim;
  j["rank"] = m.visual.rank;
  j["dropout_p"] = m.visual.dropout_p;
  j["seed"] = ckpt.seed;
  j["config"] = config;
  j["blob"] = blob_path.filename().string();
  j["tensors"] = tensors;
  blob::write_file(blob_path, bytes);
  blob::write_text(manifest_path, j.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& manifest_path) {
  const auto text = blob::read_file(manifest_path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text.begin(), text.end());
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, std::string("checkpoint manifest is not JSON: ") + e.what());
  }
  if (!j.is_object() || j.value("format", std::string()) != kCheckpointTag || j.value("version", 0) != 1) {
    throw Error(ErrorKind::FormatError, "not a version-1 checkpoint manifest");
  }
  Checkpoint ck;
  try {
    const auto dim = j.at("dim").get<std::size_t>();
    const auto rank = j.at("rank").get<std::size_t>();
    const auto p = j.at("dropout_p").get<double>();
    ck.seed = j.at("seed").get<std::uint64_t>();
    ck.config_json = j.value("config", nlohmann::json::object()).dump();
    ck.model.visual = LowRankAdapter::zeros(dim, rank, p);
    ck.model.text = LowRankAdapter::zeros(dim, rank, p);

    const auto bytes = blob::read_file(manifest_path.parent_path() / j.at("blob").get<std::string>());
    const auto& tensors = j.at("tensors");
    if (!tensors.is_array() || tensors.size() != std::size(kSlots)) {
      throw Error(ErrorKind::FormatError, "checkpoint must list 4 tensors");
    }
    std::size_t expected_offset = 0;
    for (std::size_t i = 0; i < std::size(kSlots); ++i) {
      const auto& slot = kSlots[i];
      const auto& desc = tensors[i];
      Matrix& target = (ck.model.*slot.owner).*slot.field;
      if (desc.at("name").get<std::string>() != slot.name || desc.at("rows").get<std::size_t>() != target.rows() ||
          desc.at("cols").get<std::size_t>() != target.cols() ||
          desc.at("offset").get<std::size_t>() != expected_offset) {
        throw Error(ErrorKind::FormatError, std::string("tensor '") + slot.name + "' descriptor is inconsistent");
      }
      const auto values = blob::read_f32(bytes, expected_offset, target.flat().size());
      std::copy(values.begin(), values.end(), target.flat().begin());
      expected_offset += values.size() * 4;
    }
    if (expected_offset != bytes.size()) throw Error(ErrorKind::FormatError, "checkpoint blob has trailing bytes");
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("checkpoint manifest: ") + e.what());
  }
  return ck;
}

}  // namespace debias
