#include "debias/trainer.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

#include <json.hpp>

#include "debias/bias_analysis.hpp"
#include "debias/calibration_loss.hpp"
#include "debias/errors.hpp"

namespace debias {

TrainMode parse_train_mode(std::string_view name) {
  if (name == "ours") return TrainMode::Ours;
  if (name == "ce_only") return TrainMode::CeOnly;
  if (name == "pull_closer") return TrainMode::PullCloser;
  if (name == "push_away") return TrainMode::PushAway;
  throw Error(ErrorKind::InvalidConfig, "unknown train mode '" + std::string(name) + "'");
}

std::string_view to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::Ours: return "ours";
    case TrainMode::CeOnly: return "ce_only";
    case TrainMode::PullCloser: return "pull_closer";
    case TrainMode::PushAway: return "push_away";
  }
  return "unknown";
}

Stage parse_stage(std::string_view name) {
  if (name == "pretrain") return Stage::Pretrain;
  if (name == "finetune") return Stage::Finetune;
  if (name == "both") return Stage::Both;
  throw Error(ErrorKind::InvalidConfig, "unknown stage '" + std::string(name) + "'");
}

std::string_view to_string(Stage stage) {
  switch (stage) {
    case Stage::Pretrain: return "pretrain";
    case Stage::Finetune: return "finetune";
    case Stage::Both: return "both";
  }
  return "unknown";
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& what) { throw Error(ErrorKind::InvalidConfig, what); };
  if (!(alpha >= 0.0)) throw Error(ErrorKind::NegativeAlpha, "alpha = " + std::to_string(alpha));
  if (!(lr > 0.0) || !(lr_small > 0.0)) fail("learning rates must be positive");
  if (batch_size == 0) fail("batch_size must be positive");
  if (pretrain_iters_per_shot == 0 || finetune_iters_per_shot == 0) fail("iteration multipliers must be positive");
  if (shots == 0) throw Error(ErrorKind::EmptySupportSet, "shots must be positive");
  if (rank == 0) fail("rank must be positive");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) fail("dropout_p must be in [0, 1)");
  if (temperature && !(*temperature > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "temperature override");
  if (empty_count && *empty_count == 0) fail("empty_count must be positive");
  if (log_interval == 0) fail("log_interval must be positive");
  if (log_bin_size == 0) fail("log_bin_size must be positive");
}

std::string config_to_json(const TrainConfig& cfg) {
  nlohmann::json j;
  j["alpha"] = cfg.alpha;
  j["lr"] = cfg.lr;
  j["lr_small"] = cfg.lr_small;
  j["use_small_lr"] = cfg.use_small_lr;
  j["batch_size"] = cfg.batch_size;
  j["pretrain_iters_per_shot"] = cfg.pretrain_iters_per_shot;
  j["finetune_iters_per_shot"] = cfg.finetune_iters_per_shot;
  j["shots"] = cfg.shots;
  j["rank"] = cfg.rank;
  j["dropout_p"] = cfg.dropout_p;
  j["temperature"] = cfg.temperature ? nlohmann::json(*cfg.temperature) : nlohmann::json(nullptr);
  j["seed"] = cfg.seed;
  j["mode"] = to_string(cfg.mode);
  j["stage"] = to_string(cfg.stage);
  j["prompt_mode"] = to_string(cfg.prompt_mode);
  j["tb_over_support"] = cfg.tb_over_support;
  j["tb_updates_text"] = cfg.tb_updates_text;
  j["empty_count"] = cfg.empty_count ? nlohmann::json(*cfg.empty_count) : nlohmann::json(nullptr);
  j["log_interval"] = cfg.log_interval;
  j["log_bin_size"] = cfg.log_bin_size;
  return j.dump();
}

TrainConfig config_from_json(const std::string& text, TrainConfig cfg) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::FormatError, std::string("config is not JSON: ") + e.what());
  }
  if (!j.is_object()) throw Error(ErrorKind::FormatError, "config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "alpha") cfg.alpha = v.get<double>();
      else if (key == "lr") cfg.lr = v.get<double>();
      else if (key == "lr_small") cfg.lr_small = v.get<double>();
      else if (key == "use_small_lr") cfg.use_small_lr = v.get<bool>();
      else if (key == "batch_size") cfg.batch_size = v.get<std::size_t>();
      else if (key == "pretrain_iters_per_shot") cfg.pretrain_iters_per_shot = v.get<std::size_t>();
      else if (key == "finetune_iters_per_shot") cfg.finetune_iters_per_shot = v.get<std::size_t>();
      else if (key == "shots") cfg.shots = v.get<std::size_t>();
      else if (key == "rank") cfg.rank = v.get<std::size_t>();
      else if (key == "dropout_p") cfg.dropout_p = v.get<double>();
      else if (key == "temperature") cfg.temperature = v.is_null() ? std::nullopt : std::optional(v.get<double>());
      else if (key == "seed") cfg.seed = v.get<std::uint64_t>();
      else if (key == "mode") cfg.mode = parse_train_mode(v.get<std::string>());
      else if (key == "stage") cfg.stage = parse_stage(v.get<std::string>());
      else if (key == "prompt_mode") cfg.prompt_mode = parse_predict_mode(v.get<std::string>());
      else if (key == "tb_over_support") cfg.tb_over_support = v.get<bool>();
      else if (key == "tb_updates_text") cfg.tb_updates_text = v.get<bool>();
      else if (key == "empty_count") cfg.empty_count = v.is_null() ? std::nullopt : std::optional(v.get<std::size_t>());
      else if (key == "log_interval") cfg.log_interval = v.get<std::size_t>();
      else if (key == "log_bin_size") cfg.log_bin_size = v.get<std::size_t>();
      else throw Error(ErrorKind::InvalidConfig, "unknown config key '" + key + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("config value: ") + e.what());
  }
  return cfg;
}

double cosine_lr(double base, std::size_t t, std::size_t total) {
  if (total == 0) return base;
  return base * 0.5 * (1.0 + std::cos(std::numbers::pi * static_cast<double>(t) / static_cast<double>(total)));
}

void TrainLog::append(LogRecord record) {
  if (!records_.empty() && record.iteration <= records_.back().iteration) {
    throw Error(ErrorKind::InvalidConfig, "log iterations must strictly increase");
  }
  records_.push_back(std::move(record));
}

void TrainLog::extend(const TrainLog& other) {
  for (const auto& r : other.records()) append(r);
  total_iterations += other.total_iterations;
}

std::string TrainLog::to_jsonl() const {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  std::string out;
  for (const auto& r : records_) {
    nlohmann::json j;
    j["iteration"] = r.iteration;
    j["stage"] = r.stage;
    j["lr"] = r.lr;
    j["loss"] = r.loss;
    j["ce"] = r.ce;
    j["tb"] = r.tb;
    j["pearson"] = opt(r.pearson);
    j["raw_pearson"] = opt(r.raw_pearson);
    j["accuracy"] = r.accuracy;
    j["support_tss_std"] = r.support_tss_std;
    out += j.dump();
    out += '\n';
  }
  return out;
}

SupportSplit few_shot_split(const EmbeddingDataset& ds, std::size_t shots, std::uint64_t seed) {
  if (shots == 0) throw Error(ErrorKind::EmptySupportSet, "shots must be positive");
  const std::size_t k = ds.prompts.num_classes();
  std::vector<std::vector<std::size_t>> by_class(k);
  for (std::size_t i = 0; i < ds.samples.size(); ++i) by_class.at(ds.samples[i].label).push_back(i);

  Rng rng = Rng::stream(seed, "split");
  SupportSplit split;
  std::vector<bool> chosen(ds.samples.size(), false);
  for (std::size_t c = 0; c < k; ++c) {
    auto& idx = by_class[c];
    if (idx.size() < shots) {
      throw Error(ErrorKind::InsufficientSamples, "class " + std::to_string(c) + " has " +
                                                      std::to_string(idx.size()) + " samples < " +
                                                      std::to_string(shots) + " shots");
    }
    rng.shuffle(std::span<std::size_t>(idx));
    for (std::size_t s = 0; s < shots; ++s) {
      split.support.push_back(idx[s]);
      chosen[idx[s]] = true;
    }
  }
  for (std::size_t i = 0; i < ds.samples.size(); ++i) {
    if (!chosen[i]) split.held_out.push_back(i);
  }
  return split;
}

AdapterModel initial_model(const EmbeddingDataset& ds, const TrainConfig& cfg) {
  cfg.validate();
  if (cfg.rank > ds.dim) throw Error(ErrorKind::InvalidConfig, "rank exceeds embedding dim");
  Rng rng = Rng::stream(cfg.seed, "init");
  return AdapterModel::init(ds.dim, cfg.rank, cfg.dropout_p, rng);
}

double support_tss_std(const EmbeddingDataset& ds, const AdapterModel& model, const std::vector<std::size_t>& indices) {
  if (!ds.prompts.template_embedding) throw Error(ErrorKind::MissingPromptBank, "no template embedding");
  if (indices.empty()) throw Error(ErrorKind::EmptyInput, "no samples");
  const auto t0 = apply_adapter(model.text, *ds.prompts.template_embedding, false, nullptr);
  std::vector<double> v;
  v.reserve(indices.size());
  for (std::size_t i : indices) v.push_back(tss(apply_adapter(model.visual, ds.samples.at(i).embedding, false, nullptr), t0));
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

namespace {

std::vector<Embedding> selected_empties(const EmbeddingDataset& ds, const TrainConfig& cfg) {
  const auto& all = ds.prompts.empty_prompt_embeddings;
  if (all.empty()) throw Error(ErrorKind::MissingPromptBank, "no empty-prompt embeddings");
  if (!cfg.empty_count) return all;
  if (*cfg.empty_count > all.size()) {
    throw Error(ErrorKind::KTooLarge, "empty_count " + std::to_string(*cfg.empty_count) + " > " +
                                          std::to_string(all.size()) + " available");
  }
  return {all.begin(), all.begin() + static_cast<std::ptrdiff_t>(*cfg.empty_count)};
}

void sgd_step(LowRankAdapter& a, const AdapterGrads& g, double lr) {
  auto step = [lr](std::span<double> w, std::span<const double> dw) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * dw[i];
  };
  step(a.down.flat(), g.down.flat());
  step(a.up.flat(), g.up.flat());
}

struct Forward {
  std::vector<AdapterTrace> traces;
  std::vector<Embedding> outputs;
};

Forward forward_all(const LowRankAdapter& a, std::span<const Embedding> in, Rng& rng) {
  Forward f;
  f.traces.reserve(in.size());
  f.outputs.reserve(in.size());
  for (const auto& e : in) {
    f.traces.push_back(adapter_forward(a, e, true, &rng));
    f.outputs.push_back(f.traces.back().output);
  }
  return f;
}

void backward_all(const LowRankAdapter& a, const Forward& f, const Matrix& grads, AdapterGrads& acc) {
  for (std::size_t i = 0; i < f.traces.size(); ++i) adapter_backward(a, f.traces[i], grads.row(i), acc);
}

void fill_eval(LogRecord& rec, const EmbeddingDataset& ds, const SupportSplit& split, const AdapterModel& model,
               const TrainConfig& cfg) {
  const auto& eval_idx = split.held_out.empty() ? split.support : split.held_out;
  ReportOptions opts;
  opts.bin_size = cfg.log_bin_size;
  opts.mode = cfg.prompt_mode;
  opts.subset = eval_idx;
  const auto adapted = adapt_dataset(ds, model);
  if (adapted.prompts.template_embedding && eval_idx.size() >= cfg.log_bin_size) {
    const auto rep = bias_report(adapted, opts);
    rec.pearson = rep.pearson;
    rec.raw_pearson = rep.raw_pearson;
    rec.accuracy = rep.accuracy;
  } else {
    const auto preds = predict_with(adapted.sample_embeddings(eval_idx), class_embeddings(adapted.prompts, cfg.prompt_mode));
    std::vector<std::size_t> labels;
    for (std::size_t i : eval_idx) labels.push_back(ds.samples[i].label);
    rec.accuracy = accuracy(preds, labels);
  }
  if (ds.prompts.template_embedding) rec.support_tss_std = support_tss_std(ds, model, split.support);
}

}  // namespace

StepResult step_gradients(const AdapterModel& model, const BatchInputs& in, const TrainConfig& cfg, double tau,
                          bool fine, Rng& drop_rng, Rng& empty_rng) {
  const bool calibrate = !in.empties.empty();
  const Forward fv = forward_all(model.visual, in.samples, drop_rng);
  Forward ev;
  if (calibrate) ev = forward_all(model.text, in.empties, empty_rng);
  Forward pv;
  if (fine) pv = forward_all(model.text, in.prompts, drop_rng);
  Forward sv;
  const bool over_support = calibrate && !in.support.empty();
  if (over_support) sv = forward_all(model.visual, in.support, drop_rng);

  LossValue cal;
  if (calibrate) {
    const auto& targets = over_support ? sv.outputs : fv.outputs;
    const TrainMode m = fine ? cfg.mode : TrainMode::Ours;
    if (m == TrainMode::Ours) cal = template_bias_loss(ev.outputs, targets, tau);
    else cal = mean_similarity_loss(ev.outputs, targets, m == TrainMode::PullCloser ? -1.0 : 1.0);
    if (over_support) {
      cal.grads["support"] = std::move(cal.grads.at("samples"));
      cal.grads.erase("samples");
    }
    if (!cfg.tb_updates_text) cal.grads.erase("empties");
  }

  StepResult out(model);
  if (fine) {
    LossValue ce = classification_loss(fv.outputs, pv.outputs, in.labels, tau);
    out.ce = ce.value;
    out.loss = calibrate ? fine_tune_loss(ce, cal, cfg.alpha) : std::move(ce);
  } else {
    if (!calibrate) throw Error(ErrorKind::MissingPromptBank, "pretraining needs empty prompts");
    out.loss = cal;
  }
  out.tb = calibrate ? cal.value : 0.0;

  auto& g = out.loss.grads;
  if (auto it = g.find("samples"); it != g.end()) backward_all(model.visual, fv, it->second, out.visual);
  if (auto it = g.find("support"); it != g.end()) backward_all(model.visual, sv, it->second, out.visual);
  if (auto it = g.find("classes"); it != g.end()) backward_all(model.text, pv, it->second, out.text);
  if (auto it = g.find("empties"); it != g.end()) backward_all(model.text, ev, it->second, out.text);
  return out;
}

namespace {

TrainResult run_stage(const EmbeddingDataset& ds, const SupportSplit& split, AdapterModel model,
                      const TrainConfig& cfg, bool fine, std::size_t offset) {
  cfg.validate();
  if (split.support.empty()) throw Error(ErrorKind::EmptySupportSet, "no support samples");
  const double tau = cfg.tau(ds);
  const std::string label = fine ? "finetune" : "pretrain";
  const std::size_t total = (fine ? cfg.finetune_iters_per_shot : cfg.pretrain_iters_per_shot) * cfg.shots;
  const bool calibrate = !fine || cfg.mode != TrainMode::CeOnly;

  const auto support = ds.sample_embeddings(split.support);
  std::vector<std::size_t> support_labels;
  for (std::size_t i : split.support) support_labels.push_back(ds.samples[i].label);
  const auto empties = calibrate ? selected_empties(ds, cfg) : std::vector<Embedding>{};
  const auto prompts = fine ? class_embeddings(ds.prompts, cfg.prompt_mode) : std::vector<Embedding>{};

  Rng batch_rng = Rng::stream(cfg.seed, label + "/batches");
  Rng drop_rng = Rng::stream(cfg.seed, label + "/dropout");
  Rng empty_rng = Rng::stream(cfg.seed, label + "/empty-dropout");

  const std::size_t n = support.size();
  const std::size_t b = std::min(cfg.batch_size, n);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  batch_rng.shuffle(std::span<std::size_t>(order));
  std::size_t pos = 0;

  TrainResult result;
  result.log.total_iterations = total;
  const double base = cfg.base_lr();

  for (std::size_t it = 0; it < total; ++it) {
    const double lr = cosine_lr(base, it, total);
    std::vector<Embedding> batch;
    std::vector<std::size_t> batch_labels;
    for (std::size_t j = 0; j < b; ++j) {
      if (pos == n) {
        batch_rng.shuffle(std::span<std::size_t>(order));
        pos = 0;
      }
      batch.push_back(support[order[pos]]);
      batch_labels.push_back(support_labels[order[pos]]);
      ++pos;
    }

    BatchInputs in;
    in.samples = batch;
    in.labels = batch_labels;
    in.prompts = prompts;
    in.empties = empties;
    if (calibrate && cfg.tb_over_support) in.support = support;
    StepResult step = step_gradients(model, in, cfg, tau, fine, drop_rng, empty_rng);
    LogRecord rec;
    rec.loss = step.loss.value;
    rec.ce = step.ce;
    rec.tb = step.tb;
    sgd_step(model.visual, step.visual, lr);
    sgd_step(model.text, step.text, lr);

    if ((it + 1) % cfg.log_interval == 0 || it + 1 == total) {
      rec.iteration = offset + it + 1;
      rec.stage = label;
      rec.lr = lr;
      fill_eval(rec, ds, split, model, cfg);
      result.log.append(std::move(rec));
    }
  }
  result.model = std::move(model);
  return result;
}

}  // namespace

TrainResult pretrain(const EmbeddingDataset& ds, const SupportSplit& split, AdapterModel model,
                     const TrainConfig& cfg, std::size_t iteration_offset) {
  return run_stage(ds, split, std::move(model), cfg, false, iteration_offset);
}

TrainResult finetune(const EmbeddingDataset& ds, const SupportSplit& split, AdapterModel model,
                     const TrainConfig& cfg, std::size_t iteration_offset) {
  return run_stage(ds, split, std::move(model), cfg, true, iteration_offset);
}

TrainResult run_two_stage(const EmbeddingDataset& ds, const SupportSplit& split, const TrainConfig& cfg) {
  TrainResult out;
  out.model = initial_model(ds, cfg);
  const bool do_pretrain =
      cfg.stage == Stage::Pretrain || (cfg.stage == Stage::Both && cfg.mode == TrainMode::Ours);
  std::size_t offset = 0;
  if (do_pretrain) {
    auto r = pretrain(ds, split, std::move(out.model), cfg, offset);
    out.model = std::move(r.model);
    out.log.extend(r.log);
    offset += r.log.total_iterations;
  }
  if (cfg.stage != Stage::Pretrain) {
    auto r = finetune(ds, split, std::move(out.model), cfg, offset);
    out.model = std::move(r.model);
    out.log.extend(r.log);
  }
  return out;
}

}  // namespace debias
