// Command-line front end: synth | analyze | train | eval | sweep.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "debias/bias_analysis.hpp"
#include "debias/blob_io.hpp"
#include "debias/empty_prompts.hpp"
#include "debias/errors.hpp"
#include "debias/experiments.hpp"
#include "debias/synth.hpp"
#include "debias/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace debias;

namespace {

constexpr const char* kVersion = "0.1.0";

json opt_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json report_json(const BiasReport& r) {
  json bins = json::array();
  for (const auto& b : r.bins) bins.push_back({{"tss_mean", b.tss_mean}, {"accuracy", b.accuracy}, {"count", b.count}});
  json per_class = json::array();
  for (double a : r.per_class_accuracy) per_class.push_back(std::isnan(a) ? json(nullptr) : json(a));
  json j;
  j["samples"] = r.samples;
  j["accuracy"] = r.accuracy;
  j["pearson"] = opt_json(r.pearson);
  if (!r.pearson) j["pearson_error"] = r.pearson_error;
  j["raw_pearson"] = opt_json(r.raw_pearson);
  j["misclassification_ratio"] = opt_json(r.misclassification_ratio);
  j["per_class_accuracy"] = per_class;
  j["accuracy_variance"] = r.accuracy_variance;
  j["template_accuracies"] = r.template_accuracies;
  j["template_accuracy_variance"] = opt_json(r.template_accuracy_variance);
  j["tss_mean"] = r.tss_mean;
  j["tss_std"] = r.tss_std;
  j["bins"] = bins;
  return j;
}

void write_bins_csv(const BiasReport& r, const fs::path& path) {
  std::ostringstream s;
  s << "tss_mean,accuracy,count\n";
  s.precision(17);
  for (const auto& b : r.bins) s << b.tss_mean << ',' << b.accuracy << ',' << b.count << '\n';
  blob::write_text(path, s.str());
}

void emit(const json& j, const std::string& out) {
  if (out.empty() || out == "-") {
    std::cout << j.dump(2) << '\n';
  } else {
    blob::write_text(out, j.dump(2) + "\n");
  }
}

// One line per run, appended next to the primary output.
void append_run_manifest(const std::string& command, const json& config, const json& inputs, const json& outputs,
                         std::uint64_t seed, const fs::path& runs_path, double seconds) {
  json m;
  m["command"] = command;
  m["config"] = config;
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  m["seed"] = seed;
  m["version"] = kVersion;
  m["wall_clock_seconds"] = seconds;
  std::ofstream f(runs_path, std::ios::app);
  if (!f) throw Error(ErrorKind::IoError, "cannot append to " + runs_path.string());
  f << m.dump() << '\n';
}

fs::path runs_path_for(const std::string& out, const std::string& override_path) {
  if (!override_path.empty()) return override_path;
  if (out.empty() || out == "-") return "runs.jsonl";
  const auto dir = fs::path(out).parent_path();
  return dir.empty() ? fs::path("runs.jsonl") : dir / "runs.jsonl";
}

// Common flags shared by the data-consuming commands.
struct Common {
  std::string data;
  std::string out;
  std::string runs;
  std::uint64_t seed = 0;
  double temperature = 0.0;
  std::size_t bin_size = 50;
  std::string empty_vocab;
  std::size_t empty_count = 0;
  std::string config;
};

EmbeddingDataset load_with_overrides(const Common& c, CLI::App* sub) {
  auto ds = load_dataset(c.data);
  if (sub->count("--temperature") > 0) {
    if (!(c.temperature > 0.0)) throw Error(ErrorKind::NonPositiveTemperature, "--temperature must be positive");
    ds.temperature = c.temperature;
  }
  if (!c.empty_vocab.empty()) {
    auto vocab = load_vocabulary(c.empty_vocab);
    if (sub->count("--empty-count") > 0) vocab = vocab.truncated(c.empty_count);
    ds.prompts = with_empty_words(ds.prompts, vocab);
  }
  return ds;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Template-bias diagnosis and empty-prompt calibrated adapters"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common c;
  auto add_common = [&c](CLI::App* s, bool needs_data) {
    auto* d = s->add_option("--data", c.data, "Dataset manifest (JSON)");
    if (needs_data) d->required();
    s->add_option("--out", c.out, "Output path");
    s->add_option("--runs", c.runs, "Run manifest log (default: runs.jsonl next to --out)");
    s->add_option("--seed", c.seed, "Seed for all randomness");
    s->add_option("--temperature", c.temperature, "Softmax temperature override");
    s->add_option("--bin-size", c.bin_size, "Samples per TSS bin")->check(CLI::PositiveNumber);
    s->add_option("--empty-vocab", c.empty_vocab, "JSON list of empty words")->check(CLI::ExistingFile);
    s->add_option("--empty-count", c.empty_count, "Use the first n empty words")->check(CLI::PositiveNumber);
  };

  // synth
  SynthConfig sc;
  auto* synth = app.add_subcommand("synth", "Generate a planted-bias dataset");
  add_common(synth, false);
  synth->add_option("--dim", sc.dim);
  synth->add_option("--classes", sc.classes);
  synth->add_option("--samples-per-class", sc.samples_per_class);
  synth->add_option("--class-signal", sc.class_signal);
  synth->add_option("--class-noise", sc.class_noise);
  synth->add_option("--sample-noise", sc.sample_noise);
  synth->add_option("--bias-spread", sc.bias_spread);
  synth->add_option("--template-mix", sc.template_mix);
  synth->add_option("--empty-noise", sc.empty_noise);
  synth->add_option("--templates", sc.template_count);
  synth->add_option("--template-jitter", sc.template_jitter);

  // analyze
  std::string mode_name = "full_prompt";
  std::string csv_path;
  auto* analyze = app.add_subcommand("analyze", "Bias report for the raw embeddings");
  add_common(analyze, true);
  analyze->add_option("--mode", mode_name, "class_only | full_prompt | multi_template_mean");
  analyze->add_option("--csv", csv_path, "Also write the bins as CSV");

  // train
  std::string train_mode = "ours", stage_name = "both", log_path;
  double alpha = 2.0, lr = 0.0;
  std::size_t shots = 4;
  auto* train = app.add_subcommand("train", "Train adapters (two-stage schedule)");
  add_common(train, true);
  train->add_option("--config", c.config, "JSON TrainConfig overlay")->check(CLI::ExistingFile);
  train->add_option("--mode", train_mode, "ours | ce_only | pull_closer | push_away");
  train->add_option("--stage", stage_name, "pretrain | finetune | both");
  train->add_option("--alpha", alpha, "Weight of the calibration loss");
  train->add_option("--shots", shots, "Labeled samples per class");
  train->add_option("--lr", lr, "Base learning rate");
  train->add_option("--log", log_path, "TrainLog JSON-lines path (default: <out>.log.jsonl)");

  // eval
  std::string ckpt_path;
  bool held_out_only = false;
  auto* eval = app.add_subcommand("eval", "Score a checkpoint");
  add_common(eval, true);
  eval->add_option("--checkpoint", ckpt_path, "Checkpoint manifest")->required();
  eval->add_option("--mode", mode_name, "class_only | full_prompt | multi_template_mean");
  eval->add_flag("--held-out", held_out_only, "Only the samples outside the checkpoint's support split");

  // sweep
  std::vector<std::size_t> counts{1, 5, 10, 25};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  auto* sweep = app.add_subcommand("sweep", "Accuracy spread versus empty-prompt count");
  add_common(sweep, true);
  sweep->add_option("--config", c.config, "JSON TrainConfig overlay")->check(CLI::ExistingFile);
  sweep->add_option("--counts", counts, "Empty-prompt counts")->delimiter(',');
  sweep->add_option("--seeds", seeds, "Training seeds")->delimiter(',');
  sweep->add_option("--shots", shots, "Labeled samples per class");

  CLI11_PARSE(app, argc, argv);

  const auto t0 = std::chrono::steady_clock::now();
  auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };

  // flags > config file > defaults
  auto build_config = [&](CLI::App* sub) {
    TrainConfig cfg;
    if (!c.config.empty()) {
      const auto bytes = blob::read_file(c.config);
      cfg = config_from_json(std::string(bytes.begin(), bytes.end()), cfg);
    }
    if (sub->count("--seed") > 0) cfg.seed = c.seed;
    if (sub->count("--temperature") > 0) cfg.temperature = c.temperature;
    if (sub->count("--bin-size") > 0) cfg.log_bin_size = c.bin_size;
    if (sub->count("--empty-count") > 0 && c.empty_vocab.empty()) cfg.empty_count = c.empty_count;
    if (sub->count("--shots") > 0) cfg.shots = shots;
    if (sub->get_option_no_throw("--mode") != nullptr && sub->count("--mode") > 0) cfg.mode = parse_train_mode(train_mode);
    if (sub->get_option_no_throw("--stage") != nullptr && sub->count("--stage") > 0) cfg.stage = parse_stage(stage_name);
    if (sub->get_option_no_throw("--alpha") != nullptr && sub->count("--alpha") > 0) cfg.alpha = alpha;
    if (sub->get_option_no_throw("--lr") != nullptr && sub->count("--lr") > 0) cfg.lr = lr;
    cfg.validate();
    return cfg;
  };

  try {
    if (*synth) {
      if (synth->count("--seed") > 0) sc.seed = c.seed;
      if (synth->count("--temperature") > 0) sc.temperature = c.temperature;
      if (synth->count("--empty-count") > 0) sc.empty_count = c.empty_count;
      const std::string out = c.out.empty() ? "synth.json" : c.out;
      const auto ds = generate(sc);
      save_dataset(ds, out);
      json cfg = {{"dim", sc.dim},           {"classes", sc.classes},         {"samples_per_class", sc.samples_per_class},
                  {"class_signal", sc.class_signal}, {"class_noise", sc.class_noise}, {"sample_noise", sc.sample_noise},
                  {"bias_spread", sc.bias_spread},   {"template_mix", sc.template_mix}, {"empty_noise", sc.empty_noise},
                  {"empty_count", sc.empty_count},   {"templates", sc.template_count},  {"template_jitter", sc.template_jitter},
                  {"temperature", sc.temperature}};
      auto blob_path = fs::path(out).replace_extension(".bin");
      append_run_manifest("synth", cfg, json::array(), {out, blob_path.string()}, sc.seed, runs_path_for(out, c.runs),
                          elapsed());
      std::cout << "wrote " << out << " (" << ds.samples.size() << " samples)\n";
    } else if (*analyze) {
      const auto ds = load_with_overrides(c, analyze);
      ReportOptions opts;
      opts.bin_size = c.bin_size;
      opts.mode = parse_predict_mode(mode_name);
      const auto rep = bias_report(ds, opts);
      auto j = report_json(rep);
      j["mode"] = mode_name;
      j["bin_size"] = c.bin_size;
      emit(j, c.out);
      if (!csv_path.empty()) write_bins_csv(rep, csv_path);
      append_run_manifest("analyze", {{"mode", mode_name}, {"bin_size", c.bin_size}}, {c.data},
                          {c.out.empty() ? "-" : c.out}, c.seed, runs_path_for(c.out, c.runs), elapsed());
    } else if (*train) {
      const auto ds = load_with_overrides(c, train);
      const auto cfg = build_config(train);
      const std::string out = c.out.empty() ? "checkpoint.json" : c.out;
      const std::string log_out = log_path.empty() ? fs::path(out).replace_extension(".log.jsonl").string() : log_path;
      const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
      const auto result = run_two_stage(ds, split, cfg);
      save_checkpoint({result.model, cfg.seed, config_to_json(cfg)}, out);
      blob::write_text(log_out, result.log.to_jsonl());

      // Score what was saved, so eval on the checkpoint reproduces it.
      const auto saved = load_checkpoint(out);
      ReportOptions opts;
      opts.bin_size = cfg.log_bin_size;
      opts.mode = cfg.prompt_mode;
      opts.subset = split.held_out;
      json summary = {{"checkpoint", out}, {"log", log_out}, {"iterations", result.log.total_iterations}};
      try {
        summary["held_out"] = report_json(bias_report(ds, saved.model, opts));
      } catch (const Error& e) {
        summary["held_out_error"] = e.what();
      }
      std::cout << summary.dump(2) << '\n';
      append_run_manifest("train", json::parse(config_to_json(cfg)), {c.data}, {out, log_out}, cfg.seed,
                          runs_path_for(out, c.runs), elapsed());
    } else if (*eval) {
      const auto ds = load_with_overrides(c, eval);
      const auto ck = load_checkpoint(ckpt_path);
      ReportOptions opts;
      opts.bin_size = c.bin_size;
      opts.mode = parse_predict_mode(mode_name);
      if (held_out_only) {
        const auto cfg = config_from_json(ck.config_json);
        opts.subset = few_shot_split(ds, cfg.shots, cfg.seed).held_out;
      }
      auto j = report_json(bias_report(ds, ck.model, opts));
      j["mode"] = mode_name;
      j["bin_size"] = c.bin_size;
      j["checkpoint"] = ckpt_path;
      emit(j, c.out);
      append_run_manifest("eval", {{"mode", mode_name}, {"bin_size", c.bin_size}, {"held_out", held_out_only}},
                          {c.data, ckpt_path}, {c.out.empty() ? "-" : c.out}, ck.seed, runs_path_for(c.out, c.runs),
                          elapsed());
    } else if (*sweep) {
      const auto ds = load_with_overrides(c, sweep);
      const auto cfg = build_config(sweep);
      const auto rows = empty_count_sweep(ds, cfg, counts, seeds, c.bin_size);
      const auto text = sweep_to_json(rows);
      emit(json::parse(text), c.out);
      append_run_manifest("sweep", json::parse(config_to_json(cfg)), {c.data}, {c.out.empty() ? "-" : c.out},
                          cfg.seed, runs_path_for(c.out, c.runs), elapsed());
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: Internal: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
