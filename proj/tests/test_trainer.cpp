#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "debias/calibration_loss.hpp"
#include "debias/errors.hpp"
#include "debias/synth.hpp"
#include "debias/trainer.hpp"
#include "support.hpp"

using namespace debias;

namespace {

const EmbeddingDataset& small_ds() {
  static const EmbeddingDataset ds = [] {
    SynthConfig c;
    c.samples_per_class = 40;
    c.seed = 7;
    return generate(c);
  }();
  return ds;
}

TrainConfig quick(TrainMode mode = TrainMode::Ours) {
  TrainConfig cfg;
  cfg.mode = mode;
  cfg.shots = 2;
  cfg.pretrain_iters_per_shot = 40;
  cfg.finetune_iters_per_shot = 60;
  cfg.log_interval = 20;
  cfg.log_bin_size = 20;
  cfg.seed = 3;
  return cfg;
}

double support_tb(const EmbeddingDataset& ds, const AdapterModel& m, const SupportSplit& split, double tau) {
  const auto samples = apply_all(m.visual, ds.sample_embeddings(split.support));
  const auto empties = apply_all(m.text, ds.prompts.empty_prompt_embeddings);
  return template_bias_loss(empties, samples, tau).value;
}

bool same_data(const EmbeddingDataset& a, const EmbeddingDataset& b) {
  if (a.samples.size() != b.samples.size()) return false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    if (!(a.samples[i].embedding == b.samples[i].embedding)) return false;
  }
  return a.prompts.full_prompt_banks == b.prompts.full_prompt_banks &&
         a.prompts.empty_prompt_embeddings == b.prompts.empty_prompt_embeddings &&
         a.prompts.template_embedding == b.prompts.template_embedding;
}

}  // namespace

TEST_CASE("cosine_lr endpoints") {
  CHECK(cosine_lr(0.1, 0, 100) == 0.1);
  CHECK(cosine_lr(0.1, 50, 100) == doctest::Approx(0.05));
  CHECK(std::abs(cosine_lr(0.1, 100, 100)) <= 1e-17);
  CHECK(cosine_lr(0.1, 99, 100) < cosine_lr(0.1, 98, 100));
}

TEST_CASE("few_shot_split") {
  const auto& ds = small_ds();
  const auto s = few_shot_split(ds, 3, 11);
  CHECK(s.support.size() == 30);
  CHECK(s.held_out.size() == ds.samples.size() - 30);
  std::vector<int> per_class(10, 0);
  std::vector<bool> seen(ds.samples.size(), false);
  for (std::size_t i : s.support) {
    ++per_class[ds.samples[i].label];
    seen[i] = true;
  }
  for (int c : per_class) CHECK(c == 3);
  for (std::size_t i : s.held_out) {
    CHECK_FALSE(seen[i]);
    seen[i] = true;
  }
  CHECK(std::all_of(seen.begin(), seen.end(), [](bool b) { return b; }));
  CHECK(few_shot_split(ds, 3, 11).support == s.support);
  CHECK_FALSE(few_shot_split(ds, 3, 12).support == s.support);
  CHECK_THROWS_AS(few_shot_split(ds, 0, 1), Error);
  CHECK_THROWS_AS(few_shot_split(ds, 41, 1), Error);
}

TEST_CASE("pretraining lowers the calibration loss and ignores alpha") {
  const auto& ds = small_ds();
  auto cfg = quick();
  cfg.shots = 1;
  cfg.pretrain_iters_per_shot = 100;
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto init = initial_model(ds, cfg);
  const auto r = pretrain(ds, split, init, cfg);
  CHECK(support_tb(ds, r.model, split, ds.temperature) < support_tb(ds, init, split, ds.temperature));
  const auto& recs = r.log.records();
  REQUIRE(recs.size() == 5);
  CHECK(recs.back().tb < recs.front().tb);

  auto other = cfg;
  other.alpha = 5.0;
  CHECK(pretrain(ds, split, init, other).model == r.model);
  auto zero = cfg;
  zero.alpha = 0.0;
  CHECK(pretrain(ds, split, init, zero).model == r.model);

  SupportSplit empty;
  CHECK_THROWS_AS(pretrain(ds, empty, init, cfg), Error);
}

TEST_CASE("fixed seed reproduces parameters and logs") {
  const auto& ds = small_ds();
  const auto cfg = quick();
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto a = run_two_stage(ds, split, cfg);
  const auto b = run_two_stage(ds, split, cfg);
  CHECK(a.model == b.model);
  CHECK(a.log.to_jsonl() == b.log.to_jsonl());
  auto other = cfg;
  other.seed = 4;
  CHECK_FALSE(run_two_stage(ds, split, other).model == a.model);
}

TEST_CASE("two-stage run equals manual staging") {
  const auto& ds = small_ds();
  const auto cfg = quick();
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto whole = run_two_stage(ds, split, cfg);
  const auto p = pretrain(ds, split, initial_model(ds, cfg), cfg);
  const auto f = finetune(ds, split, p.model, cfg, p.log.total_iterations);
  CHECK(whole.model == f.model);
  TrainLog joined;
  joined.extend(p.log);
  joined.extend(f.log);
  CHECK(whole.log.to_jsonl() == joined.to_jsonl());
  CHECK(whole.log.total_iterations == (40 + 60) * 2);
  CHECK(whole.log.records().back().iteration == (40 + 60) * 2);
}

TEST_CASE("alpha = 0 with ours equals ce_only in finetuning") {
  const auto& ds = small_ds();
  auto ours = quick(TrainMode::Ours);
  ours.alpha = 0.0;
  const auto ce = quick(TrainMode::CeOnly);
  const auto split = few_shot_split(ds, ours.shots, ours.seed);
  const auto init = initial_model(ds, ours);
  const auto a = finetune(ds, split, init, ours);
  const auto b = finetune(ds, split, init, ce);
  CHECK(a.model == b.model);
  ours.stage = Stage::Finetune;
  auto ce_stage = ce;
  ce_stage.stage = Stage::Finetune;
  CHECK(run_two_stage(ds, split, ours).model == run_two_stage(ds, split, ce_stage).model);
}

TEST_CASE("4-shot finetuning fits the support set") {
  const auto& ds = small_ds();
  TrainConfig cfg;  // default schedule
  cfg.shots = 4;
  cfg.log_interval = 1000;
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto r = run_two_stage(ds, split, cfg);
  const auto adapted = adapt_dataset(ds, r.model);
  const auto preds = predict_with(adapted.sample_embeddings(split.support),
                                  class_embeddings(adapted.prompts, PredictMode::FullPrompt));
  std::vector<std::size_t> labels;
  for (std::size_t i : split.support) labels.push_back(ds.samples[i].label);
  CHECK(accuracy(preds, labels) == 1.0);
}

TEST_CASE("training never touches the dataset") {
  const auto before = small_ds();
  const auto cfg = quick();
  const auto split = few_shot_split(small_ds(), cfg.shots, cfg.seed);
  run_two_stage(small_ds(), split, cfg);
  CHECK(same_data(before, small_ds()));
}

TEST_CASE("default schedule runs (300 + 500) x shots iterations") {
  const auto& ds = small_ds();
  TrainConfig cfg;
  cfg.shots = 1;
  cfg.log_interval = 400;
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  const auto r = run_two_stage(ds, split, cfg);
  CHECK(r.log.total_iterations == 800);
  CHECK(r.log.records().back().iteration == 800);
  CHECK(r.log.records().front().stage == "pretrain");
  CHECK(r.log.records().back().stage == "finetune");
}

TEST_CASE("baseline modes skip pretraining and ablations differ") {
  const auto& ds = small_ds();
  const auto split = few_shot_split(ds, 2, 3);
  auto ce = quick(TrainMode::CeOnly);
  const auto r = run_two_stage(ds, split, ce);
  CHECK(r.log.records().front().stage == "finetune");
  CHECK(r.log.total_iterations == 120);
  const auto pull = run_two_stage(ds, split, quick(TrainMode::PullCloser));
  const auto push = run_two_stage(ds, split, quick(TrainMode::PushAway));
  CHECK_FALSE(pull.model == push.model);
  CHECK_FALSE(pull.model == r.model);
}

TEST_CASE("empty_count limits the calibration prompts") {
  const auto& ds = small_ds();
  auto cfg = quick();
  const auto split = few_shot_split(ds, cfg.shots, cfg.seed);
  cfg.empty_count = 1;
  const auto one = run_two_stage(ds, split, cfg);
  cfg.empty_count = 25;
  const auto all = run_two_stage(ds, split, cfg);
  CHECK(all.model == run_two_stage(ds, split, quick()).model);
  CHECK_FALSE(one.model == all.model);
  cfg.empty_count = 26;
  CHECK_THROWS_AS(run_two_stage(ds, split, cfg), Error);
}

TEST_CASE("step gradients match finite differences") {
  const auto& ds = small_ds();
  Rng rng(31);
  const std::vector<std::size_t> picks{0, 40, 80, 120, 160, 200};
  const auto support = ds.sample_embeddings(picks);
  std::vector<std::size_t> labels;
  for (std::size_t i : picks) labels.push_back(ds.samples[i].label);
  const auto prompts = ds.prompts.full_prompt_banks[0];
  const std::vector<Embedding> empties(ds.prompts.empty_prompt_embeddings.begin(),
                                       ds.prompts.empty_prompt_embeddings.begin() + 3);
  for (TrainMode mode : {TrainMode::Ours, TrainMode::CeOnly, TrainMode::PullCloser, TrainMode::PushAway}) {
    for (bool fine : {false, true}) {
      if (!fine && mode != TrainMode::Ours) continue;
      TrainConfig cfg;
      cfg.mode = mode;
      cfg.tb_updates_text = true;
      auto model = AdapterModel::init(ds.dim, 2, 0.25, rng);
      for (double& b : model.visual.up.flat()) b = rng.normal() * 0.2;
      for (double& b : model.text.up.flat()) b = rng.normal() * 0.2;
      BatchInputs in;
      in.samples = support;
      in.labels = labels;
      if (fine) in.prompts = prompts;
      if (!fine || mode != TrainMode::CeOnly) in.empties = empties;
      const std::uint64_t s1 = rng.next_u64(), s2 = rng.next_u64();
      const double tau = 0.1;
      auto value = [&]() {
        Rng a(s1), b(s2);
        return step_gradients(model, in, cfg, tau, fine, a, b).loss.value;
      };
      Rng a(s1), b(s2);
      const auto step = step_gradients(model, in, cfg, tau, fine, a, b);
      CHECK(testing::relative_error(testing::flat(step.visual.down), testing::fd_matrix(model.visual.down, value)) <= 1e-4);
      CHECK(testing::relative_error(testing::flat(step.visual.up), testing::fd_matrix(model.visual.up, value)) <= 1e-4);
      CHECK(testing::relative_error(testing::flat(step.text.down), testing::fd_matrix(model.text.down, value)) <= 1e-4);
      CHECK(testing::relative_error(testing::flat(step.text.up), testing::fd_matrix(model.text.up, value)) <= 1e-4);
    }
  }
}

TEST_CASE("TrainLog and config plumbing") {
  TrainLog log;
  log.append({.iteration = 1});
  CHECK_THROWS_AS(log.append({.iteration = 1}), Error);
  log.append({.iteration = 5});
  CHECK(log.to_jsonl().find("\"iteration\":5") != std::string::npos);

  TrainConfig cfg;
  cfg.alpha = 0.5;
  cfg.mode = TrainMode::PushAway;
  cfg.temperature = 0.07;
  cfg.empty_count = 5;
  const auto back = config_from_json(config_to_json(cfg));
  CHECK(config_to_json(back) == config_to_json(cfg));
  CHECK(back.mode == TrainMode::PushAway);
  CHECK(*back.temperature == 0.07);

  const auto overlay = config_from_json(R"({"shots": 8})", cfg);
  CHECK(overlay.shots == 8);
  CHECK(overlay.alpha == 0.5);
  try {
    config_from_json(R"({"typo": 1})");
    FAIL("expected InvalidConfig");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidConfig);
  }
  TrainConfig neg;
  neg.alpha = -1;
  CHECK_THROWS_AS(neg.validate(), Error);
}
