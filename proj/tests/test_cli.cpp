#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "debias/adapter.hpp"
#include "debias/synth.hpp"
#include "support.hpp"

using namespace debias;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(const fs::path& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + DEBIAS_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  const auto o = testing::slurp(out), e = testing::slurp(err);
  int code = status;
#ifdef WEXITSTATUS
  code = WEXITSTATUS(status);
#endif
  return {code, {o.begin(), o.end()}, {e.begin(), e.end()}};
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

// Small config so the CLI tests stay quick.
fs::path quick_config(const fs::path& dir) {
  const auto p = dir / "quick.json";
  std::ofstream(p) << R"({"shots": 2, "pretrain_iters_per_shot": 20, "finetune_iters_per_shot": 30, "log_interval": 10, "log_bin_size": 10})";
  return p;
}

fs::path small_data(const fs::path& dir) {
  const auto data = dir / "d.json";
  REQUIRE(cli(dir, "synth --samples-per-class 20 --seed 2 --out " + q(data)).code == 0);
  return data;
}

}  // namespace

TEST_CASE("cli synth writes dataset and run manifest") {
  const auto dir = testing::scratch("cli_synth");
  const auto r = cli(dir, "synth --out " + q(dir / "a.json"));
  CHECK(r.code == 0);
  CHECK(fs::exists(dir / "a.json"));
  CHECK(fs::exists(dir / "a.bin"));
  CHECK(fs::file_size(dir / "a.bin") > 0);
  const auto ds = load_dataset(dir / "a.json");
  CHECK(ds.samples.size() == 2000);
  std::ifstream runs(dir / "runs.jsonl");
  std::string line;
  REQUIRE(std::getline(runs, line));
  CHECK(json::parse(line)["command"] == "synth");

  CHECK(cli(dir, "synth --seed 9 --out " + q(dir / "b.json")).code == 0);
  CHECK(cli(dir, "synth --seed 9 --out " + q(dir / "c.json")).code == 0);
  CHECK(testing::file_hash(dir / "b.bin") == testing::file_hash(dir / "c.bin"));
  CHECK(testing::file_hash(dir / "b.bin") != testing::file_hash(dir / "a.bin"));
}

TEST_CASE("cli synth rejects a too small dim") {
  const auto dir = testing::scratch("cli_dim");
  const auto r = cli(dir, "synth --dim 5 --out " + q(dir / "x.json"));
  CHECK(r.code != 0);
  CHECK(r.err.find("DimensionTooSmall") != std::string::npos);
}

TEST_CASE("cli analyze") {
  const auto dir = testing::scratch("cli_analyze");
  const auto data = small_data(dir);
  const auto r = cli(dir, "analyze --data " + q(data) + " --out " + q(dir / "rep.json") + " --csv " + q(dir / "bins.csv"));
  REQUIRE(r.code == 0);
  const auto rep = read_json(dir / "rep.json");
  CHECK(rep.contains("pearson"));
  CHECK(rep["pearson"].is_number());
  CHECK(rep["bins"].size() == 4);
  CHECK(fs::exists(dir / "bins.csv"));

  SynthConfig sc;
  sc.samples_per_class = 1;
  auto tiny = generate(sc);
  save_dataset(tiny, dir / "tiny.json");
  const auto r1 = cli(dir, "analyze --data " + q(dir / "tiny.json") + " --bin-size 1 --out " + q(dir / "tiny_rep.json"));
  REQUIRE(r1.code == 0);
  CHECK(read_json(dir / "tiny_rep.json")["bins"].size() == 10);

  tiny.prompts.full_prompt_banks.clear();
  tiny.prompts.templates.clear();
  save_dataset(tiny, dir / "nobank.json");
  const auto r2 = cli(dir, "analyze --data " + q(dir / "nobank.json"));
  CHECK(r2.code == 2);
  CHECK(r2.err.find("MissingPromptBank") != std::string::npos);

  const auto r3 = cli(dir, "analyze --data " + q(dir / "missing.json"));
  CHECK(r3.code != 0);
}

TEST_CASE("cli train then eval") {
  const auto dir = testing::scratch("cli_train");
  const auto data = small_data(dir);
  const auto cfg = quick_config(dir);
  const auto r = cli(dir, "train --data " + q(data) + " --config " + q(cfg) + " --out " + q(dir / "ck.json"));
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "ck.log.jsonl"));
  const auto summary = json::parse(r.out);
  CHECK(summary["iterations"] == 100);
  const auto ck = load_checkpoint(dir / "ck.json");
  CHECK(ck.seed == 0);

  const auto e = cli(dir, "eval --data " + q(data) + " --checkpoint " + q(dir / "ck.json") +
                              " --held-out --bin-size 10 --out " + q(dir / "ev.json"));
  REQUIRE(e.code == 0);
  const auto ev = read_json(dir / "ev.json");
  CHECK(ev["accuracy"] == summary["held_out"]["accuracy"]);
  CHECK(ev["pearson"] == summary["held_out"]["pearson"]);

  const auto again = cli(dir, "train --data " + q(data) + " --config " + q(cfg) + " --out " + q(dir / "ck2.json"));
  REQUIRE(again.code == 0);
  CHECK(testing::file_hash(dir / "ck.bin") == testing::file_hash(dir / "ck2.bin"));
  CHECK(testing::file_hash(dir / "ck.log.jsonl") == testing::file_hash(dir / "ck2.log.jsonl"));

  const auto missing = cli(dir, "eval --data " + q(data) + " --checkpoint " + q(dir / "nope.json"));
  CHECK(missing.code == 2);
  CHECK(missing.err.find("IoError") != std::string::npos);
}

TEST_CASE("cli alpha 0 with ours equals ce_only") {
  const auto dir = testing::scratch("cli_alpha");
  const auto data = small_data(dir);
  const auto cfg = quick_config(dir);
  const std::string base = "train --data " + q(data) + " --config " + q(cfg) + " --stage finetune ";
  REQUIRE(cli(dir, base + "--alpha 0 --mode ours --out " + q(dir / "a.json")).code == 0);
  REQUIRE(cli(dir, base + "--mode ce_only --out " + q(dir / "b.json")).code == 0);
  CHECK(testing::file_hash(dir / "a.bin") == testing::file_hash(dir / "b.bin"));
  CHECK(load_checkpoint(dir / "a.json").model == load_checkpoint(dir / "b.json").model);
}

TEST_CASE("cli eval of an identity checkpoint matches analyze") {
  const auto dir = testing::scratch("cli_identity");
  const auto data = small_data(dir);
  const auto ds = load_dataset(data);
  Checkpoint ck{{LowRankAdapter::zeros(ds.dim, 2, 0.25), LowRankAdapter::zeros(ds.dim, 2, 0.25)}, 0, "{}"};
  save_checkpoint(ck, dir / "id.json");
  REQUIRE(cli(dir, "analyze --data " + q(data) + " --out " + q(dir / "an.json")).code == 0);
  REQUIRE(cli(dir, "eval --data " + q(data) + " --checkpoint " + q(dir / "id.json") + " --out " + q(dir / "ev.json"))
              .code == 0);
  auto an = read_json(dir / "an.json");
  auto ev = read_json(dir / "ev.json");
  ev.erase("checkpoint");
  CHECK(an == ev);
}

TEST_CASE("cli sweep") {
  const auto dir = testing::scratch("cli_sweep");
  const auto data = small_data(dir);
  const auto cfg = quick_config(dir);
  const auto r = cli(dir, "sweep --data " + q(data) + " --config " + q(cfg) + " --counts 1,25 --seeds 0,1 --bin-size 10 --out " +
                              q(dir / "sw.json"));
  REQUIRE(r.code == 0);
  const auto sw = read_json(dir / "sw.json");
  CHECK(sw.dump().find("empty_count") != std::string::npos);
}

TEST_CASE("cli usage errors exit nonzero") {
  const auto dir = testing::scratch("cli_usage");
  CHECK(cli(dir, "").code != 0);
  CHECK(cli(dir, "train --data " + q(small_data(dir)) + " --mode sideways").code == 2);
}
