#include <doctest.h>

#include <cmath>
#include <fstream>

#include "debias/adapter.hpp"
#include "debias/errors.hpp"
#include "support.hpp"

using namespace debias;

TEST_CASE("zero-initialized adapter is an exact identity") {
  Rng rng(1);
  const auto a = LowRankAdapter::init(16, 2, 0.25, rng);
  for (double b : a.up.flat()) CHECK(b == 0.0);
  for (int t = 0; t < 10; ++t) {
    const auto e = testing::random_unit(rng, 16);
    CHECK(apply_adapter(a, e, false, nullptr) == e);
    Rng drop(t);
    CHECK(apply_adapter(a, e, true, &drop) == e);
  }
}

TEST_CASE("B·A = I doubles then renormalizes") {
  auto a = LowRankAdapter::zeros(3, 3, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    a.down(i, i) = 1.0;
    a.up(i, i) = 1.0;
  }
  const auto e = normalize(std::vector<double>{1, 2, 3});
  const auto out = apply_adapter(a, e, false, nullptr);
  for (std::size_t i = 0; i < 3; ++i) CHECK(std::abs(out[i] - e[i]) <= 1e-15);
}

TEST_CASE("eval-mode adapter matches a scalar matrix-vector oracle") {
  Rng rng(2);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = 4 + rng.below(12);
    const std::size_t r = 1 + rng.below(3);
    auto a = LowRankAdapter::init(d, r, 0.25, rng);
    for (double& b : a.up.flat()) b = rng.normal() * 0.5;
    const auto e = testing::random_unit(rng, d);
    std::vector<double> u(d);
    for (std::size_t i = 0; i < d; ++i) {
      double delta = 0.0;
      for (std::size_t k = 0; k < r; ++k) {
        double h = 0.0;
        for (std::size_t j = 0; j < d; ++j) h += a.down(k, j) * e[j];
        delta += a.up(i, k) * h;
      }
      u[i] = e[i] + delta;
    }
    double n = 0.0;
    for (double x : u) n += x * x;
    n = std::sqrt(n);
    const auto out = apply_adapter(a, e, false, nullptr);
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(out[i] - u[i] / n) <= 1e-12);
  }
}

TEST_CASE("dropout zeroes and rescales inputs, reproducibly") {
  Rng rng(3);
  auto a = LowRankAdapter::init(32, 2, 0.5, rng);
  const auto e = testing::random_unit(rng, 32);
  Rng d1(9), d2(9);
  const auto t1 = adapter_forward(a, e, true, &d1);
  const auto t2 = adapter_forward(a, e, true, &d2);
  CHECK(t1.input == t2.input);
  std::size_t zeros = 0;
  for (std::size_t j = 0; j < 32; ++j) {
    if (t1.input[j] == 0.0) ++zeros;
    else CHECK(t1.input[j] == doctest::Approx(2.0 * e[j]));
  }
  CHECK(zeros > 0);
  CHECK(zeros < 32);
  CHECK_THROWS_AS(adapter_forward(a, e, true, nullptr), Error);
  CHECK_THROWS_AS(apply_adapter(a, normalize(std::vector<double>{1, 0}), false, nullptr), Error);
}

TEST_CASE("adapter backward matches finite differences through dropout") {
  Rng rng(4);
  for (int t = 0; t < 10; ++t) {
    const std::size_t d = 6 + rng.below(8);
    auto a = LowRankAdapter::init(d, 2, 0.25, rng);
    for (double& b : a.up.flat()) b = rng.normal() * 0.3;
    const auto e = testing::random_unit(rng, d);
    std::vector<double> w(d);
    for (double& x : w) x = rng.normal();
    const std::uint64_t mask_seed = rng.next_u64();
    auto loss = [&]() {
      Rng m(mask_seed);
      const auto y = apply_adapter(a, e, true, &m);
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += w[i] * y[i];
      return s;
    };
    Rng m(mask_seed);
    const auto trace = adapter_forward(a, e, true, &m);
    AdapterGrads g(a);
    adapter_backward(a, trace, w, g);
    CHECK(testing::relative_error(testing::flat(g.down), testing::fd_matrix(a.down, loss)) <= 1e-4);
    CHECK(testing::relative_error(testing::flat(g.up), testing::fd_matrix(a.up, loss)) <= 1e-4);
  }
}

TEST_CASE("checkpoint round trip") {
  const auto dir = testing::scratch("ckpt");
  Rng rng(5);
  Checkpoint ck;
  ck.model = AdapterModel::init(8, 2, 0.25, rng);
  for (double& b : ck.model.visual.up.flat()) b = rng.normal();
  ck.seed = 42;
  ck.config_json = R"({"alpha":2})";
  save_checkpoint(ck, dir / "a.json");
  const auto back = load_checkpoint(dir / "a.json");
  CHECK(back.seed == 42);
  CHECK(back.config_json == R"({"alpha":2})");
  CHECK(back.model.visual.rank == 2);
  CHECK(back.model.visual.dropout_p == 0.25);
  for (std::size_t i = 0; i < ck.model.visual.up.flat().size(); ++i) {
    CHECK(back.model.visual.up.flat()[i] == static_cast<double>(static_cast<float>(ck.model.visual.up.flat()[i])));
  }
  save_checkpoint(back, dir / "b.json");
  CHECK(testing::file_hash(dir / "a.bin") == testing::file_hash(dir / "b.bin"));
  CHECK(load_checkpoint(dir / "b.json").model == back.model);

  std::ofstream(dir / "bad.json") << R"({"format":"debias.embeddings","version":1})";
  try {
    load_checkpoint(dir / "bad.json");
    FAIL("expected FormatError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FormatError);
  }
  try {
    load_checkpoint(dir / "missing.json");
    FAIL("expected IoError");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::IoError);
  }
}

TEST_CASE("adapt_dataset leaves the source untouched") {
  EmbeddingDataset ds;
  ds.dim = 4;
  ds.prompts.class_names = {"a", "b"};
  ds.samples.push_back({normalize(std::vector<double>{1, 2, 3, 4}), 0, "x"});
  ds.prompts.template_embedding = normalize(std::vector<double>{0, 0, 0, 1});
  Rng rng(6);
  auto m = AdapterModel::init(4, 2, 0.0, rng);
  for (double& b : m.visual.up.flat()) b = 1.0;
  const auto copy = ds.samples[0].embedding;
  const auto adapted = adapt_dataset(ds, m);
  CHECK(ds.samples[0].embedding == copy);
  CHECK_FALSE(adapted.samples[0].embedding == copy);
  CHECK(*adapted.prompts.template_embedding == *ds.prompts.template_embedding);
}
