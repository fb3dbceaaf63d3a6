#pragma once

// Shared helpers for the unit and acceptance tests.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <string>
#include <vector>

#include "debias/embeddings.hpp"
#include "debias/matrix.hpp"
#include "debias/rng.hpp"

namespace testing {

inline std::uint64_t fnv1a(const std::vector<char>& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : bytes) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::vector<char> slurp(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline std::uint64_t file_hash(const std::filesystem::path& p) { return fnv1a(slurp(p)); }

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("debias_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline debias::Embedding random_unit(debias::Rng& rng, std::size_t d) {
  std::vector<double> v(d);
  for (double& x : v) x = rng.normal();
  return debias::normalize(v);
}

inline std::vector<debias::Embedding> random_units(debias::Rng& rng, std::size_t n, std::size_t d) {
  std::vector<debias::Embedding> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(random_unit(rng, d));
  return out;
}

/// Embedding with one coordinate nudged; the norm drifts by at most |h|.
inline debias::Embedding nudged(const debias::Embedding& e, std::size_t j, double h) {
  std::vector<double> v(e.values().begin(), e.values().end());
  v[j] += h;
  return debias::Embedding::from_unit(std::move(v), 1e-2);
}

/// ‖a − b‖ / max(‖a‖, ‖b‖), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double scale = std::sqrt(std::max(na, nb));
  return scale < 1e-300 ? 0.0 : std::sqrt(diff) / scale;
}

/// Central differences of f with respect to the rows of a list of embeddings.
inline std::vector<double> fd_embeddings(std::vector<debias::Embedding> xs,
                                         const std::function<double(const std::vector<debias::Embedding>&)>& f,
                                         double h = 1e-4) {
  std::vector<double> out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const auto orig = xs[i];
    for (std::size_t j = 0; j < orig.dim(); ++j) {
      xs[i] = nudged(orig, j, h);
      const double up = f(xs);
      xs[i] = nudged(orig, j, -h);
      const double down = f(xs);
      out.push_back((up - down) / (2.0 * h));
    }
    xs[i] = orig;
  }
  return out;
}

/// Central differences with respect to every entry of a matrix reached via `param`.
inline std::vector<double> fd_matrix(debias::Matrix& param, const std::function<double()>& f, double h = 1e-4) {
  std::vector<double> out;
  for (double& w : param.flat()) {
    const double orig = w;
    w = orig + h;
    const double up = f();
    w = orig - h;
    const double down = f();
    w = orig;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

inline std::vector<double> flat(const debias::Matrix& m) { return {m.flat().begin(), m.flat().end()}; }

}  // namespace testing
