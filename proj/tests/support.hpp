#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <unistd.h>

#include "advdev/network.hpp"
#include "advdev/random.hpp"
#include "advdev/tensor.hpp"

namespace advdev::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

/// Logits = W x + b on an input of shape 1x1xn.
inline Model linear_model(const std::vector<std::vector<double>>& w, const std::vector<double>& b) {
  const std::size_t k = w.size(), n = w.at(0).size();
  ArchitectureSpec spec;
  spec.input_shape = {1, 1, n};
  spec.layers = {{DenseLayer{k}, true}};
  std::vector<double> flat;
  for (const auto& row : w) flat.insert(flat.end(), row.begin(), row.end());
  return Model(spec, {Tensor({k, n}, flat), Tensor({k}, b)});
}

inline Tensor column(const std::vector<double>& v) { return Tensor({1, 1, v.size()}, v); }

/// Fresh empty directory, unique per test.
inline std::filesystem::path scratch_dir() {
  const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
  const std::filesystem::path dir = std::filesystem::temp_directory_path() /
                                    (std::string("advdev_") + info->test_suite_name() + "_" +
                                     info->name() + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

/// Central difference of `f` at `x` in every coordinate.
template <class F>
std::vector<double> numeric_gradient(F&& f, Tensor x, double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double up = f(x);
    x[i] = keep - h;
    const double down = f(x);
    x[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Largest per-component error: relative where the reference is at least 1e-6,
/// else the absolute error times 100 (so a bound of 1e-6 allows 1e-8 absolute).
inline double gradient_error(std::span<const double> got, std::span<const double> want) {
  double worst = 0.0;
  for (std::size_t i = 0; i < want.size(); ++i) {
    const double diff = std::abs(got[i] - want[i]);
    const double err = std::abs(want[i]) < 1e-6 ? diff / 1e-2 : diff / std::abs(want[i]);
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace advdev::testing
