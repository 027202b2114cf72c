#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "changeflow/grid.hpp"
#include "changeflow/nn/tensor.hpp"
#include "changeflow/rng.hpp"

namespace testing {

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("changeflow_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline changeflow::BinaryMask random_mask(int h, int w, double p, changeflow::Rng& rng) {
  std::bernoulli_distribution coin(p);
  changeflow::BinaryMask m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.set(y, x, coin(rng));
  return m;
}

template <typename T>
void fill_random(changeflow::nn::Matrix<T>& m, changeflow::Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> d(0.0, scale);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(d(rng));
}

/// Largest relative error between an analytic gradient and central
/// differences of `loss` with respect to `values`, over `probes` entries
/// (all entries when probes <= 0). Relative error uses max(|a|, |n|, floor).
inline double max_fd_error(changeflow::nn::Matrix<double>& values, const changeflow::nn::Matrix<double>& analytic,
                           const std::function<double()>& loss, int probes, changeflow::Rng& rng,
                           double h = 1e-5, double floor = 1e-6) {
  const Eigen::Index n = values.size();
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
  const Eigen::Index count = probes <= 0 ? n : std::min<Eigen::Index>(probes, n);
  double worst = 0.0;
  for (Eigen::Index k = 0; k < count; ++k) {
    const Eigen::Index i = probes <= 0 ? k : pick(rng);
    const double saved = values.data()[i];
    values.data()[i] = saved + h;
    const double up = loss();
    values.data()[i] = saved - h;
    const double down = loss();
    values.data()[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double a = analytic.data()[i];
    const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace testing
