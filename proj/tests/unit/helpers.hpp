#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "rfv/core/convnet.hpp"
#include "rfv/core/rng.hpp"

namespace rfv::test {

template <typename S> Matrix<S> random_images(const ImageShape &shape, int n, Rng &rng) {
  std::uniform_real_distribution<double> u(0.05, 0.95);
  Matrix<S> m(static_cast<Eigen::Index>(shape.size()), n);
  for (Eigen::Index i = 0; i < m.size(); ++i)
    m.data()[i] = static_cast<S>(u(rng));
  return m;
}

inline LabeledImage random_image(const ImageShape &shape, Rng &rng, int identity = 0) {
  LabeledImage img;
  img.shape = shape;
  img.identity = identity;
  img.pixels.resize(shape.size());
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  for (auto &v : img.pixels)
    v = u(rng);
  return img;
}

/// Central differences of f over the entries of `x` listed in `coords`.
template <typename S>
std::vector<double> central_differences(const std::function<double()> &f, S *x, const std::vector<std::size_t> &coords,
                                        double h) {
  std::vector<double> out;
  for (auto c : coords) {
    const S keep = x[c];
    x[c] = static_cast<S>(keep + h);
    const double plus = f();
    x[c] = static_cast<S>(keep - h);
    const double minus = f();
    x[c] = keep;
    out.push_back((plus - minus) / (2.0 * h));
  }
  return out;
}

/// ||a - b|| / max(||a||, ||b||, tiny).
inline double relative_error(const std::vector<double> &a, const std::vector<double> &b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), 1e-30});
}

inline std::vector<std::size_t> sample_coords(std::size_t n, std::size_t k, Rng &rng) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < k; ++i)
    out.push_back(static_cast<std::size_t>(std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)));
  return out;
}

} // namespace rfv::test
