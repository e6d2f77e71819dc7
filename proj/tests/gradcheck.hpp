#pragma once

// Central finite-difference oracle for gradient tests. Independent of the
// backward closures: it only calls the forward function.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "minibert/ops.hpp"

namespace gradcheck {

using DTensor = minibert::ag::BasicTensor<double>;
using Fn = std::function<DTensor(const std::vector<DTensor>&)>;

struct Result {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Relative error |a-n| / max(|a|,|n|). When both magnitudes are below
// `floor` the pair is measured against `floor` instead (true zeros).
inline double rel_error(double analytic, double numeric, double floor = 1e-6) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

inline Result check(const Fn& f, std::vector<DTensor> inputs, double eps = 1e-3) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  DTensor loss = f(inputs);
  minibert::ag::backward(loss);
  Result result;
  for (auto& in : inputs) {
    const std::vector<double> analytic =
        in.has_grad() ? std::vector<double>(in.grad().begin(), in.grad().end())
                      : std::vector<double>(in.numel(), 0.0);
    auto values = in.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + eps;
      double up, down;
      {
        minibert::ag::NoGradGuard guard;
        up = f(inputs).item();
        values[i] = saved - eps;
        down = f(inputs).item();
      }
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      result.max_rel_error = std::max(result.max_rel_error, rel_error(analytic[i], numeric));
      ++result.checked;
    }
  }
  return result;
}

inline DTensor random_tensor(minibert::Rng& rng, minibert::ag::Shape shape, double scale = 1.0) {
  std::vector<double> v(minibert::ag::numel_of(shape));
  for (auto& x : v) x = (rng.uniform01() * 2.0 - 1.0) * scale;
  return DTensor::from(std::move(shape), std::move(v));
}

// sum(out * R) with a fixed random R, so every output entry carries a
// distinct weight (plain sum() would hide e.g. the softmax Jacobian).
inline DTensor project(const DTensor& out, std::uint64_t seed) {
  minibert::Rng rng(seed);
  auto weights = random_tensor(rng, out.shape());
  return minibert::ag::sum(minibert::ag::mul(out, weights));
}

}  // namespace gradcheck
