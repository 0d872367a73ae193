#pragma once

#include <cmath>
#include <functional>
#include <string>

namespace sngd {

/// Analytic 1-D system with a known cost and metric, used to check sampler
/// stationary distributions against quadrature.
struct Toy1D {
  std::string name;
  std::function<double(double)> cost;
  std::function<double(double)> cost_grad;
  std::function<double(double)> metric;
  std::function<double(double)> metric_grad;
};

/// C = u^2/2 with the flat metric g = 1.
inline Toy1D gaussian_toy() {
  return Toy1D{
      "gaussian_flat",
      [](double u) { return 0.5 * u * u; },
      [](double u) { return u; },
      [](double) { return 1.0; },
      [](double) { return 0.0; },
  };
}

/// C = u^2/2 with g = e^{2u}; the Jeffreys-biased stationary density is
/// normal(1, 1), the flat one normal(0, 1).
inline Toy1D exp_metric_toy() {
  return Toy1D{
      "exp_metric",
      [](double u) { return 0.5 * u * u; },
      [](double u) { return u; },
      [](double u) { return std::exp(2.0 * u); },
      [](double u) { return 2.0 * std::exp(2.0 * u); },
  };
}

/// C = u^2/2 with the slowly varying metric g = 1 + u^2.
inline Toy1D polynomial_metric_toy() {
  return Toy1D{
      "polynomial_metric",
      [](double u) { return 0.5 * u * u; },
      [](double u) { return u; },
      [](double u) { return 1.0 + u * u; },
      [](double u) { return 2.0 * u; },
  };
}

}  // namespace sngd
