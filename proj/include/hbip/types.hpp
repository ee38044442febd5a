#pragma once

#include <random>
#include <stdexcept>

namespace hbip {

using Rng = std::mt19937_64;

/// theta = (mu, sigma): noise precision and prior precision scale.
struct HyperState {
  double mu = 1.0;
  double sigma = 1.0;

  bool valid() const { return mu > 0.0 && sigma > 0.0; }
  void require() const {
    if (!valid()) throw std::invalid_argument("HyperState: mu and sigma must be positive");
  }
  friend bool operator==(const HyperState&, const HyperState&) = default;
};

/// Independent Gamma(shape, rate) hyperpriors on mu and sigma.
struct HyperPrior {
  double alpha_mu = 1.0;
  double beta_mu = 1e-4;
  double alpha_sigma = 1.0;
  double beta_sigma = 1e-4;

  bool valid() const {
    return alpha_mu > 0.0 && beta_mu > 0.0 && alpha_sigma > 0.0 && beta_sigma > 0.0;
  }
};

}  // namespace hbip
