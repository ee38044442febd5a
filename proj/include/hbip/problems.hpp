#pragma once

#include "hbip/model.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hbip {

/// How `noise_fraction` f turns into a noise variance.
/// PerComponent: f^2 ||A x_true||^2 / M, so ||b - A x_true|| / ||A x_true|| is about f.
/// Total: f^2 ||A x_true||^2 for every component.
enum class NoiseRule { PerComponent, Total };

NoiseRule parseNoiseRule(std::string_view name);
std::string_view toString(NoiseRule rule);

struct Deblur1dOptions {
  Index n = 128;
  Index m = -1;  // observations; negative means m = n
  double kernel_width = 0.039;
  double noise_fraction = 0.02;
  NoiseRule noise_rule = NoiseRule::PerComponent;
  std::uint64_t seed = 1;
  HyperPrior prior;
};

struct Heat2dOptions {
  Index cells_x = 32;
  Index cells_y = 16;
  double kappa = 0.001;
  double final_time = 5.0;
  int steps = 50;
  Index observations = 128;
  double noise_fraction = 0.10;
  NoiseRule noise_rule = NoiseRule::PerComponent;
  std::uint64_t seed = 1;
  HyperPrior prior;
  /// x_true = 0, with the noise level the bump pattern would have had.
  bool zero_truth = false;
};

/// Small random dense instance: Gaussian A / sqrt(n), factor I + 0.3 strict
/// upper noise with a positive diagonal, x_true standard normal.
struct DenseOptions {
  Index n = 4;
  Index m = 4;
  double noise_sd = 0.5;
  std::uint64_t seed = 1;
  HyperPrior prior{2.0, 1.0, 2.0, 1.0};
};

struct ProblemInstance {
  std::string kind;  // "deblur1d", "heat2d" or "dense"
  ModelContext ctx;
  Vector x_true;
  double noise_fraction = 0.0;
  std::uint64_t seed = 0;
  /// Construction parameters, enough to rebuild the operators.
  nlohmann::json params;
};

/// Two Gaussian bumps and a boxcar on [0, 1], sampled at the cell midpoints.
Vector deblurTruth(Index n);
/// Bumps of width 0.15 at (0.6, 0.5) and (1.4, 0.5) on the interior nodes.
Vector heatTruth(const Grid2d& grid);
/// Uniform sub-grid of `count` interior nodes, with an aspect ratio close to the grid's.
std::vector<Index> observationSubgrid(const Grid2d& grid, Index count);

ProblemInstance deblur1d(const Deblur1dOptions& options);
ProblemInstance heat2d(const Heat2dOptions& options);
/// Noise is additive with standard deviation `noise_sd` (no relative rule).
ProblemInstance denseRandom(const DenseOptions& options);

/// Writes `path` (JSON: kind, params, seed, sidecar name) and
/// `path` + ".bin" holding b and x_true. Layout of the sidecar: 8-byte magic
/// "HBIPVEC1", uint64 vector count, then per vector uint64 length followed by
/// little-endian float64 values.
void saveInstance(const ProblemInstance& instance, const std::filesystem::path& path);
ProblemInstance loadInstance(const std::filesystem::path& path);

void writeVectors(const std::filesystem::path& path, const std::vector<Vector>& vectors);
std::vector<Vector> readVectors(const std::filesystem::path& path);

}  // namespace hbip
