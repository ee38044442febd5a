#include "hbip/problems.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace hbip {

static_assert(std::endian::native == std::endian::little,
              "sidecar files are written in host order, which must be little-endian");

NoiseRule parseNoiseRule(std::string_view name) {
  if (name == "per_component") return NoiseRule::PerComponent;
  if (name == "total") return NoiseRule::Total;
  throw std::invalid_argument("unknown noise rule '" + std::string(name) +
                              "' (expected per_component or total)");
}

std::string_view toString(NoiseRule rule) {
  return rule == NoiseRule::PerComponent ? "per_component" : "total";
}

namespace {

nlohmann::json priorJson(const HyperPrior& p) {
  return {{"alpha_mu", p.alpha_mu},
          {"beta_mu", p.beta_mu},
          {"alpha_sigma", p.alpha_sigma},
          {"beta_sigma", p.beta_sigma}};
}

HyperPrior priorFromJson(const nlohmann::json& j) {
  return {j.at("alpha_mu").get<double>(), j.at("beta_mu").get<double>(),
          j.at("alpha_sigma").get<double>(), j.at("beta_sigma").get<double>()};
}

/// The noise level is relative to `reference`, normally the clean data itself.
Vector addNoise(const Vector& clean, const Vector& reference, double fraction, NoiseRule rule,
                std::uint64_t seed) {
  if (fraction < 0.0) throw std::invalid_argument("noise fraction must be non-negative");
  if (fraction == 0.0) return clean;
  double var = fraction * fraction * reference.squaredNorm();
  if (rule == NoiseRule::PerComponent) var /= static_cast<double>(clean.size());
  Rng rng(seed);
  return clean + std::sqrt(var) * standardNormal(clean.size(), rng);
}

double gaussianBump(double t, double center, double width) {
  const double u = (t - center) / width;
  return std::exp(-0.5 * u * u);
}

struct Operators {
  std::shared_ptr<const LinearMap> forward;
  std::shared_ptr<const PriorFactor> factor;
  Vector x_true;
};

Operators deblurOperators(const Deblur1dOptions& o) {
  if (o.n < 8) throw std::invalid_argument("deblur1d: n must be at least 8");
  const Index m = o.m < 0 ? o.n : o.m;
  Operators ops;
  ops.forward = conv1dMap(Kernel1d{Kernel1d::Shape::Gaussian, o.kernel_width}, o.n, m);
  ops.factor = laplacian1dFactor(o.n);
  ops.x_true = deblurTruth(o.n);
  return ops;
}

Operators heatOperators(const Heat2dOptions& o) {
  if (o.cells_x < 8 || o.cells_y < 4) throw std::invalid_argument("heat2d: grid must be at least 8x4");
  Grid2d grid{o.cells_x, o.cells_y};
  Operators ops;
  ops.forward = heat2dMap(grid, o.kappa, o.final_time, o.steps, observationSubgrid(grid, o.observations));
  ops.factor = biharmonic2dFactor(grid);
  ops.x_true = o.zero_truth ? Vector::Zero(grid.size()) : heatTruth(grid);
  return ops;
}

Operators denseOperators(const DenseOptions& o, Rng& rng) {
  if (o.n < 1 || o.m < 1) throw std::invalid_argument("dense: sizes must be positive");
  std::normal_distribution<double> normal;
  Matrix a(o.m, o.n);
  for (Index j = 0; j < o.n; ++j)
    for (Index i = 0; i < o.m; ++i) a(i, j) = normal(rng) / std::sqrt(static_cast<double>(o.n));
  Matrix l = Matrix::Identity(o.n, o.n);
  for (Index j = 0; j < o.n; ++j)
    for (Index i = 0; i < j; ++i) l(i, j) = 0.3 * normal(rng);
  for (Index i = 0; i < o.n; ++i) l(i, i) = 1.0 + 0.5 * std::abs(normal(rng));
  Operators ops;
  ops.forward = denseMap(std::move(a));
  ops.factor = std::make_shared<DenseFactor>(std::move(l));
  ops.x_true = standardNormal(o.n, rng);
  return ops;
}

nlohmann::json denseParams(const DenseOptions& o) {
  return {{"n", o.n},
          {"m", o.m},
          {"noise_sd", o.noise_sd},
          {"seed", o.seed},
          {"prior", priorJson(o.prior)}};
}

DenseOptions denseFromJson(const nlohmann::json& j) {
  DenseOptions o;
  o.n = j.at("n").get<Index>();
  o.m = j.at("m").get<Index>();
  o.noise_sd = j.at("noise_sd").get<double>();
  o.seed = j.at("seed").get<std::uint64_t>();
  o.prior = priorFromJson(j.at("prior"));
  return o;
}

nlohmann::json deblurParams(const Deblur1dOptions& o) {
  return {{"n", o.n},
          {"m", o.m < 0 ? o.n : o.m},
          {"kernel_width", o.kernel_width},
          {"noise_fraction", o.noise_fraction},
          {"noise_rule", toString(o.noise_rule)},
          {"seed", o.seed},
          {"prior", priorJson(o.prior)}};
}

nlohmann::json heatParams(const Heat2dOptions& o) {
  return {{"cells_x", o.cells_x},
          {"cells_y", o.cells_y},
          {"kappa", o.kappa},
          {"final_time", o.final_time},
          {"steps", o.steps},
          {"observations", o.observations},
          {"noise_fraction", o.noise_fraction},
          {"noise_rule", toString(o.noise_rule)},
          {"seed", o.seed},
          {"prior", priorJson(o.prior)},
          {"zero_truth", o.zero_truth}};
}

Deblur1dOptions deblurFromJson(const nlohmann::json& j) {
  Deblur1dOptions o;
  o.n = j.at("n").get<Index>();
  o.m = j.at("m").get<Index>();
  o.kernel_width = j.at("kernel_width").get<double>();
  o.noise_fraction = j.at("noise_fraction").get<double>();
  o.noise_rule = parseNoiseRule(j.at("noise_rule").get<std::string>());
  o.seed = j.at("seed").get<std::uint64_t>();
  o.prior = priorFromJson(j.at("prior"));
  return o;
}

Heat2dOptions heatFromJson(const nlohmann::json& j) {
  Heat2dOptions o;
  o.cells_x = j.at("cells_x").get<Index>();
  o.cells_y = j.at("cells_y").get<Index>();
  o.kappa = j.at("kappa").get<double>();
  o.final_time = j.at("final_time").get<double>();
  o.steps = j.at("steps").get<int>();
  o.observations = j.at("observations").get<Index>();
  o.noise_fraction = j.at("noise_fraction").get<double>();
  o.noise_rule = parseNoiseRule(j.at("noise_rule").get<std::string>());
  o.seed = j.at("seed").get<std::uint64_t>();
  o.prior = priorFromJson(j.at("prior"));
  o.zero_truth = j.at("zero_truth").get<bool>();
  return o;
}

ProblemInstance assemble(std::string kind, Operators ops, Vector b, double fraction,
                         std::uint64_t seed, const HyperPrior& prior, nlohmann::json params) {
  ModelContext ctx(ops.forward, ops.factor, std::move(b), prior);
  return ProblemInstance{std::move(kind), std::move(ctx), std::move(ops.x_true), fraction, seed,
                         std::move(params)};
}

}  // namespace

Vector deblurTruth(Index n) {
  Vector x(n);
  for (Index i = 0; i < n; ++i) {
    const double t = (static_cast<double>(i) + 0.5) / static_cast<double>(n);
    double v = 0.8 * gaussianBump(t, 0.22, 0.05) + 0.5 * gaussianBump(t, 0.42, 0.03);
    if (t >= 0.6 && t <= 0.85) v += 0.6;
    x(i) = v;
  }
  return x;
}

Vector heatTruth(const Grid2d& grid) {
  Vector x(grid.size());
  for (Index j = 0; j < grid.ny(); ++j)
    for (Index i = 0; i < grid.nx(); ++i) {
      const double px = static_cast<double>(i + 1) * grid.hx();
      const double py = static_cast<double>(j + 1) * grid.hy();
      const double r1 = (px - 0.6) * (px - 0.6) + (py - 0.5) * (py - 0.5);
      const double r2 = (px - 1.4) * (px - 1.4) + (py - 0.5) * (py - 0.5);
      const double w2 = 2.0 * 0.15 * 0.15;
      x(grid.index(i, j)) = std::exp(-r1 / w2) + std::exp(-r2 / w2);
    }
  return x;
}

std::vector<Index> observationSubgrid(const Grid2d& grid, Index count) {
  if (count < 1) throw std::invalid_argument("observation count must be positive");
  if (count > grid.size()) {
    throw std::invalid_argument("observation count " + std::to_string(count) +
                                " exceeds the " + std::to_string(grid.size()) + " interior nodes");
  }
  const double aspect = static_cast<double>(grid.nx()) / static_cast<double>(grid.ny());
  Index best_x = 0, best_y = 0;
  double best = std::numeric_limits<double>::infinity();
  for (Index oy = 1; oy <= grid.ny(); ++oy) {
    if (count % oy != 0) continue;
    const Index ox = count / oy;
    if (ox > grid.nx()) continue;
    const double mismatch = std::abs(std::log(static_cast<double>(ox) / oy / aspect));
    if (mismatch < best) {
      best = mismatch;
      best_x = ox;
      best_y = oy;
    }
  }
  if (best_x == 0) {
    throw std::invalid_argument("observation count " + std::to_string(count) +
                                " does not factor into a sub-grid of the interior nodes");
  }
  auto place = [](Index a, Index count_a, Index nodes) {
    // Centre of the a-th of count_a equal strips, rounded to a node.
    const double pos = (static_cast<double>(a) + 0.5) * static_cast<double>(nodes) /
                       static_cast<double>(count_a) - 0.5;
    return std::clamp<Index>(static_cast<Index>(std::lround(pos)), 0, nodes - 1);
  };
  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(count));
  for (Index b = 0; b < best_y; ++b)
    for (Index a = 0; a < best_x; ++a)
      out.push_back(grid.index(place(a, best_x, grid.nx()), place(b, best_y, grid.ny())));
  return out;
}

ProblemInstance deblur1d(const Deblur1dOptions& options) {
  Operators ops = deblurOperators(options);
  const Vector clean = ops.forward->apply(ops.x_true);
  Vector b = addNoise(clean, clean, options.noise_fraction, options.noise_rule, options.seed);
  return assemble("deblur1d", std::move(ops), std::move(b), options.noise_fraction, options.seed,
                  options.prior, deblurParams(options));
}

ProblemInstance heat2d(const Heat2dOptions& options) {
  Operators ops = heatOperators(options);
  const Vector clean = ops.forward->apply(ops.x_true);
  // A zero initial state still gets the noise level of the nominal bump pattern.
  const Vector reference =
      options.zero_truth ? ops.forward->apply(heatTruth(Grid2d{options.cells_x, options.cells_y}))
                         : clean;
  Vector b = addNoise(clean, reference, options.noise_fraction, options.noise_rule, options.seed);
  return assemble("heat2d", std::move(ops), std::move(b), options.noise_fraction, options.seed,
                  options.prior, heatParams(options));
}

ProblemInstance denseRandom(const DenseOptions& options) {
  if (options.noise_sd < 0.0) throw std::invalid_argument("dense: noise_sd must be non-negative");
  Rng rng(options.seed);
  Operators ops = denseOperators(options, rng);
  Vector b = ops.forward->apply(ops.x_true) + options.noise_sd * standardNormal(options.m, rng);
  return assemble("dense", std::move(ops), std::move(b), options.noise_sd, options.seed,
                  options.prior, denseParams(options));
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kVecMagic[8] = {'H', 'B', 'I', 'P', 'V', 'E', 'C', '1'};
}

void writeVectors(const std::filesystem::path& path, const std::vector<Vector>& vectors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(kVecMagic, sizeof(kVecMagic));
  const std::uint64_t count = vectors.size();
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  for (const Vector& v : vectors) {
    const std::uint64_t len = static_cast<std::uint64_t>(v.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(reinterpret_cast<const char*>(v.data()),
              static_cast<std::streamsize>(sizeof(double) * len));
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::vector<Vector> readVectors(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  char magic[8];
  std::uint64_t count = 0;
  in.read(magic, sizeof(magic));
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  if (!in || std::memcmp(magic, kVecMagic, sizeof(kVecMagic)) != 0) {
    throw std::runtime_error(path.string() + ": not a vector sidecar");
  }
  std::vector<Vector> out;
  for (std::uint64_t i = 0; i < count; ++i) {
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    if (!in || len > (1ULL << 34)) throw std::runtime_error(path.string() + ": corrupt sidecar");
    Vector v(static_cast<Index>(len));
    in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(sizeof(double) * len));
    if (!in) throw std::runtime_error(path.string() + ": truncated sidecar");
    out.push_back(std::move(v));
  }
  return out;
}

void saveInstance(const ProblemInstance& instance, const std::filesystem::path& path) {
  std::filesystem::path sidecar = path;
  sidecar += ".bin";
  nlohmann::json j;
  j["kind"] = instance.kind;
  j["params"] = instance.params;
  j["seed"] = instance.seed;
  j["noise_fraction"] = instance.noise_fraction;
  j["sidecar"] = sidecar.filename().string();
  j["sidecar_vectors"] = {"b", "x_true"};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << j.dump(2) << '\n';
  writeVectors(sidecar, {instance.ctx.data(), instance.x_true});
}

ProblemInstance loadInstance(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const nlohmann::json j = nlohmann::json::parse(in);
  const std::string kind = j.at("kind").get<std::string>();
  const auto vectors = readVectors(path.parent_path() / j.at("sidecar").get<std::string>());
  if (vectors.size() != 2) throw std::runtime_error(path.string() + ": sidecar must hold b and x_true");
  const nlohmann::json& params = j.at("params");
  Operators ops;
  HyperPrior prior;
  if (kind == "deblur1d") {
    const auto o = deblurFromJson(params);
    ops = deblurOperators(o);
    prior = o.prior;
  } else if (kind == "heat2d") {
    const auto o = heatFromJson(params);
    ops = heatOperators(o);
    prior = o.prior;
  } else if (kind == "dense") {
    const auto o = denseFromJson(params);
    Rng rng(o.seed);
    ops = denseOperators(o, rng);
    prior = o.prior;
  } else {
    throw std::runtime_error(path.string() + ": unknown problem kind '" + kind + "'");
  }
  ops.x_true = vectors[1];
  return assemble(kind, std::move(ops), vectors[0], j.at("noise_fraction").get<double>(),
                  j.at("seed").get<std::uint64_t>(), prior, params);
}

}  // namespace hbip
