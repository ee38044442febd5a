#include "hbip/runner.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

namespace hbip {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config reading

namespace {

std::string typeName(const json& v) { return v.type_name(); }

/// One JSON object of the config, tracking which keys were consumed so that
/// anything left over can be reported as unknown.
class Section {
 public:
  Section(const json* node, std::string path) : node_(node), path_(std::move(path)) {
    if (node_ && !node_->is_object()) {
      throw ConfigError(path_ + ": expected an object, got " + typeName(*node_));
    }
  }

  bool has(const std::string& key) const { return node_ && node_->contains(key); }
  std::string where(const std::string& key) const { return path_ + "." + key; }

  Section child(const std::string& key) {
    used_.insert(key);
    return Section(has(key) ? &node_->at(key) : nullptr, where(key));
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    used_.insert(key);
    if (!has(key)) return fallback;
    return convert<T>(node_->at(key), where(key));
  }

  template <class T>
  T require(const std::string& key) {
    if (!has(key)) throw ConfigError("missing required key '" + where(key) + "'");
    return get<T>(key, T{});
  }

  void finish() const {
    if (!node_) return;
    for (const auto& item : node_->items()) {
      if (!used_.count(item.key())) throw ConfigError("unknown key '" + where(item.key()) + "'");
    }
  }

  template <class T>
  static T convert(const json& v, const std::string& at) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(at + ": expected a boolean, got " + typeName(v));
      return v.get<bool>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(at + ": expected an integer, got " + typeName(v));
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_unsigned()) return v.get<T>();
        if (v.get<long long>() < 0) throw ConfigError(at + ": expected a non-negative integer");
      }
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(at + ": expected a number, got " + typeName(v));
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(at + ": expected a string, got " + typeName(v));
      return v.get<std::string>();
    } else {
      // std::vector of a scalar type
      if (!v.is_array()) throw ConfigError(at + ": expected an array, got " + typeName(v));
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], at + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  const json* node_;
  std::string path_;
  std::set<std::string> used_;
};

template <class F>
auto guarded(const std::string& at, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(at + ": " + e.what());
  }
}

void requireThat(bool ok, const std::string& at, const std::string& what) {
  if (!ok) throw ConfigError(at + ": " + what);
}

HyperPrior readPrior(Section s, HyperPrior p) {
  p.alpha_mu = s.get("alpha_mu", p.alpha_mu);
  p.beta_mu = s.get("beta_mu", p.beta_mu);
  p.alpha_sigma = s.get("alpha_sigma", p.alpha_sigma);
  p.beta_sigma = s.get("beta_sigma", p.beta_sigma);
  s.finish();
  requireThat(p.valid(), s.where("*"), "all hyperprior parameters must be positive");
  return p;
}

json priorToJson(const HyperPrior& p) {
  return {{"alpha_mu", p.alpha_mu},
          {"beta_mu", p.beta_mu},
          {"alpha_sigma", p.alpha_sigma},
          {"beta_sigma", p.beta_sigma}};
}

ProblemConfig readProblem(Section s) {
  ProblemConfig c;
  c.kind = s.require<std::string>("kind");
  if (c.kind == "deblur1d") {
    auto& o = c.deblur;
    o.n = s.get("n", o.n);
    o.m = s.get("m", o.m);
    o.kernel_width = s.get("kernel_width", o.kernel_width);
    o.noise_fraction = s.get("noise_fraction", o.noise_fraction);
    o.noise_rule = guarded(s.where("noise_rule"), [&] {
      return parseNoiseRule(s.get<std::string>("noise_rule", std::string(toString(o.noise_rule))));
    });
    o.seed = s.get("seed", o.seed);
    o.prior = readPrior(s.child("prior"), o.prior);
    requireThat(o.n >= 8, s.where("n"), "must be at least 8");
    requireThat(o.m != 0 && o.m >= -1, s.where("m"), "must be positive (or -1 for m = n)");
    requireThat(o.kernel_width > 0.0, s.where("kernel_width"), "must be positive");
    requireThat(o.noise_fraction >= 0.0, s.where("noise_fraction"), "must be non-negative");
  } else if (c.kind == "heat2d") {
    auto& o = c.heat;
    o.cells_x = s.get("cells_x", o.cells_x);
    o.cells_y = s.get("cells_y", o.cells_y);
    o.kappa = s.get("kappa", o.kappa);
    o.final_time = s.get("final_time", o.final_time);
    o.steps = s.get("steps", o.steps);
    o.observations = s.get("observations", o.observations);
    o.noise_fraction = s.get("noise_fraction", o.noise_fraction);
    o.noise_rule = guarded(s.where("noise_rule"), [&] {
      return parseNoiseRule(s.get<std::string>("noise_rule", std::string(toString(o.noise_rule))));
    });
    o.seed = s.get("seed", o.seed);
    o.prior = readPrior(s.child("prior"), o.prior);
    o.zero_truth = s.get("zero_truth", o.zero_truth);
    requireThat(o.cells_x >= 8 && o.cells_y >= 4, s.where("cells_x"), "grid must be at least 8x4");
    requireThat(o.kappa >= 0.0, s.where("kappa"), "must be non-negative");
    requireThat(o.final_time > 0.0, s.where("final_time"), "must be positive");
    requireThat(o.steps >= 1, s.where("steps"), "must be positive");
    const Index interior = (o.cells_x - 1) * (o.cells_y - 1);
    requireThat(o.observations >= 1 && o.observations <= interior, s.where("observations"),
                "must lie in [1, " + std::to_string(interior) + "]");
    requireThat(o.noise_fraction >= 0.0, s.where("noise_fraction"), "must be non-negative");
  } else if (c.kind == "dense") {
    auto& o = c.dense;
    o.n = s.get("n", o.n);
    o.m = s.get("m", o.m);
    o.noise_sd = s.get("noise_sd", o.noise_sd);
    o.seed = s.get("seed", o.seed);
    o.prior = readPrior(s.child("prior"), o.prior);
    requireThat(o.n >= 1 && o.m >= 1, s.where("n"), "sizes must be positive");
    requireThat(o.noise_sd >= 0.0, s.where("noise_sd"), "must be non-negative");
  } else {
    throw ConfigError(s.where("kind") + ": unknown problem '" + c.kind +
                      "' (expected deblur1d, heat2d or dense)");
  }
  s.finish();
  return c;
}

/// (N, M) of the configured problem.
std::pair<Index, Index> problemShape(const ProblemConfig& p) {
  if (p.kind == "deblur1d") return {p.deblur.n, p.deblur.m < 0 ? p.deblur.n : p.deblur.m};
  if (p.kind == "heat2d") {
    return {(p.heat.cells_x - 1) * (p.heat.cells_y - 1), p.heat.observations};
  }
  return {p.dense.n, p.dense.m};
}

Index defaultRank(const ProblemConfig& p) {
  const auto [n, m] = problemShape(p);
  if (p.kind == "deblur1d") return std::min<Index>(35, std::min(n, m));
  if (p.kind == "heat2d") return std::min<Index>(70, std::min(n, m));
  return std::min(n, m);
}

SurrogateConfig readSurrogate(Section s, const ProblemConfig& problem) {
  SurrogateConfig c;
  c.rank = s.get<Index>("rank", defaultRank(problem));
  auto& e = c.eig;
  e.method = guarded(s.where("method"), [&] {
    return parseEigMethod(s.get<std::string>("method", std::string(toString(e.method))));
  });
  e.oversampling = s.get("oversampling", e.oversampling);
  e.power_iterations = s.get("power_iterations", e.power_iterations);
  e.tail_rank = s.get("tail_rank", e.tail_rank);
  e.seed = s.get("seed", e.seed);
  e.tolerance = s.get("tolerance", e.tolerance);
  s.finish();
  const auto [n, m] = problemShape(problem);
  const Index top = std::min(n, m);
  requireThat(c.rank >= 1 && c.rank <= top, s.where("rank"),
              "must lie in [1, " + std::to_string(top) + "]");
  requireThat(e.oversampling >= 0, s.where("oversampling"), "must be non-negative");
  requireThat(e.power_iterations >= 0, s.where("power_iterations"), "must be non-negative");
  requireThat(e.tolerance > 0.0, s.where("tolerance"), "must be positive");
  return c;
}

SamplerConfig readSampler(Section s) {
  SamplerConfig c;
  c.kind = guarded(s.where("kind"), [&] { return parseSamplerKind(s.require<std::string>("kind")); });
  auto& o = c.options;
  o.iterations = s.require<long>("iterations");
  o.burnin = s.get("burnin", o.burnin);
  o.seed = s.get("seed", o.seed);
  o.importance_samples = s.get("importance_samples", o.importance_samples);
  o.x_stride = s.get("x_stride", o.x_stride);
  c.chains = s.get("chains", c.chains);
  const auto theta0 = s.get<std::vector<double>>("theta0", {o.theta0.mu, o.theta0.sigma});
  requireThat(theta0.size() == 2 && theta0[0] > 0.0 && theta0[1] > 0.0, s.where("theta0"),
              "expected [mu, sigma] with both entries positive");
  o.theta0 = {theta0[0], theta0[1]};
  Section p = s.child("proposal");
  auto& q = o.proposal;
  q.initial_var_mu = p.get("initial_var_mu", q.initial_var_mu);
  q.initial_var_sigma = p.get("initial_var_sigma", q.initial_var_sigma);
  q.adapt = p.get("adapt", q.adapt);
  q.adapt_start = p.get("adapt_start", q.adapt_start);
  q.scale = p.get("scale", q.scale);
  q.epsilon = p.get("epsilon", q.epsilon);
  p.finish();
  s.finish();
  requireThat(o.iterations >= 1, s.where("iterations"), "must be positive");
  requireThat(o.burnin < o.iterations, s.where("burnin"), "must be smaller than iterations");
  requireThat(o.importance_samples >= 1, s.where("importance_samples"), "must be at least 1");
  requireThat(o.x_stride >= 0, s.where("x_stride"), "must be non-negative");
  requireThat(c.chains >= 1, s.where("chains"), "must be at least 1");
  requireThat(q.initial_var_mu > 0.0 && q.initial_var_sigma > 0.0, p.where("initial_var_mu"),
              "initial variances must be positive");
  requireThat(q.adapt_start >= 2, p.where("adapt_start"), "must be at least 2");
  requireThat(q.scale > 0.0, p.where("scale"), "must be positive");
  requireThat(q.epsilon >= 0.0, p.where("epsilon"), "must be non-negative");
  return c;
}

SweepConfig readSweep(Section s) {
  SweepConfig c;
  c.ranks = s.get("ranks", c.ranks);
  c.importance_samples = s.get("k", c.importance_samples);
  c.sizes = s.get("n", c.sizes);
  s.finish();
  requireThat(!c.ranks.empty(), s.where("ranks"), "must not be empty");
  requireThat(!c.importance_samples.empty(), s.where("k"), "must not be empty");
  requireThat(!c.sizes.empty(), s.where("n"), "must not be empty");
  for (int k : c.importance_samples) requireThat(k >= 1, s.where("k"), "entries must be at least 1");
  for (Index n : c.sizes) requireThat(n >= 8, s.where("n"), "entries must be at least 8");
  return c;
}

}  // namespace

ExperimentConfig parseConfig(const json& document) {
  if (!document.is_object()) throw ConfigError("config: expected a JSON object at the top level");
  Section root(&document, "config");
  ExperimentConfig c;
  if (!document.contains("problem")) throw ConfigError("missing required key 'problem.kind'");
  c.problem = readProblem(Section(&document.at("problem"), "problem"));
  root.child("problem");
  const json* surrogate = document.contains("surrogate") ? &document.at("surrogate") : nullptr;
  c.surrogate = readSurrogate(Section(surrogate, "surrogate"), c.problem);
  root.child("surrogate");
  if (!document.contains("sampler")) throw ConfigError("missing required key 'sampler.kind'");
  c.sampler = readSampler(Section(&document.at("sampler"), "sampler"));
  root.child("sampler");
  const json* sweep = document.contains("sweep") ? &document.at("sweep") : nullptr;
  c.sweep = readSweep(Section(sweep, "sweep"));
  root.child("sweep");
  Section out = root.child("output");
  c.output_dir = out.get("dir", c.output_dir);
  out.finish();
  requireThat(!c.output_dir.empty(), "output.dir", "must not be empty");
  for (const auto& item : document.items()) {
    static const std::set<std::string> known{"problem", "surrogate", "sampler", "sweep", "output"};
    if (!known.count(item.key())) throw ConfigError("unknown section '" + item.key() + "'");
  }
  return c;
}

json toJson(const ExperimentConfig& c) {
  json problem{{"kind", c.problem.kind}};
  if (c.problem.kind == "deblur1d") {
    const auto& o = c.problem.deblur;
    problem.update({{"n", o.n},
                    {"m", o.m},
                    {"kernel_width", o.kernel_width},
                    {"noise_fraction", o.noise_fraction},
                    {"noise_rule", toString(o.noise_rule)},
                    {"seed", o.seed},
                    {"prior", priorToJson(o.prior)}});
  } else if (c.problem.kind == "heat2d") {
    const auto& o = c.problem.heat;
    problem.update({{"cells_x", o.cells_x},
                    {"cells_y", o.cells_y},
                    {"kappa", o.kappa},
                    {"final_time", o.final_time},
                    {"steps", o.steps},
                    {"observations", o.observations},
                    {"noise_fraction", o.noise_fraction},
                    {"noise_rule", toString(o.noise_rule)},
                    {"seed", o.seed},
                    {"prior", priorToJson(o.prior)},
                    {"zero_truth", o.zero_truth}});
  } else {
    const auto& o = c.problem.dense;
    problem.update({{"n", o.n},
                    {"m", o.m},
                    {"noise_sd", o.noise_sd},
                    {"seed", o.seed},
                    {"prior", priorToJson(o.prior)}});
  }
  const auto& e = c.surrogate.eig;
  const auto& o = c.sampler.options;
  const auto& q = o.proposal;
  return {{"problem", problem},
          {"surrogate",
           {{"rank", c.surrogate.rank},
            {"method", toString(e.method)},
            {"oversampling", e.oversampling},
            {"power_iterations", e.power_iterations},
            {"tail_rank", e.tail_rank},
            {"seed", e.seed},
            {"tolerance", e.tolerance}}},
          {"sampler",
           {{"kind", toString(c.sampler.kind)},
            {"iterations", o.iterations},
            {"burnin", o.burnin},
            {"seed", o.seed},
            {"chains", c.sampler.chains},
            {"importance_samples", o.importance_samples},
            {"x_stride", o.x_stride},
            {"theta0", {o.theta0.mu, o.theta0.sigma}},
            {"proposal",
             {{"initial_var_mu", q.initial_var_mu},
              {"initial_var_sigma", q.initial_var_sigma},
              {"adapt", q.adapt},
              {"adapt_start", q.adapt_start},
              {"scale", q.scale},
              {"epsilon", q.epsilon}}}}},
          {"sweep",
           {{"ranks", c.sweep.ranks}, {"k", c.sweep.importance_samples}, {"n", c.sweep.sizes}}},
          {"output", {{"dir", c.output_dir}}}};
}

json readConfigFile(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  try {
    return json::parse(in, nullptr, true, true);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void applyOverride(json& document, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "': expected key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  if (!document.is_object()) document = json::object();
  json* node = &document;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (part.empty()) throw ConfigError("override '" + assignment + "': empty key component");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      return;
    }
    json& next = (*node)[part];
    if (next.is_null()) next = json::object();
    if (!next.is_object()) {
      throw ConfigError("override '" + assignment + "': '" + key.substr(0, dot) +
                        "' is not a section");
    }
    node = &next;
    start = dot + 1;
  }
}

std::string configHash(const ExperimentConfig& config) {
  const std::string text = toJson(config).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

fs::path outputDirectory(const ExperimentConfig& config) {
  fs::path dir(config.output_dir);
  if (dir.is_relative()) {
    if (const char* root = std::getenv("HBIP_OUTPUT_ROOT"); root && *root) return fs::path(root) / dir;
  }
  return dir;
}

ProblemInstance buildProblem(const ProblemConfig& config) {
  if (config.kind == "deblur1d") return deblur1d(config.deblur);
  if (config.kind == "heat2d") return heat2d(config.heat);
  if (config.kind == "dense") return denseRandom(config.dense);
  throw ConfigError("problem.kind: unknown problem '" + config.kind + "'");
}

LowRankSurrogate buildSurrogate(const ProblemInstance& instance, const SurrogateConfig& config,
                                Index rank) {
  return truncatedEig(instance.ctx.forward(), instance.ctx.factor(), rank, config.eig);
}

// ---------------------------------------------------------------------------
// CSV helpers

namespace {

void putNumber(std::string& out, double v) {
  if (std::isnan(v)) {
    out += "nan";
    return;
  }
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  out.append(buf, r.ptr);
}

double parseNumber(std::string_view s, const fs::path& path, long line) {
  if (s == "nan") return NAN;
  double v = 0.0;
  const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": bad number '" +
                             std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> splitCsv(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? comma : comma - start));
    if (comma == std::string_view::npos) return out;
    start = comma + 1;
  }
}

void writeFile(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << content;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

struct Provenance {
  std::string config_hash;
  std::uint64_t seed = 0;
  std::map<std::string, std::string> fields;

  std::string line() const {
    std::string s = "# hbip config_hash=" + config_hash + " seed=" + std::to_string(seed);
    for (const auto& [k, v] : fields) s += " " + k + "=" + v;
    return s + "\n";
  }
};

Provenance parseProvenance(const std::string& line) {
  Provenance p;
  std::istringstream in(line.substr(1));
  std::string token;
  while (in >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = token.substr(0, eq), value = token.substr(eq + 1);
    if (key == "config_hash") {
      p.config_hash = value;
    } else if (key == "seed") {
      p.seed = std::stoull(value);
    } else {
      p.fields[key] = value;
    }
  }
  return p;
}

Provenance runProvenance(const ExperimentConfig& config) {
  return Provenance{configHash(config), config.sampler.options.seed, {}};
}

json stamped(const ExperimentConfig& config, json body) {
  body["config_hash"] = configHash(config);
  body["seed"] = config.sampler.options.seed;
  body["config"] = toJson(config);
  return body;
}

bool needsSurrogate(SamplerKind kind) {
  return kind == SamplerKind::Aob || kind == SamplerKind::Abda ||
         kind == SamplerKind::PseudoMarginal;
}

double safeIact(const std::vector<double>& s) {
  try {
    return iact(s);
  } catch (const DegenerateSeries&) {
    return NAN;
  }
}

json ledgerJson(const CostLedger& l) {
  return {{"forward", l.forward},
          {"adjoint", l.adjoint},
          {"factor_apply", l.factor_apply},
          {"factor_solve", l.factor_solve},
          {"full_posterior", l.full_posterior},
          {"surrogate", l.surrogate},
          {"t_a", l.t_a()},
          {"t_l", l.t_l()},
          {"t_linv", l.t_linv()}};
}

}  // namespace

void writeChainCsv(const Chain& chain, const fs::path& path, const std::string& provenance) {
  Index dim = 0;
  for (const auto& r : chain.records) dim = std::max(dim, r.x.size());
  std::string out = provenance;
  out += "iter,mu,sigma,accepted,stage1,stage2,logpost";
  for (Index i = 0; i < dim; ++i) out += ",x_" + std::to_string(i);
  out += '\n';
  for (const auto& r : chain.records) {
    out += std::to_string(r.iteration);
    out += ',';
    putNumber(out, r.theta.mu);
    out += ',';
    putNumber(out, r.theta.sigma);
    out += r.accepted ? ",1" : ",0";
    out += r.stage1 ? ",1" : ",0";
    out += r.stage2 ? ",1" : ",0";
    out += ',';
    putNumber(out, r.log_target);
    // Thinned-out rows leave the x columns empty.
    for (Index i = 0; i < dim; ++i) {
      out += ',';
      if (r.x.size() == dim) putNumber(out, r.x(i));
    }
    out += '\n';
  }
  writeFile(path, out);
}

Chain readChainCsv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  Chain c;
  std::string line;
  long lineno = 0;
  Provenance prov;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] != '#') break;
    prov = parseProvenance(line);
  }
  const auto header = splitCsv(line);
  if (header.size() < 7 || header[0] != "iter" || header[6] != "logpost") {
    throw std::runtime_error(path.string() + ": not a chain CSV (bad header)");
  }
  const std::size_t dim = header.size() - 7;
  c.seed = prov.seed;
  if (auto it = prov.fields.find("sampler"); it != prov.fields.end()) {
    c.sampler = parseSamplerKind(it->second);
  }
  if (auto it = prov.fields.find("importance_samples"); it != prov.fields.end()) {
    c.importance_samples = std::stoi(it->second);
  }
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = splitCsv(line);
    if (f.size() != header.size()) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong field count");
    }
    ChainRecord r;
    r.iteration = static_cast<long>(parseNumber(f[0], path, lineno));
    r.theta = {parseNumber(f[1], path, lineno), parseNumber(f[2], path, lineno)};
    r.accepted = f[3] == "1";
    r.stage1 = f[4] == "1";
    r.stage2 = f[5] == "1";
    r.log_target = parseNumber(f[6], path, lineno);
    if (dim > 0 && !f[7].empty()) {
      r.x.resize(static_cast<Index>(dim));
      for (std::size_t i = 0; i < dim; ++i) r.x(static_cast<Index>(i)) = parseNumber(f[7 + i], path, lineno);
    }
    c.accepted += r.accepted;
    c.stage1 += r.stage1;
    c.stage2 += r.stage2;
    c.records.push_back(std::move(r));
  }
  if (c.records.empty()) throw std::runtime_error(path.string() + ": no records");
  if (auto it = prov.fields.find("burnin"); it != prov.fields.end()) {
    c.burnin = std::stol(it->second);
  } else {
    c.burnin = c.size() / 2;
  }
  if (c.burnin >= c.size()) throw std::runtime_error(path.string() + ": burnin exceeds chain length");
  return c;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

ModelContext contextFor(const ProblemInstance& instance, const ExperimentConfig& config,
                        SamplerKind kind, Index rank) {
  if (!needsSurrogate(kind)) return instance.ctx;
  auto s = std::make_shared<const LowRankSurrogate>(buildSurrogate(instance, config.surrogate, rank));
  return instance.ctx.withSurrogate(std::move(s));
}

std::string diagnosticsFiles(const DiagnosticsReport& report, const fs::path& dir, json stamp_body,
                             const std::string& provenance) {
  stamp_body["diagnostics"] = toJson(report);
  writeFile(dir / "diagnostics.json", stamp_body.dump(2) + "\n");
  writeFile(dir / "diagnostics.csv", provenance + toCsv(report));
  return (dir / "diagnostics.json").string();
}

}  // namespace

RunResult cmdRun(const ExperimentConfig& config) {
  RunResult result;
  result.directory = outputDirectory(config);
  fs::create_directories(result.directory);
  const ProblemInstance instance = buildProblem(config.problem);
  const ModelContext ctx = contextFor(instance, config, config.sampler.kind, config.surrogate.rank);
  result.chains = runChains(config.sampler.kind, ctx, config.sampler.options, config.sampler.chains);
  result.report = diagnose(result.chains);

  const Provenance base = runProvenance(config);
  writeFile(result.directory / "config.json", stamped(config, json::object()).dump(2) + "\n");
  saveInstance(instance, result.directory / "instance.json");
  for (std::size_t c = 0; c < result.chains.size(); ++c) {
    const Chain& chain = result.chains[c];
    Provenance p = base;
    p.fields = {{"sampler", std::string(toString(chain.sampler))},
                {"chain", std::to_string(c)},
                {"chain_seed", std::to_string(chain.seed)},
                {"burnin", std::to_string(chain.burnin)},
                {"importance_samples", std::to_string(chain.importance_samples)}};
    writeChainCsv(chain, result.directory / ("chain_" + std::to_string(c) + ".csv"), p.line());
  }
  diagnosticsFiles(result.report, result.directory, stamped(config, json::object()), base.line());

  json ledger = json::array();
  CostLedger total;
  double wall = 0.0;
  for (const Chain& chain : result.chains) {
    json entry = ledgerJson(chain.ledger);
    entry["seed"] = chain.seed;
    entry["wall_seconds"] = chain.wall_seconds;
    ledger.push_back(entry);
    total += chain.ledger;
    wall += chain.wall_seconds;
  }
  writeFile(result.directory / "ledger.json",
            stamped(config, {{"chains", ledger}, {"total", ledgerJson(total)}}).dump(2) + "\n");

  const auto& sigma = result.report.parameters[1];
  std::string summary = base.line();
  summary += "sampler,chains,iterations,burnin,rank,importance_samples,acceptance,stage1_rate,"
             "stage2_rate,mu_mean,sigma_mean,sigma_iact,sigma_ess,mpsrf,wall_seconds,"
             "full_posterior,t_a,t_l,t_linv\n";
  summary += std::string(toString(config.sampler.kind)) + "," + std::to_string(result.chains.size()) +
             "," + std::to_string(config.sampler.options.iterations) + "," +
             std::to_string(result.chains.front().burnin) + "," +
             (needsSurrogate(config.sampler.kind) ? std::to_string(config.surrogate.rank) : "") +
             "," + std::to_string(config.sampler.options.importance_samples);
  for (double v : {result.report.acceptance, result.report.stage1, result.report.stage2,
                   result.report.parameters[0].mean, sigma.mean, sigma.iact, sigma.ess,
                   result.report.mpsrf ? result.report.mpsrf->value : NAN, wall}) {
    summary += ',';
    putNumber(summary, v);
  }
  summary += "," + std::to_string(total.full_posterior) + "," + std::to_string(total.t_a()) + "," +
             std::to_string(total.t_l()) + "," + std::to_string(total.t_linv()) + "\n";
  writeFile(result.directory / "summary.csv", summary);
  return result;
}

namespace {

SweepRow sweepRow(double key, const Chain& chain) {
  SweepRow row;
  row.key = key;
  row.iact = safeIact(chain.sigmaSeries());
  row.ess = static_cast<double>(chain.size() - chain.burnin) / row.iact;
  row.acceptance = chain.acceptanceRate();
  row.stage1 = chain.stage1Rate();
  row.stage2 = chain.stage2Rate();
  row.wall_seconds = chain.wall_seconds;
  row.full_posterior = chain.ledger.full_posterior;
  return row;
}

void requireSurrogateSampler(const ExperimentConfig& config, const char* command) {
  if (!needsSurrogate(config.sampler.kind)) {
    throw ConfigError(std::string("sampler.kind: ") + command +
                      " needs a surrogate-based sampler (aob, abda or pm)");
  }
}

}  // namespace

std::vector<SweepRow> cmdSweepRank(const ExperimentConfig& config) {
  requireSurrogateSampler(config, "sweep-rank");
  const ProblemInstance instance = buildProblem(config.problem);
  const auto [n, m] = problemShape(config.problem);
  Index top = 0;
  for (Index k : config.sweep.ranks) {
    requireThat(k >= 1 && k <= std::min(n, m), "sweep.ranks",
                "entries must lie in [1, " + std::to_string(std::min(n, m)) + "]");
    top = std::max(top, k);
  }
  const LowRankSurrogate full = buildSurrogate(instance, config.surrogate, top);
  const bool abda = config.sampler.kind == SamplerKind::Abda;
  std::vector<SweepRow> rows;
  std::string csv = runProvenance(config).line();
  csv += abda ? "rank,ess,iact,ar1,ar2\n" : "rank,ess,iact,ar\n";
  for (Index k : config.sweep.ranks) {
    const ModelContext ctx =
        instance.ctx.withSurrogate(std::make_shared<const LowRankSurrogate>(full.withRank(k)));
    const SweepRow row = sweepRow(static_cast<double>(k), runSampler(config.sampler.kind, ctx,
                                                                     config.sampler.options));
    csv += std::to_string(k);
    for (double v : abda ? std::vector<double>{row.ess, row.iact, row.stage1, row.stage2}
                         : std::vector<double>{row.ess, row.iact, row.acceptance}) {
      csv += ',';
      putNumber(csv, v);
    }
    csv += '\n';
    rows.push_back(row);
  }
  writeFile(outputDirectory(config) / "sweep_rank.csv", csv);
  return rows;
}

std::vector<SweepRow> cmdSweepK(const ExperimentConfig& config) {
  const ProblemInstance instance = buildProblem(config.problem);
  const ModelContext ctx =
      contextFor(instance, config, SamplerKind::PseudoMarginal, config.surrogate.rank);
  std::vector<SweepRow> rows;
  std::string csv = runProvenance(config).line();
  csv += "k,ess,iact,ar,wall_seconds,ces\n";
  for (int k : config.sweep.importance_samples) {
    SamplerOptions o = config.sampler.options;
    o.importance_samples = k;
    const SweepRow row = sweepRow(k, pseudoMarginal(ctx, o));
    csv += std::to_string(k);
    for (double v : {row.ess, row.iact, row.acceptance, row.wall_seconds, row.wall_seconds / row.ess}) {
      csv += ',';
      putNumber(csv, v);
    }
    csv += '\n';
    rows.push_back(row);
  }
  writeFile(outputDirectory(config) / "sweep_k.csv", csv);
  return rows;
}

std::vector<SweepRow> cmdSweepN(const ExperimentConfig& config) {
  if (config.problem.kind != "deblur1d") {
    throw ConfigError("problem.kind: sweep-n is defined for deblur1d only");
  }
  std::vector<SweepRow> rows;
  std::string csv = runProvenance(config).line();
  csv += "n,ess,iact,ar,iact_ratio\n";
  for (Index n : config.sweep.sizes) {
    ProblemConfig p = config.problem;
    p.deblur.n = n;
    if (p.deblur.m >= 0) p.deblur.m = n;
    const ProblemInstance instance = buildProblem(p);
    const Index rank = std::min(config.surrogate.rank, n);
    const ModelContext ctx = contextFor(instance, config, config.sampler.kind, rank);
    const SweepRow row =
        sweepRow(static_cast<double>(n), runSampler(config.sampler.kind, ctx, config.sampler.options));
    csv += std::to_string(n);
    for (double v : {row.ess, row.iact, row.acceptance}) {
      csv += ',';
      putNumber(csv, v);
    }
    csv += ',';
    if (!rows.empty()) putNumber(csv, row.iact / rows.back().iact);
    csv += '\n';
    rows.push_back(row);
  }
  writeFile(outputDirectory(config) / "sweep_n.csv", csv);
  return rows;
}

namespace {

std::vector<Chain> readChains(const std::vector<fs::path>& files, Provenance& first) {
  if (files.empty()) throw ConfigError("no chain files given");
  std::vector<Chain> chains;
  for (const auto& f : files) chains.push_back(readChainCsv(f));
  std::ifstream in(files.front());
  std::string line;
  std::getline(in, line);
  if (!line.empty() && line[0] == '#') first = parseProvenance(line);
  first.fields.clear();
  return chains;
}

}  // namespace

DiagnosticsReport cmdDiag(const std::vector<fs::path>& chain_files, const fs::path& out) {
  Provenance prov;
  const std::vector<Chain> chains = readChains(chain_files, prov);
  DiagnosticsReport report = diagnose(chains);
  if (!out.empty()) {
    json files = json::array();
    for (const auto& f : chain_files) files.push_back(f.string());
    diagnosticsFiles(report, out,
                     {{"config_hash", prov.config_hash}, {"seed", prov.seed}, {"files", files}},
                     prov.line());
  }
  return report;
}

void cmdPlotdata(const std::vector<fs::path>& chain_files, const fs::path& out,
                 const fs::path& instance, long acf_lags, int bins) {
  if (bins < 1) throw ConfigError("bins must be positive");
  if (acf_lags < 0) throw ConfigError("lags must be non-negative");
  Provenance prov;
  const std::vector<Chain> chains = readChains(chain_files, prov);
  const std::string head = prov.line();

  std::string trace = head + "chain,iter,mu,sigma\n";
  std::string cum = head + "chain,iter,mu,sigma\n";
  std::string ac = head + "chain,lag,mu,sigma\n";
  std::vector<double> pooled_mu, pooled_sigma;
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const Chain& ch = chains[c];
    const std::string cs = std::to_string(c) + ",";
    for (const auto& r : ch.records) {
      trace += cs + std::to_string(r.iteration) + ",";
      putNumber(trace, r.theta.mu);
      trace += ',';
      putNumber(trace, r.theta.sigma);
      trace += '\n';
    }
    const auto mu = ch.muSeries(), sigma = ch.sigmaSeries();
    pooled_mu.insert(pooled_mu.end(), mu.begin(), mu.end());
    pooled_sigma.insert(pooled_sigma.end(), sigma.begin(), sigma.end());
    const auto cm = cumulativeMean(mu), cs2 = cumulativeMean(sigma);
    for (std::size_t i = 0; i < cm.size(); ++i) {
      cum += cs + std::to_string(ch.records[static_cast<std::size_t>(ch.burnin) + i].iteration) + ",";
      putNumber(cum, cm[i]);
      cum += ',';
      putNumber(cum, cs2[i]);
      cum += '\n';
    }
    const long lags = std::min<long>(acf_lags, static_cast<long>(mu.size()) - 1);
    const auto am = acf(mu, lags).values, as = acf(sigma, lags).values;
    for (long l = 0; l <= lags; ++l) {
      ac += cs + std::to_string(l) + ",";
      putNumber(ac, am[static_cast<std::size_t>(l)]);
      ac += ',';
      putNumber(ac, as[static_cast<std::size_t>(l)]);
      ac += '\n';
    }
  }

  std::string hist = head + "parameter,bin_lo,bin_hi,count,density\n";
  auto histogram = [&](const char* name, const std::vector<double>& s) {
    const auto [lo_it, hi_it] = std::minmax_element(s.begin(), s.end());
    const double lo = *lo_it, hi = *hi_it > *lo_it ? *hi_it : *lo_it + 1.0;
    const double width = (hi - lo) / bins;
    std::vector<long> counts(static_cast<std::size_t>(bins), 0);
    for (double v : s) {
      auto b = static_cast<long>((v - lo) / width);
      ++counts[static_cast<std::size_t>(std::clamp<long>(b, 0, bins - 1))];
    }
    for (int b = 0; b < bins; ++b) {
      hist += std::string(name) + ",";
      putNumber(hist, lo + b * width);
      hist += ',';
      putNumber(hist, lo + (b + 1) * width);
      hist += "," + std::to_string(counts[static_cast<std::size_t>(b)]) + ",";
      putNumber(hist, counts[static_cast<std::size_t>(b)] / (static_cast<double>(s.size()) * width));
      hist += '\n';
    }
  };
  histogram("mu", pooled_mu);
  histogram("sigma", pooled_sigma);

  writeFile(out / "trace.csv", trace);
  writeFile(out / "cummean.csv", cum);
  writeFile(out / "acf.csv", ac);
  writeFile(out / "hist.csv", hist);

  std::vector<Matrix> xs;
  Index cols = 0;
  for (const Chain& ch : chains) {
    xs.push_back(ch.xSamples());
    cols += xs.back().cols();
  }
  if (cols == 0) return;
  Matrix pooled(xs.front().rows(), cols);
  Index at = 0;
  for (const Matrix& m : xs) {
    if (m.rows() != pooled.rows()) throw std::runtime_error("chain files disagree on the state size");
    pooled.middleCols(at, m.cols()) = m;
    at += m.cols();
  }
  const CredibleBounds b = credibleBounds(pooled, 0.95);
  Vector truth;
  if (!instance.empty()) {
    truth = loadInstance(instance).x_true;
    if (truth.size() != pooled.rows()) {
      throw std::runtime_error(instance.string() + ": state size differs from the chains");
    }
  }
  std::string bands = head + (truth.size() ? "component,mean,lower,upper,truth\n"
                                           : "component,mean,lower,upper\n");
  for (Index i = 0; i < pooled.rows(); ++i) {
    bands += std::to_string(i);
    for (double v : {b.mean(i), b.lower(i), b.upper(i)}) {
      bands += ',';
      putNumber(bands, v);
    }
    if (truth.size()) {
      bands += ',';
      putNumber(bands, truth(i));
    }
    bands += '\n';
  }
  writeFile(out / "bands.csv", bands);
}

// ---------------------------------------------------------------------------
// Command line

namespace {

template <class T>
std::vector<T> parseList(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    T v{};
    const auto r = std::from_chars(item.data(), item.data() + item.size(), v);
    if (r.ec != std::errc() || r.ptr != item.data() + item.size()) {
      throw ConfigError(std::string(what) + ": bad list entry '" + item + "'");
    }
    out.push_back(v);
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

void printRows(const std::vector<SweepRow>& rows, const char* key) {
  std::printf("%8s %10s %10s %8s %8s %8s %10s\n", key, "ess", "iact", "ar", "ar1", "ar2", "wall_s");
  for (const auto& r : rows) {
    std::printf("%8g %10.2f %10.2f %8.4f %8.4f %8.4f %10.3f\n", r.key, r.ess, r.iact, r.acceptance,
                r.stage1, r.stage2, r.wall_seconds);
  }
}

}  // namespace

int runCli(int argc, const char* const* argv) {
  CLI::App app{"Hierarchical Bayesian inverse problem samplers"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  auto addConfigOptions = [&](CLI::App* sub) {
    sub->add_option("-c,--config", config_path, "JSON experiment config");
    sub->add_option("-s,--set", overrides, "Override a config key, e.g. sampler.iterations=5000");
  };
  auto* run = app.add_subcommand("run", "Run chains and write chains, diagnostics and ledger");
  addConfigOptions(run);
  std::string ranks, ks, ns;
  auto* sweep_rank = app.add_subcommand("sweep-rank", "ESS and acceptance across surrogate ranks");
  addConfigOptions(sweep_rank);
  sweep_rank->add_option("--ranks", ranks, "Comma-separated ranks (overrides sweep.ranks)");
  auto* sweep_k = app.add_subcommand("sweep-k", "Pseudo-marginal IACT and cost across K");
  addConfigOptions(sweep_k);
  sweep_k->add_option("--k", ks, "Comma-separated K values (overrides sweep.k)");
  auto* sweep_n = app.add_subcommand("sweep-n", "IACT growth with the state dimension");
  addConfigOptions(sweep_n);
  sweep_n->add_option("--n", ns, "Comma-separated sizes (overrides sweep.n)");

  std::vector<std::string> files;
  std::string out_dir, instance_path;
  long lags = 100;
  int bins = 40;
  auto* diag = app.add_subcommand("diag", "Diagnostics of persisted chain CSVs");
  diag->add_option("chains", files, "Chain CSV files")->required();
  diag->add_option("-o,--out", out_dir, "Write diagnostics.json/.csv here");
  auto* plot = app.add_subcommand("plotdata", "Trace, histogram, ACF, running-mean and band CSVs");
  plot->add_option("chains", files, "Chain CSV files")->required();
  plot->add_option("-o,--out", out_dir, "Output directory")->required();
  plot->add_option("--instance", instance_path, "instance.json, adds the true state to bands.csv");
  plot->add_option("--lags", lags, "Maximum ACF lag");
  plot->add_option("--bins", bins, "Histogram bins");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    auto loadConfig = [&] {
      nlohmann::json doc = config_path.empty() ? nlohmann::json::object() : readConfigFile(config_path);
      for (const auto& o : overrides) applyOverride(doc, o);
      if (!ranks.empty()) doc["sweep"]["ranks"] = parseList<Index>(ranks, "--ranks");
      if (!ks.empty()) doc["sweep"]["k"] = parseList<int>(ks, "--k");
      if (!ns.empty()) doc["sweep"]["n"] = parseList<Index>(ns, "--n");
      return parseConfig(doc);
    };
    if (run->parsed()) {
      const ExperimentConfig config = loadConfig();
      const RunResult r = cmdRun(config);
      const auto& sigma = r.report.parameters[1];
      std::printf("sampler %s, %ld chain(s), %ld retained, config %s\n",
                  std::string(toString(config.sampler.kind)).c_str(), r.report.chains,
                  r.report.retained, configHash(config).c_str());
      std::printf("acceptance %.4f (stage1 %.4f, stage2 %.4f)\n", r.report.acceptance,
                  r.report.stage1, r.report.stage2);
      std::printf("mu mean %.6g, sigma mean %.6g, sigma IACT %.3f, ESS %.1f\n",
                  r.report.parameters[0].mean, sigma.mean, sigma.iact, sigma.ess);
      if (r.report.mpsrf) std::printf("MPSRF %.4f\n", r.report.mpsrf->value);
      std::printf("wrote %s\n", r.directory.string().c_str());
    } else if (sweep_rank->parsed()) {
      printRows(cmdSweepRank(loadConfig()), "rank");
    } else if (sweep_k->parsed()) {
      printRows(cmdSweepK(loadConfig()), "k");
    } else if (sweep_n->parsed()) {
      printRows(cmdSweepN(loadConfig()), "n");
    } else if (diag->parsed()) {
      std::vector<fs::path> paths(files.begin(), files.end());
      const DiagnosticsReport r = cmdDiag(paths, out_dir);
      std::cout << toJson(r).dump(2) << "\n";
    } else if (plot->parsed()) {
      std::vector<fs::path> paths(files.begin(), files.end());
      cmdPlotdata(paths, out_dir, instance_path, lags, bins);
      std::printf("wrote %s\n", out_dir.c_str());
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const DegenerateSeries& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace hbip
