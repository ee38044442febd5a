#pragma once

#include "hbip/diagnostics.hpp"
#include "hbip/lowrank.hpp"
#include "hbip/problems.hpp"
#include "hbip/samplers.hpp"

#include <json.hpp>

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbip {

/// Invalid or incomplete experiment configuration; the message names the key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Exit codes of the command-line front end.
enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitNumerical = 3 };

struct ProblemConfig {
  std::string kind;  // deblur1d, heat2d or dense
  Deblur1dOptions deblur;
  Heat2dOptions heat;
  DenseOptions dense;
};

struct SurrogateConfig {
  Index rank = 0;
  EigOptions eig;
};

struct SamplerConfig {
  SamplerKind kind = SamplerKind::Aob;
  SamplerOptions options;
  int chains = 1;
};

struct SweepConfig {
  std::vector<Index> ranks{20, 25, 30, 35};
  std::vector<int> importance_samples{1, 5, 10, 50};
  std::vector<Index> sizes{64, 128, 256};
};

struct ExperimentConfig {
  ProblemConfig problem;
  SurrogateConfig surrogate;
  SamplerConfig sampler;
  SweepConfig sweep;
  std::string output_dir = "hbip_out";
};

/// Validates a JSON document with sections problem, surrogate, sampler, sweep
/// and output. Required: problem.kind, sampler.kind, sampler.iterations.
/// Unknown keys and type mismatches raise ConfigError with the dotted key path.
ExperimentConfig parseConfig(const nlohmann::json& document);
/// Fully resolved configuration, every default spelled out.
nlohmann::json toJson(const ExperimentConfig& config);

nlohmann::json readConfigFile(const std::filesystem::path& path);
/// Applies `section.key=value`; the value is parsed as JSON when possible and
/// kept as a string otherwise.
void applyOverride(nlohmann::json& document, const std::string& assignment);

/// 64-bit FNV-1a over the compact dump of the resolved configuration, as 16 hex digits.
std::string configHash(const ExperimentConfig& config);

/// output.dir, resolved against $HBIP_OUTPUT_ROOT when it is relative.
std::filesystem::path outputDirectory(const ExperimentConfig& config);

ProblemInstance buildProblem(const ProblemConfig& config);
/// Eigenpairs for the largest rank any command needs, kept rank `rank`.
LowRankSurrogate buildSurrogate(const ProblemInstance& instance, const SurrogateConfig& config,
                                Index rank);

/// Chain CSV: a `# hbip ...` provenance line, then the header
/// iter,mu,sigma,accepted,stage1,stage2,logpost,x_0,...; doubles at full precision.
void writeChainCsv(const Chain& chain, const std::filesystem::path& path,
                   const std::string& provenance);
Chain readChainCsv(const std::filesystem::path& path);

struct RunResult {
  std::vector<Chain> chains;
  DiagnosticsReport report;
  std::filesystem::path directory;
};

/// Writes config.json, instance.json(+.bin), chain_<c>.csv, diagnostics.json,
/// diagnostics.csv, summary.csv and ledger.json into the output directory.
RunResult cmdRun(const ExperimentConfig& config);

struct SweepRow {
  double key = 0.0;  // rank, K or N
  double ess = 0.0;
  double iact = 0.0;
  double acceptance = 0.0;
  double stage1 = 0.0;
  double stage2 = 0.0;
  double wall_seconds = 0.0;
  std::uint64_t full_posterior = 0;
};

/// sweep_rank.csv: rank,ess,iact,ar (or rank,ess,iact,ar1,ar2 for ABDA).
std::vector<SweepRow> cmdSweepRank(const ExperimentConfig& config);
/// sweep_k.csv: k,ess,iact,ar,wall_seconds,ces with ces = wall_seconds / ess.
std::vector<SweepRow> cmdSweepK(const ExperimentConfig& config);
/// sweep_n.csv: n,ess,iact,ar,iact_ratio (ratio to the previous N); deblur1d only.
std::vector<SweepRow> cmdSweepN(const ExperimentConfig& config);

/// Diagnostics of persisted chains; writes diagnostics.json/.csv into `out`
/// when it is non-empty.
DiagnosticsReport cmdDiag(const std::vector<std::filesystem::path>& chain_files,
                          const std::filesystem::path& out = {});

/// trace.csv, hist.csv, cummean.csv, acf.csv and, when x was stored, bands.csv
/// (one row per state component; a truth column when `instance` is given).
void cmdPlotdata(const std::vector<std::filesystem::path>& chain_files,
                 const std::filesystem::path& out, const std::filesystem::path& instance = {},
                 long acf_lags = 100, int bins = 40);

/// Command-line entry point; returns one of the ExitCode values.
int runCli(int argc, const char* const* argv);

}  // namespace hbip
