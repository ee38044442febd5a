#pragma once

#include "hbip/samplers.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace hbip {

/// Raised for statistics that are undefined on a constant series.
class DegenerateSeries : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct AcfResult {
  std::vector<double> values;  // lag 0..max_lag, values[0] = 1
  bool degenerate = false;
};

/// Biased sample autocorrelation, normalized so lag 0 is 1. A constant series
/// is flagged and reported as zero beyond lag 0.
AcfResult acf(const std::vector<double>& series, long max_lag);

/// Integrated autocorrelation time, Geyer initial positive sequence: lag pairs
/// are summed until a pair sum is non-positive.
double iact(const std::vector<double>& series);
/// series.size() / iact(series).
double ess(const std::vector<double>& series);

struct GewekeResult {
  double z = 0.0;
  double p_value = 1.0;
};

/// Two-sided test of equal means for the first `first` and last `last`
/// fractions, window-mean variances from `batches` batch means per window.
GewekeResult geweke(const std::vector<double>& series, double first = 0.1, double last = 0.5,
                    int batches = 20);

struct MpsrfResult {
  double value = 1.0;
  /// Within-chain covariance was singular; computed in its dominant subspace.
  bool reduced = false;
  Index dimension = 0;
};

/// Brooks-Gelman multivariate PSRF. Each chain is dim x length, one sample per column.
MpsrfResult mpsrf(const std::vector<Matrix>& chains);

struct CredibleBounds {
  Vector lower;
  Vector upper;
  Vector mean;
};

/// Pointwise equal-tailed intervals from linear-interpolated sample quantiles.
/// `samples` is dim x count; level 1 returns the componentwise min and max.
CredibleBounds credibleBounds(const Matrix& samples, double level = 0.95);

std::vector<double> cumulativeMean(const std::vector<double>& series);

struct ParameterSummary {
  std::string name;
  long samples = 0;
  double mean = 0.0;
  double sd = 0.0;
  double iact = 1.0;
  double ess = 0.0;
  std::optional<GewekeResult> geweke;
  bool degenerate = false;
  std::vector<double> acf;
};

struct DiagnosticsReport {
  std::vector<ParameterSummary> parameters;  // first chain
  std::vector<std::vector<ParameterSummary>> per_chain;
  std::optional<MpsrfResult> mpsrf;
  double acceptance = 0.0;
  double stage1 = 0.0;
  double stage2 = 0.0;
  long chains = 0;
  long retained = 0;
};

struct DiagnosticsOptions {
  long acf_lags = 100;
};

/// Summary of mu and sigma for each chain (first chain drives `parameters`),
/// acceptance rates averaged over chains, and MPSRF of the x-chains when
/// there are at least two chains with stored x.
DiagnosticsReport diagnose(const std::vector<Chain>& chains, const DiagnosticsOptions& options = {});

nlohmann::json toJson(const DiagnosticsReport& report);
/// Header `chain,parameter,samples,mean,sd,iact,ess,geweke_z,geweke_p`, one row per parameter.
std::string toCsv(const DiagnosticsReport& report);

}  // namespace hbip
