#include "hbip/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace hbip {

namespace {

struct Centered {
  std::vector<double> values;
  double mean = 0.0;
  double c0 = 0.0;
  bool degenerate = false;
};

Centered center(const std::vector<double>& series) {
  Centered c;
  const double n = static_cast<double>(series.size());
  c.mean = std::accumulate(series.begin(), series.end(), 0.0) / n;
  double scale = 0.0;
  c.values.resize(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (!std::isfinite(series[i])) throw std::invalid_argument("series contains non-finite values");
    c.values[i] = series[i] - c.mean;
    c.c0 += c.values[i] * c.values[i];
    scale = std::max(scale, std::abs(series[i]));
  }
  c.c0 /= n;
  c.degenerate = !(std::sqrt(c.c0) > 1e-12 * scale) || c.c0 == 0.0;
  return c;
}

double autocovariance(const Centered& c, std::size_t lag) {
  const std::size_t n = c.values.size();
  double sum = 0.0;
  for (std::size_t t = 0; t + lag < n; ++t) sum += c.values[t] * c.values[t + lag];
  return sum / static_cast<double>(n);
}

}  // namespace

AcfResult acf(const std::vector<double>& series, long max_lag) {
  if (max_lag < 0) throw std::invalid_argument("acf: max_lag must be non-negative");
  if (static_cast<long>(series.size()) <= max_lag) {
    throw std::invalid_argument("acf: series must be longer than max_lag");
  }
  const Centered c = center(series);
  AcfResult out;
  out.values.assign(static_cast<std::size_t>(max_lag) + 1, 0.0);
  out.values[0] = 1.0;
  out.degenerate = c.degenerate;
  if (c.degenerate) return out;
  for (long k = 1; k <= max_lag; ++k) {
    out.values[static_cast<std::size_t>(k)] = autocovariance(c, static_cast<std::size_t>(k)) / c.c0;
  }
  return out;
}

double iact(const std::vector<double>& series) {
  if (series.size() < 100) throw std::invalid_argument("iact: need at least 100 samples");
  const Centered c = center(series);
  if (c.degenerate) throw DegenerateSeries("iact: constant series");
  const std::size_t n = series.size();
  double tau = -1.0;
  for (std::size_t m = 0; 2 * m < n; ++m) {
    const double r0 = m == 0 ? 1.0 : autocovariance(c, 2 * m) / c.c0;
    const double r1 = 2 * m + 1 < n ? autocovariance(c, 2 * m + 1) / c.c0 : 0.0;
    const double pair = r0 + r1;
    if (pair <= 0.0) break;
    tau += 2.0 * pair;
  }
  return tau;
}

double ess(const std::vector<double>& series) {
  return static_cast<double>(series.size()) / iact(series);
}

GewekeResult geweke(const std::vector<double>& series, double first, double last, int batches) {
  if (!(first > 0.0) || !(last > 0.0) || first + last > 1.0) {
    throw std::invalid_argument("geweke: window fractions must be positive and sum to at most 1");
  }
  if (batches < 2) throw std::invalid_argument("geweke: need at least two batches");
  const std::size_t n = series.size();
  if (n < 1000) throw std::invalid_argument("geweke: need at least 1000 samples");
  const auto na = static_cast<std::size_t>(std::floor(first * static_cast<double>(n)));
  const auto nb = static_cast<std::size_t>(std::floor(last * static_cast<double>(n)));
  if (na < static_cast<std::size_t>(2 * batches) || nb < static_cast<std::size_t>(2 * batches)) {
    throw std::invalid_argument("geweke: series too short for the batch-mean windows");
  }
  if (center(series).degenerate) throw DegenerateSeries("geweke: constant series");

  // Mean of the window and the variance of that mean from batch means.
  auto window = [&](std::size_t begin, std::size_t len, double& mean, double& var) {
    const std::size_t size = len / static_cast<std::size_t>(batches);
    std::vector<double> means(static_cast<std::size_t>(batches));
    mean = 0.0;
    for (int b = 0; b < batches; ++b) {
      const auto start = series.begin() + static_cast<std::ptrdiff_t>(begin + b * size);
      means[static_cast<std::size_t>(b)] =
          std::accumulate(start, start + static_cast<std::ptrdiff_t>(size), 0.0) /
          static_cast<double>(size);
      mean += means[static_cast<std::size_t>(b)];
    }
    mean /= batches;
    double ss = 0.0;
    for (double m : means) ss += (m - mean) * (m - mean);
    var = ss / (batches - 1) / batches;
  };
  double ma, va, mb, vb;
  window(0, na, ma, va);
  window(n - nb, nb, mb, vb);
  GewekeResult out;
  const double denom = std::sqrt(va + vb);
  out.z = denom > 0.0 ? (ma - mb) / denom : 0.0;
  out.p_value = std::erfc(std::abs(out.z) / std::sqrt(2.0));
  return out;
}

MpsrfResult mpsrf(const std::vector<Matrix>& chains) {
  if (chains.size() < 2) throw std::invalid_argument("mpsrf: need at least two chains");
  const Index p = chains.front().rows();
  const Index n = chains.front().cols();
  for (const Matrix& c : chains) {
    if (c.rows() != p || c.cols() != n) throw std::invalid_argument("mpsrf: chains must have equal shape");
  }
  if (p < 1 || n < 2) throw std::invalid_argument("mpsrf: empty chains");
  if (p > n) throw std::invalid_argument("mpsrf: dimension exceeds chain length");
  const auto m = static_cast<double>(chains.size());
  const auto nn = static_cast<double>(n);

  Matrix w = Matrix::Zero(p, p);
  Matrix means(p, static_cast<Index>(chains.size()));
  for (std::size_t j = 0; j < chains.size(); ++j) {
    means.col(static_cast<Index>(j)) = chains[j].rowwise().mean();
    Matrix centered = chains[j].colwise() - means.col(static_cast<Index>(j));
    w.noalias() += centered * centered.transpose();
  }
  w /= m * (nn - 1.0);
  const Vector grand = means.rowwise().mean();
  const Matrix spread = means.colwise() - grand;
  const Matrix b_over_n = spread * spread.transpose() / (m - 1.0);

  Eigen::SelfAdjointEigenSolver<Matrix> we(w);
  const double top = we.eigenvalues().maxCoeff();
  if (!(top > 0.0)) throw DegenerateSeries("mpsrf: within-chain covariance is zero");
  std::vector<Index> keep;
  for (Index i = 0; i < p; ++i)
    if (we.eigenvalues()(i) > 1e-10 * top) keep.push_back(i);
  Matrix s(p, static_cast<Index>(keep.size()));
  for (std::size_t i = 0; i < keep.size(); ++i) {
    s.col(static_cast<Index>(i)) =
        we.eigenvectors().col(keep[i]) / std::sqrt(we.eigenvalues()(keep[i]));
  }
  const Matrix whitened = s.transpose() * b_over_n * s;
  const double lambda = Eigen::SelfAdjointEigenSolver<Matrix>(whitened).eigenvalues().maxCoeff();

  MpsrfResult out;
  out.value = (nn - 1.0) / nn + (m + 1.0) / m * lambda;
  out.reduced = static_cast<Index>(keep.size()) < p;
  out.dimension = static_cast<Index>(keep.size());
  return out;
}

CredibleBounds credibleBounds(const Matrix& samples, double level) {
  if (!(level > 0.0) || level > 1.0) throw std::invalid_argument("credible level must lie in (0, 1]");
  if (samples.cols() < 100) throw std::invalid_argument("credible bounds need at least 100 samples");
  const double lo_p = 0.5 * (1.0 - level);
  const double hi_p = 1.0 - lo_p;
  const Index count = samples.cols();
  auto quantile = [count](const std::vector<double>& sorted, double prob) {
    const double h = (static_cast<double>(count) - 1.0) * prob;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (h - std::floor(h)) * (sorted[hi] - sorted[lo]);
  };
  CredibleBounds out;
  out.lower.resize(samples.rows());
  out.upper.resize(samples.rows());
  out.mean = samples.rowwise().mean();
  std::vector<double> row(static_cast<std::size_t>(count));
  for (Index i = 0; i < samples.rows(); ++i) {
    for (Index j = 0; j < count; ++j) row[static_cast<std::size_t>(j)] = samples(i, j);
    std::sort(row.begin(), row.end());
    out.lower(i) = quantile(row, lo_p);
    out.upper(i) = quantile(row, hi_p);
  }
  return out;
}

std::vector<double> cumulativeMean(const std::vector<double>& series) {
  std::vector<double> out(series.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    sum += series[i];
    out[i] = sum / static_cast<double>(i + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {

ParameterSummary summarize(const std::string& name, const std::vector<double>& s, long lags) {
  ParameterSummary p;
  p.name = name;
  p.samples = static_cast<long>(s.size());
  if (s.empty()) return p;
  const Centered c = center(s);
  p.mean = c.mean;
  p.sd = std::sqrt(c.c0);
  p.degenerate = c.degenerate;
  const long max_lag = std::min<long>(lags, static_cast<long>(s.size()) - 1);
  p.acf = acf(s, max_lag).values;
  if (p.degenerate || s.size() < 100) {
    p.iact = NAN;
    p.ess = NAN;
    return p;
  }
  p.iact = iact(s);
  p.ess = static_cast<double>(s.size()) / p.iact;
  try {
    p.geweke = geweke(s);
  } catch (const std::invalid_argument&) {
    // too short for the batch windows
  }
  return p;
}

}  // namespace

DiagnosticsReport diagnose(const std::vector<Chain>& chains, const DiagnosticsOptions& options) {
  if (chains.empty()) throw std::invalid_argument("diagnose: no chains");
  DiagnosticsReport r;
  r.chains = static_cast<long>(chains.size());
  for (const Chain& c : chains) {
    std::vector<ParameterSummary> rows;
    rows.push_back(summarize("mu", c.muSeries(), options.acf_lags));
    rows.push_back(summarize("sigma", c.sigmaSeries(), options.acf_lags));
    r.per_chain.push_back(std::move(rows));
    r.acceptance += c.acceptanceRate();
    r.stage1 += c.stage1Rate();
    r.stage2 += c.stage2Rate();
  }
  r.parameters = r.per_chain.front();
  r.retained = chains.front().size() - chains.front().burnin;
  r.acceptance /= static_cast<double>(chains.size());
  r.stage1 /= static_cast<double>(chains.size());
  r.stage2 /= static_cast<double>(chains.size());
  if (chains.size() >= 2) {
    std::vector<Matrix> xs;
    for (const Chain& c : chains) xs.push_back(c.xSamples());
    const bool usable = std::all_of(xs.begin(), xs.end(), [&](const Matrix& m) {
      return m.size() > 0 && m.rows() == xs.front().rows() && m.cols() == xs.front().cols() &&
             m.rows() <= m.cols();
    });
    if (usable) {
      try {
        r.mpsrf = mpsrf(xs);
      } catch (const DegenerateSeries&) {
      }
    }
  }
  return r;
}

namespace {

nlohmann::json numberOrNull(double v) {
  return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

nlohmann::json summaryJson(const ParameterSummary& p) {
  nlohmann::json j;
  j["name"] = p.name;
  j["samples"] = p.samples;
  j["mean"] = numberOrNull(p.mean);
  j["sd"] = numberOrNull(p.sd);
  j["iact"] = numberOrNull(p.iact);
  j["ess"] = numberOrNull(p.ess);
  j["degenerate"] = p.degenerate;
  if (p.geweke) {
    j["geweke_z"] = p.geweke->z;
    j["geweke_p"] = p.geweke->p_value;
  } else {
    j["geweke_z"] = nullptr;
    j["geweke_p"] = nullptr;
  }
  j["acf"] = p.acf;
  return j;
}

void csvNumber(std::ostream& out, double v) {
  if (std::isfinite(v)) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  }
}

}  // namespace

nlohmann::json toJson(const DiagnosticsReport& report) {
  nlohmann::json j;
  j["chains"] = report.chains;
  j["retained"] = report.retained;
  j["acceptance"] = report.acceptance;
  j["stage1_rate"] = report.stage1;
  j["stage2_rate"] = report.stage2;
  j["parameters"] = nlohmann::json::array();
  for (const auto& p : report.parameters) j["parameters"].push_back(summaryJson(p));
  j["per_chain"] = nlohmann::json::array();
  for (const auto& rows : report.per_chain) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& p : rows) arr.push_back(summaryJson(p));
    j["per_chain"].push_back(arr);
  }
  if (report.mpsrf) {
    j["mpsrf"] = {{"value", report.mpsrf->value},
                  {"reduced", report.mpsrf->reduced},
                  {"dimension", report.mpsrf->dimension}};
  } else {
    j["mpsrf"] = nullptr;
  }
  return j;
}

std::string toCsv(const DiagnosticsReport& report) {
  std::ostringstream out;
  out << "chain,parameter,samples,mean,sd,iact,ess,geweke_z,geweke_p\n";
  for (std::size_t c = 0; c < report.per_chain.size(); ++c) {
    for (const auto& p : report.per_chain[c]) {
      out << c << ',' << p.name << ',' << p.samples << ',';
      csvNumber(out, p.mean);
      out << ',';
      csvNumber(out, p.sd);
      out << ',';
      csvNumber(out, p.iact);
      out << ',';
      csvNumber(out, p.ess);
      out << ',';
      if (p.geweke) csvNumber(out, p.geweke->z);
      out << ',';
      if (p.geweke) csvNumber(out, p.geweke->p_value);
      out << '\n';
    }
  }
  return out.str();
}

}  // namespace hbip
