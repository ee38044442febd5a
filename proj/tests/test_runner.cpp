#include "hbip/runner.hpp"

#include <gtest/gtest.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace hbip;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("hbip_runner_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json minimal(const fs::path& out) {
  return {{"problem", {{"kind", "dense"}, {"n", 4}, {"m", 4}}},
          {"sampler", {{"kind", "aob"}, {"iterations", 2000}, {"seed", 3}}},
          {"surrogate", {{"rank", 2}}},
          {"output", {{"dir", out.string()}}}};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

std::vector<std::string> lines(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::string configErrorMessage(const json& doc) {
  try {
    parseConfig(doc);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "hbip");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  return runCli(static_cast<int>(argv.size()), argv.data());
}

}  // namespace

TEST(Config, DefaultsAndRoundTrip) {
  const auto c = parseConfig(minimal("out"));
  EXPECT_EQ(c.problem.kind, "dense");
  EXPECT_EQ(c.sampler.kind, SamplerKind::Aob);
  EXPECT_EQ(c.sampler.options.burnin, -1);
  EXPECT_EQ(c.sampler.chains, 1);
  EXPECT_EQ(c.surrogate.rank, 2);
  const auto again = parseConfig(toJson(c));
  EXPECT_EQ(toJson(again), toJson(c));
  EXPECT_EQ(configHash(again), configHash(c));
  EXPECT_EQ(configHash(c).size(), 16u);
}

TEST(Config, ProblemDefaultRanks) {
  json d = minimal("out");
  d.erase("surrogate");
  d["problem"] = {{"kind", "deblur1d"}};
  EXPECT_EQ(parseConfig(d).surrogate.rank, 35);
  EXPECT_DOUBLE_EQ(parseConfig(d).problem.deblur.kernel_width, 0.039);
  d["problem"] = {{"kind", "heat2d"}};
  EXPECT_EQ(parseConfig(d).surrogate.rank, 70);
}

TEST(Config, NamedKeyErrors) {
  json d = minimal("out");
  d["sampler"].erase("iterations");
  EXPECT_NE(configErrorMessage(d).find("sampler.iterations"), std::string::npos);

  d = minimal("out");
  d["sampler"]["iteratons"] = 5;
  EXPECT_NE(configErrorMessage(d).find("unknown key 'sampler.iteratons'"), std::string::npos);

  d = minimal("out");
  d["sampler"]["iterations"] = "many";
  EXPECT_NE(configErrorMessage(d).find("sampler.iterations: expected an integer"), std::string::npos);

  d = minimal("out");
  d["surrogate"]["rank"] = 9;
  EXPECT_NE(configErrorMessage(d).find("surrogate.rank"), std::string::npos);

  d = minimal("out");
  d["problem"]["kind"] = "wave";
  EXPECT_NE(configErrorMessage(d).find("problem.kind"), std::string::npos);

  d = minimal("out");
  d["sampler"]["kind"] = "nuts";
  EXPECT_NE(configErrorMessage(d).find("sampler.kind"), std::string::npos);

  d = minimal("out");
  d["extra"] = json::object();
  EXPECT_NE(configErrorMessage(d).find("extra"), std::string::npos);

  d = minimal("out");
  d["problem"]["prior"] = {{"alpha_mu", -1.0}};
  EXPECT_NE(configErrorMessage(d).find("problem.prior"), std::string::npos);
}

TEST(Config, Overrides) {
  json d = minimal("out");
  applyOverride(d, "sampler.iterations=500");
  applyOverride(d, "sampler.kind=abda");
  applyOverride(d, "sampler.proposal.adapt=false");
  applyOverride(d, "sweep.ranks=[1,2]");
  const auto c = parseConfig(d);
  EXPECT_EQ(c.sampler.options.iterations, 500);
  EXPECT_EQ(c.sampler.kind, SamplerKind::Abda);
  EXPECT_FALSE(c.sampler.options.proposal.adapt);
  EXPECT_EQ(c.sweep.ranks, (std::vector<Index>{1, 2}));
  EXPECT_THROW(applyOverride(d, "novalue"), ConfigError);
  EXPECT_THROW(applyOverride(d, "sampler.iterations.x=1"), ConfigError);
}

TEST(Config, HashTracksContent) {
  json d = minimal("out");
  const auto h = configHash(parseConfig(d));
  applyOverride(d, "sampler.seed=4");
  EXPECT_NE(configHash(parseConfig(d)), h);
}

TEST(Config, OutputRootFromEnvironment) {
  auto c = parseConfig(minimal("rel/dir"));
  ::setenv("HBIP_OUTPUT_ROOT", "/tmp/hbip_root", 1);
  EXPECT_EQ(outputDirectory(c), fs::path("/tmp/hbip_root/rel/dir"));
  c.output_dir = "/abs/dir";
  EXPECT_EQ(outputDirectory(c), fs::path("/abs/dir"));
  ::unsetenv("HBIP_OUTPUT_ROOT");
  c.output_dir = "rel/dir";
  EXPECT_EQ(outputDirectory(c), fs::path("rel/dir"));
}

TEST(Run, MinimalDenseRunWritesArtifacts) {
  const auto dir = scratch("run");
  const auto config = parseConfig(minimal(dir));
  const auto start = std::chrono::steady_clock::now();
  const RunResult r = cmdRun(config);
  EXPECT_LT(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count(), 5.0);
  for (const char* f : {"config.json", "instance.json", "instance.json.bin", "chain_0.csv",
                        "diagnostics.json", "diagnostics.csv", "summary.csv", "ledger.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
  const auto chain = lines(dir / "chain_0.csv");
  const std::string stamp = "# hbip config_hash=" + configHash(config) + " seed=3";
  EXPECT_EQ(chain[0].substr(0, stamp.size()), stamp);
  EXPECT_EQ(chain[1], "iter,mu,sigma,accepted,stage1,stage2,logpost,x_0,x_1,x_2,x_3");
  EXPECT_EQ(chain.size(), 2u + 2000u);
  for (const char* f : {"summary.csv", "diagnostics.csv"}) {
    EXPECT_EQ(lines(dir / f)[0].substr(0, stamp.size()), stamp) << f;
  }
  for (const char* f : {"config.json", "diagnostics.json", "ledger.json"}) {
    const json j = json::parse(slurp(dir / f));
    EXPECT_EQ(j["config_hash"], configHash(config)) << f;
    EXPECT_EQ(j["seed"], 3) << f;
  }
  const json ledger = json::parse(slurp(dir / "ledger.json"));
  EXPECT_EQ(ledger["total"]["full_posterior"], 2001);
}

TEST(Run, RerunIsByteIdentical) {
  const auto a = scratch("rerun_a");
  const auto b = scratch("rerun_b");
  json da = minimal(a), db = minimal(b);
  da["sampler"]["chains"] = db["sampler"]["chains"] = 2;
  cmdRun(parseConfig(da));
  cmdRun(parseConfig(db));
  // The paths differ, so the config hash does too; compare everything after the stamp line.
  for (const char* f : {"chain_0.csv", "chain_1.csv"}) {
    auto la = lines(a / f), lb = lines(b / f);
    la.erase(la.begin());
    lb.erase(lb.begin());
    EXPECT_EQ(la, lb) << f;
  }
  const auto c = scratch("rerun_c");
  cmdRun(parseConfig(minimal(c)));
  const std::string first = slurp(c / "chain_0.csv");
  cmdRun(parseConfig(minimal(c)));
  EXPECT_EQ(slurp(c / "chain_0.csv"), first);
}

TEST(Run, PersistedChainsReproduceDiagnostics) {
  const auto dir = scratch("diag");
  json d = minimal(dir);
  d["sampler"]["chains"] = 3;
  const RunResult r = cmdRun(parseConfig(d));
  const auto report = cmdDiag({dir / "chain_0.csv", dir / "chain_1.csv", dir / "chain_2.csv"},
                              dir / "rediag");
  EXPECT_EQ(toJson(report).dump(), toJson(r.report).dump());
  const json a = json::parse(slurp(dir / "diagnostics.json"));
  const json b = json::parse(slurp(dir / "rediag" / "diagnostics.json"));
  EXPECT_EQ(a["diagnostics"].dump(), b["diagnostics"].dump());
  EXPECT_EQ(a["config_hash"], b["config_hash"]);
  ASSERT_TRUE(report.mpsrf.has_value());

  const Chain back = readChainCsv(dir / "chain_1.csv");
  ASSERT_EQ(back.size(), r.chains[1].size());
  EXPECT_EQ(back.burnin, r.chains[1].burnin);
  EXPECT_EQ(back.seed, 3u);
  for (long i = 0; i < back.size(); ++i) {
    ASSERT_EQ(back.records[i].theta, r.chains[1].records[i].theta);
    ASSERT_EQ(back.records[i].x, r.chains[1].records[i].x);
    ASSERT_EQ(back.records[i].log_target, r.chains[1].records[i].log_target);
  }
}

TEST(Sweep, RankSingletonAndFullRank) {
  const auto dir = scratch("sweep_rank");
  json d = minimal(dir);
  d["sweep"]["ranks"] = {2};
  auto rows = cmdSweepRank(parseConfig(d));
  ASSERT_EQ(rows.size(), 1u);
  auto csv = lines(dir / "sweep_rank.csv");
  EXPECT_EQ(csv[1], "rank,ess,iact,ar");
  EXPECT_EQ(csv.size(), 3u);

  d["sampler"]["kind"] = "abda";
  d["sweep"]["ranks"] = {1, 4};
  rows = cmdSweepRank(parseConfig(d));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].stage2, 1.0);
  csv = lines(dir / "sweep_rank.csv");
  EXPECT_EQ(csv[1], "rank,ess,iact,ar1,ar2");
  EXPECT_EQ(csv[3].substr(csv[3].rfind(',')), ",1");

  d["sampler"]["kind"] = "gibbs";
  EXPECT_THROW(cmdSweepRank(parseConfig(d)), ConfigError);
}

TEST(Sweep, SingleKMatchesAobRun) {
  const auto dir = scratch("sweep_k");
  json d = minimal(dir);
  d["sweep"]["k"] = {1};
  const auto rows = cmdSweepK(parseConfig(d));
  const auto run = cmdRun(parseConfig(d));
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0].acceptance, run.chains[0].acceptanceRate());
  EXPECT_EQ(rows[0].iact, run.report.parameters[1].iact);
  EXPECT_EQ(lines(dir / "sweep_k.csv")[1], "k,ess,iact,ar,wall_seconds,ces");
}

TEST(Sweep, SingleSizeIsBaselineRow) {
  const auto dir = scratch("sweep_n");
  json d = {{"problem", {{"kind", "deblur1d"}}},
            {"sampler", {{"kind", "aob"}, {"iterations", 400}}},
            {"surrogate", {{"rank", 10}}},
            {"sweep", {{"n", {32}}}},
            {"output", {{"dir", dir.string()}}}};
  const auto rows = cmdSweepN(parseConfig(d));
  ASSERT_EQ(rows.size(), 1u);
  const auto csv = lines(dir / "sweep_n.csv");
  EXPECT_EQ(csv[1], "n,ess,iact,ar,iact_ratio");
  ASSERT_EQ(csv.size(), 3u);
  EXPECT_EQ(csv[2].back(), ',');
  d["problem"] = {{"kind", "dense"}};
  d["surrogate"]["rank"] = 2;
  EXPECT_THROW(cmdSweepN(parseConfig(d)), ConfigError);
}

TEST(Plotdata, FilesAndHeaders) {
  const auto dir = scratch("plot");
  cmdRun(parseConfig(minimal(dir)));
  cmdPlotdata({dir / "chain_0.csv"}, dir / "plots", dir / "instance.json", 20, 10);
  const std::map<std::string, std::string> headers{
      {"trace.csv", "chain,iter,mu,sigma"},
      {"cummean.csv", "chain,iter,mu,sigma"},
      {"acf.csv", "chain,lag,mu,sigma"},
      {"hist.csv", "parameter,bin_lo,bin_hi,count,density"},
      {"bands.csv", "component,mean,lower,upper,truth"}};
  for (const auto& [file, header] : headers) {
    const auto l = lines(dir / "plots" / file);
    ASSERT_GE(l.size(), 2u) << file;
    EXPECT_EQ(l[0].rfind("# hbip config_hash=", 0), 0u) << file;
    EXPECT_EQ(l[1], header) << file;
  }
  EXPECT_EQ(lines(dir / "plots" / "acf.csv")[2], "0,0,1,1");
  EXPECT_EQ(lines(dir / "plots" / "bands.csv").size(), 2u + 4u);
  EXPECT_EQ(lines(dir / "plots" / "hist.csv").size(), 2u + 20u);
  EXPECT_EQ(lines(dir / "plots" / "trace.csv").size(), 2u + 2000u);
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch("cli");
  const auto cfg = dir / "config.json";
  std::ofstream(cfg) << minimal(dir / "out").dump(2);
  EXPECT_EQ(cli({"run", "--config", cfg.string(), "--set", "sampler.iterations=300"}), kExitOk);
  EXPECT_TRUE(fs::exists(dir / "out" / "chain_0.csv"));
  EXPECT_EQ(cli({"run", "--config", cfg.string(), "--set", "sampler.iterations=abc"}), kExitConfig);
  EXPECT_EQ(cli({"run", "--set", "sampler.kind=aob"}), kExitConfig);
  EXPECT_EQ(cli({"run", "--config", (dir / "missing.json").string()}), kExitConfig);
  EXPECT_EQ(cli({"frobnicate"}), kExitConfig);
  EXPECT_EQ(cli({"diag", (dir / "out" / "chain_0.csv").string()}), kExitOk);
  EXPECT_EQ(cli({"diag", (dir / "nothing.csv").string()}), kExitFailure);
  EXPECT_EQ(cli({"sweep-rank", "--config", cfg.string(), "--ranks", "1,x"}), kExitConfig);
}
