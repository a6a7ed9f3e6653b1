#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "ciag/data_io.hpp"

namespace {

struct CliResult {
  int code = -1;
  std::string output;
};

std::string bench_binary() {
  const char* bin = std::getenv("CIAG_BENCH");
  REQUIRE(bin != nullptr);  // set by ctest; point it at ciag-bench manually otherwise
  return bin;
}

CliResult run_cli(const std::string& args) {
  const std::string cmd = bench_binary() + " " + args + " 2>&1";
  std::FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  CliResult res;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof(buf), pipe)) > 0) res.output.append(buf, n);
  const int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

struct TempPath {
  std::filesystem::path path;
  explicit TempPath(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("ciag_cli_" + name)) {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
  ~TempPath() {
    std::error_code ec;
    std::filesystem::remove(path, ec);
  }
  std::string str() const { return path.string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("cli: no arguments prints usage and fails") {
  const CliResult res = run_cli("");
  CHECK(res.code == 1);
  CHECK(res.output.find("usage:") != std::string::npos);
}

TEST_CASE("cli: help exits cleanly") {
  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("run --help").code == 0);
}

TEST_CASE("cli: unknown command and bad flags fail with code 1") {
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("run --no-such-key 1").code == 1);
  CHECK(run_cli("run --method").code == 1);  // missing value
  CHECK(run_cli("run positional").code == 1);
  CHECK(run_cli("verify-theory --bogus").code == 1);
}

TEST_CASE("cli: run writes a readable trace and converges") {
  TempPath out("run_trace.csv");
  const CliResult res = run_cli(
      "run --dataset synthetic:5:20:3 --method ciag --step const-frac:1 "
      "--out " + out.str());
  CAPTURE(res.output);
  CHECK(res.code == 0);
  CHECK(res.output.find("stop=grad_tol") != std::string::npos);

  const auto trace = ciag::read_trace_csv(out.str());
  REQUIRE(!trace.empty());
  CHECK(trace.front().k == 20);  // warm start counts its pass
  CHECK(trace.back().grad_norm <= 1e-10);
  for (const auto& r : trace) {
    CHECK(r.surrogate_error.has_value());
    CHECK(r.objective_gap.has_value());
  }
}

TEST_CASE("cli: exhausted pass budget maps to exit 3") {
  TempPath out("run_budget.csv");
  const CliResult res = run_cli(
      "run --dataset synthetic:4:10:1 --method ig --step vanishing "
      "--max-passes 5 --grad-tol 1e-13 --out " + out.str());
  CAPTURE(res.output);
  CHECK(res.code == 3);
  CHECK(res.output.find("stop=max_iters") != std::string::npos);
}

TEST_CASE("cli: divergence maps to exit 2") {
  TempPath out("run_div.csv");
  const CliResult res = run_cli(
      "run --dataset synthetic:3:10:1 --method fg --step const:1000 --out " +
      out.str());
  CAPTURE(res.output);
  CHECK(res.code == 2);
  CHECK(res.output.find("stop=diverged") != std::string::npos);
}

TEST_CASE("cli: config and data errors map to exit 1") {
  CHECK(run_cli("run --method ciag").code == 1);  // no dataset
  CHECK(run_cli("run --dataset libsvm:/nonexistent/x.svm --method ciag").code == 1);
  CHECK(run_cli("run --dataset synthetic:5:20:3").code == 1);  // no method
  CHECK(run_cli("run --dataset synthetic:5:20:3 --method sgd").code == 1);
  CHECK(run_cli("run --dataset synthetic:5:20:3 --method ciag --step warp:2").code == 1);
  CHECK(run_cli("compare --dataset synthetic:5:20:3 --assert 'ciag<sgd'").code == 1);
}

TEST_CASE("cli: compare writes traces plus summary and checks assertions") {
  TempPath base("cmp");
  TempPath t1("cmp-ciag.csv"), t2("cmp-iag.csv"), t3("cmp-summary.csv");
  const std::string common =
      "compare --dataset synthetic:5:30:3 --methods ciag,iag "
      "--grad-tol 1e-9 --max-passes 300 --out " + base.str();

  const CliResult good = run_cli(common + " --assert 'ciag<iag'");
  CAPTURE(good.output);
  CHECK(good.code == 0);
  CHECK(good.output.find("assert ciag<iag: ok") != std::string::npos);

  CHECK(std::filesystem::exists(base.str() + "-ciag.csv"));
  CHECK(std::filesystem::exists(base.str() + "-iag.csv"));
  const auto ciag_trace = ciag::read_trace_csv(base.str() + "-ciag.csv");
  CHECK(!ciag_trace.empty());

  const std::string summary = slurp(base.str() + "-summary.csv");
  CHECK(summary.find("method,passes_to_tol,wall_time_s,final_grad_norm,stop_reason") == 0);
  CHECK(summary.find("ciag,") != std::string::npos);
  CHECK(summary.find("iag,") != std::string::npos);

  const CliResult bad = run_cli(common + " --assert 'iag<ciag'");
  CAPTURE(bad.output);
  CHECK(bad.code == 4);
  CHECK(bad.output.find("assert iag<ciag: FAILED") != std::string::npos);

  for (const char* suffix : {"-ciag.csv", "-iag.csv", "-summary.csv"}) {
    std::error_code ec;
    std::filesystem::remove(base.str() + suffix, ec);
  }
}

TEST_CASE("cli: traces are byte-identical across runs with timing off") {
  TempPath a("det_a.csv"), b("det_b.csv");
  const std::string common =
      "run --dataset synthetic:5:25:9 --method ciag --step const-frac:1 "
      "--timing off --out ";
  REQUIRE(run_cli(common + a.str()).code == 0);
  REQUIRE(run_cli(common + b.str()).code == 0);
  CHECK(slurp(a.str()) == slurp(b.str()));
}

TEST_CASE("cli: config files feed the same keys, later flags win") {
  TempPath cfg("run.cfg"), out("cfg_trace.csv"), out2("cfg_trace2.csv");
  {
    std::ofstream f(cfg.path);
    f << "# tiny smoke config\n"
         "dataset = synthetic:4:15:2\n"
         "method = ciag\n"
         "step = const-frac:1\n"
         "timing = off\n"
         "out = " << out.str() << "\n";
  }
  const CliResult res = run_cli("run --config " + cfg.str());
  CAPTURE(res.output);
  CHECK(res.code == 0);
  CHECK(std::filesystem::exists(out.path));

  const CliResult res2 = run_cli("run --config " + cfg.str() + " --out " + out2.str());
  CAPTURE(res2.output);
  CHECK(res2.code == 0);
  CHECK(std::filesystem::exists(out2.path));
  CHECK(slurp(out.str()) == slurp(out2.str()));
}

TEST_CASE("cli: theory self-check passes clean and fails when sabotaged") {
  const CliResult good = run_cli("verify-theory");
  CAPTURE(good.output);
  CHECK(good.code == 0);
  CHECK(good.output.find("PASS recurrence-certificates") != std::string::npos);
  CHECK(good.output.find("FAIL") == std::string::npos);

  const CliResult bad = run_cli("verify-theory --inject-q-inflation");
  CAPTURE(bad.output);
  CHECK(bad.code == 5);
  CHECK(bad.output.find("FAIL recurrence-certificates") != std::string::npos);
}
