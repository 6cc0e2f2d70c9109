#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string output;
};

Outcome run_cli(const std::string& args) {
  const std::string cmd = std::string(DIFFAL_CLI_PATH) + " " + args + " 2>&1";
  Outcome out;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) out.output += buf.data();
  const int status = pclose(pipe);
  out.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return out;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("diffal_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_config(const fs::path& path) {
  std::ofstream(path) << R"({
  "dataset": {"kind": "checkerboard", "n": 300, "grid": 4, "seed": 5},
  "model": {"hidden": [8], "epochs": 5, "learning_rate": 0.01},
  "query": {"batch_size": 5},
  "graph": {"k": 6, "t": 3},
  "rounds": 2,
  "initial_per_class": 2,
  "seeds": [0, 1]
})";
}

}  // namespace

TEST_CASE("usage errors exit with 1") {
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("run --bogus-flag").code == 1);

  const auto missing = run_cli("run --config /nonexistent/diffal.json --out /tmp/x");
  CHECK(missing.code == 1);
  CHECK(missing.output.find("/nonexistent/diffal.json") != std::string::npos);

  const auto no_config = run_cli("compare --out /tmp/x");
  CHECK(no_config.code == 1);

  const auto dir = scratch("badkey");
  std::ofstream(dir / "cfg.json") << R"({"graph": {"kay": 3}})";
  const auto bad = run_cli("run --config " + (dir / "cfg.json").string() + " --out " + dir.string());
  CHECK(bad.code == 1);
  CHECK(bad.output.find("graph.kay") != std::string::npos);
}

TEST_CASE("runtime failures exit with 2") {
  const auto dir = scratch("badfile");
  std::ofstream(dir / "broken.emb1", std::ios::binary) << "EMB1garbage";
  const auto r = run_cli("graph-report --set dataset.kind=emb1 --set dataset.path=" + (dir / "broken.emb1").string());
  CHECK(r.code == 2);
  CHECK(r.output.find("byte offset") != std::string::npos);
}

TEST_CASE("dataset generation and graph report") {
  const auto dir = scratch("gen");
  const auto gen = run_cli("gen-checkerboard --set dataset.n=400 --out " + dir.string());
  REQUIRE(gen.code == 0);
  CHECK(fs::file_size(dir / "pool.emb1") == 16 + 400 * 3 * 4);
  CHECK(fs::exists(dir / "test.emb1"));

  const auto rep = run_cli("graph-report --set dataset.kind=emb1 --set dataset.path=" + (dir / "pool.emb1").string() +
                           " --set graph.k=5 --out " + dir.string());
  REQUIRE(rep.code == 0);
  CHECK(rep.output.find("points 400") != std::string::npos);
  CHECK(slurp(dir / "graph.csv").rfind("i,j,rho,w,m\n", 0) == 0);
}

TEST_CASE("compare writes reproducible curves") {
  const auto dir = scratch("compare");
  write_config(dir / "cfg.json");
  const std::string base = "compare --config " + (dir / "cfg.json").string() + " --criteria diffusion,random";
  REQUIRE(run_cli(base + " --out " + (dir / "a").string()).code == 0);
  REQUIRE(run_cli(base + " --out " + (dir / "b").string()).code == 0);

  const auto curves = slurp(dir / "a" / "curves.csv");
  CHECK(curves == slurp(dir / "b" / "curves.csv"));
  std::istringstream lines(curves);
  std::string line;
  std::getline(lines, line);
  CHECK(line == "criterion,seed,round,labels_used,accuracy,wall_time");
  int rows = 0;
  while (std::getline(lines, line)) ++rows;
  CHECK(rows == 2 * 2 * 3);
  CHECK(fs::exists(dir / "a" / "summary.csv"));
  CHECK(fs::exists(dir / "a" / "timings.csv"));
  CHECK(fs::exists(dir / "a" / "config.json"));

  // Seeds and overrides from the command line.
  REQUIRE(run_cli("run --config " + (dir / "cfg.json").string() + " --seeds 7 --set query.criterion=random --out " +
                  (dir / "c").string())
              .code == 0);
  CHECK(slurp(dir / "c" / "curves.csv").find("random,7,2,") != std::string::npos);
}

TEST_CASE("selfcheck passes") {
  const auto r = run_cli("selfcheck");
  CHECK(r.code == 0);
  CHECK(r.output.find("FAIL") == std::string::npos);
}
