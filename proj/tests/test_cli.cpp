#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

// End-to-end checks of the command-line surface; the binary path comes from
// the build system.
namespace {
namespace fs = std::filesystem;
using nlohmann::json;

const char* cli_path() { return TROT_CLI_PATH; }

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("trot_cli_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

int run(const std::string& args, const std::string& capture_to = "/dev/null") {
  const std::string cmd = std::string(cli_path()) + " " + args + " >" + capture_to + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path);
  out << content;
}

const char* kProblem = R"({"r": [0.5, 0.5], "c": [0.3, 0.7], "M": [[0.0, 1.0], [1.0, 0.2]]})";
}  // namespace

TEST_CASE("solve: valid problem writes plan, duals, trace; exit 0") {
  TempDir dir;
  write_file(dir.file("prob.json"), kProblem);
  const int code = run("solve --problem " + dir.file("prob.json") + " --q 1 --lambda 3 --out " +
                       dir.file("out"));
  CHECK(code == 0);
  auto plan = json::parse(read_file(dir.file("out/plan.json")));
  CHECK(plan.at("converged").get<bool>());
  CHECK(plan.at("row_residual").get<double>() < 1e-7);
  auto duals = json::parse(read_file(dir.file("out/duals.json")));
  CHECK(duals.at("kkt_residual").get<double>() < 1e-5);
  const std::string trace = read_file(dir.file("out/trace.jsonl"));
  CHECK(trace.find("\"objective\":") != std::string::npos);
}

TEST_CASE("solve: malformed marginals exit 2 naming the constraint") {
  TempDir dir;
  write_file(dir.file("bad.json"), R"({"r": [0.6, 0.6], "c": [0.5, 0.5], "M": [[0, 1], [1, 0]]})");
  const std::string log = dir.file("log.txt");
  const int code = run("solve --problem " + dir.file("bad.json") + " --out " + dir.file("out"), log);
  CHECK(code == 2);
  CHECK(read_file(log).find("sum to 1") != std::string::npos);
}

TEST_CASE("solve: heatmaps differ across q (plan-shape reproduction)") {
  TempDir dir;
  write_file(dir.file("prob.json"), kProblem);
  CHECK(run("solve --problem " + dir.file("prob.json") + " --q 0.5 --lambda 2 --emit-heatmap --out " +
            dir.file("half")) == 0);
  CHECK(run("solve --problem " + dir.file("prob.json") + " --q 2 --lambda 2 --emit-heatmap --out " +
            dir.file("two")) == 0);
  const std::string a = read_file(dir.file("half/heatmap.csv"));
  const std::string b = read_file(dir.file("two/heatmap.csv"));
  CHECK(!a.empty());
  CHECK(a != b);
}

TEST_CASE("unknown flags are a hard error; --help documents the surface") {
  TempDir dir;
  CHECK(run("solve --bogus-flag x") != 0);
  const std::string help = dir.file("help.txt");
  CHECK(run("--help", help) == 0);
  const std::string text = read_file(help);
  for (const char* sub : {"solve", "infer", "cv", "sweep", "synth"})
    CHECK(text.find(sub) != std::string::npos);
  const std::string solve_help = dir.file("solve_help.txt");
  CHECK(run("solve --help", solve_help) == 0);
  const std::string solve_text = read_file(solve_help);
  for (const char* flag : {"--q", "--lambda", "--cost", "--gamma", "--tol", "--max-iters",
                           "--production-mods", "--jobs", "--seed", "--out", "--strict",
                           "--kl-direction", "--emit-heatmap", "--config"})
    CHECK(solve_text.find(flag) != std::string::npos);
}

TEST_CASE("config file sets defaults, explicit flags override") {
  TempDir dir;
  write_file(dir.file("prob.json"), kProblem);
  write_file(dir.file("cfg.json"), R"({"lambda": 7.0, "q": 1.0})");
  CHECK(run("solve --config " + dir.file("cfg.json") + " --problem " + dir.file("prob.json") +
            " --out " + dir.file("a")) == 0);
  CHECK(json::parse(read_file(dir.file("a/plan.json"))).at("lambda").get<double>() == 7.0);
  CHECK(run("solve --config " + dir.file("cfg.json") + " --problem " + dir.file("prob.json") +
            " --lambda 9 --out " + dir.file("b")) == 0);
  CHECK(json::parse(read_file(dir.file("b/plan.json"))).at("lambda").get<double>() == 9.0);
}

TEST_CASE("synth + infer: deterministic byte-identical outputs under a fixed seed") {
  TempDir dir;
  const std::string synth_args = " --regions 4 --records 800 --coupling 0.7 --seed 11 --out ";
  CHECK(run("synth" + synth_args + dir.file("d1")) == 0);
  CHECK(run("synth" + synth_args + dir.file("d2")) == 0);
  CHECK(read_file(dir.file("d1/records.csv")) == read_file(dir.file("d2/records.csv")));
  CHECK(read_file(dir.file("d1/truth.json")) == read_file(dir.file("d2/truth.json")));

  const std::string infer_args = " --cost survey --q 1 --lambda 5 --jobs 2 --out ";
  CHECK(run("infer --data " + dir.file("d1/records.csv") + " --truth " + dir.file("d1/truth.json") +
            infer_args + dir.file("r1")) == 0);
  CHECK(run("infer --data " + dir.file("d2/records.csv") + " --truth " + dir.file("d2/truth.json") +
            infer_args + dir.file("r2")) == 0);
  CHECK(read_file(dir.file("r1/report.json")) == read_file(dir.file("r2/report.json")));
  CHECK(read_file(dir.file("r1/report.csv")) == read_file(dir.file("r2/report.csv")));
}

TEST_CASE("cv: single-point grid returns that point") {
  TempDir dir;
  CHECK(run("synth --regions 4 --records 500 --coupling 0.5 --seed 3 --out " + dir.file("d")) == 0);
  CHECK(run("cv --data " + dir.file("d/records.csv") + " --cost no_prior --q-grid 2 --lambda-grid 0.7"
            " --holdin-district D1 --out " + dir.file("cv")) == 0);
  auto cv = json::parse(read_file(dir.file("cv/cv.json")));
  CHECK(cv.at("best").at("q").get<double>() == 2.0);
  CHECK(cv.at("best").at("lambda").get<double>() == 0.7);
}

TEST_CASE("infer with no_prior at q = 1 matches the independence baseline row") {
  TempDir dir;
  CHECK(run("synth --regions 3 --records 1500 --coupling 0.8 --seed 21 --out " + dir.file("d")) == 0);
  CHECK(run("infer --data " + dir.file("d/records.csv") + " --cost no_prior --q 1 --lambda 2 --out " +
            dir.file("r")) == 0);
  auto report = json::parse(read_file(dir.file("r/report.json")));
  double independence_kl = -1.0, trot_kl = -2.0;
  for (const auto& method : report.at("methods")) {
    if (method.at("name") == "independence") independence_kl = method.at("mean_kl").get<double>();
    if (method.at("name") == "trot") trot_kl = method.at("mean_kl").get<double>();
  }
  CHECK(trot_kl == doctest::Approx(independence_kl).epsilon(1e-6));
}

TEST_CASE("sweep commands emit their reports") {
  TempDir dir;
  CHECK(run("sweep --kind triangle --trials 10 --beta 1 --lambda 2 --n 4 --seed 5 --out " +
            dir.file("t")) == 0);
  auto triangle = json::parse(read_file(dir.file("t/sweep.json")));
  CHECK(triangle.at("violations").get<int>() == 0);

  CHECK(run("sweep --kind gluing --trials 15 --n 3 --seed 6 --out " + dir.file("g")) == 0);
  CHECK(json::parse(read_file(dir.file("g/sweep.json"))).at("violations").get<int>() == 0);

  CHECK(run("sweep --kind indiscernibles --trials 5 --q 1 --lambda 2 --n 4 --seed 7 --out " +
            dir.file("i")) == 0);
  CHECK(json::parse(read_file(dir.file("i/sweep.json"))).at("violations").get<int>() == 0);

  CHECK(run("sweep --kind bogus") == 2);
}
