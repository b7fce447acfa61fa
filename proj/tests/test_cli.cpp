#include "doctest.h"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("dynmatch_cli_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

Run cli(const std::string& args) {
  static int counter = 0;
  const fs::path dir = fs::temp_directory_path();
  const std::string tag = std::to_string(::getpid()) + "_" + std::to_string(counter++);
  const fs::path out = dir / ("dynmatch_cli_out_" + tag), err = dir / ("dynmatch_cli_err_" + tag);
  const std::string cmd = std::string("\"") + DYNMATCH_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  fs::remove(out);
  fs::remove(err);
  return r;
}

std::string data(const std::string& name) { return std::string(DYNMATCH_DATA_DIR) + "/" + name; }

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("validate accepts the example") {
    const Run r = cli("validate --model " + data("example2x2.json"));
    CHECK(r.code == 0);
    CHECK(r.out == "OK\n");
  }

  TEST_CASE("validate reports violations with exit code 1") {
    auto doc = nlohmann::json::parse(slurp(data("example2x2.json")));
    doc["beta"] = 1.5;
    const fs::path d = scratch_dir("invalid");
    std::ofstream(d / "bad.json") << doc.dump();
    const Run r = cli("validate --model " + (d / "bad.json").string());
    CHECK(r.code == 1);
    CHECK(r.err.find("beta") != std::string::npos);
    fs::remove_all(d);
  }

  TEST_CASE("usage errors exit with code 2") {
    CHECK(cli("").code == 2);
    CHECK(cli("frobnicate").code == 2);
    CHECK(cli("validate --model " + data("example2x2.json") + " --bogus").code == 2);
    const Run missing = cli("validate --model /nonexistent/model.json");
    CHECK(missing.code == 2);
    CHECK(!missing.err.empty());
    CHECK(cli("solve-stationary --model " + data("example2x2.json") + " --method pd").code == 2);
    CHECK(cli("solve-dynamics --model " + data("example2x2.json") + " --start 0.5,0.5").code == 2);
    CHECK(cli("simulate-path --model " + data("example2x2.json")).code == 2);  // --horizon is required
  }

  TEST_CASE("--help documents every flag of every command") {
    const std::vector<std::pair<std::string, std::vector<std::string>>> expected = {
        {"validate", {"--model"}},
        {"solve-stationary", {"--model", "--method", "--tau", "--delta", "--max-iters", "--seed", "--starts", "--out", "--format"}},
        {"solve-dynamics",
         {"--model", "--grid-res", "--horizon", "--start", "--tol", "--max-iters", "--anderson", "--value-in", "--threads",
          "--out", "--format"}},
        {"simulate-path",
         {"--model", "--grid-res", "--horizon", "--start", "--worker", "--seed", "--value-in", "--threads", "--out",
          "--format"}},
        {"estimate",
         {"--data", "--basis", "--method", "--tau", "--delta", "--max-iters", "--bootstrap", "--seed", "--threads",
          "--out", "--format"}},
        {"synth-data", {"--basis", "--model", "--lambda", "--sample-size", "--population", "--seed", "--out", "--format"}},
        {"bench", {"--sizes", "--reps", "--mode", "--delta", "--tau", "--seed", "--parallel", "--threads", "--out", "--format"}},
    };
    const Run top = cli("--help");
    CHECK(top.code == 0);
    for (const auto& [cmd, flags] : expected) {
      CHECK(top.out.find(cmd) != std::string::npos);
      const Run r = cli(cmd + " --help");
      CHECK(r.code == 0);
      for (const auto& f : flags) {
        INFO(cmd << " " << f);
        CHECK(r.out.find(f) != std::string::npos);
      }
    }
  }

  TEST_CASE("stationary solve: files and byte-identical output") {
    const fs::path d = scratch_dir("stationary");
    const std::string args = "solve-stationary --model " + data("example2x2_logit.json") + " --method newton --out " + d.string();
    const Run a = cli(args), b = cli(args);
    REQUIRE(a.code == 0);
    CHECK(a.out == b.out);
    for (const char* f : {"solution.json", "matching.csv", "wages.csv", "trace.csv", "masses.csv"}) CHECK(fs::exists(d / f));
    const auto doc = nlohmann::json::parse(a.out);
    CHECK(doc.contains("state"));
    const Run csv = cli("solve-stationary --model " + data("example2x2_logit.json") + " --format csv");
    CHECK(csv.code == 0);
    CHECK(csv.out.rfind("x,y,mass\n", 0) == 0);
    fs::remove_all(d);
  }

  TEST_CASE("dynamics and paths") {
    const fs::path d = scratch_dir("dynamics");
    const std::string model = data("example2x2_logit.json");
    const Run r = cli("solve-dynamics --model " + model + " --grid-res 4 --horizon 3 --start .6,.4/.5,.5 --format csv --out " +
                      d.string());
    REQUIRE(r.code == 0);
    CHECK(r.out.rfind("period,", 0) == 0);
    CHECK(fs::exists(d / "value_field.json"));
    CHECK(fs::exists(d / "path.csv"));
    const Run p = cli("simulate-path --model " + model + " --grid-res 4 --horizon 4 --worker l --seed 3 --value-in " +
                      (d / "value_field.json").string());
    REQUIRE(p.code == 0);
    const auto doc = nlohmann::json::parse(p.out);
    CHECK(doc["individual"].size() == 4);
    CHECK(cli("simulate-path --model " + model + " --grid-res 4 --horizon 4 --worker l --seed 3 --value-in " +
              (d / "value_field.json").string())
              .out == p.out);
    CHECK(cli("simulate-path --model " + model + " --grid-res 4 --horizon 2 --worker nobody").code == 2);
    fs::remove_all(d);
  }

  TEST_CASE("synthetic data then estimation on the engineer market") {
    const fs::path d = scratch_dir("estimate");
    const Run s = cli("synth-data --basis " + data("engineer.json") + " --sample-size 100000 --seed 4 --out " + d.string());
    REQUIRE(s.code == 0);
    REQUIRE(fs::exists(d / "data.csv"));
    const std::string args = "estimate --data " + (d / "data.csv").string() + " --basis " + data("engineer.json") +
                             " --method mpec --bootstrap 4 --seed 1 --threads 2";
    const Run e = cli(args);
    REQUIRE(e.code == 0);
    const auto doc = nlohmann::json::parse(e.out);
    REQUIRE(doc["lambda"].size() == 2);
    CHECK(doc["se"].size() == 2);
    CHECK(std::abs(doc["lambda"]["occupation_mismatch"].get<double>() - 1.83) < 0.3);
    CHECK(std::abs(doc["lambda"]["experience_general"].get<double>() - 0.75) < 0.3);
    CHECK(cli(args).out == e.out);
    fs::remove_all(d);
  }

  TEST_CASE("bench command") {
    const Run r = cli("bench --sizes 2x2,3x3 --reps 2 --seed 1 --format csv");
    CHECK(r.code == 0);
    CHECK(r.out.find("method,nx,ny,basis,reps,converged") != std::string::npos);
    CHECK(cli("bench --sizes 2x2x --reps 2").code == 2);
  }
}
