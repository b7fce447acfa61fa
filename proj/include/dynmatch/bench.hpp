#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dynmatch {

enum class BenchMode { Equilibrium, Estimation };
const char* to_string(BenchMode m);

struct BenchSize {
  int nx = 2;
  int ny = 2;
  int basis = 0;  // surplus basis length, estimation mode only (0 = default 2)
};

// Statistics of one method at one size.
struct BenchEntry {
  std::string method;
  BenchSize size;
  int reps = 0;
  int converged = 0;
  int min_iterations = -1;  // over converged runs only; -1 when none converged
  int max_iterations = -1;
  double mean_seconds = 0.0;  // over converged runs
};

struct BenchOptions {
  double delta = 1e-6;
  double tau = 0.05;
  double residual_tol = 1e-4;  // a run counts only if its final residual is below this
  bool parallel = false;       // replications in parallel: correctness sweeps only
  int threads = 0;
};

struct BenchReport {
  BenchMode mode = BenchMode::Equilibrium;
  std::uint64_t seed = 0;
  int reps = 0;
  double delta = 1e-6;
  double tau = 0.05;
  std::vector<BenchEntry> entries;  // method-major, sizes in request order
  std::vector<std::string> notes;   // soft checks and caveats

  std::vector<std::string> methods() const;
  std::vector<BenchSize> sizes() const;
  const BenchEntry* find(const std::string& method, const BenchSize& size) const;
};

// Newton and primal-dual on `reps` random markets per size (or the two
// estimators on population data from random bases). The market sequence is a
// function of the seed only.
BenchReport run_benchmark(const std::vector<BenchSize>& sizes, int reps, std::uint64_t seed, BenchMode mode,
                          const BenchOptions& opts = {});

// Aligned text with the row labels "Min iterations", "Max iterations",
// "Mean time elapsed", plus convergence counts and a footnote.
std::string bench_table_text(const BenchReport& report);
std::string bench_table_csv(const BenchReport& report);
BenchReport parse_bench_csv(const std::string& csv);

// "2x2,10x10,5x5x3" -> sizes; throws Error(Config) on malformed input.
std::vector<BenchSize> parse_sizes(const std::string& text);

}  // namespace dynmatch
