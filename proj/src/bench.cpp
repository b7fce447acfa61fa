#include "dynmatch/bench.hpp"

#include "dynmatch/estimation.hpp"
#include "dynmatch/model_io.hpp"
#include "dynmatch/stationary.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iomanip>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dynmatch {

const char* to_string(BenchMode m) { return m == BenchMode::Equilibrium ? "equilibrium" : "estimation"; }

namespace {

const char* kNewton = "MPEC (Newton)";
const char* kPrimalDual = "Primal-Dual";

bool same_size(const BenchSize& a, const BenchSize& b) { return a.nx == b.nx && a.ny == b.ny && a.basis == b.basis; }

std::string size_label(const BenchSize& s) {
  std::string out = std::to_string(s.nx) + " x " + std::to_string(s.ny);
  if (s.basis > 0) out += " x " + std::to_string(s.basis);
  return out;
}

struct Run {
  bool ok = false;
  int iterations = 0;
  double seconds = 0.0;
};

std::uint64_t run_seed(std::uint64_t seed, size_t size_index, int rep) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(size_index), static_cast<std::uint32_t>(rep)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

template <class F>
Run timed(F&& f) {
  const auto t0 = std::chrono::steady_clock::now();
  Run r = f();
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

// Both methods on one random market.
std::pair<Run, Run> equilibrium_runs(const BenchSize& size, std::uint64_t seed, const BenchOptions& opts) {
  const ModelSpec spec = random_spec(size.nx, size.ny, seed);
  SolverOptions so;
  so.delta = opts.delta;
  so.tau = opts.tau;
  auto solve = [&](bool newton) {
    return timed([&] {
      Run r;
      try {
        const StationarySolution sol = newton ? solve_newton(spec, so) : solve_primal_dual(spec, so);
        r.ok = sol.converged() && sol.residual_sup < opts.residual_tol;
        r.iterations = sol.iterations;
      } catch (const Error&) {
      }
      return r;
    });
  };
  Run a = solve(true);
  Run b = solve(false);
  return {a, b};
}

std::pair<Run, Run> estimation_runs(const BenchSize& size, std::uint64_t seed, const BenchOptions& opts) {
  const int L = size.basis > 0 ? size.basis : 2;
  const ModelSpec base = random_spec(size.nx, size.ny, seed);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  SurplusBasis basis;
  for (int l = 0; l < L; ++l) {
    Mat phi = Mat::Zero(size.nx + 1, size.ny + 1);
    for (int x = 1; x <= size.nx; ++x)
      for (int y = 1; y <= size.ny; ++y) phi(x, y) = unit(rng);
    basis.phi.push_back(phi);
    basis.names.push_back("phi" + std::to_string(l + 1));
  }
  Vec truth(L);
  for (int l = 0; l < L; ++l) truth[l] = unit(rng);
  EstimationDataset data;
  try {
    data = synth_data(basis.apply(base, truth), 0, seed, true);
  } catch (const Error&) {
    return {};
  }
  EstimationOptions eo;
  eo.delta = opts.delta;
  eo.tau = opts.tau;
  eo.lambda0 = Vec::Zero(L);
  auto solve = [&](Estimator method) {
    return timed([&] {
      Run r;
      try {
        const EstimationResult res = estimate(method, base, basis, data, eo);
        r.ok = res.converged() && res.constraint_violation < opts.residual_tol;
        r.iterations = res.iterations;
      } catch (const Error&) {
      }
      return r;
    });
  };
  Run a = solve(Estimator::Mpec);
  Run b = solve(Estimator::PrimalDual);
  return {a, b};
}

BenchEntry summarize(const std::string& method, const BenchSize& size, const std::vector<Run>& runs) {
  BenchEntry e;
  e.method = method;
  e.size = size;
  e.reps = static_cast<int>(runs.size());
  double total = 0.0;
  for (const auto& r : runs) {
    if (!r.ok) continue;
    ++e.converged;
    e.min_iterations = e.min_iterations < 0 ? r.iterations : std::min(e.min_iterations, r.iterations);
    e.max_iterations = std::max(e.max_iterations, r.iterations);
    total += r.seconds;
  }
  e.mean_seconds = e.converged ? total / e.converged : 0.0;
  return e;
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fmt_time(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string item;
  std::stringstream ss(s);
  while (std::getline(ss, item, sep)) out.push_back(item);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

}  // namespace

std::vector<std::string> BenchReport::methods() const {
  std::vector<std::string> out;
  for (const auto& e : entries)
    if (std::find(out.begin(), out.end(), e.method) == out.end()) out.push_back(e.method);
  return out;
}

std::vector<BenchSize> BenchReport::sizes() const {
  std::vector<BenchSize> out;
  for (const auto& e : entries)
    if (std::none_of(out.begin(), out.end(), [&](const BenchSize& s) { return same_size(s, e.size); }))
      out.push_back(e.size);
  return out;
}

const BenchEntry* BenchReport::find(const std::string& method, const BenchSize& size) const {
  for (const auto& e : entries)
    if (e.method == method && same_size(e.size, size)) return &e;
  return nullptr;
}

BenchReport run_benchmark(const std::vector<BenchSize>& sizes, int reps, std::uint64_t seed, BenchMode mode,
                          const BenchOptions& opts) {
  if (reps < 1) throw Error(ErrorCode::Config, "replication count must be at least 1");
  for (const auto& s : sizes)
    if (s.nx < 2 || s.ny < 2) throw Error(ErrorCode::Config, "benchmark sizes must be at least 2 x 2");
  BenchReport report;
  report.mode = mode;
  report.seed = seed;
  report.reps = reps;
  report.delta = opts.delta;
  report.tau = opts.tau;

  std::vector<BenchEntry> first, second;
  for (size_t i = 0; i < sizes.size(); ++i) {
    std::vector<Run> a(reps), b(reps);
    auto one = [&](int r) {
      const std::uint64_t s = run_seed(seed, i, r);
      auto runs = mode == BenchMode::Equilibrium ? equilibrium_runs(sizes[i], s, opts) : estimation_runs(sizes[i], s, opts);
      a[r] = runs.first;
      b[r] = runs.second;
    };
    if (opts.parallel) {
#ifdef _OPENMP
      const int nt = opts.threads > 0 ? opts.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
#endif
      for (int r = 0; r < reps; ++r) one(r);
    } else {
      for (int r = 0; r < reps; ++r) one(r);
    }
    first.push_back(summarize(kNewton, sizes[i], a));
    second.push_back(summarize(kPrimalDual, sizes[i], b));

    // reference ordering: primal-dual is the faster method on large markets
    if (sizes[i].nx >= 30 && sizes[i].ny >= 30 && first.back().converged && second.back().converged) {
      const bool pd_faster = second.back().mean_seconds < first.back().mean_seconds;
      report.notes.push_back("at " + size_label(sizes[i]) + " primal-dual mean time " + fmt_time(second.back().mean_seconds) +
                             " s vs Newton " + fmt_time(first.back().mean_seconds) + " s: " +
                             (pd_faster ? "primal-dual faster, as in the reference ordering"
                                        : "Newton faster, unlike the reference ordering (soft check)"));
    }
  }
  report.entries = first;
  report.entries.insert(report.entries.end(), second.begin(), second.end());
  return report;
}

std::string bench_table_text(const BenchReport& report) {
  const auto sizes = report.sizes();
  std::ostringstream os;
  os << (report.mode == BenchMode::Equilibrium ? "Equilibrium computation" : "Structural estimation") << ": "
     << report.reps << " replications, seed " << report.seed << ", delta " << report.delta << ", tau " << report.tau << "\n";
  const int label_w = 20, col_w = 14;
  os << std::left << std::setw(label_w) << "Types";
  for (const auto& s : sizes) os << std::right << std::setw(col_w) << size_label(s);
  os << "\n";
  for (const auto& method : report.methods()) {
    os << std::left << "[" << method << "]\n";
    auto row = [&](const char* label, auto cell) {
      os << std::left << std::setw(label_w) << label;
      for (const auto& s : sizes) {
        const BenchEntry* e = report.find(method, s);
        os << std::right << std::setw(col_w) << (e ? cell(*e) : std::string("-"));
      }
      os << "\n";
    };
    auto iters = [](int v) { return v < 0 ? std::string("-") : std::to_string(v); };
    row("Min iterations", [&](const BenchEntry& e) { return iters(e.min_iterations); });
    row("Max iterations", [&](const BenchEntry& e) { return iters(e.max_iterations); });
    row("Mean time elapsed", [&](const BenchEntry& e) { return e.converged ? fmt_time(e.mean_seconds) : std::string("-"); });
    row("Converged", [&](const BenchEntry& e) { return std::to_string(e.converged) + "/" + std::to_string(e.reps); });
  }
  os << "Note: Newton iterations are damped Newton steps on the equilibrium system and are not comparable\n"
        "one-for-one with interior-point iterations of a general nonlinear solver. Times are wall-clock seconds\n"
        "over converged runs.\n";
  for (const auto& n : report.notes) os << "Note: " << n << "\n";
  return os.str();
}

std::string bench_table_csv(const BenchReport& report) {
  std::ostringstream os;
  os << "# mode=" << to_string(report.mode) << ",seed=" << report.seed << ",reps=" << report.reps
     << ",delta=" << fmt_double(report.delta) << ",tau=" << fmt_double(report.tau) << "\n";
  for (const auto& n : report.notes) os << "# note: " << n << "\n";
  os << "method,nx,ny,basis,reps,converged,min_iterations,max_iterations,mean_seconds\n";
  for (const auto& e : report.entries)
    os << e.method << "," << e.size.nx << "," << e.size.ny << "," << e.size.basis << "," << e.reps << "," << e.converged
       << "," << e.min_iterations << "," << e.max_iterations << "," << fmt_double(e.mean_seconds) << "\n";
  return os.str();
}

BenchReport parse_bench_csv(const std::string& csv) {
  BenchReport r;
  std::stringstream in(csv);
  std::string line;
  bool header = false;
  auto fail = [](const std::string& why) { throw Error(ErrorCode::Config, "bench CSV: " + why); };
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (line.rfind("# note: ", 0) == 0) {
        r.notes.push_back(line.substr(8));
        continue;
      }
      if (line.rfind("# ", 0) == 0) {
        for (const auto& kv : split(line.substr(2), ',')) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) fail("bad metadata '" + kv + "'");
          const std::string k = kv.substr(0, eq), v = kv.substr(eq + 1);
          if (k == "mode") r.mode = v == "estimation" ? BenchMode::Estimation : BenchMode::Equilibrium;
          else if (k == "seed") r.seed = std::stoull(v);
          else if (k == "reps") r.reps = std::stoi(v);
          else if (k == "delta") r.delta = std::stod(v);
          else if (k == "tau") r.tau = std::stod(v);
        }
        continue;
      }
      if (!header) {
        header = true;
        continue;
      }
      const auto f = split(line, ',');
      if (f.size() != 9) fail("expected 9 fields in '" + line + "'");
      BenchEntry e;
      e.method = f[0];
      e.size = {std::stoi(f[1]), std::stoi(f[2]), std::stoi(f[3])};
      e.reps = std::stoi(f[4]);
      e.converged = std::stoi(f[5]);
      e.min_iterations = std::stoi(f[6]);
      e.max_iterations = std::stoi(f[7]);
      e.mean_seconds = std::stod(f[8]);
      r.entries.push_back(e);
    }
  } catch (const std::logic_error&) {
    fail("malformed number");
  }
  return r;
}

std::vector<BenchSize> parse_sizes(const std::string& text) {
  std::vector<BenchSize> out;
  for (const auto& item : split(text, ',')) {
    const auto parts = split(item, 'x');
    if (parts.size() < 2 || parts.size() > 3) throw Error(ErrorCode::Config, "size '" + item + "' is not NxM or NxMxL");
    BenchSize s;
    try {
      size_t used = 0;
      std::vector<int> v;
      for (const auto& p : parts) {
        v.push_back(std::stoi(p, &used));
        if (used != p.size()) throw std::invalid_argument(p);
      }
      s.nx = v[0];
      s.ny = v[1];
      if (v.size() == 3) s.basis = v[2];
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::Config, "size '" + item + "' is not NxM or NxMxL");
    }
    if (s.nx < 2 || s.ny < 2 || s.basis < 0) throw Error(ErrorCode::Config, "sizes must be at least 2x2");
    out.push_back(s);
  }
  if (out.empty()) throw Error(ErrorCode::Config, "no sizes given");
  return out;
}

}  // namespace dynmatch
