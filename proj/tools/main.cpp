#include "dynmatch/bench.hpp"
#include "dynmatch/dynamics.hpp"
#include "dynmatch/estimation.hpp"
#include "dynmatch/model_io.hpp"
#include "dynmatch/report.hpp"
#include "dynmatch/stationary.hpp"

#include "CLI11.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace dynmatch;

namespace {

// Usage problems that only show up after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Commands report failure through this code; exceptions map to 1 or 2.
constexpr int kOk = 0, kFailed = 1, kUsage = 2;

struct Common {
  std::string model, out, format = "json";
  std::uint64_t seed = 0;
  int threads = 0;
};

void set_threads(int threads) {
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#else
  (void)threads;
#endif
}

void write_out(const std::string& dir, const std::string& name, const std::string& text) {
  if (dir.empty()) return;
  fs::create_directories(dir);
  write_text_file((fs::path(dir) / name).string(), text);
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

Vec parse_list(const std::string& text, const char* what) {
  std::vector<double> v;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      v.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::logic_error&) {
      throw UsageError(std::string("malformed ") + what + ": '" + text + "'");
    }
  }
  return Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

AggregateState parse_start(const std::string& text, const ModelSpec& spec) {
  if (text.empty()) return uniform_state(spec);
  const auto slash = text.find('/');
  if (slash == std::string::npos) throw UsageError("--start must look like m1,m2,.../n1,n2,...");
  AggregateState s{parse_list(text.substr(0, slash), "--start"), parse_list(text.substr(slash + 1), "--start")};
  if (s.m.size() != spec.nx() || s.n.size() != spec.ny())
    throw UsageError("--start needs " + std::to_string(spec.nx()) + " worker and " + std::to_string(spec.ny()) + " firm masses");
  return s;
}

ModelSpec load_valid_model(const std::string& path) {
  ModelSpec spec = load_model(path);
  const auto v = validate_model(spec);
  if (!v.empty()) {
    for (const auto& e : v) std::cerr << "invalid model: " << e.code << ": " << e.message << "\n";
    throw Error(ErrorCode::Config, "model failed validation");
  }
  return spec;
}

void add_model(CLI::App* c, Common& o, bool required = true) {
  auto* opt = c->add_option("--model", o.model, "Model file (JSON schema in the README)")->check(CLI::ExistingFile);
  if (required) opt->required();
}

// Each command keeps its own format slot so that defaults do not leak
// between commands.
std::map<std::string, std::string> g_formats;

void add_output(CLI::App* c, Common& o, std::vector<std::string> formats) {
  c->add_option("--out", o.out, "Output directory; created if missing");
  std::string& slot = g_formats[c->get_name()];
  slot = formats.front();
  c->add_option("--format", slot, "Format of standard output")->check(CLI::IsMember(formats))->capture_default_str();
}

// ---------------------------------------------------------------------------

int cmd_validate(const Common& o) {
  const ModelSpec spec = load_model(o.model);
  const auto v = validate_model(spec);
  if (v.empty()) {
    std::cout << "OK\n";
    return kOk;
  }
  for (const auto& e : v) {
    std::cerr << e.code << ": " << e.message;
    if (e.row >= 0) std::cerr << " (row " << e.row << ", col " << e.col << ")";
    std::cerr << "\n";
  }
  return kFailed;
}

struct StationaryArgs {
  std::string method;
  double tau = 0.05, delta = 1e-6;
  int max_iters = 200000;
  int starts = 4;
};

int cmd_solve_stationary(const Common& o, const StationaryArgs& a) {
  const ModelSpec spec = load_valid_model(o.model);
  std::string method = a.method.empty() ? (spec.sharp() ? "anneal" : "pd") : a.method;
  if (spec.sharp() && method != "anneal") throw UsageError("models without shocks need --method anneal");
  if (!spec.sharp() && method == "anneal") throw UsageError("--method anneal needs a model without shocks");
  SolverOptions so;
  so.tau = a.tau;
  so.delta = a.delta;
  so.max_iters = a.max_iters;
  so.seed = o.seed;
  so.check();

  StationarySolution sol = method == "pd" ? solve_primal_dual(spec, so)
                           : method == "newton" ? solve_newton(spec, so)
                                                : solve_noshock_annealed(spec, so);
  json doc = solution_to_json(spec, sol, method);
  if (method == "anneal" && sol.converged() && a.starts > 0) {
    const auto alts = anneal_alternatives(spec, so, sol, a.starts);
    if (!alts.empty()) {
      std::cerr << "warning: " << alts.size() << " other stationary state(s) found from random starts; all are reported\n";
      json list = json::array();
      for (const auto& s : alts) list.push_back(solution_to_json(spec, s, method));
      doc["alternatives"] = list;
      doc["multiplicity_warning"] = true;
    }
  }
  write_out(o.out, "solution.json", dump(doc));
  write_out(o.out, "matching.csv", matching_csv(spec, sol.matching));
  write_out(o.out, "wages.csv", wages_csv(spec, sol.wages));
  write_out(o.out, "trace.csv", trace_csv(sol.trace));
  write_out(o.out, "masses.csv", masses_csv(spec, sol.state, sol.payoffs));
  std::cout << (o.format == "json" ? dump(doc) : matching_csv(spec, sol.matching));
  if (!sol.converged()) {
    std::cerr << "not converged: " << to_string(sol.status) << (sol.message.empty() ? "" : ": " + sol.message) << "\n";
    return kFailed;
  }
  return kOk;
}

struct DynamicsArgs {
  int grid_res = 16, horizon = 0, max_sweeps = 5000, anderson = 5;
  double tol = 1e-6;
  std::string start, value_in, worker;
};

VfiResult run_vfi(const ModelSpec& spec, const SimplexGrid& grid, const Common& o, const DynamicsArgs& a) {
  VfiOptions vo;
  vo.tol = a.tol;
  vo.max_sweeps = a.max_sweeps;
  vo.anderson_window = a.anderson;
  vo.threads = o.threads;
  ValueField start;
  const bool warm = !a.value_in.empty();
  if (warm) start = value_field_from_json(read_json_file(a.value_in), spec, a.grid_res);
  VfiResult r = vfi_solve(spec, grid, vo, warm ? &start : nullptr, true);
  std::cerr << "value iteration: " << r.sweeps << " sweeps, " << (r.converged ? "converged" : "NOT converged") << ", "
            << r.seconds << " s\n";
  return r;
}

json vfi_json(const VfiResult& r, const SimplexGrid& grid) {
  return {{"grid_resolution", grid.resolution()},
          {"nodes", grid.size()},
          {"sweeps", r.sweeps},
          {"converged", r.converged},
          {"final_difference", r.diffs.empty() ? 0.0 : r.diffs.back()},
          {"anderson_fallbacks", r.anderson_fallbacks},
          {"interpolation", r.W.method}};
}

int cmd_solve_dynamics(const Common& o, const DynamicsArgs& a) {
  const ModelSpec spec = load_valid_model(o.model);
  const SimplexGrid grid(spec, a.grid_res);
  const AggregateState start = parse_start(a.start, spec);
  const VfiResult r = run_vfi(spec, grid, o, a);
  write_out(o.out, "value_field.json", dump(value_field_to_json(spec, grid, r.W)));
  write_out(o.out, "value_field.csv", value_field_csv(spec, grid, r.W));
  std::ostringstream diffs;
  diffs << "sweep,difference\n";
  for (size_t i = 0; i < r.diffs.size(); ++i) diffs << i + 1 << "," << format_double(r.diffs[i]) << "\n";
  write_out(o.out, "trace.csv", diffs.str());

  json doc{{"value_iteration", vfi_json(r, grid)}};
  std::string csv;
  if (a.horizon > 0) {
    const auto path = simulate_aggregate_path(spec, grid, r.W, start, a.horizon);
    write_out(o.out, "path.csv", path_csv(spec, path));
    write_out(o.out, "path_matching.csv", path_matching_csv(spec, path));
    doc["path"] = path_to_json(spec, path)["periods"];
    csv = path_csv(spec, path);
  } else {
    csv = value_field_csv(spec, grid, r.W);
  }
  std::cout << (o.format == "json" ? dump(doc) : csv);
  if (!r.converged) {
    std::cerr << "value iteration did not reach tolerance " << a.tol << " in " << a.max_sweeps << " sweeps\n";
    return kFailed;
  }
  return kOk;
}

int cmd_simulate_path(const Common& o, const DynamicsArgs& a) {
  const ModelSpec spec = load_valid_model(o.model);
  if (a.horizon < 1) throw UsageError("--horizon must be at least 1");
  const SimplexGrid grid(spec, a.grid_res);
  const AggregateState start = parse_start(a.start, spec);
  ValueField W;
  bool converged = true;
  if (!a.value_in.empty()) {
    W = value_field_from_json(read_json_file(a.value_in), spec, a.grid_res);
  } else {
    const VfiResult r = run_vfi(spec, grid, o, a);
    W = r.W;
    converged = r.converged;
  }
  const auto path = simulate_aggregate_path(spec, grid, W, start, a.horizon);
  write_out(o.out, "path.csv", path_csv(spec, path));
  write_out(o.out, "path_matching.csv", path_matching_csv(spec, path));
  json doc = path_to_json(spec, path);
  if (!a.worker.empty()) {
    const auto& wl = spec.types.workers;
    const auto it = std::find(wl.begin(), wl.end(), a.worker);
    if (it == wl.end()) throw UsageError("unknown worker type '" + a.worker + "'");
    const auto career = simulate_individual_path(spec, path, static_cast<int>(it - wl.begin()), a.horizon, o.seed);
    write_out(o.out, "individual.csv", individual_path_csv(spec, career));
    json steps = json::array();
    for (const auto& s : career)
      steps.push_back({{"period", s.period},
                       {"type", wl[s.type]},
                       {"partner", s.partner == 0 ? std::string("0") : spec.types.firms[s.partner - 1]}});
    doc["individual"] = steps;
  }
  std::cout << (o.format == "json" ? dump(doc) : path_csv(spec, path));
  return converged ? kOk : kFailed;
}

struct EstimateArgs {
  std::string data, basis, method = "pd";
  double tau = 0.05, delta = 1e-6;
  int max_iters = 200000, bootstrap = 50;
};

int cmd_estimate(const Common& o, const EstimateArgs& a) {
  const BasisFile bf = load_basis(a.basis);
  const auto v = validate_model(bf.base);
  for (const auto& e : v) std::cerr << "invalid model: " << e.code << ": " << e.message << "\n";
  if (!v.empty()) return kFailed;
  const EstimationDataset data = load_dataset(a.data, bf.base);
  const Estimator method = a.method == "pd" ? Estimator::PrimalDual : Estimator::Mpec;
  EstimationOptions eo;
  eo.tau = a.tau;
  eo.delta = a.delta;
  eo.max_iters = a.max_iters;
  const EstimationResult res = estimate(method, bf.base, bf.basis, data, eo);

  std::optional<BootstrapResult> boot;
  if (a.bootstrap > 0 && res.converged() && data.sample_size < 1)
    std::cerr << "warning: the data carry no sample size (shares, not counts); skipping the bootstrap\n";
  if (a.bootstrap > 0 && res.converged() && data.sample_size > 0) {
    BootstrapOptions bo;
    bo.replicates = a.bootstrap;
    bo.seed = o.seed;
    bo.method = method;
    bo.threads = o.threads;
    bo.estimation = eo;
    boot = bootstrap_se(bf.base, bf.basis, data, bo);
  }
  const BootstrapResult* bp = boot ? &*boot : nullptr;
  const json doc = estimation_to_json(bf.basis, res, bp, method);
  const std::string table = estimation_table(bf.basis, res, bp);
  write_out(o.out, "estimate.json", dump(doc));
  write_out(o.out, "estimate.txt", table);
  write_out(o.out, "trace.csv", trace_csv(res.trace));
  write_out(o.out, "matching.csv", matching_csv(bf.base, res.matching));
  if (o.format == "json") {
    std::cout << dump(doc);
    std::cerr << table;
  } else {
    std::cout << "parameter,estimate,se\n";
    for (int l = 0; l < bf.basis.size(); ++l)
      std::cout << bf.basis.names[l] << "," << format_double(res.lambda[l]) << ","
                << (bp ? format_double(bp->se[l]) : std::string()) << "\n";
  }
  if (!res.converged()) {
    std::cerr << "estimation did not converge: " << res.message << "\n";
    return kFailed;
  }
  return kOk;
}

struct SynthArgs {
  std::string basis, lambda;
  long long sample_size = 100000;
  bool population = false;
};

int cmd_synth_data(const Common& o, const SynthArgs& a) {
  ModelSpec spec;
  if (!a.basis.empty()) {
    const BasisFile bf = load_basis(a.basis);
    Vec lambda = a.lambda.empty() ? bf.basis.lambda : parse_list(a.lambda, "--lambda");
    if (lambda.size() != bf.basis.size())
      throw UsageError("need " + std::to_string(bf.basis.size()) + " coefficients: give --lambda or a 'lambda' entry");
    spec = bf.basis.apply(bf.base, lambda);
  } else if (!o.model.empty()) {
    spec = load_model(o.model);
  } else {
    throw UsageError("synth-data needs --basis or --model");
  }
  const auto v = validate_model(spec);
  for (const auto& e : v) std::cerr << "invalid model: " << e.code << ": " << e.message << "\n";
  if (!v.empty()) return kFailed;
  const EstimationDataset d = synth_data(spec, a.sample_size, o.seed, a.population);
  std::string text;
  if (o.format == "json") {
    json counts = json::array();
    for (const auto& c : observed_cells(spec, d))
      counts.push_back({c.row == 0 ? std::string("0") : spec.types.workers[c.row - 1],
                        c.col == 0 ? std::string("0") : spec.types.firms[c.col - 1], d.counts(c.row, c.col)});
    json doc{{"counts", counts}, {"sample_size", d.sample_size}, {"margins", d.has_margins}};
    if (d.flow_m.size())
      doc["flows"] = {{"workers", std::vector<double>(d.flow_m.data(), d.flow_m.data() + d.flow_m.size())},
                      {"firms", std::vector<double>(d.flow_n.data(), d.flow_n.data() + d.flow_n.size())}};
    text = dump(doc);
    write_out(o.out, "data.json", text);
  } else {
    // integer counts so the file carries its sample size
    EstimationDataset out = d;
    if (!a.population) out.counts = (d.counts * static_cast<double>(d.sample_size)).array().round().matrix();
    text = dataset_to_csv(spec, out);
    write_out(o.out, "data.csv", text);
  }
  std::cout << text;
  return kOk;
}

struct BenchArgs {
  std::string sizes = "2x2,10x10", mode = "equilibrium";
  int reps = 10;
  double delta = 1e-6, tau = 0.05;
  bool parallel = false;
};

int cmd_bench(const Common& o, const BenchArgs& a) {
  BenchOptions bo;
  bo.delta = a.delta;
  bo.tau = a.tau;
  bo.parallel = a.parallel;
  bo.threads = o.threads;
  std::vector<BenchSize> sizes;
  try {
    sizes = parse_sizes(a.sizes);
  } catch (const Error& e) {
    throw UsageError(std::string("--sizes: ") + e.what());
  }
  const BenchReport r = run_benchmark(sizes, a.reps, o.seed,
                                      a.mode == "estimation" ? BenchMode::Estimation : BenchMode::Equilibrium, bo);
  write_out(o.out, "bench.csv", bench_table_csv(r));
  write_out(o.out, "bench.txt", bench_table_text(r));
  std::cout << (o.format == "csv" ? bench_table_csv(r) : bench_table_text(r));
  for (const auto& e : r.entries)
    if (e.converged < e.reps) return kFailed;
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dynamic matching markets: stationary equilibria, aggregate dynamics and structural estimation"};
  app.require_subcommand(1);
  Common o;
  StationaryArgs st;
  DynamicsArgs dy;
  EstimateArgs es;
  SynthArgs sy;
  BenchArgs be;

  auto* validate = app.add_subcommand("validate", "Check a model file; prints OK or the violations");
  add_model(validate, o);

  auto* stationary = app.add_subcommand("solve-stationary", "Stationary equilibrium of a model");
  add_model(stationary, o);
  stationary->add_option("--method", st.method, "pd | newton | anneal (default: pd with shocks, anneal without)")
      ->check(CLI::IsMember({"pd", "newton", "anneal"}));
  stationary->add_option("--tau", st.tau, "Primal-dual step size")->capture_default_str();
  stationary->add_option("--delta", st.delta, "Stopping threshold")->capture_default_str();
  stationary->add_option("--max-iters", st.max_iters, "Iteration budget")->capture_default_str();
  stationary->add_option("--seed", o.seed, "Seed of the random restarts used to detect multiple equilibria")->capture_default_str();
  stationary->add_option("--starts", st.starts, "Random restarts for the multiplicity check (anneal; 0 = off)")
      ->capture_default_str();
  add_output(stationary, o, {"json", "csv"});

  auto add_dynamics = [&](CLI::App* c, bool path_cmd) {
    add_model(c, o);
    c->add_option("--grid-res", dy.grid_res, "Lattice resolution per side of the market")->capture_default_str();
    auto* h = c->add_option("--horizon", dy.horizon, path_cmd ? "Periods to simulate" : "Periods of the path to simulate (0 = none)");
    if (path_cmd) h->required();
    else h->capture_default_str();
    c->add_option("--start", dy.start, "Initial state m1,m2,.../n1,n2,... (default uniform)");
    c->add_option("--tol", dy.tol, "Value iteration tolerance (sup-norm)")->capture_default_str();
    c->add_option("--max-iters", dy.max_sweeps, "Value iteration sweep budget")->capture_default_str();
    c->add_option("--anderson", dy.anderson, "Anderson window (0 = plain iteration)")->capture_default_str();
    c->add_option("--value-in", dy.value_in, "Value field snapshot to start from")->check(CLI::ExistingFile);
    c->add_option("--threads", o.threads, "OpenMP threads (0 = default)")->capture_default_str();
    add_output(c, o, {"json", "csv"});
  };
  auto* dynamics = app.add_subcommand("solve-dynamics", "Value iteration on the aggregate-state grid, optionally with a path");
  add_dynamics(dynamics, false);
  auto* path = app.add_subcommand("simulate-path", "Aggregate path, and optionally one worker's career");
  add_dynamics(path, true);
  path->add_option("--worker", dy.worker, "Worker type whose career to simulate");
  path->add_option("--seed", o.seed, "Seed of the career draws")->capture_default_str();

  auto* est = app.add_subcommand("estimate", "Estimate surplus coefficients from matching data");
  est->add_option("--data", es.data, "Dataset (CSV x,y,count or JSON)")->required()->check(CLI::ExistingFile);
  est->add_option("--basis", es.basis, "Basis file: model plus surplus basis")->required()->check(CLI::ExistingFile);
  est->add_option("--method", es.method, "pd | mpec")->check(CLI::IsMember({"pd", "mpec"}))->capture_default_str();
  est->add_option("--tau", es.tau, "Primal-dual step size")->capture_default_str();
  est->add_option("--delta", es.delta, "Stopping threshold")->capture_default_str();
  est->add_option("--max-iters", es.max_iters, "Iteration budget")->capture_default_str();
  est->add_option("--bootstrap", es.bootstrap, "Bootstrap replicates for standard errors (0 = none)")->capture_default_str();
  est->add_option("--seed", o.seed, "Bootstrap seed")->capture_default_str();
  est->add_option("--threads", o.threads, "OpenMP threads for the bootstrap (0 = default)")->capture_default_str();
  add_output(est, o, {"json", "csv"});

  auto* synth = app.add_subcommand("synth-data", "Sample matches from a model's stationary equilibrium");
  synth->add_option("--basis", sy.basis, "Basis file; uses its lambda unless --lambda is given")->check(CLI::ExistingFile);
  add_model(synth, o, false);
  synth->add_option("--lambda", sy.lambda, "Coefficients a,b,... for the basis");
  synth->add_option("--sample-size", sy.sample_size, "Number of sampled matches")->capture_default_str();
  synth->add_flag("--population", sy.population, "Write exact shares instead of a sample");
  synth->add_option("--seed", o.seed, "Sampling seed")->capture_default_str();
  add_output(synth, o, {"csv", "json"});

  auto* bench = app.add_subcommand("bench", "Compare the Newton and primal-dual methods on random markets");
  bench->add_option("--sizes", be.sizes, "Comma-separated NxM or NxMxL (L = basis length)")->capture_default_str();
  bench->add_option("--reps", be.reps, "Replications per size")->capture_default_str();
  bench->add_option("--mode", be.mode, "equilibrium | estimation")->check(CLI::IsMember({"equilibrium", "estimation"}))
      ->capture_default_str();
  bench->add_option("--delta", be.delta, "Stopping threshold")->capture_default_str();
  bench->add_option("--tau", be.tau, "Primal-dual step size")->capture_default_str();
  bench->add_option("--seed", o.seed, "Seed of the random markets")->capture_default_str();
  bench->add_flag("--parallel", be.parallel, "Run replications in parallel (timings become unreliable)");
  bench->add_option("--threads", o.threads, "OpenMP threads (0 = default)")->capture_default_str();
  add_output(bench, o, {"text", "csv"});

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    for (const auto* sub : app.get_subcommands())
      if (const auto it = g_formats.find(sub->get_name()); it != g_formats.end()) o.format = it->second;
    set_threads(o.threads);
    if (*validate) return cmd_validate(o);
    if (*stationary) return cmd_solve_stationary(o, st);
    if (*dynamics) return cmd_solve_dynamics(o, dy);
    if (*path) return cmd_simulate_path(o, dy);
    if (*est) return cmd_estimate(o, es);
    if (*synth) return cmd_synth_data(o, sy);
    if (*bench) return cmd_bench(o, be);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFailed;
  }
  return kUsage;
}
