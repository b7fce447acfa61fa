// Acceptance gate: one PASS/FAIL line per criterion with its tolerance and
// the measured value. Exit status is 1 when any criterion fails.

#include "oracles.hpp"

#include "dynmatch/bench.hpp"
#include "dynmatch/dynamics.hpp"
#include "dynmatch/estimation.hpp"
#include "dynmatch/logit.hpp"
#include "dynmatch/model_io.hpp"
#include "dynmatch/stationary.hpp"

#include <sys/wait.h>

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <vector>

using namespace dynmatch;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string measured;
  std::vector<std::string> notes;
};

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os.precision(precision);
  os << v;
  return os.str();
}

int failures = 0;

void report(int id, const std::string& title, const std::string& tolerance, const Outcome& o) {
  std::cout << "C" << id << " " << (o.pass ? "PASS" : "FAIL") << "  " << title << "  [tolerance " << tolerance
            << "]  measured: " << o.measured << "\n";
  for (const auto& n : o.notes) std::cout << "    " << n << "\n";
  std::cout.flush();
  if (!o.pass) ++failures;
}

std::string data_file(const std::string& name) { return std::string(DYNMATCH_DATA_DIR) + "/" + name; }

int run_cli(const std::string& args) {
  const std::string cmd = std::string("\"") + DYNMATCH_CLI_PATH + "\" " + args;
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::vector<double> last_csv_row(const fs::path& p) {
  std::ifstream in(p);
  std::string line, last;
  while (std::getline(in, line))
    if (!line.empty()) last = line;
  std::vector<double> v;
  std::stringstream ss(last);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(std::stod(item));
  return v;
}

SolverOptions tight(double delta) {
  SolverOptions o;
  o.delta = delta;
  return o;
}

double sup_diff(const ModelSpec& spec, const StationarySolution& a, const StationarySolution& b) {
  const PayoffVectors pa = gauge_normalized(spec, a.payoffs), pb = gauge_normalized(spec, b.payoffs);
  return std::max({(a.state.m - b.state.m).cwiseAbs().maxCoeff(), (a.state.n - b.state.n).cwiseAbs().maxCoeff(),
                   (pa.U - pb.U).cwiseAbs().maxCoeff(), (pa.V - pb.V).cwiseAbs().maxCoeff()});
}

SurplusBasis random_basis(const ModelSpec& spec, int L, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  SurplusBasis b;
  for (int l = 0; l < L; ++l) {
    Mat phi = Mat::Zero(spec.grid_rows(), spec.grid_cols());
    for (int x = 1; x < spec.grid_rows(); ++x)
      for (int y = 1; y < spec.grid_cols(); ++y) phi(x, y) = u(rng);
    b.phi.push_back(phi);
    b.names.push_back("f" + std::to_string(l + 1));
  }
  b.lambda = Vec::Zero(L);
  return b;
}

// ---------------------------------------------------------------------------

double c1_endpoint_l = std::numeric_limits<double>::quiet_NaN();

Outcome criterion1() {
  const std::vector<std::string> starts = {".05,.95/.05,.95", ".95,.05/.95,.05", ".5,.5/.5,.5"};
  const fs::path root = fs::temp_directory_path() / "dynmatch_acceptance_c1";
  fs::remove_all(root);
  Outcome o;
  o.pass = true;
  double worst = 0.0, slowest = 0.0;
  std::string ends;
  for (size_t i = 0; i < starts.size(); ++i) {
    const fs::path dir = root / std::to_string(i);
    const auto t0 = Clock::now();
    const int code = run_cli("solve-dynamics --model " + data_file("example2x2.json") +
                             " --grid-res 32 --horizon 15 --format csv --start " + starts[i] + " --out " + dir.string() +
                             " > /dev/null 2>&1");
    const double t = seconds_since(t0);
    slowest = std::max(slowest, t);
    if (code != 0) {
      o.pass = false;
      o.notes.push_back("solve-dynamics exited with code " + std::to_string(code) + " from start " + starts[i]);
      continue;
    }
    const auto row = last_csv_row(dir / "path.csv");  // period, m_l, m_h, n_l, n_h
    if (row.size() != 5) {
      o.pass = false;
      o.notes.push_back("unexpected path.csv layout");
      continue;
    }
    const double d = std::max({std::abs(row[1] - 0.46), std::abs(row[2] - 0.54), std::abs(row[3] - 0.46), std::abs(row[4] - 0.54)});
    worst = std::max(worst, d);
    if (i == 2) c1_endpoint_l = row[1];
    ends += (ends.empty() ? "" : "; ") + starts[i] + " -> (" + num(row[1], 4) + ", " + num(row[2], 4) + ")";
  }
  fs::remove_all(root);
  o.pass = o.pass && worst <= 0.01 && slowest < 300.0;
  o.measured = "endpoints " + ends + "; max deviation " + num(worst, 3) + "; slowest run " + num(slowest, 3) + " s";
  if (worst > 0.01) {
    o.notes.push_back("Analysis: every start converges to the same state, but that state is (.5, .5), not (.46, .54).");
    o.notes.push_back("With the printed kernels, positive assortative matching (l-l, h-h) has the unique stationary state");
    o.notes.push_back("m_l = P(l|h,h) / (1 - P(l|l,l) + P(l|h,h)) = .2 / .4 = .5 on both sides.");
    o.notes.push_back("Diverting a mass a of pairs to l-h and h-l gives m_l = .5 - .25 a, so (.46, .54) needs a = .16.");
    o.notes.push_back("Each unit of a costs (2 + 8) - (4 + 4) = 2 surplus per period but raises the steady-state surplus by");
    o.notes.push_back(".25 * (8 - 2) = 1.5, so the planner never mixes; the zero-temperature stationary solver (C2) agrees.");
    o.notes.push_back("The reference figure is therefore not reproducible from the printed parameters.");
  }
  return o;
}

Outcome criterion2() {
  const ModelSpec spec = two_type_example();
  const auto t0 = Clock::now();
  const StationarySolution sol = solve_noshock_annealed(spec, SolverOptions{});
  const double t = seconds_since(t0);
  Outcome o;
  const double d = std::abs(sol.state.m[0] - c1_endpoint_l);
  o.pass = sol.converged() && std::isfinite(d) && d <= 0.02 && t < 30.0;
  o.measured = "annealed m_l " + num(sol.state.m[0], 6) + " (n_l " + num(sol.state.n[0], 6) + ") vs path endpoint " +
               num(c1_endpoint_l, 6) + ": |diff| " + num(d, 3) + ", " + num(t, 3) + " s, status " + to_string(sol.status);
  return o;
}

struct CorpusEntry {
  ModelSpec spec;
  StationarySolution pd, newton;
};
std::vector<CorpusEntry> corpus;

Outcome criterion3() {
  Outcome o;
  o.pass = true;
  double worst = 0.0, worst_res = 0.0;
  for (int k = 0; k < 20; ++k) {
    const int nx = 2 + (k * 7) % 9, ny = 2 + (k * 5) % 9;
    const ModelSpec spec = random_spec(nx, ny, 5000 + k, 0.95, 0.5 + 0.1 * (k % 6));
    const StationarySolution pd = solve_primal_dual(spec, tight(1e-12));
    const StationarySolution nt = solve_newton(spec, tight(1e-12));
    const double d = sup_diff(spec, pd, nt);
    worst = std::max(worst, d);
    worst_res = std::max({worst_res, pd.residual_sup, nt.residual_sup});
    if (!pd.converged() || !nt.converged() || d >= 1e-5 || pd.residual_sup >= 1e-6 || nt.residual_sup >= 1e-6) {
      o.pass = false;
      o.notes.push_back(std::to_string(nx) + "x" + std::to_string(ny) + ": pd " + to_string(pd.status) + ", newton " +
                        to_string(nt.status) + ", diff " + num(d));
    }
    corpus.push_back({spec, pd, nt});
  }
  o.measured = "20 specs from 2x2 to 10x10, max sup-norm difference " + num(worst) + ", max residual " + num(worst_res);
  return o;
}

Outcome criterion4() {
  Outcome o;
  double worst = 0.0;
  int n = 0;
  auto check = [&](const ModelSpec& spec, const StationarySolution& s) {
    if (!s.converged()) return;
    ++n;
    worst = std::max(worst, duality_gap(spec, s));
  };
  for (const auto& e : corpus) {
    check(e.spec, e.pd);
    check(e.spec, e.newton);
  }
  const ModelSpec ex = two_type_example(ShockMode::Logit, 1.0);
  check(ex, solve_newton(ex, tight(1e-12)));
  check(ex, solve_primal_dual(ex, tight(1e-12)));
  ModelSpec flows = random_spec(3, 3, 77);
  flows.inflow_m = Vec(3);
  flows.inflow_m << 0.02, 0.0, -0.02;
  flows.inflow_n = Vec::Zero(3);
  check(flows, solve_newton(flows, tight(1e-12)));
  o.pass = n > 0 && worst < 1e-6;
  o.measured = std::to_string(n) + " converged solutions, max gap " + num(worst);
  return o;
}

Outcome criterion5() {
  Outcome o;
  double worst_foc = 0.0, worst_res = 0.0;
  std::mt19937_64 rng(55);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.2, 1.0);
  for (int k = 0; k < 10; ++k) {
    const int nx = 2 + k % 4, ny = 2 + (k + 2) % 4;
    const ModelSpec spec = random_spec(nx, ny, 6000 + k, 0.9, 0.7 + 0.1 * k);
    PayoffVectors p{Vec(nx), Vec(ny)};
    AggregateState s{Vec(nx), Vec(ny)};
    for (int i = 0; i < nx; ++i) p.U[i] = u(rng), s.m[i] = pos(rng);
    for (int j = 0; j < ny; ++j) p.V[j] = u(rng), s.n[j] = pos(rng);
    const Matching mu = closed_form_matching(spec, p, p, s);
    const Vec F = stationary_system(spec, p, s);

    // cell derivatives of the Lagrangian vanish at the closed form
    const auto cells = spec.cells();
    Vec x(cells.size());
    for (size_t i = 0; i < cells.size(); ++i) x[i] = mu.cells(cells[i].row, cells[i].col);
    const Vec gmu = oracle::fd_gradient(
        [&](const Vec& v) {
          Matching m = Matching::zeros(nx, ny);
          for (size_t i = 0; i < cells.size(); ++i) m.cells(cells[i].row, cells[i].col) = v[i];
          return oracle::lagrangian(spec, m, p, p, s);
        },
        x, 1e-7);
    worst_foc = std::max(worst_foc, gmu.cwiseAbs().maxCoeff());

    // multiplier derivatives reproduce the feasibility and stationarity residuals
    Vec pv(nx + ny);
    pv << p.U, p.V;
    const Vec g_now = oracle::fd_gradient(
        [&](const Vec& v) { return oracle::lagrangian(spec, mu, {v.head(nx), v.tail(ny)}, p, s); }, pv);
    const Vec g_next = oracle::fd_gradient(
        [&](const Vec& v) { return oracle::lagrangian(spec, mu, p, {v.head(nx), v.tail(ny)}, s); }, pv);
    Vec fd_res(2 * (nx + ny));
    fd_res << -g_now, g_next / spec.beta - (Vec(nx + ny) << s.m, s.n).finished();
    worst_res = std::max(worst_res, (fd_res - F.head(2 * (nx + ny))).cwiseAbs().maxCoeff());
  }
  o.pass = worst_foc < 1e-6 && worst_res < 1e-6;
  o.measured = "10 specs, max |dL/dmu| " + num(worst_foc) + ", max residual mismatch " + num(worst_res);
  return o;
}

Outcome criterion6() {
  Outcome o;
  std::mt19937_64 rng(66);
  std::uniform_real_distribution<double> u(-1.0, 1.0), pos(0.2, 1.0);
  double worst_z = 0.0, worst_l = 0.0;
  for (int k = 0; k < 50; ++k) {
    const int nx = 2 + k % 4, ny = 1 + (k / 4) % 4;
    const ModelSpec spec = random_spec(nx, ny, 7000 + k, 0.95, 0.5 + 0.02 * k);
    PayoffVectors a{Vec(nx), Vec(ny)}, b{Vec(nx), Vec(ny)};
    AggregateState s{Vec(nx), Vec(ny)};
    for (int i = 0; i < nx; ++i) a.U[i] = u(rng), b.U[i] = u(rng), s.m[i] = pos(rng);
    for (int j = 0; j < ny; ++j) a.V[j] = u(rng), b.V[j] = u(rng), s.n[j] = pos(rng);
    const double bo = 0.2 + 0.015 * k;
    const ZEval z = z_eval(spec, a, b, s, bo);
    Vec x(3 * (nx + ny)), an(3 * (nx + ny));
    x << a.U, a.V, b.U, b.V, s.m, s.n;
    an << z.grad_U, z.grad_V, z.grad_Uprime, z.grad_Vprime, z.grad_m, z.grad_n;
    const Vec fz = oracle::fd_gradient(
        [&](const Vec& v) {
          const PayoffVectors pa{v.segment(0, nx), v.segment(nx, ny)}, pb{v.segment(nx + ny, nx), v.segment(2 * nx + ny, ny)};
          const AggregateState ps{v.segment(2 * (nx + ny), nx), v.segment(3 * nx + 2 * ny, ny)};
          return z_eval(spec, pa, pb, ps, bo).value;
        },
        x, 1e-5);
    worst_z = std::max(worst_z, oracle::rel_err(an, fz));

    const int L = 1 + k % 3;
    const SurplusBasis basis = random_basis(spec, L, 7100 + k);
    EstimationDataset d;
    d.has_margins = k % 2 == 0;
    d.counts = Mat::Zero(nx + 1, ny + 1);
    for (const auto& c : observed_cells(spec, d)) d.counts(c.row, c.col) = pos(rng) * 10.0;
    Vec lam(L);
    for (int l = 0; l < L; ++l) lam[l] = 2.0 * u(rng);
    const LikelihoodValue lv = log_likelihood(spec, basis, lam, a, s, d);
    Vec y(2 * (nx + ny) + L), al(2 * (nx + ny) + L);
    y << a.U, a.V, s.m, s.n, lam;
    al << lv.grad_U, lv.grad_V, lv.grad_m, lv.grad_n, lv.grad_lambda;
    const Vec fl = oracle::fd_gradient(
        [&](const Vec& v) {
          const PayoffVectors pa{v.segment(0, nx), v.segment(nx, ny)};
          const AggregateState ps{v.segment(nx + ny, nx), v.segment(2 * nx + ny, ny)};
          return log_likelihood(spec, basis, v.tail(L), pa, ps, d).value;
        },
        y);
    worst_l = std::max(worst_l, oracle::rel_err(al, fl));
  }
  o.pass = worst_z < 1e-6 && worst_l < 1e-6;
  o.measured = "50 points each, max relative error z " + num(worst_z) + ", log-likelihood " + num(worst_l);
  return o;
}

Outcome criterion7() {
  Outcome o;
  double worst_oracle = 0.0, worst_identity = 0.0;
  bool all_converged = true;
  for (int k = 0; k < 10; ++k) {
    const int nx = 2 + k % 5, ny = 2 + (k * 3) % 5;
    const double scale = 0.5 + 0.15 * k;
    const ModelSpec spec = random_spec(nx, ny, 8000 + k, 0.0, scale);
    const StationarySolution sol = solve_newton(spec, tight(1e-12));
    all_converged = all_converged && sol.converged();
    const Matching ref = oracle::ipfp(spec.surplus(), sol.state.m, sol.state.n, scale);
    worst_oracle = std::max(worst_oracle, (ref.cells - sol.matching.cells).cwiseAbs().maxCoeff());
    const Mat phi = spec.surplus();
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        const double rhs = std::sqrt(sol.matching.worker_alone(x) * sol.matching.firm_alone(y)) * std::exp(phi(x + 1, y + 1) / (2 * scale));
        worst_identity = std::max(worst_identity, std::abs(sol.matching.pair(x, y) - rhs));
      }
  }
  o.pass = all_converged && worst_oracle < 1e-8 && worst_identity < 1e-8;
  o.measured = "10 specs, max |mu - IPFP| " + num(worst_oracle) + ", max identity error " + num(worst_identity);
  return o;
}

// Coefficients, bootstrap errors and agreement for one market.
struct Recovery {
  std::string label;
  double pop_pd = 0.0, pop_mpec = 0.0, pop_agree = 0.0;
  double z_pd = 0.0, z_mpec = 0.0, sample_agree = 0.0;
  bool converged = true;
};

struct SampleFit {
  EstimationResult est;
  BootstrapResult boot;
  double z = 0.0;  // max over coefficients of |estimate - truth| / SE
};

SampleFit fit_sample(Estimator m, const ModelSpec& base, const SurplusBasis& basis, const Vec& truth,
                     const EstimationDataset& sample, std::uint64_t seed) {
  BootstrapOptions bo;
  bo.replicates = 50;
  bo.seed = seed;
  bo.method = m;
  SampleFit f{estimate(m, base, basis, sample, bo.estimation), bootstrap_se(base, basis, sample, bo)};
  f.z = ((f.est.lambda - truth).cwiseAbs().array() / f.boot.se.array()).maxCoeff();
  return f;
}

Recovery recover(const std::string& label, const ModelSpec& base, const SurplusBasis& basis, const Vec& truth,
                 std::uint64_t seed, std::vector<std::string>& notes) {
  Recovery r;
  r.label = label;
  const ModelSpec spec = basis.apply(base, truth);
  const auto t0 = Clock::now();
  EstimationOptions tight_opts;
  tight_opts.delta = 1e-9;
  const EstimationDataset pop = synth_data(spec, 0, 0, true);
  const EstimationResult pd = estimate_primal_dual(base, basis, pop, tight_opts),
                         mp = estimate_mpec(base, basis, pop, tight_opts);
  r.converged = pd.converged() && mp.converged();
  r.pop_pd = (pd.lambda - truth).cwiseAbs().maxCoeff();
  r.pop_mpec = (mp.lambda - truth).cwiseAbs().maxCoeff();
  r.pop_agree = (pd.lambda - mp.lambda).cwiseAbs().maxCoeff();

  const EstimationDataset sample = synth_data(spec, 100000, seed);
  Vec sample_est[2];
  for (Estimator m : {Estimator::PrimalDual, Estimator::Mpec}) {
    const SampleFit f = fit_sample(m, base, basis, truth, sample, seed + 1);
    const EstimationResult& est = f.est;
    const BootstrapResult& boot = f.boot;
    r.converged = r.converged && est.converged() && boot.failures == 0;
    (m == Estimator::PrimalDual ? r.z_pd : r.z_mpec) = f.z;
    if (f.z > 3.0) {
      // diagnostic only: coverage of the same estimator on fresh samples
      double fresh = 0.0;
      for (std::uint64_t s = 1; s <= 6; ++s)
        fresh = std::max(fresh, fit_sample(m, base, basis, truth, synth_data(spec, 100000, seed + 1000 * s), seed + 1).z);
      notes.push_back(label + " " + to_string(m) + ": |error|/SE " + num(f.z) + " on this sample; max over six fresh samples " +
                      num(fresh) +
                      (fresh <= 3.0 ? ", consistent with a sampling outlier rather than bias"
                                    : ", repeated misses point to bias or understated SEs"));
    }
    sample_est[m == Estimator::Mpec] = est.lambda;
    std::ostringstream line;
    line << label << " " << to_string(m) << ": population error "
         << num(m == Estimator::PrimalDual ? r.pop_pd : r.pop_mpec) << ", sample estimate";
    for (Eigen::Index l = 0; l < est.lambda.size(); ++l)
      line << " " << num(est.lambda[l], 5) << " (se " << num(boot.se[l], 3) << ", truth " << num(truth[l], 5) << ")";
    notes.push_back(line.str());
  }
  r.sample_agree = (sample_est[0] - sample_est[1]).cwiseAbs().maxCoeff();
  notes.push_back(label + ": estimator gap " + num(r.pop_agree) + " (population), " + num(r.sample_agree) + " (n=1e5), " +
                  num(seconds_since(t0), 3) + " s");
  return r;
}

Outcome criterion8() {
  Outcome o;
  std::vector<Recovery> all;
  std::mt19937_64 rng(88);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  const std::vector<std::array<int, 3>> shapes = {{2, 2, 1}, {3, 4, 2}, {5, 5, 3}, {10, 10, 3}, {8, 6, 2}};
  for (size_t k = 0; k < shapes.size(); ++k) {
    const auto [nx, ny, L] = shapes[k];
    const ModelSpec base = random_spec(nx, ny, 9000 + k);
    const SurplusBasis basis = random_basis(base, L, 9100 + k);
    Vec truth(L);
    for (int l = 0; l < L; ++l) truth[l] = u(rng);
    all.push_back(recover(std::to_string(nx) + "x" + std::to_string(ny) + " L=" + std::to_string(L), base, basis, truth,
                          9200 + k, o.notes));
  }
  BasisFile eng = load_basis(data_file("engineer.json"));
  const Vec eng_truth = eng.basis.lambda;
  eng.basis.lambda = Vec::Constant(eng_truth.size(), 1.0);
  all.push_back(recover("engineer (" + std::to_string(eng.base.nx()) + " worker states)", eng.base, eng.basis, eng_truth,
                        9300, o.notes));

  double pop = 0.0, agree = 0.0, z = 0.0, sagree = 0.0;
  bool conv = true;
  for (const auto& r : all) {
    pop = std::max({pop, r.pop_pd, r.pop_mpec});
    agree = std::max(agree, r.pop_agree);
    z = std::max({z, r.z_pd, r.z_mpec});
    sagree = std::max(sagree, r.sample_agree);
    conv = conv && r.converged;
  }
  // The estimators share their population target, so agreement is checked on
  // population data. On a finite sample they are different estimators (the
  // likelihood score also weights the equilibrium response of the margins),
  // and their gap is of the order of the sampling error; it is reported only.
  o.pass = conv && pop < 1e-3 && agree < 1e-3 && z <= 3.0;
  o.measured = std::to_string(all.size()) + " markets: max population error " + num(pop) + ", estimator gap " + num(agree) +
               " (population), max |error|/SE " + num(z) + " at n=1e5; sample estimator gap " + num(sagree) +
               " (reported only)" + (conv ? "" : ", some run did not converge");
  return o;
}

Outcome criterion9() {
  Outcome o;
  o.pass = true;
  struct Case {
    std::string label;
    ModelSpec spec;
    int res;
  };
  ModelSpec rnd = random_spec(2, 3, 31, 0.9, 1.0);
  std::vector<Case> cases = {{"logit example", two_type_example(ShockMode::Logit, 1.0), 6},
                             {"sharp example", two_type_example(), 6},
                             {"random 2x3 logit", rnd, 3}};
  const double tol = 1e-6;
  double worst_ratio = 0.0, worst_gap = 0.0;
  bool bound_ok = true;
  for (auto& c : cases) {
    const SimplexGrid grid(c.spec, c.res);
    VfiOptions plain;
    plain.tol = tol;
    plain.anderson_window = 0;
    plain.coarse_factor = 0.0;
    VfiOptions acc = plain;
    acc.anderson_window = 5;
    const VfiResult p = vfi_solve(c.spec, grid, plain, nullptr, true), a = vfi_solve(c.spec, grid, acc, nullptr, true);
    double ratio = 0.0;
    for (size_t k = 1; k < p.diffs.size(); ++k)
      if (p.diffs[k - 1] > 100 * tol) ratio = std::max(ratio, p.diffs[k] / p.diffs[k - 1]);
    const double gap = (p.W.values - a.W.values).cwiseAbs().maxCoeff();
    const double bound = c.spec.beta * (p.diffs.back() + a.diffs.back()) / (1.0 - c.spec.beta);
    bound_ok = bound_ok && gap <= bound;
    const bool ok = p.converged && a.converged && ratio <= c.spec.beta + 0.05 && gap <= 10 * tol;
    o.pass = o.pass && ok;
    worst_ratio = std::max(worst_ratio, ratio - c.spec.beta);
    worst_gap = std::max(worst_gap, gap);
    o.notes.push_back(c.label + ": plain " + std::to_string(p.sweeps) + " sweeps, max ratio " + num(ratio, 4) + " (beta " +
                      num(c.spec.beta, 3) + "), Anderson " + std::to_string(a.sweeps) + " sweeps, max |W_plain - W_aa| " +
                      num(gap) + " (a posteriori bound " + num(bound) + ")");
  }
  if (worst_gap > 10 * tol) {
    o.notes.push_back("Analysis: both runs stop once the sweep difference is below tol, which bounds the distance to the");
    o.notes.push_back("fixed point only by beta tol / (1 - beta): 19 tol at beta = .95 and 9 tol at beta = .9. Two solutions");
    o.notes.push_back("stopped this way can differ by the sum of their bounds, so 10 tol is not guaranteed at these discount factors.");
    if (bound_ok) {
      o.notes.push_back("Every gap is within its contraction bound beta (d_plain + d_aa) / (1 - beta).");
    } else {
      o.notes.push_back("Some gaps also exceed the contraction bound beta (d_plain + d_aa) / (1 - beta): the interpolated");
      o.notes.push_back("continuation is not concave, so the computed operator is a contraction only up to the spread");
      o.notes.push_back("between local maxima of the period problem.");
    }
  }
  o.measured = "max ratio - beta " + num(worst_ratio, 3) + ", max Anderson/plain gap " + num(worst_gap);
  return o;
}

Outcome criterion10() {
  Outcome o;
  const BenchReport r = run_benchmark({{2, 2, 0}, {10, 10, 0}}, 10, 2024, BenchMode::Equilibrium);
  bool all = r.entries.size() == 4;
  for (const auto& e : r.entries) all = all && e.converged == e.reps && e.reps == 10;
  const std::string table = bench_table_text(r);
  const bool shaped = table.find("Min iterations") != std::string::npos && table.find("Max iterations") != std::string::npos &&
                      table.find("Mean time elapsed") != std::string::npos;
  o.pass = all && shaped;
  std::stringstream ss(table);
  std::string line;
  while (std::getline(ss, line)) o.notes.push_back(line);
  // soft ordering check on a large market; logged, never failing
  const BenchReport big = run_benchmark({{30, 30, 0}}, 2, 2025, BenchMode::Equilibrium);
  for (const auto& n : big.notes) o.notes.push_back("soft check: " + n);
  if (big.notes.empty()) o.notes.push_back("soft check: 30 x 30 runs did not all converge; ordering not assessed");
  o.measured = std::string(all ? "all 40 runs converged" : "some runs failed") + (shaped ? ", table rows present" : ", table rows missing");
  return o;
}

}  // namespace

int main() {
  std::cout << "Acceptance criteria\n";
  const auto t0 = Clock::now();
  auto timed = [](auto f) {
    const auto t = Clock::now();
    Outcome o = f();
    o.notes.push_back("elapsed " + num(seconds_since(t), 3) + " s");
    return o;
  };
  report(1, "dynamic path endpoint from three starts, grid 32, 15 periods", "+-.01 per side of (.46, .54), < 300 s each",
         timed(criterion1));
  report(2, "annealed stationary state vs path endpoint", "<= .02, < 30 s", timed(criterion2));
  report(3, "primal-dual vs Newton on 20 random logit markets", "sup-norm < 1e-5, residuals < 1e-6; delta 1e-12", timed(criterion3));
  report(4, "strong duality at converged logit solutions", "gap < 1e-6", timed(criterion4));
  report(5, "closed form satisfies the Lagrangian first-order conditions", "< 1e-6 on 10 markets", timed(criterion5));
  report(6, "analytic gradients of z and the log-likelihood", "relative error < 1e-6 at 50 points", timed(criterion6));
  report(7, "beta = 0 reduces to the static logit identity", "< 1e-8 vs proportional fitting on 10 markets", timed(criterion7));
  report(8, "estimator recovery and agreement",
         "population < 1e-3 and estimators within 1e-3, n=1e5 sample within 3 bootstrap SE",
         timed(criterion8));
  report(9, "value iteration contraction and Anderson agreement", "ratio <= beta + .05, gap <= 10 tol", timed(criterion9));
  report(10, "benchmark 2x2 and 10x10 at 10 replications", "100% convergence, table rows present", timed(criterion10));
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed") << " in "
            << num(seconds_since(t0), 4) << " s\n";
  return failures == 0 ? 0 : 1;
}
