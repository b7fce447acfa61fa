#include "dynmatch/stationary.hpp"

#include "dynmatch/logit.hpp"

#include <algorithm>
#include <random>
#include <cmath>
#include <limits>

namespace dynmatch {

namespace {

constexpr double kMassFloor = 1e-300;

double sup_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

Matching matching_at(const ModelSpec& spec, const PayoffVectors& p, const AggregateState& s) {
  return closed_form_matching(spec, p, p, s);
}

// Shift (U, V) along (1, 1) so that the matching's worker-side and firm-side
// totals equal M and N. Pairs scale by sU*sV, singles by sU^2 or sV^2.
void normalize_masses(const ModelSpec& spec, PayoffVectors& p, const AggregateState& s) {
  const Matching mu = matching_at(spec, p, s);
  const int nx = spec.nx(), ny = spec.ny();
  const double I = mu.cells.bottomRightCorner(nx, ny).sum();
  const double Ox = mu.cells.col(0).sum(), Oy = mu.cells.row(0).sum();
  double lu, lv;
  if (Ox <= 0.0 && Oy <= 0.0) {
    if (!(I > 0.0)) return;
    lu = lv = 0.5 * std::log(spec.M / I);
  } else {
    lu = 0.5 * std::log(spec.M / (I + Ox));
    lv = 0.5 * std::log(spec.N / (I + Oy));
    for (int it = 0; it < 50; ++it) {
      const double e = std::exp(lu + lv) * I, ex = std::exp(2 * lu) * Ox, ey = std::exp(2 * lv) * Oy;
      const double f1 = e + ex - spec.M, f2 = e + ey - spec.N;
      if (std::abs(f1) < 1e-15 * spec.M && std::abs(f2) < 1e-15 * spec.N) break;
      const double a = e + 2 * ex, b = e, c = e, d = e + 2 * ey;
      const double det = a * d - b * c;
      if (!(std::abs(det) > 0.0)) break;
      double du = (d * f1 - b * f2) / det, dv = (a * f2 - c * f1) / det;
      const double cap = std::max(std::abs(du), std::abs(dv));
      if (cap > 2.0) { du *= 2.0 / cap; dv *= 2.0 / cap; }
      lu -= du;
      lv -= dv;
    }
  }
  const double sigma = spec.temperature(), scale = 2.0 * sigma / (1.0 - spec.beta);
  p.U.array() -= scale * lu;
  p.V.array() -= scale * lv;
}

struct Block {
  Vec rows, cols, pm, qn;
};

Block block_sums(const ModelSpec& spec, const Matching& mu) {
  Eigen::Map<const Vec> flat(mu.cells.data(), mu.cells.size());
  Block b{mu.worker_totals(), mu.firm_totals(), spec.P.to * flat, spec.Q.to * flat};
  if (spec.inflow_m.size()) b.pm += spec.inflow_m;
  if (spec.inflow_n.size()) b.qn += spec.inflow_n;
  return b;
}

double residual_of(const Block& b, const AggregateState& s) {
  return std::max({sup_abs(b.rows - s.m), sup_abs(b.cols - s.n), sup_abs(b.pm - s.m), sup_abs(b.qn - s.n)});
}

void require_logit(const ModelSpec& spec, const char* who) {
  if (spec.shock.mode != ShockMode::Logit)
    throw Error(ErrorCode::Config, std::string(who) + " requires a logit shock model");
  if (!(spec.shock.scale > 0.0)) throw Error(ErrorCode::Config, "logit scale must be positive");
}

StationaryInit cold_start(const ModelSpec& spec) {
  return {{Vec::Zero(spec.nx()), Vec::Zero(spec.ny())}, uniform_state(spec)};
}

// One primal-dual run with a fixed step. Returns Diverged as soon as the
// residual blows up relative to the best seen.
StationarySolution primal_dual_run(const ModelSpec& spec, const SolverOptions& opts, const StationaryInit& init,
                                   double tau) {
  const double sigma = spec.temperature();
  StationarySolution sol;
  sol.tau_used = tau;
  PayoffVectors p = init.payoffs;
  AggregateState s = init.state, prev = init.state;
  double best = std::numeric_limits<double>::infinity();
  PayoffVectors best_p = p;
  AggregateState best_s = s;

  for (int k = 1; k <= opts.max_iters; ++k) {
    AggregateState ext{(2.0 * s.m - prev.m).cwiseMax(kMassFloor), (2.0 * s.n - prev.n).cwiseMax(kMassFloor)};
    const Block zk = block_sums(spec, matching_at(spec, p, ext));
    // grad_U Z + grad_U' Z / beta = (P mu - row totals) / sigma
    PayoffVectors pn{p.U - tau * (zk.pm - zk.rows) / sigma, p.V - tau * (zk.qn - zk.cols) / sigma};
    // exogenous firm masses: firm payoffs clear the column margins instead
    if (spec.fixed_n.size()) pn.V += tau * (zk.cols - spec.fixed_n) / sigma;
    normalize_masses(spec, pn, s);

    const Block z1 = block_sums(spec, matching_at(spec, pn, s));
    AggregateState sn{s.m + tau * (z1.rows.cwiseQuotient(s.m) - Vec::Ones(s.m.size())),
                      s.n + tau * (z1.cols.cwiseQuotient(s.n) - Vec::Ones(s.n.size()))};
    sn.m = sn.m.cwiseMax(kMassFloor);
    sn.n = sn.n.cwiseMax(kMassFloor);
    if (spec.fixed_n.size()) sn.n = spec.fixed_n;

    const double step = std::max({sup_abs(pn.U - p.U), sup_abs(pn.V - p.V), sup_abs(sn.m - s.m), sup_abs(sn.n - s.n)});
    const double res = residual_of(z1, s);
    sol.trace.push_back({k, res, step, ""});
    sol.iterations = k;

    if (!std::isfinite(res) || !std::isfinite(step) || (k > 50 && res > 10.0 * best)) {
      sol.status = SolveStatus::Diverged;
      sol.message = "residual grew tenfold from its best value; try halving tau";
      sol.payoffs = best_p;
      sol.state = best_s;
      return sol;
    }
    if (res < best) {
      best = res;
      best_p = pn;
      best_s = s;
    }
    prev = s;
    s = sn;
    p = pn;
    // small steps alone only bound the residual by delta / tau, so success
    // also needs the residual itself within 10 delta
    if (step < opts.delta) {
      if (res > 1e-3 * std::max({1.0, spec.M, spec.N})) {
        // a stalled iterate far from feasibility is not a solution
        sol.status = SolveStatus::Diverged;
        sol.message = "steps vanished away from a solution; try halving tau";
        sol.payoffs = best_p;
        sol.state = best_s;
        return sol;
      }
      if (res <= 10.0 * opts.delta) {
        sol.status = SolveStatus::Converged;
        sol.payoffs = p;
        sol.state = s;
        return sol;
      }
    }
  }
  sol.status = SolveStatus::MaxItersExceeded;
  sol.message = "iteration budget exhausted; returning the best iterate";
  sol.payoffs = best_p;
  sol.state = best_s;
  return sol;
}

}  // namespace

void normalize_payoff_level(const ModelSpec& spec, PayoffVectors& payoffs, const AggregateState& state) {
  normalize_masses(spec, payoffs, state);
}

void SolverOptions::check() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::Config, "tau must be positive");
  if (!(delta > 0.0)) throw Error(ErrorCode::Config, "delta must be positive");
  if (max_iters < 1) throw Error(ErrorCode::Config, "max_iters must be positive");
  if (!(newton_damping > 0.0 && newton_damping <= 1.0)) throw Error(ErrorCode::Config, "newton_damping must lie in (0,1]");
  for (size_t i = 0; i < anneal_schedule.size(); ++i) {
    if (!(anneal_schedule[i] > 0.0)) throw Error(ErrorCode::Config, "anneal schedule entries must be positive");
    if (i && !(anneal_schedule[i] < anneal_schedule[i - 1]))
      throw Error(ErrorCode::Config, "anneal schedule must be strictly decreasing");
  }
}

const char* to_string(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxItersExceeded: return "max_iters_exceeded";
    case SolveStatus::Diverged: return "diverged";
    case SolveStatus::AnnealStalled: return "anneal_stalled";
    case SolveStatus::LineSearchFailed: return "line_search_failed";
  }
  return "unknown";
}

PayoffVectors gauge_normalized(const ModelSpec& spec, const PayoffVectors& payoffs) {
  if (spec.allow_unmatched) return payoffs;
  const double k = 0.5 * (payoffs.U.mean() - payoffs.V.mean());
  return {payoffs.U.array() - k, payoffs.V.array() + k};
}

Mat cell_slack(const ModelSpec& spec, const PayoffVectors& p) {
  const Mat phi = spec.surplus();
  const Mat cont = continuation(spec, p, spec.beta);
  Mat slack = Mat::Zero(spec.grid_rows(), spec.grid_cols());
  for (const Cell& c : spec.cells()) {
    double own = 0.0;
    if (c.row > 0) own += p.U[c.row - 1];
    if (c.col > 0) own += p.V[c.col - 1];
    slack(c.row, c.col) = own - phi(c.row, c.col) - cont(c.row, c.col);
  }
  return slack;
}

void finalize_logit_solution(const ModelSpec& spec, StationarySolution& sol) {
  sol.matching = matching_at(spec, sol.payoffs, sol.state);
  sol.residual_sup = residuals(spec, sol.state, sol.matching).sup();
  sol.duality_gap = duality_gap(spec, sol);
  sol.wages = stationary_wages(spec, sol);
}

StationarySolution solve_primal_dual(const ModelSpec& spec, const SolverOptions& opts,
                                     const std::optional<StationaryInit>& init) {
  require_logit(spec, "solve_primal_dual");
  opts.check();
  const StationaryInit start = init ? *init : cold_start(spec);
  check_dims(spec, start.state);

  double tau = opts.tau;
  StationarySolution sol;
  std::vector<TraceRow> log;
  for (int attempt = 0; attempt <= opts.max_tau_halvings; ++attempt) {
    sol = primal_dual_run(spec, opts, start, tau);
    for (auto& row : sol.trace) log.push_back(row);
    if (sol.status != SolveStatus::Diverged) break;
    log.push_back({sol.iterations, std::numeric_limits<double>::quiet_NaN(), tau, "diverged; halving tau"});
    tau *= 0.5;
  }
  int total = 0;
  for (const auto& row : log)
    if (row.note.empty()) ++total;
  sol.trace = std::move(log);
  sol.iterations = total;
  finalize_logit_solution(spec, sol);
  return sol;
}

Vec stationary_system(const ModelSpec& spec, const PayoffVectors& p, const AggregateState& s) {
  const int nx = spec.nx(), ny = spec.ny();
  const Block b = block_sums(spec, matching_at(spec, p, s));
  const int extra = (spec.allow_unmatched ? 2 : 3) + static_cast<int>(spec.fixed_n.size());
  Vec F(2 * nx + 2 * ny + extra);
  F.segment(0, nx) = b.rows - s.m;
  F.segment(nx, ny) = b.cols - s.n;
  F.segment(nx + ny, nx) = b.pm - s.m;
  F.segment(2 * nx + ny, ny) = b.qn - s.n;
  const int o = 2 * nx + 2 * ny;
  F[o] = s.m.sum() - spec.M;
  F[o + 1] = s.n.sum() - spec.N;
  if (!spec.allow_unmatched) F[o + 2] = p.U.mean() - p.V.mean();
  if (spec.fixed_n.size()) F.tail(ny) = s.n - spec.fixed_n;
  return F;
}

Eigen::MatrixXd stationary_jacobian(const ModelSpec& spec, const PayoffVectors& p, const AggregateState& s) {
  const int nx = spec.nx(), ny = spec.ny();
  const int nU = 0, nV = nx, na = nx + ny, nb = 2 * nx + ny, nvar = 2 * nx + 2 * ny;
  const double sigma = spec.temperature(), beta = spec.beta;
  const Matching mu = matching_at(spec, p, s);
  const std::vector<Cell> cells = spec.cells();
  const int C = spec.grid_cols();

  // d mu_c / d theta for every cell that can carry mass
  Eigen::MatrixXd Jmu = Eigen::MatrixXd::Zero(static_cast<int>(cells.size()), nvar);
  for (size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    const double v = mu.cells(c.row, c.col);
    const int col = c.row * C + c.col;
    const double w = c.kind == CellKind::Pair ? 0.5 : 1.0;  // exponent weight
    auto row = Jmu.row(static_cast<int>(i));
    if (c.row > 0 || c.kind == CellKind::FirmAlone) {
      for (int j = 0; j < nx; ++j) row[nU + j] = v * w * beta * spec.P.to(j, col) / sigma;
      for (int j = 0; j < ny; ++j) row[nV + j] = v * w * beta * spec.Q.to(j, col) / sigma;
    }
    if (c.row > 0) {
      row[nU + c.row - 1] -= v * w / sigma;
      row[na + c.row - 1] += v * w;
    }
    if (c.col > 0) {
      row[nV + c.col - 1] -= v * w / sigma;
      row[nb + c.col - 1] += v * w;
    }
  }

  const int extra = (spec.allow_unmatched ? 2 : 3) + static_cast<int>(spec.fixed_n.size());
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * nx + 2 * ny + extra, nvar);
  for (size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    const int col = c.row * C + c.col;
    const auto g = Jmu.row(static_cast<int>(i));
    if (c.row > 0) J.row(c.row - 1) += g;
    if (c.col > 0) J.row(nx + c.col - 1) += g;
    for (int j = 0; j < nx; ++j)
      if (spec.P.to(j, col) != 0.0) J.row(nx + ny + j) += spec.P.to(j, col) * g;
    for (int j = 0; j < ny; ++j)
      if (spec.Q.to(j, col) != 0.0) J.row(2 * nx + ny + j) += spec.Q.to(j, col) * g;
  }
  for (int x = 0; x < nx; ++x) {
    J(x, na + x) -= s.m[x];
    J(nx + ny + x, na + x) -= s.m[x];
  }
  for (int y = 0; y < ny; ++y) {
    J(nx + y, nb + y) -= s.n[y];
    J(2 * nx + ny + y, nb + y) -= s.n[y];
  }
  const int o = 2 * nx + 2 * ny;
  J.block(o, na, 1, nx) = s.m.transpose();
  J.block(o + 1, nb, 1, ny) = s.n.transpose();
  if (!spec.allow_unmatched) {
    J.block(o + 2, nU, 1, nx).setConstant(1.0 / nx);
    J.block(o + 2, nV, 1, ny).setConstant(-1.0 / ny);
  }
  if (spec.fixed_n.size())
    for (int y = 0; y < ny; ++y) J(J.rows() - ny + y, nb + y) = s.n[y];
  return J;
}

StationarySolution solve_newton(const ModelSpec& spec, const SolverOptions& opts,
                                const std::optional<StationaryInit>& init) {
  require_logit(spec, "solve_newton");
  opts.check();
  StationaryInit start = init ? *init : cold_start(spec);
  check_dims(spec, start.state);
  // Put the cold start on the right payoff level before the first step.
  if (!init) normalize_masses(spec, start.payoffs, start.state);
  const int nx = spec.nx(), ny = spec.ny(), nvar = 2 * nx + 2 * ny;

  Vec theta(nvar);
  theta << start.payoffs.U, start.payoffs.V, start.state.m.cwiseMax(kMassFloor).array().log().matrix(),
      start.state.n.cwiseMax(kMassFloor).array().log().matrix();
  auto unpack = [&](const Vec& t, PayoffVectors& p, AggregateState& s) {
    p.U = t.segment(0, nx);
    p.V = t.segment(nx, ny);
    s.m = t.segment(nx + ny, nx).array().exp();
    s.n = t.segment(2 * nx + ny, ny).array().exp();
  };

  StationarySolution sol;
  PayoffVectors p;
  AggregateState s;
  unpack(theta, p, s);
  Vec F = stationary_system(spec, p, s);
  double merit = F.squaredNorm();
  sol.status = SolveStatus::MaxItersExceeded;
  const int cap = std::min(opts.max_iters, 500);

  for (int k = 0;; ++k) {
    const double res = sup_abs(F);
    if (res < opts.delta) {
      sol.status = SolveStatus::Converged;
      break;
    }
    if (k >= cap) {
      sol.message = "Newton step budget exhausted";
      break;
    }
    const Eigen::MatrixXd J = stationary_jacobian(spec, p, s);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(J);
    qr.setThreshold(1e-13);
    std::string note;
    Vec dir;
    if (qr.rank() < nvar) {
      note = "singular Jacobian; ridge 1e-8";
      Eigen::MatrixXd H = J.transpose() * J;
      H.diagonal().array() += 1e-8;
      dir = H.ldlt().solve(-J.transpose() * F);
    } else {
      dir = qr.solve(-F);
    }
    // Keep a single step from moving the log masses by more than a few units.
    const double big = sup_abs(dir);
    double t = opts.newton_damping;
    if (big * t > 20.0) t = 20.0 / big;

    bool accepted = false;
    Vec trial;
    PayoffVectors tp;
    AggregateState ts;
    Vec tF;
    for (int ls = 0; ls < 60; ++ls) {
      trial = theta + t * dir;
      unpack(trial, tp, ts);
      tF = stationary_system(spec, tp, ts);
      const double tm = tF.squaredNorm();
      if (std::isfinite(tm) && tm <= (1.0 - 2e-4 * t) * merit) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) {
      sol.status = SolveStatus::LineSearchFailed;
      sol.message = "backtracking could not reduce the residual";
      sol.trace.push_back({k + 1, res, 0.0, note.empty() ? "line search failed" : note + "; line search failed"});
      break;
    }
    theta = trial;
    p = tp;
    s = ts;
    F = tF;
    merit = F.squaredNorm();
    sol.iterations = k + 1;
    sol.trace.push_back({k + 1, sup_abs(F), t * sup_abs(dir), note});
  }
  sol.payoffs = p;
  sol.state = s;
  sol.tau_used = 0.0;
  finalize_logit_solution(spec, sol);
  return sol;
}

namespace {

double sup_diff(const StationarySolution& a, const StationarySolution& b) {
  return std::max({sup_abs(a.state.m - b.state.m), sup_abs(a.state.n - b.state.n),
                   (a.matching.cells - b.matching.cells).cwiseAbs().maxCoeff()});
}

// Exact refinement of a low-temperature solution: keep the cells that carry
// mass, solve the stationarity system on them for the masses and the
// complementary-slackness equalities for the payoffs, each as the smallest
// correction of the annealed values. Accepted only if the result is primal
// and dual feasible.
bool polish_active_set(const ModelSpec& spec, StationarySolution& sol, double mass_tol) {
  const int nx = spec.nx(), ny = spec.ny(), C = spec.grid_cols();
  const Mat phi = spec.surplus();
  std::vector<Cell> act;
  for (const Cell& c : spec.cells())
    if (sol.matching.cells(c.row, c.col) > mass_tol) act.push_back(c);
  const int na = static_cast<int>(act.size());
  if (na == 0) return false;

  // primal: (P mu - row totals, Q mu - column totals, worker total, firm total)
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(nx + ny + 2, na);
  Vec rhs = Vec::Zero(nx + ny + 2), mu0(na);
  rhs[nx + ny] = spec.M;
  rhs[nx + ny + 1] = spec.N;
  for (int i = 0; i < na; ++i) {
    const Cell& c = act[i];
    const int col = c.row * C + c.col;
    mu0[i] = sol.matching.cells(c.row, c.col);
    for (int x = 0; x < nx; ++x) E(x, i) = spec.P.to(x, col);
    for (int y = 0; y < ny; ++y) E(nx + y, i) = spec.Q.to(y, col);
    if (c.row > 0) {
      E(c.row - 1, i) -= 1.0;
      E(nx + ny, i) = 1.0;
    }
    if (c.col > 0) {
      E(nx + c.col - 1, i) -= 1.0;
      E(nx + ny + 1, i) = 1.0;
    }
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> pe(E);
  Vec mu = mu0 + pe.solve(rhs - E * mu0);
  if ((E * mu - rhs).cwiseAbs().maxCoeff() > 1e-10) return false;
  if (mu.minCoeff() < -1e-10) return false;
  mu = mu.cwiseMax(0.0);

  // dual: U_x + V_y - beta (P'U + Q'V) = Phi on the kept cells
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(na, nx + ny);
  Vec target(na), uv0(nx + ny);
  uv0 << sol.payoffs.U, sol.payoffs.V;
  for (int i = 0; i < na; ++i) {
    const Cell& c = act[i];
    const int col = c.row * C + c.col;
    for (int x = 0; x < nx; ++x) D(i, x) = -spec.beta * spec.P.to(x, col);
    for (int y = 0; y < ny; ++y) D(i, nx + y) = -spec.beta * spec.Q.to(y, col);
    if (c.row > 0) D(i, c.row - 1) += 1.0;
    if (c.col > 0) D(i, nx + c.col - 1) += 1.0;
    target[i] = phi(c.row, c.col);
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> pd(D);
  const Vec uv = uv0 + pd.solve(target - D * uv0);
  if ((D * uv - target).cwiseAbs().maxCoeff() > 1e-9) return false;
  PayoffVectors payoffs{uv.head(nx), uv.tail(ny)};
  const Mat slack = cell_slack(spec, payoffs);
  for (const Cell& c : spec.cells())
    if (slack(c.row, c.col) < -1e-8) return false;

  Matching m = Matching::zeros(nx, ny);
  for (int i = 0; i < na; ++i) m.cells(act[i].row, act[i].col) = mu[i];
  sol.matching = m;
  sol.payoffs = gauge_normalized(spec, payoffs);
  sol.state = {m.worker_totals(), m.firm_totals()};
  return true;
}

void sharp_diagnostics(const ModelSpec& spec, StationarySolution& sol) {
  SharpDiagnostics& d = *sol.sharp;
  const Mat slack = cell_slack(spec, sol.payoffs);
  d.complementarity = 0.0;
  d.dual_violation = 0.0;
  d.active.clear();
  for (const Cell& c : spec.cells()) {
    const double mu = sol.matching.cells(c.row, c.col), sl = slack(c.row, c.col);
    d.complementarity = std::max(d.complementarity, mu * std::abs(sl));
    d.dual_violation = std::max(d.dual_violation, -sl);
    if (mu > 1e-6 || std::abs(sl) < 1e-6) d.active.push_back(c);
  }
}

}  // namespace

StationarySolution solve_noshock_annealed(const ModelSpec& spec, const SolverOptions& opts,
                                          const std::optional<StationaryInit>& start) {
  if (!spec.sharp()) throw Error(ErrorCode::Config, "solve_noshock_annealed requires a model without shocks");
  opts.check();
  if (opts.anneal_schedule.empty()) throw Error(ErrorCode::Config, "anneal schedule is empty");

  ModelSpec smooth = spec;
  smooth.shock = {ShockMode::Logit, opts.anneal_schedule.front()};
  SolverOptions inner = opts;
  inner.delta = std::min(opts.delta, 1e-10);

  SharpDiagnostics diag;
  StationarySolution cur, prev;
  std::optional<StationaryInit> init = start;
  bool have_prev = false;
  std::vector<TraceRow> trace;
  int total = 0;
  double last_temp = 0.0;

  for (double target : opts.anneal_schedule) {
    // Retry with intermediate temperatures when a jump is too large for Newton.
    std::vector<double> todo{target};
    while (!todo.empty()) {
      const double temp = todo.back();
      smooth.shock.scale = temp;
      StationarySolution s = solve_newton(smooth, inner, init);
      total += s.iterations;
      // degenerate markets (e.g. types that never move) converge only
      // linearly; the caller's tolerance is what matters
      if (!s.converged() && s.status != SolveStatus::Diverged && s.residual_sup < opts.delta) {
        s.status = SolveStatus::Converged;
        s.message.clear();
      }
      if (!s.converged() && have_prev && todo.size() < 6 && temp < last_temp) {
        todo.push_back(std::sqrt(temp * last_temp));
        continue;
      }
      todo.pop_back();
      trace.push_back({total, s.residual_sup, temp, std::string("temperature ") + std::to_string(temp) + " " + to_string(s.status)});
      if (!s.converged()) {
        s.status = SolveStatus::AnnealStalled;
        s.message = "Newton failed at temperature " + std::to_string(temp);
        s.trace = trace;
        s.iterations = total;
        s.sharp = diag;
        return s;
      }
      if (have_prev && sup_diff(s, cur) > 0.5) {
        s.status = SolveStatus::AnnealStalled;
        s.message = "successive temperature solutions differ by more than 0.5";
        s.trace = trace;
        s.iterations = total;
        s.sharp = diag;
        return s;
      }
      diag.temperatures.push_back(temp);
      diag.entropies.push_back(entropy(s.matching, 1.0, false));
      diag.newton_steps.push_back(s.iterations);
      prev = cur;
      cur = s;
      have_prev = true;
      last_temp = temp;
      init = StationaryInit{s.payoffs, s.state};
    }
  }

  StationarySolution out = cur;
  out.trace = trace;
  out.iterations = total;
  diag.polished = polish_active_set(spec, out, 1e-6 * std::max(spec.M, spec.N));
  out.sharp = diag;
  sharp_diagnostics(spec, out);
  out.residual_sup = residuals(spec, out.state, out.matching).sup();
  out.duality_gap = duality_gap(spec, out);
  try {
    out.wages = stationary_wages(spec, out);
  } catch (const Error&) {
    const int nx = spec.nx(), ny = spec.ny();
    out.wages = {Mat::Zero(nx, ny), Mat::Zero(nx, ny), Mat::Zero(nx, ny)};
    out.message = "wage bounds cross; refinement was not accepted";
  }
  out.status = SolveStatus::Converged;
  return out;
}

std::vector<StationarySolution> anneal_alternatives(const ModelSpec& spec, const SolverOptions& opts,
                                                   const StationarySolution& reference, int starts) {
  std::vector<StationarySolution> out;
  SolverOptions alt = opts;
  alt.anneal_schedule.clear();
  for (double t : opts.anneal_schedule)
    if (t <= 0.1) alt.anneal_schedule.push_back(t);
  if (alt.anneal_schedule.empty()) alt.anneal_schedule = opts.anneal_schedule;
  std::mt19937_64 rng(opts.seed);
  std::exponential_distribution<double> expo(1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  for (int k = 0; k < starts; ++k) {
    StationaryInit init{{Vec(spec.nx()), Vec(spec.ny())}, {Vec(spec.nx()), Vec(spec.ny())}};
    for (int x = 0; x < spec.nx(); ++x) init.state.m[x] = expo(rng);
    for (int y = 0; y < spec.ny(); ++y) init.state.n[y] = expo(rng);
    init.state.m *= spec.M / init.state.m.sum();
    init.state.n *= spec.N / init.state.n.sum();
    if (spec.fixed_n.size()) init.state.n = spec.fixed_n;
    for (int x = 0; x < spec.nx(); ++x) init.payoffs.U[x] = unit(rng);
    for (int y = 0; y < spec.ny(); ++y) init.payoffs.V[y] = unit(rng);
    StationarySolution s;
    try {
      s = solve_noshock_annealed(spec, alt, init);
    } catch (const Error&) {
      continue;
    }
    if (!s.converged() || sup_diff(s, reference) < 1e-4) continue;
    const bool seen = std::any_of(out.begin(), out.end(), [&](const StationarySolution& o) { return sup_diff(o, s) < 1e-4; });
    if (!seen) out.push_back(s);
  }
  return out;
}

double duality_gap(const ModelSpec& spec, const StationarySolution& sol) {
  const double sigma = spec.sharp() ? 0.0 : spec.temperature();
  const Matching mu = spec.sharp() ? sol.matching : matching_at(spec, sol.payoffs, sol.state);
  const Mat phi = spec.surplus();
  double flow = (phi.array() * mu.cells.array()).sum();
  if (sigma > 0.0) flow -= entropy(mu, sigma, false);
  double primal = flow / (1.0 - spec.beta);
  // entrants arrive next period: their continuation value is not produced by today's matches
  if (spec.inflow_m.size()) primal -= spec.beta * sol.payoffs.U.dot(spec.inflow_m) / (1.0 - spec.beta);
  if (spec.inflow_n.size()) primal -= spec.beta * sol.payoffs.V.dot(spec.inflow_n) / (1.0 - spec.beta);
  const double dual = sol.state.m.dot(sol.payoffs.U) + sol.state.n.dot(sol.payoffs.V);
  return std::abs(primal - dual);
}

double duality_gap_fixed_point(const ModelSpec& spec, const StationarySolution& sol) {
  const Matching mu = spec.sharp() ? sol.matching : matching_at(spec, sol.payoffs, sol.state);
  const Block b = block_sums(spec, mu);
  const auto& U = sol.payoffs.U;
  const auto& V = sol.payoffs.V;
  const auto& m = sol.state.m;
  const auto& n = sol.state.n;
  double g = U.dot(b.rows - m) + V.dot(b.cols - n) - spec.beta * (U.dot(b.pm - m) + V.dot(b.qn - n));
  if (spec.sharp()) g += (cell_slack(spec, sol.payoffs).array() * mu.cells.array()).sum();
  return std::abs(g) / (1.0 - spec.beta);
}

WageSchedule stationary_wages(const ModelSpec& spec, const StationarySolution& sol) {
  const int nx = spec.nx(), ny = spec.ny();
  const Mat cont_u = continuation(spec, {sol.payoffs.U, Vec::Zero(ny)}, spec.beta);
  const Mat cont_v = continuation(spec, {Vec::Zero(nx), sol.payoffs.V}, spec.beta);
  WageSchedule w{Mat::Zero(nx, ny), Mat::Zero(nx, ny), Mat::Zero(nx, ny)};

  if (spec.sharp()) {
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        w.lower(x, y) = -sol.payoffs.V[y] + spec.gamma(x + 1, y + 1) + cont_v(x + 1, y + 1);
        w.upper(x, y) = sol.payoffs.U[x] - spec.alpha(x + 1, y + 1) - cont_u(x + 1, y + 1);
        w.point(x, y) = 0.5 * (w.lower(x, y) + w.upper(x, y));
      }
    const double worst = (w.lower - w.upper).maxCoeff();
    if (worst > 1e-4)
      throw Error(ErrorCode::BoundsCrossed, "wage bounds cross by " + std::to_string(worst) + "; input is not converged");
    return w;
  }

  const double sigma = spec.temperature();
  const Matching mu = matching_at(spec, sol.payoffs, sol.state);
  for (int x = 0; x < nx; ++x)
    for (int y = 0; y < ny; ++y) {
      const double v = std::max(mu.pair(x, y), 1e-300);
      const double worker = sol.payoffs.U[x] + sigma * std::log(v / std::max(sol.state.m[x], 1e-300)) -
                            spec.alpha(x + 1, y + 1) - cont_u(x + 1, y + 1);
      const double firm = -(sol.payoffs.V[y] + sigma * std::log(v / std::max(sol.state.n[y], 1e-300))) +
                          spec.gamma(x + 1, y + 1) + cont_v(x + 1, y + 1);
      w.lower(x, y) = std::min(worker, firm);
      w.upper(x, y) = std::max(worker, firm);
      w.point(x, y) = worker;
    }
  return w;
}

}  // namespace dynmatch
