#include "dynmatch/estimation.hpp"

#include "dynmatch/logit.hpp"
#include "dynmatch/model_io.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dynmatch {

namespace {

constexpr double kMassFloor = 1e-300;

double sup_abs(const Vec& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

void require_logit(const ModelSpec& spec) {
  if (spec.sharp()) throw Error(ErrorCode::Config, "estimation requires a logit shock model");
}

// Copy of the base model carrying the dataset's flows, if any.
ModelSpec with_data_flows(const ModelSpec& base, const EstimationDataset& data) {
  ModelSpec spec = base;
  if (data.flow_m.size() || data.flow_n.size()) {
    spec.inflow_m = data.flow_m.size() ? data.flow_m : Vec::Zero(base.nx());
    spec.inflow_n = data.flow_n.size() ? data.flow_n : Vec::Zero(base.ny());
  }
  return spec;
}

void check_data(const ModelSpec& spec, const EstimationDataset& data) {
  if (data.counts.rows() != spec.grid_rows() || data.counts.cols() != spec.grid_cols())
    throw Error(ErrorCode::DimensionMismatch, "dataset does not match the type spaces");
  if ((data.counts.array() < 0.0).any() || !data.counts.allFinite())
    throw Error(ErrorCode::Domain, "observed counts must be finite and nonnegative");
  if (!(data.total() > 0.0)) throw Error(ErrorCode::Domain, "dataset has no observations");
}

Vec start_lambda(const SurplusBasis& basis, const EstimationOptions& opts) {
  if (opts.lambda0.size()) {
    if (opts.lambda0.size() != basis.size()) throw Error(ErrorCode::DimensionMismatch, "lambda0 has the wrong length");
    return opts.lambda0;
  }
  if (basis.lambda.size() == basis.size()) return basis.lambda;
  return Vec::Zero(basis.size());
}

double exponent_weight(const Cell& c) { return c.kind == CellKind::Pair ? 0.5 : 1.0; }

// d mu_c / d lambda = mu_c * w_c * phi_c / sigma for every cell that can carry mass.
Eigen::MatrixXd lambda_sensitivity(const ModelSpec& spec, const SurplusBasis& basis, const Matching& mu) {
  const auto cells = spec.cells();
  const double sigma = spec.temperature();
  Eigen::MatrixXd D(cells.size(), basis.size());
  for (size_t i = 0; i < cells.size(); ++i) {
    const Cell& c = cells[i];
    const double f = mu.cells(c.row, c.col) * exponent_weight(c) / sigma;
    for (int l = 0; l < basis.size(); ++l) D(i, l) = f * basis.phi[l](c.row, c.col);
  }
  return D;
}

struct Fit {
  double feasibility = 0.0, stationarity = 0.0, moments = 0.0, loglik = 0.0;
};

Fit assess(const ModelSpec& spec, const SurplusBasis& basis, const Vec& lambda, const PayoffVectors& p,
           const AggregateState& s, const EstimationDataset& data, Matching& mu) {
  const ModelSpec sl = basis.apply(spec, lambda);
  mu = closed_form_matching(sl, p, p, s);
  const Residuals r = residuals(sl, s, mu);
  Fit f;
  f.feasibility = sup_abs(r.feasibility);
  f.stationarity = sup_abs(r.stationarity);
  EstimationDataset scaled = data;
  scaled.counts = data_on_model_scale(sl, data, mu);
  f.moments = sup_abs(moment_residuals(basis, mu, scaled));
  try {
    f.loglik = log_likelihood(spec, basis, lambda, p, s, data).value;
  } catch (const Error&) {
    f.loglik = -std::numeric_limits<double>::infinity();
  }
  return f;
}

}  // namespace

Mat SurplusBasis::surplus(const Vec& coef) const {
  if (coef.size() != size()) throw Error(ErrorCode::DimensionMismatch, "coefficient vector does not match the basis");
  if (phi.empty()) throw Error(ErrorCode::Config, "surplus basis is empty");
  Mat out = Mat::Zero(phi[0].rows(), phi[0].cols());
  for (int l = 0; l < size(); ++l) out += coef[l] * phi[l];
  return out;
}

void SurplusBasis::check(const ModelSpec& base) const {
  if (phi.empty()) throw Error(ErrorCode::Config, "surplus basis is empty");
  if (!names.empty() && names.size() != phi.size()) throw Error(ErrorCode::Config, "basis names and matrices differ in count");
  for (const auto& p : phi) {
    if (p.rows() != base.grid_rows() || p.cols() != base.grid_cols())
      throw Error(ErrorCode::DimensionMismatch, "basis matrix does not match the type spaces");
    if (p.col(0).cwiseAbs().maxCoeff() > 0.0 || p.row(0).cwiseAbs().maxCoeff() > 0.0)
      throw Error(ErrorCode::Config, "basis matrices must vanish on unmatched cells");
    if (!p.allFinite()) throw Error(ErrorCode::Config, "basis matrix has non-finite entries");
  }
  if (lambda.size() && lambda.size() != size()) throw Error(ErrorCode::DimensionMismatch, "basis lambda has the wrong length");
}

ModelSpec SurplusBasis::apply(const ModelSpec& base, const Vec& coef) const {
  ModelSpec spec = base;
  const Mat phi_all = surplus(coef);
  const int R = base.grid_rows(), C = base.grid_cols();
  for (int x = 1; x < R; ++x)
    for (int y = 1; y < C; ++y) spec.alpha(x, y) = spec.gamma(x, y) = 0.5 * phi_all(x, y);
  return spec;
}

double EstimationDataset::total() const {
  if (counts.size() == 0) return 0.0;
  const int nx = static_cast<int>(counts.rows()) - 1, ny = static_cast<int>(counts.cols()) - 1;
  double t = counts.bottomRightCorner(nx, ny).sum();
  if (has_margins) t += counts.col(0).tail(nx).sum() + counts.row(0).tail(ny).sum();
  return t;
}

std::vector<Cell> observed_cells(const ModelSpec& spec, const EstimationDataset& data) {
  std::vector<Cell> out;
  for (const auto& c : spec.cells())
    if (c.kind == CellKind::Pair || data.has_margins) out.push_back(c);
  return out;
}

LikelihoodValue log_likelihood(const ModelSpec& base, const SurplusBasis& basis, const Vec& lambda,
                               const PayoffVectors& p, const AggregateState& s, const EstimationDataset& data) {
  require_logit(base);
  check_data(base, data);
  check_dims(base, s);
  const ModelSpec spec = basis.apply(base, lambda);
  const Matching mu = closed_form_matching(spec, p, p, s);
  const auto cells = observed_cells(spec, data);
  const double sigma = spec.temperature(), beta = spec.beta;
  const int nx = spec.nx(), ny = spec.ny(), C = spec.grid_cols();

  double mass = 0.0;
  for (const auto& c : cells) mass += mu.cells(c.row, c.col);
  const double total = data.total();
  LikelihoodValue out;
  out.grad_lambda = Vec::Zero(basis.size());
  out.grad_U = Vec::Zero(nx);
  out.grad_V = Vec::Zero(ny);
  out.grad_m = Vec::Zero(nx);
  out.grad_n = Vec::Zero(ny);
  for (const auto& c : cells) {
    const double obs = data.counts(c.row, c.col), v = mu.cells(c.row, c.col);
    if (obs > 0.0) {
      if (!(v > 0.0))
        throw Error(ErrorCode::ZeroPredictedCell, "observed cell (" + std::to_string(c.row) + "," + std::to_string(c.col) +
                                                      ") has no predicted mass");
      out.value += obs * std::log(v);
    }
    // d l / d log mu_c
    const double r = obs - total * v / mass;
    const double w = exponent_weight(c) * r;
    const int col = c.row * C + c.col;
    for (int l = 0; l < basis.size(); ++l) out.grad_lambda[l] += w * basis.phi[l](c.row, c.col) / sigma;
    for (int j = 0; j < nx; ++j) out.grad_U[j] += w * beta * spec.P.to(j, col) / sigma;
    for (int j = 0; j < ny; ++j) out.grad_V[j] += w * beta * spec.Q.to(j, col) / sigma;
    if (c.row > 0) {
      out.grad_U[c.row - 1] -= w / sigma;
      out.grad_m[c.row - 1] += w / s.m[c.row - 1];
    }
    if (c.col > 0) {
      out.grad_V[c.col - 1] -= w / sigma;
      out.grad_n[c.col - 1] += w / s.n[c.col - 1];
    }
  }
  out.value -= total * std::log(mass);
  return out;
}

Vec moment_residuals(const SurplusBasis& basis, const Matching& mu, const EstimationDataset& data) {
  if (mu.cells.rows() != data.counts.rows() || mu.cells.cols() != data.counts.cols())
    throw Error(ErrorCode::DimensionMismatch, "matching and dataset shapes differ");
  Vec r(basis.size());
  const Mat diff = data.counts - mu.cells;
  for (int l = 0; l < basis.size(); ++l) {
    if (basis.phi[l].rows() != diff.rows() || basis.phi[l].cols() != diff.cols())
      throw Error(ErrorCode::DimensionMismatch, "basis matrix and dataset shapes differ");
    r[l] = (diff.array() * basis.phi[l].array()).sum();
  }
  return r;
}

Mat data_on_model_scale(const ModelSpec& spec, const EstimationDataset& data, const Matching& mu) {
  double mass = 0.0;
  for (const auto& c : observed_cells(spec, data)) mass += mu.cells(c.row, c.col);
  Mat out = Mat::Zero(data.counts.rows(), data.counts.cols());
  for (const auto& c : observed_cells(spec, data)) out(c.row, c.col) = data.counts(c.row, c.col) * mass / data.total();
  return out;
}

const char* to_string(Estimator e) { return e == Estimator::PrimalDual ? "pd" : "mpec"; }

// ---------------------------------------------------------------------------
// primal-dual estimator

namespace {

struct PdState {
  PayoffVectors p;
  AggregateState s;
  Vec lambda;
};

EstimationResult pd_run(const ModelSpec& spec0, const SurplusBasis& basis, const EstimationDataset& data,
                        const PdState& start, double tau, const EstimationOptions& opts) {
  const double sigma = spec0.temperature();
  const int L = basis.size();
  EstimationResult res;
  res.tau_used = tau;
  PdState cur = start, best = start;
  AggregateState prev = start.s;
  double best_res = std::numeric_limits<double>::infinity();

  for (int k = 1; k <= opts.max_iters; ++k) {
    const ModelSpec spec = basis.apply(spec0, cur.lambda);
    AggregateState ext{(2.0 * cur.s.m - prev.m).cwiseMax(kMassFloor), (2.0 * cur.s.n - prev.n).cwiseMax(kMassFloor)};
    const Matching me = closed_form_matching(spec, cur.p, cur.p, ext);
    const AggregateState pe = push_forward(spec, me);
    PayoffVectors pn{cur.p.U - tau * (pe.m - me.worker_totals()) / sigma, cur.p.V - tau * (pe.n - me.firm_totals()) / sigma};
    if (spec.fixed_n.size()) pn.V += tau * (me.firm_totals() - spec.fixed_n) / sigma;
    normalize_payoff_level(spec, pn, cur.s);

    const Matching m1 = closed_form_matching(spec, pn, pn, cur.s);
    AggregateState sn{cur.s.m + tau * (m1.worker_totals().cwiseQuotient(cur.s.m) - Vec::Ones(spec.nx())),
                      cur.s.n + tau * (m1.firm_totals().cwiseQuotient(cur.s.n) - Vec::Ones(spec.ny()))};
    sn.m = sn.m.cwiseMax(kMassFloor);
    sn.n = sn.n.cwiseMax(kMassFloor);
    if (spec.fixed_n.size()) sn.n = spec.fixed_n;

    // moment gap on the model scale, preconditioned by its lambda-derivative
    const Mat target = data_on_model_scale(spec, data, m1);
    Vec g(L);
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L, L);
    const auto cells = spec.cells();
    const Eigen::MatrixXd D = lambda_sensitivity(spec, basis, m1);
    for (int l = 0; l < L; ++l) g[l] = ((m1.cells - target).array() * basis.phi[l].array()).sum();
    for (size_t i = 0; i < cells.size(); ++i)
      for (int l = 0; l < L; ++l)
        for (int j = 0; j < L; ++j) H(l, j) += D(i, l) * basis.phi[j](cells[i].row, cells[i].col);
    H.diagonal().array() += 1e-12 * (1.0 + H.diagonal().cwiseAbs().maxCoeff());
    const Vec ln = cur.lambda - tau * H.ldlt().solve(g);

    const Residuals r = residuals(spec, cur.s, m1);
    const double step = std::max({sup_abs(pn.U - cur.p.U), sup_abs(pn.V - cur.p.V), sup_abs(sn.m - cur.s.m),
                                  sup_abs(sn.n - cur.s.n), sup_abs(ln - cur.lambda)});
    const double resid = std::max(r.sup(), sup_abs(g));
    res.trace.push_back({k, resid, step, ""});
    res.iterations = k;
    if (!std::isfinite(resid) || !std::isfinite(step) || (k > 50 && resid > 10.0 * best_res)) {
      res.status = SolveStatus::Diverged;
      res.message = "residual grew tenfold from its best value";
      cur = best;
      break;
    }
    if (resid < best_res) {
      best_res = resid;
      best = {pn, cur.s, cur.lambda};
    }
    prev = cur.s;
    cur = {pn, sn, ln};
    if (step < opts.delta) {
      if (resid > 1e-3 * std::max({1.0, spec.M, spec.N})) {
        res.status = SolveStatus::Diverged;
        res.message = "steps vanished away from a solution";
        cur = best;
        break;
      }
      if (resid <= 10.0 * opts.delta) {
        res.status = SolveStatus::Converged;
        break;
      }
    }
  }
  if (res.status == SolveStatus::MaxItersExceeded) {
    res.message = "iteration budget exhausted; returning the best iterate";
    cur = best;
  }
  res.payoffs = cur.p;
  res.state = cur.s;
  res.lambda = cur.lambda;
  return res;
}

void finalize(const ModelSpec& spec, const SurplusBasis& basis, const EstimationDataset& data, EstimationResult& res) {
  const Fit f = assess(spec, basis, res.lambda, res.payoffs, res.state, data, res.matching);
  res.feasibility = f.feasibility;
  res.stationarity = f.stationarity;
  res.moment_sup = f.moments;
  res.log_likelihood = f.loglik;
  res.constraint_violation = std::max(f.feasibility, f.stationarity);
}

StationaryInit default_init(const ModelSpec& spec, const SurplusBasis& basis, const Vec& lambda,
                            const EstimationOptions& opts) {
  if (opts.init) return *opts.init;
  // stationary equilibrium at the starting coefficients
  SolverOptions so;
  so.delta = 1e-10;
  const StationarySolution sol = solve_newton(basis.apply(spec, lambda), so);
  if (sol.converged()) return {sol.payoffs, sol.state};
  StationaryInit init{{Vec::Zero(spec.nx()), Vec::Zero(spec.ny())}, uniform_state(spec)};
  normalize_payoff_level(basis.apply(spec, lambda), init.payoffs, init.state);
  return init;
}

}  // namespace

EstimationResult estimate_primal_dual(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                                      const EstimationOptions& opts) {
  require_logit(base);
  check_data(base, data);
  basis.check(base);
  if (!(opts.tau > 0.0) || !(opts.delta > 0.0) || opts.max_iters < 1)
    throw Error(ErrorCode::Config, "tau, delta and max_iters must be positive");
  const ModelSpec spec = with_data_flows(base, data);
  const Vec lambda0 = start_lambda(basis, opts);
  const StationaryInit init = default_init(spec, basis, lambda0, opts);
  check_dims(spec, init.state);
  PdState start{init.payoffs, init.state, lambda0};
  if (spec.fixed_n.size()) start.s.n = spec.fixed_n;

  double tau = opts.tau;
  EstimationResult res;
  std::vector<TraceRow> log;
  for (int attempt = 0; attempt <= opts.max_tau_halvings; ++attempt) {
    res = pd_run(spec, basis, data, start, tau, opts);
    for (auto& row : res.trace) log.push_back(row);
    if (res.status != SolveStatus::Diverged) break;
    log.push_back({res.iterations, std::numeric_limits<double>::quiet_NaN(), tau, "diverged; halving tau"});
    tau *= 0.5;
  }
  int total = 0;
  for (const auto& row : log)
    if (row.note.empty()) ++total;
  res.trace = std::move(log);
  res.iterations = total;
  finalize(spec, basis, data, res);
  return res;
}

// ---------------------------------------------------------------------------
// MPEC estimator

namespace {

// Unknowns z = (U, V, log m, log n, lambda).
struct MpecProblem {
  const ModelSpec& spec;
  const SurplusBasis& basis;
  const EstimationDataset& data;
  int nx, ny, L, ntheta, nz;
  double total;

  MpecProblem(const ModelSpec& s, const SurplusBasis& b, const EstimationDataset& d)
      : spec(s), basis(b), data(d), nx(s.nx()), ny(s.ny()), L(b.size()) {
    ntheta = 2 * nx + 2 * ny;
    nz = ntheta + L;
    total = d.total();
  }

  void unpack(const Vec& z, PayoffVectors& p, AggregateState& s, Vec& lambda) const {
    p.U = z.segment(0, nx);
    p.V = z.segment(nx, ny);
    s.m = z.segment(nx + ny, nx).array().exp();
    s.n = z.segment(2 * nx + ny, ny).array().exp();
    lambda = z.tail(L);
  }

  Vec pack(const PayoffVectors& p, const AggregateState& s, const Vec& lambda) const {
    Vec z(nz);
    z << p.U, p.V, s.m.cwiseMax(kMassFloor).array().log().matrix(), s.n.cwiseMax(kMassFloor).array().log().matrix(), lambda;
    return z;
  }

  Vec constraints(const Vec& z) const {
    PayoffVectors p;
    AggregateState s;
    Vec lambda;
    unpack(z, p, s, lambda);
    return stationary_system(basis.apply(spec, lambda), p, s);
  }

  Eigen::MatrixXd constraint_jacobian(const Vec& z) const {
    PayoffVectors p;
    AggregateState s;
    Vec lambda;
    unpack(z, p, s, lambda);
    const ModelSpec sl = basis.apply(spec, lambda);
    const Eigen::MatrixXd Jt = stationary_jacobian(sl, p, s);
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(Jt.rows(), nz);
    J.leftCols(ntheta) = Jt;
    const Matching mu = closed_form_matching(sl, p, p, s);
    const Eigen::MatrixXd D = lambda_sensitivity(sl, basis, mu);
    const auto cells = sl.cells();
    const int C = sl.grid_cols();
    for (size_t i = 0; i < cells.size(); ++i) {
      const Cell& c = cells[i];
      const int col = c.row * C + c.col;
      const auto g = D.row(static_cast<Eigen::Index>(i));
      if (c.row > 0) J.block(c.row - 1, ntheta, 1, L) += g;
      if (c.col > 0) J.block(nx + c.col - 1, ntheta, 1, L) += g;
      for (int j = 0; j < nx; ++j)
        if (sl.P.to(j, col) != 0.0) J.block(nx + ny + j, ntheta, 1, L) += sl.P.to(j, col) * g;
      for (int j = 0; j < ny; ++j)
        if (sl.Q.to(j, col) != 0.0) J.block(2 * nx + ny + j, ntheta, 1, L) += sl.Q.to(j, col) * g;
    }
    return J;
  }

  // Negative log-likelihood per observation and its gradient in z.
  double objective(const Vec& z, Vec* grad) const {
    PayoffVectors p;
    AggregateState s;
    Vec lambda;
    unpack(z, p, s, lambda);
    const LikelihoodValue lv = log_likelihood(spec, basis, lambda, p, s, data);
    if (grad) {
      grad->resize(nz);
      *grad << lv.grad_U, lv.grad_V, lv.grad_m.cwiseProduct(s.m), lv.grad_n.cwiseProduct(s.n), lv.grad_lambda;
      *grad *= -1.0 / total;
    }
    return -lv.value / total;
  }

  // Gradient of f + w.F for fixed weights w.
  Vec weighted_gradient(const Vec& z, const Vec& w) const {
    Vec gf;
    objective(z, &gf);
    return gf + constraint_jacobian(z).transpose() * w;
  }

  // Augmented Lagrangian f + y.F + rho/2 |F|^2.
  double lagrangian(const Vec& z, const Vec& y, double rho, Vec* grad) const {
    Vec gf;
    const double f = objective(z, grad ? &gf : nullptr);
    const Vec F = constraints(z);
    if (grad) *grad = gf + constraint_jacobian(z).transpose() * (y + rho * F);
    return f + y.dot(F) + 0.5 * rho * F.squaredNorm();
  }
};

}  // namespace

EstimationResult estimate_mpec(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                               const EstimationOptions& opts) {
  require_logit(base);
  check_data(base, data);
  basis.check(base);
  if (opts.max_outer < 1) throw Error(ErrorCode::Config, "max_outer must be positive");
  const ModelSpec spec = with_data_flows(base, data);
  const Vec lambda0 = start_lambda(basis, opts);
  const StationaryInit init = default_init(spec, basis, lambda0, opts);
  check_dims(spec, init.state);
  MpecProblem prob(spec, basis, data);

  Vec z = prob.pack(init.payoffs, init.state, lambda0);
  Vec F = prob.constraints(z);
  Vec y = Vec::Zero(F.size());
  double rho = 1e3;  // masses are O(1/types): a weak initial penalty lets them drift to zero
  const double kkt_tol = std::max(1e-9, 1e-2 * opts.delta);

  EstimationResult res;
  res.status = SolveStatus::MaxItersExceeded;
  double prev_violation = sup_abs(F);
  int newton_steps = 0;
  for (int outer = 1; outer <= opts.max_outer; ++outer) {
    res.outer_iterations = outer;
    const double inner_tol = std::max(kkt_tol, 1e-3 * std::min(1.0, prev_violation));
    // damped Newton on the augmented Lagrangian
    for (int it = 0; it < 200; ++it) {
      Vec g;
      const double Lz = prob.lagrangian(z, y, rho, &g);
      if (sup_abs(g) < inner_tol) break;
      // Hessian: rho J'J exactly, the rest by central differences of the
      // analytic gradient with the multiplier estimate w = y + rho F frozen,
      // so difference errors are not amplified by rho.
      const Eigen::MatrixXd J = prob.constraint_jacobian(z);
      const Vec w = y + rho * prob.constraints(z);
      Eigen::MatrixXd H = rho * (J.transpose() * J);
      for (int i = 0; i < prob.nz; ++i) {
        const double h = 1e-6 * std::max(1.0, std::abs(z[i]));
        Vec zp = z, zm = z;
        zp[i] += h;
        zm[i] -= h;
        H.col(i) += (prob.weighted_gradient(zp, w) - prob.weighted_gradient(zm, w)) / (2.0 * h);
      }
      H = 0.5 * (H + H.transpose()).eval();
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(H);
      Vec ev = eig.eigenvalues();
      const double floor = std::max(1e-10, 1e-10 * ev.cwiseAbs().maxCoeff());
      for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = std::max(std::abs(ev[i]), floor);
      Vec dir = -(eig.eigenvectors() * (eig.eigenvectors().transpose() * g).cwiseQuotient(ev));
      const double big = sup_abs(dir);
      double t = big > 5.0 ? 5.0 / big : 1.0;
      const double slope = g.dot(dir);
      bool ok = false;
      for (int ls = 0; ls < 60; ++ls) {
        const Vec zt = z + t * dir;
        double Lt;
        try {
          Lt = prob.lagrangian(zt, y, rho, nullptr);
        } catch (const Error&) {
          Lt = std::numeric_limits<double>::infinity();
        }
        if (std::isfinite(Lt) && Lt <= Lz + 1e-4 * t * slope) {
          z = zt;
          ok = true;
          break;
        }
        t *= 0.5;
      }
      ++newton_steps;
      res.trace.push_back({newton_steps, sup_abs(g), t * big, ok ? "" : "line search failed"});
      if (!ok) break;
    }
    F = prob.constraints(z);
    const double violation = sup_abs(F);
    // first-order optimality of the plain Lagrangian with updated multipliers
    y += rho * F;
    Vec gf;
    prob.objective(z, &gf);
    const double kkt = sup_abs(gf + prob.constraint_jacobian(z).transpose() * y);
    res.trace.push_back({newton_steps, violation, kkt, "outer " + std::to_string(outer)});
    if (violation < opts.constraint_tol && kkt < std::max(kkt_tol, 1e-8)) {
      res.status = SolveStatus::Converged;
      break;
    }
    if (violation > 0.25 * prev_violation) rho = std::min(rho * 10.0, 1e12);
    prev_violation = violation;
  }
  if (res.status != SolveStatus::Converged) res.message = "augmented Lagrangian did not reach the tolerances";
  prob.unpack(z, res.payoffs, res.state, res.lambda);
  res.iterations = newton_steps;
  finalize(spec, basis, data, res);
  res.constraint_violation = sup_abs(prob.constraints(z));
  return res;
}

EstimationResult estimate(Estimator method, const ModelSpec& base, const SurplusBasis& basis,
                          const EstimationDataset& data, const EstimationOptions& opts) {
  return method == Estimator::PrimalDual ? estimate_primal_dual(base, basis, data, opts)
                                         : estimate_mpec(base, basis, data, opts);
}

// ---------------------------------------------------------------------------
// synthetic data and bootstrap

namespace {

// Multinomial draw over the observed cells by sequential binomials.
Mat multinomial_counts(const ModelSpec& spec, const Mat& probs, const std::vector<Cell>& cells, long long n,
                       std::mt19937_64& rng) {
  Mat out = Mat::Zero(probs.rows(), probs.cols());
  double left_p = 0.0;
  for (const auto& c : cells) left_p += probs(c.row, c.col);
  long long left = n;
  for (size_t i = 0; i < cells.size() && left > 0; ++i) {
    const Cell& c = cells[i];
    const double p = probs(c.row, c.col);
    long long k;
    if (i + 1 == cells.size() || left_p <= p) k = left;
    else {
      std::binomial_distribution<long long> bin(left, std::clamp(p / left_p, 0.0, 1.0));
      k = bin(rng);
    }
    out(c.row, c.col) = static_cast<double>(k);
    left -= k;
    left_p -= p;
  }
  (void)spec;
  return out;
}

std::mt19937_64 replicate_rng(std::uint64_t seed, int replicate) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(replicate), 0x6d617463u};
  return std::mt19937_64(seq);
}

}  // namespace

EstimationDataset synth_data(const ModelSpec& spec, long long sample_size, std::uint64_t seed, bool population,
                             std::optional<bool> margins) {
  require_logit(spec);
  if (sample_size < 1 && !population) throw Error(ErrorCode::Config, "sample size must be positive");
  SolverOptions so;
  so.delta = 1e-12;
  StationarySolution sol = solve_newton(spec, so);
  if (!sol.converged()) {
    so.delta = 1e-10;
    sol = solve_newton(spec, so);
  }
  if (!sol.converged()) throw Error(ErrorCode::Config, "cannot solve the generating model: " + sol.message);

  EstimationDataset d;
  d.has_margins = margins.value_or(spec.allow_unmatched) && spec.allow_unmatched;
  if (spec.has_flows()) {
    d.flow_m = spec.inflow_m;
    d.flow_n = spec.inflow_n;
  }
  const auto cells = observed_cells(spec, d);
  double mass = 0.0;
  for (const auto& c : cells) mass += sol.matching.cells(c.row, c.col);
  Mat probs = Mat::Zero(spec.grid_rows(), spec.grid_cols());
  for (const auto& c : cells) probs(c.row, c.col) = sol.matching.cells(c.row, c.col) / mass;
  d.sample_size = std::max<long long>(sample_size, 0);
  if (population) {
    d.counts = probs;
    return d;
  }
  std::mt19937_64 rng(seed);
  d.counts = multinomial_counts(spec, probs, cells, sample_size, rng) / static_cast<double>(sample_size);
  return d;
}

EstimationResult bootstrap_replicate(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                                     const BootstrapOptions& opts, int replicate, const EstimationResult* start) {
  EstimationDataset d = data;
  if (opts.resample) {
    if (data.sample_size < 1) throw Error(ErrorCode::Config, "resampling needs a positive sample size");
    auto rng = replicate_rng(opts.seed, replicate);
    const auto cells = observed_cells(base, data);
    const Mat probs = data.counts / data.total();
    d.counts = multinomial_counts(base, probs, cells, data.sample_size, rng) / static_cast<double>(data.sample_size);
  }
  EstimationOptions eo = opts.estimation;
  if (start && start->converged()) {
    eo.lambda0 = start->lambda;
    eo.init = StationaryInit{start->payoffs, start->state};
  }
  return estimate(opts.method, base, basis, d, eo);
}

BootstrapResult bootstrap_se(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                             const BootstrapOptions& opts) {
  if (opts.replicates < 2) throw Error(ErrorCode::Config, "bootstrap needs at least 2 replicates");
  const EstimationResult full = estimate(opts.method, base, basis, data, opts.estimation);
  const int B = opts.replicates, L = basis.size();
  std::vector<EstimationResult> reps(B);
  std::exception_ptr failure;
  auto run = [&](int b) {
    try {
      reps[b] = bootstrap_replicate(base, basis, data, opts, b, &full);
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical(dynmatch_bootstrap_failure)
#endif
      if (!failure) failure = std::current_exception();
    }
  };
  if (opts.parallel) {
#ifdef _OPENMP
    const int nt = opts.threads > 0 ? opts.threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 1) num_threads(nt)
#endif
    for (int b = 0; b < B; ++b) run(b);
  } else {
    for (int b = 0; b < B; ++b) run(b);
  }
  if (failure) std::rethrow_exception(failure);

  BootstrapResult out;
  for (const auto& r : reps) {
    if (r.converged()) out.draws.push_back(r.lambda);
    else ++out.failures;
  }
  out.se = Vec::Constant(L, std::numeric_limits<double>::quiet_NaN());
  if (out.draws.size() >= 2) {
    Vec mean = Vec::Zero(L);
    for (const auto& d : out.draws) mean += d;
    mean /= static_cast<double>(out.draws.size());
    Vec var = Vec::Zero(L);
    for (const auto& d : out.draws) var += (d - mean).cwiseAbs2();
    out.se = (var / static_cast<double>(out.draws.size() - 1)).cwiseSqrt();
  }
  return out;
}

// ---------------------------------------------------------------------------
// files

namespace {

int label_index(const std::vector<std::string>& labels, const std::string& l) {
  if (l == "0") return 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == l) return static_cast<int>(i) + 1;
  return -1;
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

void add_count(const ModelSpec& spec, EstimationDataset& d, const std::string& xs, const std::string& ys, double v,
               const std::string& where) {
  const int r = label_index(spec.types.workers, xs), c = label_index(spec.types.firms, ys);
  if (r < 0 || c < 0 || (r == 0 && c == 0)) throw Error(ErrorCode::Config, where + ": unknown cell " + xs + "," + ys);
  if ((r == 0 || c == 0) && !spec.allow_unmatched)
    throw Error(ErrorCode::Config, where + ": unmatched cell in a market without unmatched options");
  if (!(v >= 0.0) || !std::isfinite(v)) throw Error(ErrorCode::Config, where + ": counts must be nonnegative");
  if (r == 0 || c == 0) d.has_margins = true;
  d.counts(r, c) += v;
}

}  // namespace

EstimationDataset load_dataset(const std::string& path, const ModelSpec& spec) {
  EstimationDataset d;
  d.counts = Mat::Zero(spec.grid_rows(), spec.grid_cols());
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  if (is_json) {
    const json doc = read_json_file(path);
    if (!doc.contains("counts") || !doc["counts"].is_array()) throw Error(ErrorCode::Config, path + ": missing 'counts'");
    for (const auto& row : doc["counts"]) {
      if (!row.is_array() || row.size() != 3) throw Error(ErrorCode::Config, path + ": counts rows are [x, y, count]");
      add_count(spec, d, row[0].get<std::string>(), row[1].get<std::string>(), row[2].get<double>(), path);
    }
    if (doc.contains("margins")) d.has_margins = doc["margins"].get<bool>() && spec.allow_unmatched;
    d.sample_size = doc.value("sample_size", 0LL);
    if (doc.contains("flows")) {
      auto w = doc["flows"].value("workers", std::vector<double>{});
      auto f = doc["flows"].value("firms", std::vector<double>{});
      if (static_cast<int>(w.size()) != spec.nx() || static_cast<int>(f.size()) != spec.ny())
        throw Error(ErrorCode::Config, path + ": flows need one entry per type");
      d.flow_m = Eigen::Map<Vec>(w.data(), spec.nx());
      d.flow_n = Eigen::Map<Vec>(f.data(), spec.ny());
    }
  } else {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::Config, "cannot open " + path);
    std::string line;
    int lineno = 0;
    double total = 0.0;
    while (std::getline(in, line)) {
      ++lineno;
      line = trim(line);
      if (line.empty() || line[0] == '#') continue;
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string item;
      while (std::getline(ss, item, ',')) f.push_back(trim(item));
      const std::string where = path + ":" + std::to_string(lineno);
      if (f.size() != 3) throw Error(ErrorCode::Config, where + ": expected x,y,count");
      double v;
      try {
        size_t used = 0;
        v = std::stod(f[2], &used);
        if (used != f[2].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        if (lineno == 1) continue;  // header
        throw Error(ErrorCode::Config, where + ": count is not a number");
      }
      add_count(spec, d, f[0], f[1], v, where);
      total += v;
    }
    // integer counts are a sample of that size
    if (total > 0.0 && std::abs(total - std::round(total)) < 1e-9 && (d.counts.array() == d.counts.array().round()).all())
      d.sample_size = static_cast<long long>(std::llround(total));
  }
  if (!(d.total() > 0.0)) throw Error(ErrorCode::Config, path + ": dataset has no observations");
  return d;
}

std::string dataset_to_csv(const ModelSpec& spec, const EstimationDataset& data) {
  std::ostringstream os;
  os.precision(17);
  os << "x,y,count\n";
  for (const auto& c : observed_cells(spec, data)) {
    const std::string xs = c.row == 0 ? "0" : spec.types.workers[c.row - 1];
    const std::string ys = c.col == 0 ? "0" : spec.types.firms[c.col - 1];
    os << xs << "," << ys << "," << data.counts(c.row, c.col) << "\n";
  }
  return os.str();
}

BasisFile basis_from_json(const json& doc_in) {
  json doc = doc_in;
  if (!doc.contains("worker_types") || !doc.contains("firm_types"))
    throw Error(ErrorCode::Config, "basis file needs worker_types and firm_types");
  const size_t nx = doc["worker_types"].size(), ny = doc["firm_types"].size();
  const json zeros = json(std::vector<std::vector<double>>(nx, std::vector<double>(ny, 0.0)));
  if (!doc.contains("alpha")) doc["alpha"] = zeros;
  if (!doc.contains("gamma")) doc["gamma"] = zeros;
  BasisFile out;
  out.base = model_from_json(doc);
  if (!doc.contains("basis") || !doc["basis"].is_array() || doc["basis"].empty())
    throw Error(ErrorCode::Config, "basis file needs a non-empty 'basis' list");
  for (const auto& item : doc["basis"]) {
    out.basis.names.push_back(item.value("name", "phi" + std::to_string(out.basis.names.size() + 1)));
    if (!item.contains("pairs")) throw Error(ErrorCode::Config, "basis entry needs a 'pairs' matrix");
    const auto rows = item["pairs"].get<std::vector<std::vector<double>>>();
    if (rows.size() != nx) throw Error(ErrorCode::Config, "basis 'pairs' must have one row per worker type");
    Mat phi = Mat::Zero(nx + 1, ny + 1);
    for (size_t x = 0; x < nx; ++x) {
      if (rows[x].size() != ny) throw Error(ErrorCode::Config, "basis 'pairs' row has the wrong length");
      for (size_t y = 0; y < ny; ++y) phi(x + 1, y + 1) = rows[x][y];
    }
    out.basis.phi.push_back(phi);
  }
  if (doc.contains("lambda")) {
    auto l = doc["lambda"].get<std::vector<double>>();
    out.basis.lambda = Eigen::Map<Vec>(l.data(), static_cast<Eigen::Index>(l.size()));
  }
  out.basis.check(out.base);
  return out;
}

BasisFile load_basis(const std::string& path) {
  try {
    return basis_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, path + ": " + e.what());
  }
}

json basis_to_json(const ModelSpec& base, const SurplusBasis& basis) {
  json doc = model_to_json(base);
  doc.erase("alpha");
  doc.erase("gamma");
  json list = json::array();
  for (int l = 0; l < basis.size(); ++l) {
    std::vector<std::vector<double>> rows(base.nx(), std::vector<double>(base.ny()));
    for (int x = 0; x < base.nx(); ++x)
      for (int y = 0; y < base.ny(); ++y) rows[x][y] = basis.phi[l](x + 1, y + 1);
    list.push_back({{"name", l < static_cast<int>(basis.names.size()) ? basis.names[l] : "phi" + std::to_string(l + 1)},
                    {"pairs", rows}});
  }
  doc["basis"] = list;
  if (basis.lambda.size())
    doc["lambda"] = std::vector<double>(basis.lambda.data(), basis.lambda.data() + basis.lambda.size());
  return doc;
}

}  // namespace dynmatch
