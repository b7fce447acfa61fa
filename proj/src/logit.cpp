#include "dynmatch/logit.hpp"

#include <cmath>
#include <limits>

namespace dynmatch {

namespace {

constexpr double kFloor = 1e-300;

double safe_log(double v) { return std::log(std::max(v, kFloor)); }

void check_payoffs(const ModelSpec& spec, const PayoffVectors& p) {
  if (p.U.size() != spec.nx() || p.V.size() != spec.ny())
    throw Error(ErrorCode::DimensionMismatch, "payoff vectors do not match the type spaces");
}

}  // namespace

double inclusive_value(const Eigen::Ref<const Vec>& u, double scale) {
  if (u.size() == 0) return -std::numeric_limits<double>::infinity();
  const double top = u.maxCoeff();
  if (!std::isfinite(top)) return top;
  double s = 0.0;
  for (Eigen::Index i = 0; i < u.size(); ++i) s += std::exp((u[i] - top) / scale);
  return top + scale * std::log(s);
}

double entropy(const Matching& mu, double scale, bool strict) {
  const int nx = mu.nx(), ny = mu.ny();
  Vec rows = mu.worker_totals(), cols = mu.firm_totals();
  double e = 0.0;
  for (int x = 0; x < nx; ++x) {
    if (!(rows[x] > 0.0)) {
      if (strict) throw Error(ErrorCode::Domain, "entropy undefined: worker type " + std::to_string(x) + " carries no mass");
      continue;
    }
    for (int c = 0; c <= ny; ++c) {
      double v = mu.cells(x + 1, c);
      if (v > 0.0) e += v * std::log(v / rows[x]);
    }
  }
  for (int y = 0; y < ny; ++y) {
    if (!(cols[y] > 0.0)) {
      if (strict) throw Error(ErrorCode::Domain, "entropy undefined: firm type " + std::to_string(y) + " carries no mass");
      continue;
    }
    for (int r = 0; r <= nx; ++r) {
      double v = mu.cells(r, y + 1);
      if (v > 0.0) e += v * std::log(v / cols[y]);
    }
  }
  return scale * e;
}

Mat continuation(const ModelSpec& spec, const PayoffVectors& next, double beta) {
  check_payoffs(spec, next);
  Mat cont(spec.grid_rows(), spec.grid_cols());
  Eigen::Map<Vec> flat(cont.data(), cont.size());
  flat.noalias() = beta * (spec.P.to.transpose() * next.U + spec.Q.to.transpose() * next.V);
  return cont;
}

Matching closed_form_matching(const ModelSpec& spec, const Mat& phi, double beta, double sigma, const PayoffVectors& now,
                              const PayoffVectors& next, const AggregateState& state) {
  check_payoffs(spec, now);
  check_dims(spec, state);
  const int nx = spec.nx(), ny = spec.ny();
  const Mat cont = continuation(spec, next, beta);
  Matching mu = Matching::zeros(nx, ny);
  for (int x = 0; x < nx; ++x) {
    const double mx = state.m[x];
    if (!(mx > 0.0)) continue;
    for (int y = 0; y < ny; ++y) {
      const double ny_ = state.n[y];
      if (!(ny_ > 0.0)) continue;
      const double arg = (phi(x + 1, y + 1) + cont(x + 1, y + 1) - now.U[x] - now.V[y]) / (2.0 * sigma);
      mu.cells(x + 1, y + 1) = std::exp(0.5 * (std::log(mx) + std::log(ny_)) + arg);
    }
  }
  if (spec.allow_unmatched) {
    for (int x = 0; x < nx; ++x)
      if (state.m[x] > 0.0)
        mu.cells(x + 1, 0) = state.m[x] * std::exp((phi(x + 1, 0) + cont(x + 1, 0) - now.U[x]) / sigma);
    for (int y = 0; y < ny; ++y)
      if (state.n[y] > 0.0)
        mu.cells(0, y + 1) = state.n[y] * std::exp((phi(0, y + 1) + cont(0, y + 1) - now.V[y]) / sigma);
  }
  return mu;
}

Matching closed_form_matching(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next,
                              const AggregateState& state) {
  return closed_form_matching(spec, spec.surplus(), spec.beta, spec.temperature(), now, next, state);
}

ZEval z_eval(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next, const AggregateState& state,
             double beta_override) {
  if (!(beta_override > 0.0 && beta_override <= 1.0))
    throw Error(ErrorCode::Domain, "beta_override must lie in (0,1]");
  const int nx = spec.nx(), ny = spec.ny();
  const double sigma = spec.temperature();
  const Matching mu = closed_form_matching(spec, spec.surplus(), beta_override, sigma, now, next, state);
  ZEval z;
  const Vec rows = mu.worker_totals(), cols = mu.firm_totals();
  z.value = 2.0 * mu.cells.bottomRightCorner(nx, ny).sum() + mu.cells.col(0).sum() + mu.cells.row(0).sum() -
            state.m.sum() - state.n.sum();
  z.grad_U = -rows / sigma;
  z.grad_V = -cols / sigma;
  // Each cell's weight times its exponent coefficient on the continuation is 1/sigma.
  Eigen::Map<const Vec> flat(mu.cells.data(), mu.cells.size());
  z.grad_Uprime = beta_override * (spec.P.to * flat) / sigma;
  z.grad_Vprime = beta_override * (spec.Q.to * flat) / sigma;
  z.grad_m.resize(nx);
  z.grad_n.resize(ny);
  for (int x = 0; x < nx; ++x) z.grad_m[x] = state.m[x] > 0.0 ? rows[x] / state.m[x] - 1.0 : -1.0;
  for (int y = 0; y < ny; ++y) z.grad_n[y] = state.n[y] > 0.0 ? cols[y] / state.n[y] - 1.0 : -1.0;
  return z;
}

PeriodPayoffs implied_period_payoffs(const ModelSpec& spec, const Matching& mu, const PayoffVectors& payoffs,
                                     const AggregateState& state) {
  const int R = spec.grid_rows(), C = spec.grid_cols();
  const double sigma = spec.temperature();
  const double ninf = -std::numeric_limits<double>::infinity();
  PeriodPayoffs pp{Mat::Constant(R, C, ninf), Mat::Constant(R, C, ninf)};
  for (int r = 1; r < R; ++r)
    for (int c = 0; c < C; ++c)
      if (mu.cells(r, c) > 0.0) pp.u(r, c) = payoffs.U[r - 1] + sigma * (safe_log(mu.cells(r, c)) - safe_log(state.m[r - 1]));
  for (int c = 1; c < C; ++c)
    for (int r = 0; r < R; ++r)
      if (mu.cells(r, c) > 0.0) pp.v(r, c) = payoffs.V[c - 1] + sigma * (safe_log(mu.cells(r, c)) - safe_log(state.n[c - 1]));
  return pp;
}

namespace {

// log(1 + sqrt(1 + e^r)) without overflow.
double log_one_plus_root(double r) {
  if (r <= 0.0) return std::log1p(std::sqrt(1.0 + std::exp(r)));
  const double t = std::exp(-r);
  return 0.5 * r + std::log(std::exp(-0.5 * r) + std::sqrt(1.0 + t));
}

// Solve e^{2z} k + e^{z} B = target for z given log k, log B, log target.
double solve_potential(double log_target, double log_k, double log_B, bool quadratic) {
  if (!quadratic) return log_target - log_B;
  if (!std::isfinite(log_B)) return 0.5 * (log_target - log_k);
  const double r = std::log(4.0) + log_k + log_target - 2.0 * log_B;
  return std::log(2.0) + log_target - log_B - log_one_plus_root(r);
}

}  // namespace

static StaticSolve static_core(const Mat& S, double T, const Vec& m, const Vec& n, bool unmatched, double tol,
                        int max_iters, const StaticSolve* warm) {
  const int nx = static_cast<int>(m.size()), ny = static_cast<int>(n.size());
  const double ninf = -std::numeric_limits<double>::infinity();
  const Mat K = S.bottomRightCorner(nx, ny) / (2.0 * T);
  Vec kx(nx), ky(ny), lm(nx), ln(ny);
  for (int x = 0; x < nx; ++x) {
    kx[x] = S(x + 1, 0) / T;
    lm[x] = m[x] > 0.0 ? std::log(m[x]) : ninf;
  }
  for (int y = 0; y < ny; ++y) {
    ky[y] = S(0, y + 1) / T;
    ln[y] = n[y] > 0.0 ? std::log(n[y]) : ninf;
  }

  StaticSolve out;
  out.a = Vec::Zero(nx);
  out.b = Vec::Zero(ny);
  if (warm && warm->a.size() == nx && warm->b.size() == ny) {
    out.a = warm->a;
    out.b = warm->b;
  }
  for (int x = 0; x < nx; ++x)
    if (!std::isfinite(lm[x])) out.a[x] = ninf;
    else if (!std::isfinite(out.a[x])) out.a[x] = 0.0;
  for (int y = 0; y < ny; ++y)
    if (!std::isfinite(ln[y])) out.b[y] = ninf;
    else if (!std::isfinite(out.b[y])) out.b[y] = 0.0;

  Vec scratch(std::max(nx, ny));
  auto lse = [&](int len) {
    double top = ninf;
    for (int i = 0; i < len; ++i) top = std::max(top, scratch[i]);
    if (!std::isfinite(top)) return ninf;
    double s = 0.0;
    for (int i = 0; i < len; ++i) s += std::exp(scratch[i] - top);
    return top + std::log(s);
  };
  auto row_update = [&] {
    for (int x = 0; x < nx; ++x) {
      if (!std::isfinite(lm[x])) continue;
      for (int y = 0; y < ny; ++y) scratch[y] = out.b[y] + K(x, y);
      out.a[x] = solve_potential(lm[x], kx[x], lse(ny), unmatched);
    }
  };
  auto col_update = [&] {
    for (int y = 0; y < ny; ++y) {
      if (!std::isfinite(ln[y])) continue;
      for (int x = 0; x < nx; ++x) scratch[x] = out.a[x] + K(x, y);
      out.b[y] = solve_potential(ln[y], ky[y], lse(nx), unmatched);
    }
  };

  // margins of the current potentials
  Mat pair(nx, ny);
  Vec alone_x(nx), alone_y(ny), rows(nx), cols(ny);
  auto evaluate = [&](const Vec& a, const Vec& b) {
    rows.setZero();
    cols.setZero();
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        const double e = a[x] + b[y] + K(x, y);
        pair(x, y) = std::isfinite(e) ? std::exp(e) : 0.0;
        rows[x] += pair(x, y);
        cols[y] += pair(x, y);
      }
    for (int x = 0; x < nx; ++x) alone_x[x] = unmatched && std::isfinite(a[x]) ? std::exp(2.0 * a[x] + kx[x]) : 0.0;
    for (int y = 0; y < ny; ++y) alone_y[y] = unmatched && std::isfinite(b[y]) ? std::exp(2.0 * b[y] + ky[y]) : 0.0;
  };
  auto margin_error = [&] {
    double err = 0.0;
    for (int x = 0; x < nx; ++x) err = std::max(err, std::abs(rows[x] + alone_x[x] - m[x]));
    for (int y = 0; y < ny; ++y) err = std::max(err, std::abs(cols[y] + alone_y[y] - n[y]));
    return err;
  };
  // convex dual objective, finite only where every exponential is
  auto dual = [&](const Vec& a, const Vec& b) {
    evaluate(a, b);
    double f = pair.sum() + 0.5 * (alone_x.sum() + alone_y.sum());
    for (int x = 0; x < nx; ++x)
      if (std::isfinite(lm[x])) f -= m[x] * a[x];
    for (int y = 0; y < ny; ++y)
      if (std::isfinite(ln[y])) f -= n[y] * b[y];
    return f;
  };

  int it = 0;
  const int sweeps = std::min(max_iters, 40);
  for (; it < sweeps; ++it) {
    row_update();
    col_update();
    evaluate(out.a, out.b);
    out.residual = margin_error();
    if (out.residual < tol) {
      out.converged = true;
      break;
    }
  }

  if (!out.converged) {
    // Newton on the dual over types with positive mass.
    std::vector<int> vx, vy;
    for (int x = 0; x < nx; ++x)
      if (std::isfinite(lm[x])) vx.push_back(x);
    for (int y = 0; y < ny; ++y)
      if (std::isfinite(ln[y])) vy.push_back(y);
    if (!unmatched && !vy.empty()) vy.pop_back();  // fixes the (a + c, b - c) direction
    const int na = static_cast<int>(vx.size()), nv = na + static_cast<int>(vy.size());
    Eigen::MatrixXd H(nv, nv);
    Vec g(nv);
    double f = dual(out.a, out.b);
    for (int k = 0; k < 200 && it < max_iters; ++k, ++it) {
      for (int i = 0; i < na; ++i) g[i] = rows[vx[i]] + alone_x[vx[i]] - m[vx[i]];
      for (size_t j = 0; j < vy.size(); ++j) g[na + j] = cols[vy[j]] + alone_y[vy[j]] - n[vy[j]];
      out.residual = margin_error();
      if (out.residual < tol) {
        out.converged = true;
        break;
      }
      H.setZero();
      for (int i = 0; i < na; ++i) H(i, i) = rows[vx[i]] + 2.0 * alone_x[vx[i]];
      for (size_t j = 0; j < vy.size(); ++j) H(na + j, na + j) = cols[vy[j]] + 2.0 * alone_y[vy[j]];
      for (int i = 0; i < na; ++i)
        for (size_t j = 0; j < vy.size(); ++j) H(i, na + j) = H(na + j, i) = pair(vx[i], vy[j]);
      H.diagonal().array() += 1e-10 * (1.0 + H.diagonal().maxCoeff());
      Eigen::LDLT<Eigen::MatrixXd> ldlt(H);
      Vec dir = -ldlt.solve(g);
      if (!dir.allFinite()) break;
      const double slope = g.dot(dir);
      double t = 1.0;
      const double cap = dir.cwiseAbs().maxCoeff();
      if (cap > 50.0) t = 50.0 / cap;
      bool ok = false;
      Vec ta = out.a, tb = out.b;
      for (int ls = 0; ls < 60; ++ls) {
        ta = out.a;
        tb = out.b;
        for (int i = 0; i < na; ++i) ta[vx[i]] += t * dir[i];
        for (size_t j = 0; j < vy.size(); ++j) tb[vy[j]] += t * dir[na + j];
        const double ft = dual(ta, tb);
        if (std::isfinite(ft) && ft <= f + 1e-4 * t * slope) {
          f = ft;
          ok = true;
          break;
        }
        t *= 0.5;
      }
      if (!ok) {
        evaluate(out.a, out.b);
        break;
      }
      out.a = ta;
      out.b = tb;
    }
    evaluate(out.a, out.b);
    out.residual = margin_error();
    out.converged = out.residual < tol;
  }

  for (; !out.converged && it < max_iters; ++it) {
    row_update();
    col_update();
    evaluate(out.a, out.b);
    out.residual = margin_error();
    out.converged = out.residual < tol;
  }
  out.iterations = it;

  out.mu = Matching::zeros(nx, ny);
  evaluate(out.a, out.b);
  out.mu.cells.bottomRightCorner(nx, ny) = pair;
  out.mu.cells.col(0).tail(nx) = alone_x;
  out.mu.cells.row(0).tail(ny) = alone_y.transpose();
  return out;
}

StaticSolve static_logit_matching(const Mat& S, double T, const Vec& m, const Vec& n, bool unmatched, double tol,
                                  int max_iters, const StaticSolve* warm) {
  if (warm) return static_core(S, T, m, n, unmatched, tol, max_iters, warm);
  // Cold starts at low temperature follow a temperature ladder, rescaling the
  // potentials between rungs.
  const double spread = std::max(S.cwiseAbs().maxCoeff(), 1.0);
  double t = std::max(T, 0.25 * spread);
  StaticSolve cur = static_core(S, t, m, n, unmatched, tol, max_iters, nullptr);
  int used = cur.iterations;
  while (t > T) {
    const double next = std::max(T, 0.25 * t);
    StaticSolve w = cur;
    const double ratio = t / next;
    for (Eigen::Index i = 0; i < w.a.size(); ++i)
      if (std::isfinite(w.a[i])) w.a[i] *= ratio;
    for (Eigen::Index i = 0; i < w.b.size(); ++i)
      if (std::isfinite(w.b[i])) w.b[i] *= ratio;
    cur = static_core(S, next, m, n, unmatched, tol, std::max(max_iters - used, 1), &w);
    used += cur.iterations;
    t = next;
  }
  cur.iterations = used;
  return cur;
}

}  // namespace dynmatch
