#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace oracle {

using ld = long double;

double logsumexp(const Vec& u, double scale) {
  ld top = u.maxCoeff();
  ld s = 0;
  for (Eigen::Index i = 0; i < u.size(); ++i) s += std::exp((static_cast<ld>(u[i]) - top) / scale);
  return static_cast<double>(top + scale * std::log(s));
}

double entropy(const Matching& mu, double scale) {
  const int nx = mu.nx(), ny = mu.ny();
  ld e = 0;
  for (int x = 1; x <= nx; ++x) {
    ld row = 0;
    for (int c = 0; c <= ny; ++c) row += mu.cells(x, c);
    for (int c = 0; c <= ny; ++c)
      if (mu.cells(x, c) > 0) e += mu.cells(x, c) * std::log(mu.cells(x, c) / row);
  }
  for (int y = 1; y <= ny; ++y) {
    ld col = 0;
    for (int r = 0; r <= nx; ++r) col += mu.cells(r, y);
    for (int r = 0; r <= nx; ++r)
      if (mu.cells(r, y) > 0) e += mu.cells(r, y) * std::log(mu.cells(r, y) / col);
  }
  return static_cast<double>(scale * e);
}

namespace {

// beta * (sum_d P(d | cell) U'_d + sum_d Q(d | cell) V'_d), summed explicitly.
ld continuation_at(const ModelSpec& spec, const PayoffVectors& next, int r, int c) {
  ld s = 0;
  for (int d = 0; d < spec.nx(); ++d) s += static_cast<ld>(spec.P(d, r, c)) * next.U[d];
  for (int d = 0; d < spec.ny(); ++d) s += static_cast<ld>(spec.Q(d, r, c)) * next.V[d];
  return spec.beta * s;
}

ld surplus_at(const ModelSpec& spec, int r, int c) {
  if (r == 0) return spec.gamma(0, c);
  if (c == 0) return spec.alpha(r, 0);
  return static_cast<ld>(spec.alpha(r, c)) + spec.gamma(r, c);
}

}  // namespace

Matching closed_form(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next, const AggregateState& s) {
  const int nx = spec.nx(), ny = spec.ny();
  const ld sigma = spec.shock.scale;
  Matching mu = Matching::zeros(nx, ny);
  for (int x = 1; x <= nx; ++x)
    for (int y = 1; y <= ny; ++y) {
      const ld e = (surplus_at(spec, x, y) + continuation_at(spec, next, x, y) - now.U[x - 1] - now.V[y - 1]) / (2 * sigma);
      mu.cells(x, y) = static_cast<double>(std::sqrt(static_cast<ld>(s.m[x - 1]) * s.n[y - 1]) * std::exp(e));
    }
  if (spec.allow_unmatched) {
    for (int x = 1; x <= nx; ++x)
      mu.cells(x, 0) = static_cast<double>(
          s.m[x - 1] * std::exp((surplus_at(spec, x, 0) + continuation_at(spec, next, x, 0) - now.U[x - 1]) / sigma));
    for (int y = 1; y <= ny; ++y)
      mu.cells(0, y) = static_cast<double>(
          s.n[y - 1] * std::exp((surplus_at(spec, 0, y) + continuation_at(spec, next, 0, y) - now.V[y - 1]) / sigma));
  }
  return mu;
}

Matching ipfp(const Mat& S, const Vec& m, const Vec& n, double T, double tol) {
  const int nx = static_cast<int>(m.size()), ny = static_cast<int>(n.size());
  std::vector<ld> a(nx, 1), b(ny, 1), ex(nx), ey(ny);
  std::vector<std::vector<ld>> K(nx, std::vector<ld>(ny));
  for (int x = 0; x < nx; ++x) {
    ex[x] = std::exp(static_cast<ld>(S(x + 1, 0)) / T);
    for (int y = 0; y < ny; ++y) K[x][y] = std::exp(static_cast<ld>(S(x + 1, y + 1)) / (2 * T));
  }
  for (int y = 0; y < ny; ++y) ey[y] = std::exp(static_cast<ld>(S(0, y + 1)) / T);
  // a_x^2 e_x + a_x sum_y K b_y = m_x, a positive root of a quadratic.
  auto root = [](ld quad, ld lin, ld target) { return (-lin + std::sqrt(lin * lin + 4 * quad * target)) / (2 * quad); };
  for (int it = 0; it < 1000000; ++it) {
    for (int x = 0; x < nx; ++x) {
      ld B = 0;
      for (int y = 0; y < ny; ++y) B += K[x][y] * b[y];
      a[x] = root(ex[x], B, m[x]);
    }
    ld err = 0;
    for (int y = 0; y < ny; ++y) {
      ld B = 0;
      for (int x = 0; x < nx; ++x) B += K[x][y] * a[x];
      err = std::max(err, std::fabs(b[y] * b[y] * ey[y] + b[y] * B - static_cast<ld>(n[y])));
    }
    if (err < tol) break;
    for (int y = 0; y < ny; ++y) {
      ld B = 0;
      for (int x = 0; x < nx; ++x) B += K[x][y] * a[x];
      b[y] = root(ey[y], B, n[y]);
    }
  }
  Matching mu = Matching::zeros(nx, ny);
  for (int x = 0; x < nx; ++x) {
    mu.cells(x + 1, 0) = static_cast<double>(a[x] * a[x] * ex[x]);
    for (int y = 0; y < ny; ++y) mu.cells(x + 1, y + 1) = static_cast<double>(a[x] * b[y] * K[x][y]);
  }
  for (int y = 0; y < ny; ++y) mu.cells(0, y + 1) = static_cast<double>(b[y] * b[y] * ey[y]);
  return mu;
}

double lagrangian(const ModelSpec& spec, const Matching& mu, const PayoffVectors& now, const PayoffVectors& next,
                  const AggregateState& s) {
  const int nx = spec.nx(), ny = spec.ny();
  const ld sigma = spec.shock.scale;
  ld L = 0;
  auto xlogx = [](ld v, ld ref) { return v > 0 ? v * (std::log(v / ref) - 1) : ld(0); };
  std::vector<ld> rows(nx, 0), cols(ny, 0);
  for (int r = 0; r <= nx; ++r)
    for (int c = 0; c <= ny; ++c) {
      if (r == 0 && c == 0) continue;
      if (!spec.allow_unmatched && (r == 0 || c == 0)) continue;
      const ld v = mu.cells(r, c);
      L += (surplus_at(spec, r, c) + continuation_at(spec, next, r, c)) * v;
      if (r > 0) {
        L -= sigma * xlogx(v, s.m[r - 1]);
        rows[r - 1] += v;
      }
      if (c > 0) {
        L -= sigma * xlogx(v, s.n[c - 1]);
        cols[c - 1] += v;
      }
    }
  for (int x = 0; x < nx; ++x) L += now.U[x] * (s.m[x] - rows[x]);
  for (int y = 0; y < ny; ++y) L += now.V[y] * (s.n[y] - cols[y]);
  return static_cast<double>(L);
}

Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h) {
  Vec g(x.size());
  Vec xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double step = h * std::max(1.0, std::fabs(x[i]));
    xp[i] = x[i] + step;
    const double fp = f(xp);
    xp[i] = x[i] - step;
    const double fm = f(xp);
    xp[i] = x[i];
    g[i] = (fp - fm) / (2 * step);
  }
  return g;
}

std::vector<Matching> vertices(const ModelSpec& spec, const AggregateState& s) {
  const int nx = spec.nx(), ny = spec.ny();
  std::vector<std::pair<int, int>> cells;
  for (int r = 0; r <= nx; ++r)
    for (int c = 0; c <= ny; ++c) {
      if (r == 0 && c == 0) continue;
      if (!spec.allow_unmatched && (r == 0 || c == 0)) continue;
      cells.push_back({r, c});
    }
  // Drop the last column constraint when it is implied by the others.
  const int eqs = spec.allow_unmatched ? nx + ny : nx + ny - 1;
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(eqs, static_cast<Eigen::Index>(cells.size()));
  Eigen::VectorXd rhs(eqs);
  for (int x = 0; x < nx; ++x) rhs[x] = s.m[x];
  for (int y = 0; y < ny && nx + y < eqs; ++y) rhs[nx + y] = s.n[y];
  for (size_t k = 0; k < cells.size(); ++k) {
    const auto [r, c] = cells[k];
    if (r > 0) A(r - 1, k) = 1;
    if (c > 0 && nx + c - 1 < eqs) A(nx + c - 1, k) = 1;
  }
  std::vector<Matching> out;
  const int n = static_cast<int>(cells.size());
  std::vector<bool> pick(n, false);
  std::fill(pick.begin(), pick.begin() + std::min(eqs, n), true);
  do {
    std::vector<int> idx;
    for (int k = 0; k < n; ++k)
      if (pick[k]) idx.push_back(k);
    Eigen::MatrixXd B(eqs, static_cast<Eigen::Index>(idx.size()));
    for (size_t j = 0; j < idx.size(); ++j) B.col(j) = A.col(idx[j]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
    if (lu.rank() < eqs) continue;
    const Eigen::VectorXd sol = lu.solve(rhs);
    if ((B * sol - rhs).cwiseAbs().maxCoeff() > 1e-10 || sol.minCoeff() < -1e-12) continue;
    Matching mu = Matching::zeros(nx, ny);
    for (size_t j = 0; j < idx.size(); ++j) mu.cells(cells[idx[j]].first, cells[idx[j]].second) = std::max(0.0, sol[j]);
    const bool seen = std::any_of(out.begin(), out.end(),
                                  [&](const Matching& o) { return (o.cells - mu.cells).cwiseAbs().maxCoeff() < 1e-10; });
    if (!seen) out.push_back(mu);
  } while (std::prev_permutation(pick.begin(), pick.end()));
  return out;
}

AggregateState push_forward(const ModelSpec& spec, const Matching& mu) {
  AggregateState s{Vec::Zero(spec.nx()), Vec::Zero(spec.ny())};
  for (int r = 0; r <= spec.nx(); ++r)
    for (int c = 0; c <= spec.ny(); ++c) {
      for (int d = 0; d < spec.nx(); ++d) s.m[d] += spec.P(d, r, c) * mu.cells(r, c);
      for (int d = 0; d < spec.ny(); ++d) s.n[d] += spec.Q(d, r, c) * mu.cells(r, c);
    }
  if (spec.inflow_m.size()) s.m += spec.inflow_m;
  if (spec.inflow_n.size()) s.n += spec.inflow_n;
  return s;
}

double rel_err(double a, double b) { return std::fabs(a - b) / std::max({1.0, std::fabs(a), std::fabs(b)}); }

double rel_err(const Vec& a, const Vec& b) {
  if (a.size() != b.size()) throw std::invalid_argument("rel_err: size mismatch");
  double e = 0;
  for (Eigen::Index i = 0; i < a.size(); ++i) e = std::max(e, rel_err(a[i], b[i]));
  return e;
}

}  // namespace oracle
