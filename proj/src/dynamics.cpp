#include "dynmatch/dynamics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <limits>
#include <memory>
#include <random>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dynmatch {

namespace {

constexpr double kTiny = 1e-300;

double sup_margin_error(const Matching& mu, const AggregateState& s) {
  double e = (mu.worker_totals() - s.m).cwiseAbs().maxCoeff();
  return std::max(e, (mu.firm_totals() - s.n).cwiseAbs().maxCoeff());
}

// Entropy gradient without the constants absorbed by the margin multipliers.
Mat entropy_gradient(const Matching& mu, const AggregateState& s) {
  const int nx = mu.nx(), ny = mu.ny();
  Mat g = Mat::Zero(nx + 1, ny + 1);
  for (int x = 0; x < nx; ++x) {
    const double lm = std::log(std::max(s.m[x], kTiny));
    g(x + 1, 0) = std::log(std::max(mu.cells(x + 1, 0), kTiny)) - lm;
    for (int y = 0; y < ny; ++y)
      g(x + 1, y + 1) = 2.0 * std::log(std::max(mu.cells(x + 1, y + 1), kTiny)) - lm - std::log(std::max(s.n[y], kTiny));
  }
  for (int y = 0; y < ny; ++y) g(0, y + 1) = std::log(std::max(mu.cells(0, y + 1), kTiny)) - std::log(std::max(s.n[y], kTiny));
  return g;
}

// Potentials solved at temperature `from` reused at `to`.
StaticSolve rescaled(const StaticSolve& s, double from, double to) {
  StaticSolve w = s;
  const double r = from / to;
  for (Eigen::Index i = 0; i < w.a.size(); ++i)
    if (std::isfinite(w.a[i])) w.a[i] *= r;
  for (Eigen::Index i = 0; i < w.b.size(); ++i)
    if (std::isfinite(w.b[i])) w.b[i] *= r;
  return w;
}

AggregateState on_simplex(const ModelSpec& spec, AggregateState s) {
  project_to_simplex(s.m, spec.M);
  project_to_simplex(s.n, spec.N);
  return s;
}

}  // namespace

BellmanOperator::BellmanOperator(const ModelSpec& spec, const SimplexGrid& grid, InnerOptions opts)
    : spec_(spec), grid_(grid), opts_(opts), phi_(spec.surplus()) {
  temp_ = spec.sharp() ? opts.sharp_temperature : spec.temperature();
  if (!(temp_ > 0.0)) throw Error(ErrorCode::Config, "inner smoothing temperature must be positive");
}

Mat BellmanOperator::continuation_gradient(const Vec& W, const Matching& mu, Vec* grad_m, Vec* grad_n) const {
  const AggregateState next = on_simplex(spec_, push_forward(spec_, mu));
  Vec gm, gn;
  grid_.interpolate(W, next, &gm, &gn);
  const int rows = spec_.grid_rows(), cols = spec_.grid_cols();
  Mat G = Mat::Zero(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      if (r == 0 && c == 0) continue;
      G(r, c) = spec_.beta * (spec_.P.column(r, c).dot(gm) + spec_.Q.column(r, c).dot(gn));
    }
  if (grad_m) *grad_m = gm;
  if (grad_n) *grad_n = gn;
  return G;
}

double BellmanOperator::objective(const Vec& W, const Matching& mu, const AggregateState& node,
                                  double temperature) const {
  (void)node;
  const AggregateState next = on_simplex(spec_, push_forward(spec_, mu));
  double v = (phi_.array() * mu.cells.array()).sum() + spec_.beta * grid_.interpolate(W, next);
  if (temperature > 0.0) v -= entropy(mu, temperature, false);
  return v;
}

constexpr double kStopProx = 1e-4;

double BellmanOperator::ascend(const Vec& W, const AggregateState& node, NodeWarm& st, int& iters) const {
  const double sigma = temp_;
  const double static_tol = std::min(1e-2 * opts_.tol, 1e-11);
  if (!st.valid) {
    st.prox = opts_.initial_prox;
    st.potentials = static_logit_matching(phi_, sigma + st.prox, node.m, node.n, spec_.allow_unmatched, static_tol);
    st.mu = st.potentials.mu;
    st.valid = true;
  }
  double warm_T = sigma + st.prox;  // temperature the stored potentials belong to
  double prox = std::max(st.prox, 1e-6);
  Matching mu = st.mu;
  double f = objective(W, mu, node, sigma);

  int it = 0;
  bool done = false;
  for (; it < opts_.max_iters && !done; ++it) {
    const Mat G = continuation_gradient(W, mu);
    const Mat gE = entropy_gradient(mu, node);
    const double T = sigma + prox;
    const Mat S = phi_ + G + prox * gE;
    StaticSolve w = rescaled(st.potentials, warm_T, T);
    StaticSolve trial = static_logit_matching(S, T, node.m, node.n, spec_.allow_unmatched, static_tol, 100000, &w);
    if (!trial.converged)
      trial = static_logit_matching(S, T, node.m, node.n, spec_.allow_unmatched, static_tol, 100000, nullptr);
    const double ft = objective(W, trial.mu, node, sigma);
    const double moved = (trial.mu.cells - mu.cells).cwiseAbs().maxCoeff();
    if (trial.converged && std::isfinite(ft) && ft >= f - 1e-13 * (1.0 + std::abs(f))) {
      st.potentials = trial;
      warm_T = T;
      mu = trial.mu;
      f = ft;
      // a short step certifies optimality only when the proximal weight is
      // small; after rejected steps it just reflects the damping
      if (moved < opts_.step_tol && prox <= kStopProx) done = true;
      prox = std::max(0.5 * prox, 1e-6);
    } else {
      prox *= 4.0;
      if (prox > 1e8) done = true;  // no ascent left at any step size
    }
  }
  st.mu = mu;
  st.prox = prox;
  iters += it;
  return f;
}

BellmanResult BellmanOperator::apply(const Vec& W, const AggregateState& node, NodeWarm* warm, bool warm_only) const {
  // The continuation is piecewise linear and need not be concave, so the
  // ascent can end in a local maximum. A cold start from the same point every
  // time keeps T a function of W alone; the warm start only replaces it when
  // strictly better.
  BellmanResult res;
  const bool have_warm = warm && warm->valid && (opts_.keep_warm || warm_only);
  NodeWarm cold;
  double f = -std::numeric_limits<double>::infinity();
  NodeWarm* best = have_warm ? warm : &cold;
  if (!(have_warm && warm_only)) f = ascend(W, node, cold, res.iterations);
  if (have_warm) {
    const double fw = ascend(W, node, *warm, res.iterations);
    if (warm_only || fw > f + 1e-12 * (1.0 + std::abs(f))) f = fw;
    else best = &cold;
  }
  const Matching mu = best->mu;
  if (warm && best != warm) *warm = cold;

  res.argmax = mu;
  res.residual = sup_margin_error(mu, node);
  res.value = spec_.sharp() ? objective(W, mu, node, 0.0) : f;

  if (spec_.sharp() && opts_.vertex_refine && spec_.grid_rows() * spec_.grid_cols() <= 12) {
    BellmanResult v = vertex_search(W, node);
    if (v.value > res.value + 1e-12) {
      v.iterations = res.iterations;
      res = v;
    }
  }
  if (!(res.residual < opts_.tol))
    throw Error(ErrorCode::InnerMaxFailed, "inner maximization left a margin residual of " + std::to_string(res.residual));
  return res;
}

std::vector<Matching> feasible_vertices(const ModelSpec& spec, const AggregateState& node) {
  const auto cells = spec.cells();
  const int nc = static_cast<int>(cells.size());
  const int nx = spec.nx(), ny = spec.ny();
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(nx + ny, nc);
  for (int k = 0; k < nc; ++k) {
    if (cells[k].row > 0) A(cells[k].row - 1, k) = 1.0;
    if (cells[k].col > 0) A(nx + cells[k].col - 1, k) = 1.0;
  }
  Vec b(nx + ny);
  b << node.m, node.n;
  const int rank = static_cast<int>(Eigen::ColPivHouseholderQR<Eigen::MatrixXd>(A).rank());

  std::vector<Matching> out;
  std::vector<int> pick(rank);
  auto consider = [&] {
    Eigen::MatrixXd B(nx + ny, rank);
    for (int j = 0; j < rank; ++j) B.col(j) = A.col(pick[j]);
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(B);
    if (qr.rank() < rank) return;
    Vec z = qr.solve(b);
    if ((B * z - b).cwiseAbs().maxCoeff() > 1e-10 || z.minCoeff() < -1e-12) return;
    Matching mu = Matching::zeros(nx, ny);
    for (int j = 0; j < rank; ++j) mu.cells(cells[pick[j]].row, cells[pick[j]].col) = std::max(z[j], 0.0);
    for (const auto& o : out)
      if ((o.cells - mu.cells).cwiseAbs().maxCoeff() < 1e-12) return;
    out.push_back(mu);
  };
  auto rec = [&](auto&& self, int pos, int from) -> void {
    if (pos == rank) {
      consider();
      return;
    }
    for (int k = from; k <= nc - (rank - pos); ++k) {
      pick[pos] = k;
      self(self, pos + 1, k + 1);
    }
  };
  if (rank == 0) out.push_back(Matching::zeros(nx, ny));
  else rec(rec, 0, 0);
  return out;
}

BellmanResult BellmanOperator::vertex_search(const Vec& W, const AggregateState& node) const {
  BellmanResult best;
  best.value = -std::numeric_limits<double>::infinity();
  for (const auto& mu : feasible_vertices(spec_, node)) {
    const double v = objective(W, mu, node, 0.0);
    if (v > best.value) {
      best.value = v;
      best.argmax = mu;
      best.residual = sup_margin_error(mu, node);
      best.vertex = true;
    }
  }
  return best;
}

BellmanResult bellman_apply(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W,
                            const AggregateState& node, const InnerOptions& opts) {
  check_dims(spec, node);
  if (W.values.size() != grid.size()) throw Error(ErrorCode::DimensionMismatch, "value field does not match the grid");
  BellmanOperator op(spec, grid, opts);
  return op.apply(W.values, node);
}

AndersonState::AndersonState(int window, double ridge) : window_(window), ridge_(ridge) {
  if (window < 1) throw Error(ErrorCode::Config, "Anderson window must be at least 1");
}

void AndersonState::reset() {
  dF_.clear();
  dG_.clear();
  last_f_.resize(0);
  last_g_.resize(0);
  last_norm_ = 0.0;
}

Vec AndersonState::step(const Vec& x, const Vec& gx) {
  const Vec f = gx - x;
  const double norm = f.cwiseAbs().maxCoeff();
  if (last_f_.size() == f.size()) {
    if (norm > last_norm_ && !dF_.empty()) {
      // the mixed step made things worse: restart from a plain step
      ++fallbacks_;
      reset();
      last_f_ = f;
      last_g_ = gx;
      last_norm_ = norm;
      return gx;
    }
    dF_.push_back(f - last_f_);
    dG_.push_back(gx - last_g_);
    if (static_cast<int>(dF_.size()) > window_) {
      dF_.pop_front();
      dG_.pop_front();
    }
  }
  last_f_ = f;
  last_g_ = gx;
  last_norm_ = norm;
  if (dF_.empty()) return gx;

  const int k = static_cast<int>(dF_.size());
  Eigen::MatrixXd F(f.size(), k), G(f.size(), k);
  for (int j = 0; j < k; ++j) {
    F.col(j) = dF_[j];
    G.col(j) = dG_[j];
  }
  Eigen::MatrixXd A = F.transpose() * F;
  A.diagonal().array() += ridge_ * std::max(1.0, A.diagonal().maxCoeff());
  Vec coef = A.ldlt().solve(F.transpose() * f);
  if (!coef.allFinite() || coef.cwiseAbs().maxCoeff() > 1e8) {
    ++fallbacks_;
    reset();
    return gx;
  }
  return gx - G * coef;
}

void bellman_sweep_serial(const BellmanOperator& op, const Vec& W, Vec& out, std::vector<NodeWarm>& warm,
                          bool warm_only) {
  const int G = op.grid().size();
  out.resize(G);
  warm.resize(G);
  for (int g = 0; g < G; ++g) out[g] = op.apply(W, op.grid().node(g), &warm[g], warm_only).value;
}

void bellman_sweep_parallel(const BellmanOperator& op, const Vec& W, Vec& out, std::vector<NodeWarm>& warm,
                            int threads, bool warm_only) {
  const int G = op.grid().size();
  out.resize(G);
  warm.resize(G);
  std::exception_ptr failure;
#ifdef _OPENMP
  const int nt = threads > 0 ? threads : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic, 4) num_threads(nt)
#else
  (void)threads;
#endif
  for (int g = 0; g < G; ++g) {
    try {
      out[g] = op.apply(W, op.grid().node(g), &warm[g], warm_only).value;
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical(dynmatch_sweep_failure)
#endif
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
}

VfiResult vfi_solve(const ModelSpec& spec, const SimplexGrid& grid, const VfiOptions& opts, const ValueField* start,
                    bool allow_unconverged) {
  if (!(opts.tol > 0.0)) throw Error(ErrorCode::Config, "VFI tolerance must be positive");
  if (opts.max_sweeps < 1) throw Error(ErrorCode::Config, "max sweeps must be at least 1");
  if (opts.anderson_window < 0) throw Error(ErrorCode::Config, "Anderson window must be nonnegative");
  const auto t0 = std::chrono::steady_clock::now();
  BellmanOperator op(spec, grid, opts.inner);
  const int G = grid.size();

  VfiResult res;
  Vec W = Vec::Zero(G);
  if (start) {
    if (start->values.size() != G) throw Error(ErrorCode::DimensionMismatch, "starting value field does not match the grid");
    W = start->values;
  }
  std::vector<NodeWarm> warm(G);
  std::unique_ptr<AndersonState> aa;
  if (opts.anderson_window > 0) aa = std::make_unique<AndersonState>(opts.anderson_window, opts.anderson_ridge);
  Vec TW(G);
  bool coarse = opts.coarse_factor > 1.0;
  for (int k = 0; k < opts.max_sweeps; ++k) {
    const bool full = !coarse || k == 0;  // no warm starts exist yet
    if (opts.parallel) bellman_sweep_parallel(op, W, TW, warm, opts.threads, coarse);
    else bellman_sweep_serial(op, W, TW, warm, coarse);
    const double diff = (TW - W).cwiseAbs().maxCoeff();
    res.diffs.push_back(diff);
    res.sweeps = k + 1;
    if (coarse && diff < opts.coarse_factor * opts.tol) {
      coarse = false;  // switch operators: old Anderson history no longer applies
      if (aa) aa->reset();
    }
    if (full && diff < opts.tol) {
      res.converged = true;
      W = TW;
      break;
    }
    W = aa ? aa->step(W, TW) : TW;
  }
  if (aa) res.anderson_fallbacks = aa->fallbacks();
  res.W.values = W;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!res.converged && !allow_unconverged)
    throw Error(ErrorCode::MaxSweepsExceeded, "value iteration stopped after " + std::to_string(res.sweeps) +
                                                  " sweeps with difference " + std::to_string(res.diffs.back()));
  return res;
}

double interpolate(const ValueField& W, const SimplexGrid& grid, const AggregateState& point, bool* projected) {
  if (W.values.size() != grid.size()) throw Error(ErrorCode::DimensionMismatch, "value field does not match the grid");
  AggregateState p = point;
  const double dm = project_to_simplex(p.m, grid.workers().total());
  const double dn = project_to_simplex(p.n, grid.firms().total());
  if (projected) *projected = std::max(dm, dn) > 1e-9;
  return grid.interpolate(W.values, p);
}

namespace {

// Current lifetime values from the period problem's first-order conditions,
// by least squares over cells that carry mass.
PayoffVectors period_multipliers(const ModelSpec& spec, const Matching& mu, const AggregateState& s, const Mat& S,
                                 double sigma) {
  const int nx = spec.nx(), ny = spec.ny();
  std::vector<std::pair<Cell, double>> eqs;
  const double floor = 1e-12 * std::max(spec.M, spec.N);
  for (const auto& c : spec.cells()) {
    const double v = mu.cells(c.row, c.col);
    if (!(v > floor)) continue;
    double rhs = S(c.row, c.col);
    if (c.kind == CellKind::Pair) rhs -= sigma * std::log(v * v / (s.m[c.row - 1] * s.n[c.col - 1]));
    else if (c.kind == CellKind::WorkerAlone) rhs -= sigma * std::log(v / s.m[c.row - 1]);
    else rhs -= sigma * std::log(v / s.n[c.col - 1]);
    eqs.push_back({c, rhs});
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(eqs.size()) + 1, nx + ny);
  Vec b = Vec::Zero(A.rows());
  for (size_t i = 0; i < eqs.size(); ++i) {
    if (eqs[i].first.row > 0) A(i, eqs[i].first.row - 1) = 1.0;
    if (eqs[i].first.col > 0) A(i, nx + eqs[i].first.col - 1) = 1.0;
    b[i] = eqs[i].second;
  }
  // soft gauge row: only binds along directions the data leave free
  A.row(eqs.size()).head(nx).setConstant(1e-8);
  A.row(eqs.size()).tail(ny).setConstant(-1e-8);
  Vec z = A.completeOrthogonalDecomposition().solve(b);
  return {z.head(nx), z.tail(ny)};
}

}  // namespace

std::vector<PathStep> simulate_aggregate_path(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W,
                                              const AggregateState& start, int horizon, const InnerOptions& opts) {
  check_dims(spec, start);
  if (horizon < 1) throw Error(ErrorCode::Config, "horizon must be at least 1");
  if (W.values.size() != grid.size()) throw Error(ErrorCode::DimensionMismatch, "value field does not match the grid");
  BellmanOperator op(spec, grid, opts);
  const Mat phi = spec.surplus();
  const double sigma = op.temperature();
  const int nx = spec.nx(), ny = spec.ny();

  std::vector<PathStep> path;
  AggregateState s = on_simplex(spec, start);
  for (int t = 1; t <= horizon; ++t) {
    PathStep step;
    step.period = t;
    step.state = s;
    NodeWarm warm;
    step.matching = op.apply(W.values, s, &warm).argmax;

    Vec gm, gn;
    const Mat G = op.continuation_gradient(W.values, step.matching, &gm, &gn);
    // Multipliers come from the smoothed maximizer, which for sharp models is
    // the entropic selection rather than a vertex.
    step.payoffs = period_multipliers(spec, warm.mu, s, phi + G, sigma);
    const PayoffVectors& now = step.payoffs;
    WageSchedule w{Mat::Zero(nx, ny), Mat::Zero(nx, ny), Mat::Zero(nx, ny)};
    for (int x = 0; x < nx; ++x)
      for (int y = 0; y < ny; ++y) {
        const double contU = spec.beta * spec.P.column(x + 1, y + 1).dot(gm);
        const double contV = spec.beta * spec.Q.column(x + 1, y + 1).dot(gn);
        const double a = spec.alpha(x + 1, y + 1), g = spec.gamma(x + 1, y + 1);
        if (spec.sharp()) {
          w.lower(x, y) = g + contV - now.V[y];
          w.upper(x, y) = now.U[x] - a - contU;
          w.point(x, y) = 0.5 * (w.lower(x, y) + w.upper(x, y));
        } else {
          const double mu = std::max(step.matching.pair(x, y), kTiny);
          const double ws = now.U[x] + sigma * std::log(mu / std::max(s.m[x], kTiny)) - a - contU;
          const double fs = g + contV - now.V[y] - sigma * std::log(mu / std::max(s.n[y], kTiny));
          w.lower(x, y) = std::min(ws, fs);
          w.upper(x, y) = std::max(ws, fs);
          w.point(x, y) = ws;
        }
      }
    step.wages = w;
    path.push_back(step);
    s = on_simplex(spec, push_forward(spec, step.matching));
  }
  return path;
}

std::vector<IndividualStep> simulate_individual_path(const ModelSpec& spec, const std::vector<PathStep>& path,
                                                     int start_type, int horizon, std::uint64_t seed) {
  if (start_type < 0 || start_type >= spec.nx()) throw Error(ErrorCode::Domain, "start type out of range");
  if (horizon < 1) throw Error(ErrorCode::Config, "horizon must be at least 1");
  if (path.empty()) throw Error(ErrorCode::Config, "aggregate path is empty");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto draw = [&](const std::vector<double>& w) {
    double tot = 0.0;
    for (double v : w) tot += v;
    double u = unif(rng) * tot;
    for (size_t i = 0; i < w.size(); ++i) {
      if (u < w[i]) return static_cast<int>(i);
      u -= w[i];
    }
    for (size_t i = w.size(); i-- > 0;)
      if (w[i] > 0.0) return static_cast<int>(i);
    return 0;
  };

  std::vector<IndividualStep> out;
  int x = start_type;
  const int ny = spec.ny();
  for (int t = 1; t <= horizon; ++t) {
    // past the end of the path the last period's matching repeats
    const Matching& mu = path[std::min<size_t>(t - 1, path.size() - 1)].matching;
    std::vector<double> w(ny + 1, 0.0);
    for (int c = 0; c <= ny; ++c) {
      if (c == 0 && !spec.allow_unmatched) continue;
      w[c] = std::max(mu.cells(x + 1, c), 0.0);
    }
    double row = 0.0;
    for (double v : w) row += v;
    if (spec.sharp()) {
      for (double& v : w) v = v > 1e-9 * std::max(row, kTiny) ? 1.0 : 0.0;
    }
    if (!(row > 0.0)) {
      // type absent from the aggregate: no partner is observed
      for (int c = 0; c <= ny; ++c) w[c] = (c == 0 && !spec.allow_unmatched) ? 0.0 : 1.0;
    }
    const int partner = draw(w);
    out.push_back({t, x, partner});
    std::vector<double> next(spec.nx());
    for (int d = 0; d < spec.nx(); ++d) next[d] = spec.P(d, x + 1, partner);
    x = draw(next);
  }
  return out;
}

}  // namespace dynmatch
