#include "dynmatch/model.hpp"

#include <cmath>
#include <set>
#include <sstream>

namespace dynmatch {

namespace {

std::string cell_name(const ModelSpec& spec, int row, int col) {
  std::string a = row == 0 ? "0" : spec.types.workers[row - 1];
  std::string b = col == 0 ? "0" : spec.types.firms[col - 1];
  return a + "," + b;
}

void check_labels(const std::vector<std::string>& labels, const char* side, std::vector<Violation>& out) {
  if (labels.empty()) out.push_back({"empty_types", std::string(side) + " type list is empty"});
  std::set<std::string> seen;
  for (const auto& l : labels) {
    if (l == "0") out.push_back({"reserved_label", std::string(side) + " label \"0\" is reserved for the unmatched option"});
    if (!seen.insert(l).second) out.push_back({"duplicate_label", std::string(side) + " label repeated: " + l});
  }
}

}  // namespace

Mat ModelSpec::surplus() const {
  Mat phi = alpha + gamma;
  phi(0, 0) = 0.0;
  return phi;
}

std::vector<Cell> ModelSpec::cells() const {
  std::vector<Cell> out;
  out.reserve(static_cast<size_t>(nx() * ny() + nx() + ny()));
  for (int x = 1; x <= nx(); ++x)
    for (int y = 1; y <= ny(); ++y) out.push_back({x, y, CellKind::Pair});
  if (allow_unmatched) {
    for (int x = 1; x <= nx(); ++x) out.push_back({x, 0, CellKind::WorkerAlone});
    for (int y = 1; y <= ny(); ++y) out.push_back({0, y, CellKind::FirmAlone});
  }
  return out;
}

double Residuals::sup() const {
  double s = 0.0;
  if (feasibility.size()) s = std::max(s, feasibility.cwiseAbs().maxCoeff());
  if (stationarity.size()) s = std::max(s, stationarity.cwiseAbs().maxCoeff());
  return s;
}

std::vector<Violation> validate_model(const ModelSpec& spec) {
  std::vector<Violation> out;
  check_labels(spec.types.workers, "worker", out);
  check_labels(spec.types.firms, "firm", out);
  if (!out.empty()) return out;

  const int R = spec.grid_rows(), C = spec.grid_cols();
  auto shape_ok = [&](const Mat& a) { return a.rows() == R && a.cols() == C; };
  if (!shape_ok(spec.alpha) || !shape_ok(spec.gamma)) {
    out.push_back({"shape", "alpha/gamma must be (|X|+1) x (|Y|+1)"});
    return out;
  }
  if (spec.P.dest() != spec.nx() || spec.P.to.cols() != R * C || spec.Q.dest() != spec.ny() ||
      spec.Q.to.cols() != R * C) {
    out.push_back({"shape", "kernel dimensions do not match the type spaces"});
    return out;
  }

  if (!(spec.beta >= 0.0 && spec.beta < 1.0)) out.push_back({"beta", "beta must lie in [0,1)"});
  if (!(spec.M > 0.0) || !(spec.N > 0.0)) out.push_back({"mass", "total masses M and N must be positive"});
  if (!spec.allow_unmatched && std::abs(spec.M - spec.N) > 1e-12 * std::max(spec.M, spec.N))
    out.push_back({"mass", "without unmatched options every worker needs a firm: M must equal N"});
  if (spec.has_flows()) {
    if (spec.inflow_m.size() != spec.nx() || spec.inflow_n.size() != spec.ny()) {
      out.push_back({"flows", "entry flows need one entry per worker type and per firm type"});
    } else {
      if (!spec.inflow_m.allFinite() || !spec.inflow_n.allFinite()) out.push_back({"flows", "entry flows must be finite"});
      if (std::abs(spec.inflow_m.sum()) > 1e-12 * spec.M || std::abs(spec.inflow_n.sum()) > 1e-12 * spec.N)
        out.push_back({"flows", "net entry flows must sum to zero on each side so that M and N are preserved"});
    }
  }
  if (spec.fixed_n.size()) {
    if (spec.fixed_n.size() != spec.ny()) out.push_back({"firm_masses", "fixed firm masses need one entry per firm type"});
    else if (!(spec.fixed_n.array() > 0.0).all() || std::abs(spec.fixed_n.sum() - spec.N) > 1e-9 * spec.N)
      out.push_back({"firm_masses", "fixed firm masses must be positive and sum to N"});
  }
  if (spec.shock.mode == ShockMode::Logit && !(spec.shock.scale > 0.0))
    out.push_back({"shock", "logit scale must be positive"});

  for (int x = 1; x < R; ++x)
    if (spec.alpha(x, 0) != 0.0)
      out.push_back({"unmatched_amenity", "alpha for " + cell_name(spec, x, 0) + " must be 0", x, 0});
  for (int y = 1; y < C; ++y)
    if (spec.gamma(0, y) != 0.0)
      out.push_back({"unmatched_output", "gamma for " + cell_name(spec, 0, y) + " must be 0", 0, y});
  if (!spec.alpha.allFinite() || !spec.gamma.allFinite()) out.push_back({"finite", "alpha/gamma contain non-finite entries"});

  auto check_column = [&](const Kernel& k, int row, int col, const char* name) {
    auto c = k.column(row, col);
    double s = c.sum();
    if ((c.array() < 0.0).any() || !c.allFinite())
      out.push_back({"kernel_negative", std::string(name) + " column " + cell_name(spec, row, col) + " has negative entries", row, col});
    if (std::abs(s - 1.0) > 1e-12) {
      std::ostringstream os;
      os.precision(15);
      os << name << " column " << cell_name(spec, row, col) << " sums to " << s;
      out.push_back({"kernel_sum", os.str(), row, col});
    }
  };
  for (int x = 1; x < R; ++x)
    for (int y = spec.allow_unmatched ? 0 : 1; y < C; ++y) check_column(spec.P, x, y, "P");
  for (int y = 1; y < C; ++y)
    for (int x = spec.allow_unmatched ? 0 : 1; x < R; ++x) check_column(spec.Q, x, y, "Q");

  // Reachability is checked jointly over every origin cell, unmatched ones included.
  for (int d = 0; d < spec.nx(); ++d) {
    bool hit = false;
    for (int x = 1; x < R && !hit; ++x)
      for (int y = spec.allow_unmatched ? 0 : 1; y < C && !hit; ++y) hit = spec.P(d, x, y) > 0.0;
    if (!hit) out.push_back({"unreachable", "worker type " + spec.types.workers[d] + " is never reached under P", d + 1, -1});
  }
  for (int d = 0; d < spec.ny(); ++d) {
    bool hit = false;
    for (int y = 1; y < C && !hit; ++y)
      for (int x = spec.allow_unmatched ? 0 : 1; x < R && !hit; ++x) hit = spec.Q(d, x, y) > 0.0;
    if (!hit) out.push_back({"unreachable", "firm type " + spec.types.firms[d] + " is never reached under Q", -1, d + 1});
  }
  return out;
}

void check_dims(const ModelSpec& spec, const AggregateState& state) {
  if (state.m.size() != spec.nx() || state.n.size() != spec.ny())
    throw Error(ErrorCode::DimensionMismatch, "aggregate state does not match the type spaces");
}

void check_dims(const ModelSpec& spec, const Matching& mu) {
  if (mu.cells.rows() != spec.grid_rows() || mu.cells.cols() != spec.grid_cols())
    throw Error(ErrorCode::DimensionMismatch, "matching does not match the type spaces");
}

AggregateState push_forward(const ModelSpec& spec, const Matching& mu) {
  check_dims(spec, mu);
  Eigen::Map<const Vec> flat(mu.cells.data(), mu.cells.size());
  AggregateState next{spec.P.to * flat, spec.Q.to * flat};
  if (spec.inflow_m.size()) next.m += spec.inflow_m;
  if (spec.inflow_n.size()) next.n += spec.inflow_n;
  return next;
}

Residuals residuals(const ModelSpec& spec, const AggregateState& state, const Matching& mu) {
  check_dims(spec, state);
  check_dims(spec, mu);
  const int nx = spec.nx(), ny = spec.ny();
  Residuals r;
  r.feasibility.resize(nx + ny);
  r.feasibility.head(nx) = mu.worker_totals() - state.m;
  r.feasibility.tail(ny) = mu.firm_totals() - state.n;
  AggregateState next = push_forward(spec, mu);
  r.stationarity.resize(nx + ny);
  r.stationarity.head(nx) = next.m - state.m;
  r.stationarity.tail(ny) = next.n - state.n;
  return r;
}

AggregateState uniform_state(const ModelSpec& spec) {
  if (spec.fixed_n.size() == spec.ny()) return {Vec::Constant(spec.nx(), spec.M / spec.nx()), spec.fixed_n};
  return {Vec::Constant(spec.nx(), spec.M / spec.nx()), Vec::Constant(spec.ny(), spec.N / spec.ny())};
}

}  // namespace dynmatch
