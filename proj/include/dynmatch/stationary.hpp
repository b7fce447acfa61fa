#pragma once

#include "dynmatch/model.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dynmatch {

struct SolverOptions {
  double tau = 0.05;
  double delta = 1e-6;
  int max_iters = 200000;
  std::vector<double> anneal_schedule = {1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001};
  double newton_damping = 1.0;
  std::uint64_t seed = 0;
  int max_tau_halvings = 8;

  // Throws Error(Config) when an option is out of range.
  void check() const;
};

enum class SolveStatus { Converged, MaxItersExceeded, Diverged, AnnealStalled, LineSearchFailed };

const char* to_string(SolveStatus s);

struct TraceRow {
  int iter = 0;
  double residual = 0.0;
  double step = 0.0;
  std::string note;
};

struct StationaryInit {
  PayoffVectors payoffs;
  AggregateState state;
};

// Diagnostics of a zero-temperature solve.
struct SharpDiagnostics {
  double complementarity = 0.0;    // max over cells of mu * |slack|
  double dual_violation = 0.0;     // max over cells of max(0, -slack)
  std::vector<Cell> active;        // cells carrying mass or with slack within 1e-6
  bool polished = false;           // exact active-set refinement accepted
  std::vector<double> temperatures;
  std::vector<double> entropies;   // entropy of the matching at each temperature
  std::vector<int> newton_steps;
};

struct StationarySolution {
  SolveStatus status = SolveStatus::MaxItersExceeded;
  std::string message;
  AggregateState state;
  PayoffVectors payoffs;
  Matching matching;
  WageSchedule wages;
  int iterations = 0;
  double residual_sup = 0.0;
  double duality_gap = 0.0;
  double tau_used = 0.0;
  std::vector<TraceRow> trace;
  std::optional<SharpDiagnostics> sharp;

  bool converged() const { return status == SolveStatus::Converged; }
};

StationarySolution solve_primal_dual(const ModelSpec& spec, const SolverOptions& opts,
                                     const std::optional<StationaryInit>& init = std::nullopt);

StationarySolution solve_newton(const ModelSpec& spec, const SolverOptions& opts,
                                const std::optional<StationaryInit>& init = std::nullopt);

// Zero-temperature stationary equilibrium by following the logit solution down
// the temperature schedule, then refining on the active set.
StationarySolution solve_noshock_annealed(const ModelSpec& spec, const SolverOptions& opts,
                                          const std::optional<StationaryInit>& start = std::nullopt);

// Re-anneal from `starts` random points (seeded by opts.seed) over the
// low-temperature part of the schedule. Returns the converged solutions that
// differ from `reference`, without duplicates; empty means no multiplicity
// was found.
std::vector<StationarySolution> anneal_alternatives(const ModelSpec& spec, const SolverOptions& opts,
                                                   const StationarySolution& reference, int starts = 4);

// |primal perpetuity value - (m.U + n.V)| using the closed-form matching at
// the solution's payoffs and state.
double duality_gap(const ModelSpec& spec, const StationarySolution& sol);
// The same quantity assembled from the feasibility and stationarity residuals.
double duality_gap_fixed_point(const ModelSpec& spec, const StationarySolution& sol);

WageSchedule stationary_wages(const ModelSpec& spec, const StationarySolution& sol);

// Complementary slackness per cell: U_x + V_y - Phi - beta (P'U + Q'V).
Mat cell_slack(const ModelSpec& spec, const PayoffVectors& payoffs);

// Fix the (U + k, V - k) direction when no agent can stay unmatched: shift so
// that mean(U) = mean(V). Identity otherwise.
PayoffVectors gauge_normalized(const ModelSpec& spec, const PayoffVectors& payoffs);

// Newton residual F(U, V, log m, log n) and its Jacobian, exposed for tests.
Vec stationary_system(const ModelSpec& spec, const PayoffVectors& payoffs, const AggregateState& state);
Eigen::MatrixXd stationary_jacobian(const ModelSpec& spec, const PayoffVectors& payoffs, const AggregateState& state);

// Shift (U, V) along the common direction so the logit matching at state s
// has worker and firm totals M and N.
void normalize_payoff_level(const ModelSpec& spec, PayoffVectors& payoffs, const AggregateState& state);

// Fill matching, residual, gap and wages from payoffs and state.
void finalize_logit_solution(const ModelSpec& spec, StationarySolution& sol);

}  // namespace dynmatch
