#pragma once

#include "dynmatch/model.hpp"

namespace dynmatch {

// Systematic payoffs by choice: u over X x Y0 for workers, v over X0 x Y for
// firms, both on the full (nx+1) x (ny+1) grid.
struct PeriodPayoffs {
  Mat u;
  Mat v;
};

struct ZEval {
  double value = 0.0;
  Vec grad_U, grad_V, grad_Uprime, grad_Vprime, grad_m, grad_n;
};

// Smoothed maximum scale * log(sum exp(u / scale)), computed with a max shift.
double inclusive_value(const Eigen::Ref<const Vec>& u, double scale);
inline double inclusive_value_G(const Eigen::Ref<const Vec>& u_row, double scale) { return inclusive_value(u_row, scale); }
inline double inclusive_value_H(const Eigen::Ref<const Vec>& v_col, double scale) { return inclusive_value(v_col, scale); }

// scale * (sum mu log(mu / row total) + sum mu log(mu / column total)).
// With strict set, a worker or firm type with no mass is a domain error;
// otherwise empty rows and columns contribute zero.
double entropy(const Matching& mu, double scale, bool strict = true);

// Continuation beta * (P'U' + Q'V') for every cell of the grid.
Mat continuation(const ModelSpec& spec, const PayoffVectors& next, double beta);

// Logit matching given today's payoffs, tomorrow's payoffs and the state.
Matching closed_form_matching(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next,
                              const AggregateState& state);
// Same, with an explicit surplus matrix, discount and temperature.
Matching closed_form_matching(const ModelSpec& spec, const Mat& surplus, double beta, double scale,
                              const PayoffVectors& now, const PayoffVectors& next, const AggregateState& state);

// Z = sum w mu - sum m - sum n with weight 2 on pairs and 1 on singles,
// evaluated with the discount replaced by beta_override.
ZEval z_eval(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next, const AggregateState& state,
             double beta_override);

// Systematic payoffs implied by a logit matching: u = scale*log(mu/m) + U,
// v = scale*log(mu/n) + V. Entries without mass are left at -inf.
PeriodPayoffs implied_period_payoffs(const ModelSpec& spec, const Matching& mu, const PayoffVectors& payoffs,
                                     const AggregateState& state);

// Static logit assignment with margins (m, n):
//   mu_xy = exp(a_x + b_y + S_xy / (2T)), mu_x0 = exp(2 a_x + S_x0 / T), mu_0y = exp(2 b_y + S_0y / T).
// Solved by alternating exact row and column updates in the log domain, so
// temperatures down to ~1e-4 are safe. Without unmatched cells this is
// Sinkhorn scaling and requires sum m = sum n.
struct StaticSolve {
  Matching mu;
  Vec a, b;  // log potentials, reusable as a warm start
  int iterations = 0;
  double residual = 0.0;  // sup-norm of the column margin error
  bool converged = false;
};

// Scaling sweeps come first; if they stall (low temperatures), the dual is
// finished by damped Newton. `warm` supplies starting potentials.
StaticSolve static_logit_matching(const Mat& surplus, double T, const Vec& m, const Vec& n, bool unmatched,
                                  double tol = 1e-12, int max_iters = 100000, const StaticSolve* warm = nullptr);

}  // namespace dynmatch
