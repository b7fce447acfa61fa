#pragma once

// Reference computations written independently of the library: direct
// formulas in long double, brute-force enumeration and finite differences.

#include "dynmatch/model.hpp"

#include <functional>
#include <vector>

namespace oracle {

using dynmatch::AggregateState;
using dynmatch::Mat;
using dynmatch::Matching;
using dynmatch::ModelSpec;
using dynmatch::PayoffVectors;
using dynmatch::Vec;

// log(sum exp) at extended precision, scaled by the temperature.
double logsumexp(const Vec& u, double scale);

// Term-by-term entropy scale * (sum mu log(mu/row) + sum mu log(mu/col)).
double entropy(const Matching& mu, double scale);

// Matching from the closed-form formulas, cell by cell, for markets with
// unmatched options.
Matching closed_form(const ModelSpec& spec, const PayoffVectors& now, const PayoffVectors& next, const AggregateState& s);

// Static logit matching with margins by iterated proportional fitting on
// the square roots of the unmatched masses.
Matching ipfp(const Mat& surplus, const Vec& m, const Vec& n, double scale, double tol = 1e-14);

// Period Lagrangian with the entropy measured against the state margins,
//   sum (Phi + beta (P'U' + Q'V')) mu - scale * sum mu (log(mu / m_x) - 1)
//   - scale * sum mu (log(mu / n_y) - 1) + U.(m - row totals) + V.(n - column totals).
// Its cell derivatives vanish exactly at the closed-form matching.
double lagrangian(const ModelSpec& spec, const Matching& mu, const PayoffVectors& now, const PayoffVectors& next,
                  const AggregateState& s);

// Central differences of a scalar function.
Vec fd_gradient(const std::function<double(const Vec&)>& f, const Vec& x, double h = 1e-6);

// Every vertex of {mu >= 0 with row totals m and column totals n} over the
// cells of the spec, by solving all square subsystems.
std::vector<Matching> vertices(const ModelSpec& spec, const AggregateState& s);

// Push-forward by explicit summation over origin cells.
AggregateState push_forward(const ModelSpec& spec, const Matching& mu);

// Relative error |a - b| / max(1, |a|, |b|).
double rel_err(double a, double b);
double rel_err(const Vec& a, const Vec& b);

}  // namespace oracle
