#pragma once

#include "dynmatch/grid.hpp"
#include "dynmatch/logit.hpp"
#include "dynmatch/model.hpp"

#include <cstdint>
#include <deque>
#include <string>
#include <vector>

namespace dynmatch {

struct ValueField {
  Vec values;
  std::string method = "simplex-multilinear";
};

struct InnerOptions {
  double tol = 1e-8;                // margin accuracy of every static solve
  double step_tol = 1e-9;           // stop when the matching moves less than this
  int max_iters = 500;
  double sharp_temperature = 1e-3;  // entropic smoothing used for models without shocks
  bool vertex_refine = true;        // exact vertex check on small sharp problems
  double initial_prox = 1.0;        // proximal weight of the first mirror step
  bool keep_warm = true;            // also ascend from the previous sweep's maximizer
};

// Per-node state carried between sweeps.
struct NodeWarm {
  Matching mu;
  StaticSolve potentials;
  double prox = 0.0;
  bool valid = false;
};

struct BellmanResult {
  double value = 0.0;
  Matching argmax;
  int iterations = 0;
  double residual = 0.0;  // feasibility residual of the maximizer
  bool vertex = false;    // maximizer came from the vertex check
};

// T W at one aggregate state for a value field on the grid.
class BellmanOperator {
 public:
  BellmanOperator(const ModelSpec& spec, const SimplexGrid& grid, InnerOptions opts = {});

  // warm_only skips the cold ascent when a warm start exists: cheaper, but
  // the result can then depend on the sweep history.
  BellmanResult apply(const Vec& W, const AggregateState& node, NodeWarm* warm = nullptr,
                      bool warm_only = false) const;
  // Objective of a feasible matching: surplus - temperature * entropy + beta * W(P mu, Q mu).
  double objective(const Vec& W, const Matching& mu, const AggregateState& node, double temperature) const;
  // Gradient of beta * W(P mu, Q mu) with respect to every cell of the grid.
  Mat continuation_gradient(const Vec& W, const Matching& mu, Vec* grad_m = nullptr, Vec* grad_n = nullptr) const;
  double temperature() const { return temp_; }
  const SimplexGrid& grid() const { return grid_; }
  const ModelSpec& spec() const { return spec_; }

 private:
  BellmanResult vertex_search(const Vec& W, const AggregateState& node) const;
  // Proximal mirror ascent from st; returns the objective reached.
  double ascend(const Vec& W, const AggregateState& node, NodeWarm& st, int& iters) const;

  const ModelSpec& spec_;
  const SimplexGrid& grid_;
  InnerOptions opts_;
  Mat phi_;
  double temp_;
};

BellmanResult bellman_apply(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W,
                            const AggregateState& node, const InnerOptions& opts = {});

// Vertices of the set of matchings with margins (m, n).
std::vector<Matching> feasible_vertices(const ModelSpec& spec, const AggregateState& node);

// Anderson mixing of a fixed-point map g with regularized least squares.
class AndersonState {
 public:
  explicit AndersonState(int window = 5, double ridge = 1e-10);
  // Next iterate from the current point x and its image g(x).
  Vec step(const Vec& x, const Vec& gx);
  void reset();
  int window() const { return window_; }
  int history() const { return static_cast<int>(dF_.size()); }
  int fallbacks() const { return fallbacks_; }

 private:
  int window_;
  double ridge_;
  std::deque<Vec> dF_, dG_;
  Vec last_f_, last_g_;
  double last_norm_ = 0.0;
  int fallbacks_ = 0;
};

// One sweep of T over all nodes. The two kernels are interchangeable and give
// identical results: per-node warm starts are owned by the node.
void bellman_sweep_serial(const BellmanOperator& op, const Vec& W, Vec& out, std::vector<NodeWarm>& warm,
                          bool warm_only = false);
void bellman_sweep_parallel(const BellmanOperator& op, const Vec& W, Vec& out, std::vector<NodeWarm>& warm,
                            int threads = 0, bool warm_only = false);

struct VfiOptions {
  double tol = 1e-6;
  int max_sweeps = 5000;
  int anderson_window = 5;  // 0 disables acceleration
  double anderson_ridge = 1e-10;
  bool parallel = true;
  int threads = 0;          // 0 = OpenMP default
  // Sweeps use warm starts only until the difference falls below
  // coarse_factor * tol; convergence is always certified by full sweeps.
  double coarse_factor = 1e3;
  InnerOptions inner;
};

struct VfiResult {
  ValueField W;
  int sweeps = 0;
  bool converged = false;
  std::vector<double> diffs;  // sup-norm of T W - W per sweep
  double seconds = 0.0;
  int anderson_fallbacks = 0;
};

// Throws Error(MaxSweepsExceeded) unless allow_unconverged is set.
VfiResult vfi_solve(const ModelSpec& spec, const SimplexGrid& grid, const VfiOptions& opts,
                    const ValueField* start = nullptr, bool allow_unconverged = false);

// Interpolated value; points off the simplex product are projected first and
// reported through `projected`.
double interpolate(const ValueField& W, const SimplexGrid& grid, const AggregateState& point, bool* projected = nullptr);

struct PathStep {
  int period = 0;
  AggregateState state;
  Matching matching;
  PayoffVectors payoffs;  // current lifetime values implied by the period problem
  WageSchedule wages;
};

std::vector<PathStep> simulate_aggregate_path(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W,
                                              const AggregateState& start, int horizon, const InnerOptions& opts = {});

struct IndividualStep {
  int period = 0;
  int type = 0;     // worker type index
  int partner = 0;  // 0 = unmatched, otherwise firm index + 1
};

// Career of one worker along an aggregate path. Logit models draw partners in
// proportion to the matching row; sharp models pick uniformly among the cells
// the row uses.
std::vector<IndividualStep> simulate_individual_path(const ModelSpec& spec, const std::vector<PathStep>& path,
                                                     int start_type, int horizon, std::uint64_t seed);

}  // namespace dynmatch
