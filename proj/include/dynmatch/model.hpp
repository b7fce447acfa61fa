#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace dynmatch {

using Vec = Eigen::VectorXd;
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class ErrorCode {
  DimensionMismatch,
  Domain,
  Config,
  ZeroPredictedCell,
  BoundsCrossed,
  InnerMaxFailed,
  MaxSweepsExceeded,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

// Worker types X and firm types Y. Index 0 on each side of a cell grid is the
// unmatched option, so worker x in X sits at row x+1.
struct TypeSpace {
  std::vector<std::string> workers;
  std::vector<std::string> firms;

  int nx() const { return static_cast<int>(workers.size()); }
  int ny() const { return static_cast<int>(firms.size()); }
};

enum class CellKind { Pair, WorkerAlone, FirmAlone };

struct Cell {
  int row;  // 0 = unmatched firm, otherwise worker index + 1
  int col;  // 0 = unmatched worker, otherwise firm index + 1
  CellKind kind;
};

// Transition kernel. Column c = row*(ny+1)+col holds the destination
// distribution for agents leaving cell (row, col). Columns of cells the kernel
// does not cover stay zero.
struct Kernel {
  Eigen::MatrixXd to;

  Kernel() = default;
  Kernel(int dest, int rows, int cols) : to(Eigen::MatrixXd::Zero(dest, rows * cols)), cols_(cols) {}

  int dest() const { return static_cast<int>(to.rows()); }
  int grid_cols() const { return cols_; }
  double& operator()(int d, int row, int col) { return to(d, row * cols_ + col); }
  double operator()(int d, int row, int col) const { return to(d, row * cols_ + col); }
  auto column(int row, int col) const { return to.col(row * cols_ + col); }
  auto column(int row, int col) { return to.col(row * cols_ + col); }

 private:
  int cols_ = 0;
};

enum class ShockMode { None, Logit };

struct Shock {
  ShockMode mode = ShockMode::Logit;
  double scale = 1.0;
};

struct ModelSpec {
  TypeSpace types;
  Mat alpha;  // (nx+1) x (ny+1); row 0 unused, column 0 is the unmatched amenity
  Mat gamma;  // (nx+1) x (ny+1); column 0 unused, row 0 is the unmatched output
  Kernel P;   // worker destinations, covers rows 1..nx
  Kernel Q;   // firm destinations, covers cols 1..ny
  double beta = 0.95;
  double M = 1.0;
  double N = 1.0;
  Shock shock;
  bool allow_unmatched = true;
  // Net entry per type each period, added to the pushed-forward masses. Empty
  // when the market is closed; otherwise each side must sum to zero.
  Vec inflow_m;
  Vec inflow_n;
  // Exogenous firm masses. Needed when firm types never change, since
  // stationarity then leaves n undetermined. Empty = solved for.
  Vec fixed_n;

  int nx() const { return types.nx(); }
  int ny() const { return types.ny(); }
  int grid_rows() const { return nx() + 1; }
  int grid_cols() const { return ny() + 1; }

  // Joint surplus on the full grid; entry (0,0) is zero.
  Mat surplus() const;
  // Cells that can carry mass, pairs first in row-major order, then x-alone, then y-alone.
  std::vector<Cell> cells() const;
  bool sharp() const { return shock.mode == ShockMode::None; }
  double temperature() const { return shock.scale; }
  bool has_flows() const { return inflow_m.size() > 0 || inflow_n.size() > 0; }
};

struct AggregateState {
  Vec m;
  Vec n;
};

// Mass over the (X0, Y0) grid. cells(0,0) is always zero.
struct Matching {
  Mat cells;

  static Matching zeros(int nx, int ny) { return {Mat::Zero(nx + 1, ny + 1)}; }
  int nx() const { return static_cast<int>(cells.rows()) - 1; }
  int ny() const { return static_cast<int>(cells.cols()) - 1; }

  double pair(int x, int y) const { return cells(x + 1, y + 1); }
  double worker_alone(int x) const { return cells(x + 1, 0); }
  double firm_alone(int y) const { return cells(0, y + 1); }

  // Mass of each worker type over Y0 and each firm type over X0.
  Vec worker_totals() const { return cells.bottomRows(nx()).rowwise().sum(); }
  Vec firm_totals() const { return cells.rightCols(ny()).colwise().sum().transpose(); }
};

struct PayoffVectors {
  Vec U;
  Vec V;
};

// Per-pair wages, nx x ny. Sharp models give an interval [lower, upper] and
// its midpoint; logit models give the worker-side wage as the point and the
// two one-sided expressions as lower and upper.
struct WageSchedule {
  Mat lower;
  Mat upper;
  Mat point;
};

struct Violation {
  std::string code;
  std::string message;
  int row = -1;
  int col = -1;
};

struct Residuals {
  Vec feasibility;   // row sums - m, then column sums - n
  Vec stationarity;  // P mu - m, then Q mu - n

  double sup() const;
};

std::vector<Violation> validate_model(const ModelSpec& spec);

// Next period's masses: P mu and Q mu, plus the net entry flows if any.
AggregateState push_forward(const ModelSpec& spec, const Matching& mu);

Residuals residuals(const ModelSpec& spec, const AggregateState& state, const Matching& mu);

AggregateState uniform_state(const ModelSpec& spec);

// Throws DimensionMismatch when sizes disagree with the spec.
void check_dims(const ModelSpec& spec, const AggregateState& state);
void check_dims(const ModelSpec& spec, const Matching& mu);

}  // namespace dynmatch
