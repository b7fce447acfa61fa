#pragma once

#include "dynmatch/model.hpp"
#include "dynmatch/stationary.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dynmatch {

// Surplus as a linear combination of basis matrices on the full cell grid.
// Unmatched entries must be zero, matching the payoff normalization of the
// model.
struct SurplusBasis {
  std::vector<std::string> names;
  std::vector<Mat> phi;
  Vec lambda;  // reference coefficients: the truth for synthetic data, or a start

  int size() const { return static_cast<int>(phi.size()); }
  Mat surplus(const Vec& coef) const;
  // Copy of `base` with alpha = gamma = surplus / 2 on every pair.
  ModelSpec apply(const ModelSpec& base, const Vec& coef) const;
  // Throws Error(Config/DimensionMismatch) on inconsistent shapes.
  void check(const ModelSpec& base) const;
};

// Observed matches on the full cell grid. Unmatched cells are used only when
// `has_margins` is set.
struct EstimationDataset {
  Mat counts;
  bool has_margins = false;
  Vec flow_m, flow_n;           // optional net entry per type
  long long sample_size = 0;    // number of sampled matches; 0 = population shares

  double total() const;         // observed mass over the observed cells
};

std::vector<Cell> observed_cells(const ModelSpec& spec, const EstimationDataset& data);

struct LikelihoodValue {
  double value = 0.0;
  Vec grad_lambda, grad_U, grad_V, grad_m, grad_n;
};

// sum over observed cells of count * log mu - total * log(model mass on the
// observed cells), with mu the logit matching at (U, V, m, n) under the
// surplus basis(lambda). Throws ZeroPredictedCell when an observed cell has no
// model mass.
LikelihoodValue log_likelihood(const ModelSpec& base, const SurplusBasis& basis, const Vec& lambda,
                               const PayoffVectors& payoffs, const AggregateState& state, const EstimationDataset& data);

// sum over cells of (count - mu) * phi_l, one entry per basis matrix.
Vec moment_residuals(const SurplusBasis& basis, const Matching& mu, const EstimationDataset& data);

// Counts rescaled so that their observed total equals the model's mass on the
// observed cells.
Mat data_on_model_scale(const ModelSpec& spec, const EstimationDataset& data, const Matching& mu);

struct EstimationOptions {
  double tau = 0.05;
  double delta = 1e-6;
  int max_iters = 200000;
  int max_tau_halvings = 8;
  int max_outer = 50;              // augmented-Lagrangian rounds
  double constraint_tol = 1e-10;   // equality-system tolerance for the MPEC estimator
  Vec lambda0;                     // empty = the basis reference coefficients
  std::optional<StationaryInit> init;
};

struct EstimationResult {
  SolveStatus status = SolveStatus::MaxItersExceeded;
  std::string message;
  Vec lambda;
  PayoffVectors payoffs;
  AggregateState state;
  Matching matching;
  int iterations = 0;        // primal-dual steps or inner Newton steps
  int outer_iterations = 0;  // augmented-Lagrangian rounds (MPEC only)
  double feasibility = 0.0;
  double stationarity = 0.0;
  double moment_sup = 0.0;   // moments on the model scale
  double constraint_violation = 0.0;
  double log_likelihood = 0.0;
  double tau_used = 0.0;
  std::vector<TraceRow> trace;

  bool converged() const { return status == SolveStatus::Converged; }
};

enum class Estimator { PrimalDual, Mpec };
const char* to_string(Estimator e);

// Stationary primal-dual loop with an extra preconditioned step on lambda
// driven by the moment gap.
EstimationResult estimate_primal_dual(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                                      const EstimationOptions& opts = {});

// Maximum likelihood subject to the stationary equilibrium system, by an
// augmented Lagrangian with damped Newton inner solves.
EstimationResult estimate_mpec(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                               const EstimationOptions& opts = {});

EstimationResult estimate(Estimator method, const ModelSpec& base, const SurplusBasis& basis,
                          const EstimationDataset& data, const EstimationOptions& opts = {});

// Sample `sample_size` matches from the stationary matching of `spec`
// (shares of the observed cells). With `population` the exact shares are
// returned instead.
EstimationDataset synth_data(const ModelSpec& spec, long long sample_size, std::uint64_t seed, bool population = false,
                             std::optional<bool> margins = std::nullopt);

struct BootstrapOptions {
  int replicates = 50;
  std::uint64_t seed = 0;
  Estimator method = Estimator::PrimalDual;
  bool resample = true;  // false repeats the original data, a degenerate check
  bool parallel = true;
  int threads = 0;
  EstimationOptions estimation;
};

struct BootstrapResult {
  Vec se;
  std::vector<Vec> draws;
  int failures = 0;
};

// One matched-pairs bootstrap replicate: resample the observed matches with
// replacement and re-estimate, starting from `start`.
EstimationResult bootstrap_replicate(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                                     const BootstrapOptions& opts, int replicate, const EstimationResult* start = nullptr);

BootstrapResult bootstrap_se(const ModelSpec& base, const SurplusBasis& basis, const EstimationDataset& data,
                             const BootstrapOptions& opts = {});

// Data files. CSV rows are "x-label,y-label,count" with "0" for unmatched;
// JSON adds optional flows and sample size.
EstimationDataset load_dataset(const std::string& path, const ModelSpec& spec);
std::string dataset_to_csv(const ModelSpec& spec, const EstimationDataset& data);

// Model document plus "basis" (list of {name, pairs}) and optional "lambda".
struct BasisFile {
  ModelSpec base;
  SurplusBasis basis;
};
BasisFile load_basis(const std::string& path);
BasisFile basis_from_json(const nlohmann::json& doc);
nlohmann::json basis_to_json(const ModelSpec& base, const SurplusBasis& basis);

// Career market of engineers. Worker state (experience, recent technical
// years, recent general years), firm types {technical, general}.
struct EngineerParams {
  double a = 1.0;             // weight on the occupation mismatch (x~ - y)^2
  double b = 1.0;             // weight on experience x_e * y
  int max_experience = 38;    // x_e in 0..max, rescaled to [0,1]
  int window = 5;             // cap on recent-year counters
  double beta = 0.95;
  double scale = 1.0;         // logit scale
  double technical_share = 0.5;  // share of technical jobs
};

BasisFile generate_engineer_spec(const EngineerParams& params);

}  // namespace dynmatch
