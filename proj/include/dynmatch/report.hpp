#pragma once

#include "dynmatch/dynamics.hpp"
#include "dynmatch/estimation.hpp"
#include "dynmatch/stationary.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace dynmatch {

// Stationary solution: state, payoffs, matching, wages and diagnostics.
nlohmann::json solution_to_json(const ModelSpec& spec, const StationarySolution& sol, const std::string& method);

// Long-format CSV with type labels ("0" marks the unmatched side).
std::string matching_csv(const ModelSpec& spec, const Matching& mu);                 // x,y,mass
std::string wages_csv(const ModelSpec& spec, const WageSchedule& w);                 // x,y,lower,upper,point
std::string trace_csv(const std::vector<TraceRow>& trace);                           // iter,residual,step,note
std::string masses_csv(const ModelSpec& spec, const AggregateState& s, const PayoffVectors& p);  // side,type,mass,payoff

// Aggregate path, one row per period: period, m:<worker>..., n:<firm>...
std::string path_csv(const ModelSpec& spec, const std::vector<PathStep>& path);
// period,x,y,mass,wage_lower,wage_upper,wage_point over matched pairs and unmatched cells
std::string path_matching_csv(const ModelSpec& spec, const std::vector<PathStep>& path);
std::string individual_path_csv(const ModelSpec& spec, const std::vector<IndividualStep>& steps);
nlohmann::json path_to_json(const ModelSpec& spec, const std::vector<PathStep>& path);

// Value field on the grid: node,m:<worker>...,n:<firm>...,value
std::string value_field_csv(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W);
// Snapshot for warm restarts; the reader checks that the grid matches.
nlohmann::json value_field_to_json(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W);
ValueField value_field_from_json(const nlohmann::json& doc, const ModelSpec& spec, int resolution);

nlohmann::json estimation_to_json(const SurplusBasis& basis, const EstimationResult& res, const BootstrapResult* boot,
                                  Estimator method);
std::string estimation_table(const SurplusBasis& basis, const EstimationResult& res, const BootstrapResult* boot);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace dynmatch
