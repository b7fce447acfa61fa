#include "dynmatch/report.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace dynmatch {

using nlohmann::json;

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

namespace {

std::vector<double> to_std(const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(std::isfinite(m(r, c)) ? json(m(r, c)) : json(nullptr));
    rows.push_back(row);
  }
  return rows;
}

json labelled(const std::vector<std::string>& labels, const Vec& v) {
  json o = json::object();
  for (size_t i = 0; i < labels.size(); ++i) o[labels[i]] = v[static_cast<Eigen::Index>(i)];
  return o;
}

std::string worker_label(const ModelSpec& spec, int row) { return row == 0 ? "0" : spec.types.workers[row - 1]; }
std::string firm_label(const ModelSpec& spec, int col) { return col == 0 ? "0" : spec.types.firms[col - 1]; }

json wages_json(const WageSchedule& w) {
  return {{"lower", matrix_json(w.lower)}, {"upper", matrix_json(w.upper)}, {"point", matrix_json(w.point)}};
}

std::string mass_header(const ModelSpec& spec) {
  std::string h;
  for (const auto& l : spec.types.workers) h += ",m:" + l;
  for (const auto& l : spec.types.firms) h += ",n:" + l;
  return h;
}

std::string mass_fields(const AggregateState& s) {
  std::string out;
  for (Eigen::Index i = 0; i < s.m.size(); ++i) out += "," + format_double(s.m[i]);
  for (Eigen::Index i = 0; i < s.n.size(); ++i) out += "," + format_double(s.n[i]);
  return out;
}

}  // namespace

json solution_to_json(const ModelSpec& spec, const StationarySolution& sol, const std::string& method) {
  json doc;
  doc["method"] = method;
  doc["status"] = to_string(sol.status);
  if (!sol.message.empty()) doc["message"] = sol.message;
  doc["iterations"] = sol.iterations;
  doc["state"] = {{"workers", labelled(spec.types.workers, sol.state.m)}, {"firms", labelled(spec.types.firms, sol.state.n)}};
  doc["payoffs"] = {{"workers", labelled(spec.types.workers, sol.payoffs.U)}, {"firms", labelled(spec.types.firms, sol.payoffs.V)}};
  doc["matching"] = matrix_json(sol.matching.cells);
  doc["matching_layout"] = "rows: unmatched firms then worker types; columns: unmatched workers then firm types";
  if (sol.wages.point.size()) doc["wages"] = wages_json(sol.wages);
  json diag;
  diag["residual_sup"] = sol.residual_sup;
  diag["duality_gap"] = sol.duality_gap;
  diag["tau_used"] = sol.tau_used;
  if (sol.sharp) {
    const SharpDiagnostics& d = *sol.sharp;
    diag["complementarity"] = d.complementarity;
    diag["dual_violation"] = d.dual_violation;
    diag["polished"] = d.polished;
    diag["temperatures"] = d.temperatures;
    diag["entropies"] = d.entropies;
    diag["newton_steps"] = d.newton_steps;
    json active = json::array();
    for (const auto& c : d.active) active.push_back({worker_label(spec, c.row), firm_label(spec, c.col)});
    diag["active_cells"] = active;
  }
  doc["diagnostics"] = diag;
  return doc;
}

std::string matching_csv(const ModelSpec& spec, const Matching& mu) {
  std::ostringstream os;
  os << "x,y,mass\n";
  for (const auto& c : spec.cells())
    os << worker_label(spec, c.row) << "," << firm_label(spec, c.col) << "," << format_double(mu.cells(c.row, c.col)) << "\n";
  return os.str();
}

std::string wages_csv(const ModelSpec& spec, const WageSchedule& w) {
  std::ostringstream os;
  os << "x,y,lower,upper,point\n";
  for (int x = 0; x < spec.nx(); ++x)
    for (int y = 0; y < spec.ny(); ++y)
      os << spec.types.workers[x] << "," << spec.types.firms[y] << "," << format_double(w.lower(x, y)) << ","
         << format_double(w.upper(x, y)) << "," << format_double(w.point(x, y)) << "\n";
  return os.str();
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::ostringstream os;
  os << "iter,residual,step,note\n";
  for (const auto& r : trace) os << r.iter << "," << format_double(r.residual) << "," << format_double(r.step) << "," << r.note << "\n";
  return os.str();
}

std::string masses_csv(const ModelSpec& spec, const AggregateState& s, const PayoffVectors& p) {
  std::ostringstream os;
  os << "side,type,mass,payoff\n";
  for (int x = 0; x < spec.nx(); ++x)
    os << "worker," << spec.types.workers[x] << "," << format_double(s.m[x]) << "," << format_double(p.U[x]) << "\n";
  for (int y = 0; y < spec.ny(); ++y)
    os << "firm," << spec.types.firms[y] << "," << format_double(s.n[y]) << "," << format_double(p.V[y]) << "\n";
  return os.str();
}

std::string path_csv(const ModelSpec& spec, const std::vector<PathStep>& path) {
  std::ostringstream os;
  os << "period" << mass_header(spec) << "\n";
  for (const auto& st : path) os << st.period << mass_fields(st.state) << "\n";
  return os.str();
}

std::string path_matching_csv(const ModelSpec& spec, const std::vector<PathStep>& path) {
  std::ostringstream os;
  os << "period,x,y,mass,wage_lower,wage_upper,wage_point\n";
  for (const auto& st : path)
    for (const auto& c : spec.cells()) {
      os << st.period << "," << worker_label(spec, c.row) << "," << firm_label(spec, c.col) << ","
         << format_double(st.matching.cells(c.row, c.col));
      if (c.kind == CellKind::Pair)
        os << "," << format_double(st.wages.lower(c.row - 1, c.col - 1)) << "," << format_double(st.wages.upper(c.row - 1, c.col - 1))
           << "," << format_double(st.wages.point(c.row - 1, c.col - 1));
      else
        os << ",,,";
      os << "\n";
    }
  return os.str();
}

std::string individual_path_csv(const ModelSpec& spec, const std::vector<IndividualStep>& steps) {
  std::ostringstream os;
  os << "period,type,partner\n";
  for (const auto& s : steps) os << s.period << "," << spec.types.workers[s.type] << "," << firm_label(spec, s.partner) << "\n";
  return os.str();
}

json path_to_json(const ModelSpec& spec, const std::vector<PathStep>& path) {
  json periods = json::array();
  for (const auto& st : path)
    periods.push_back({{"period", st.period},
                       {"state", {{"workers", labelled(spec.types.workers, st.state.m)}, {"firms", labelled(spec.types.firms, st.state.n)}}},
                       {"payoffs", {{"workers", labelled(spec.types.workers, st.payoffs.U)}, {"firms", labelled(spec.types.firms, st.payoffs.V)}}},
                       {"matching", matrix_json(st.matching.cells)},
                       {"wages", wages_json(st.wages)}});
  return {{"periods", periods}};
}

std::string value_field_csv(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W) {
  std::ostringstream os;
  os << "node" << mass_header(spec) << ",value\n";
  for (int g = 0; g < grid.size(); ++g) os << g << mass_fields(grid.node(g)) << "," << format_double(W.values[g]) << "\n";
  return os.str();
}

json value_field_to_json(const ModelSpec& spec, const SimplexGrid& grid, const ValueField& W) {
  return {{"method", W.method},
          {"resolution", grid.resolution()},
          {"worker_types", spec.types.workers},
          {"firm_types", spec.types.firms},
          {"values", to_std(W.values)}};
}

ValueField value_field_from_json(const json& doc, const ModelSpec& spec, int resolution) {
  try {
    if (doc.at("resolution").get<int>() != resolution)
      throw Error(ErrorCode::DimensionMismatch, "value field snapshot was computed on a different grid resolution");
    if (doc.at("worker_types").get<std::vector<std::string>>() != spec.types.workers ||
        doc.at("firm_types").get<std::vector<std::string>>() != spec.types.firms)
      throw Error(ErrorCode::DimensionMismatch, "value field snapshot belongs to different type spaces");
    ValueField W;
    W.method = doc.value("method", W.method);
    auto v = doc.at("values").get<std::vector<double>>();
    W.values = Eigen::Map<Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
    const SimplexGrid grid(spec, resolution);
    if (W.values.size() != grid.size()) throw Error(ErrorCode::DimensionMismatch, "value field snapshot has the wrong length");
    return W;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::Config, std::string("malformed value field snapshot: ") + e.what());
  }
}

json estimation_to_json(const SurplusBasis& basis, const EstimationResult& res, const BootstrapResult* boot,
                        Estimator method) {
  json doc;
  json lam = json::object(), se = json::object();
  for (int l = 0; l < basis.size(); ++l) {
    const std::string name = l < static_cast<int>(basis.names.size()) ? basis.names[l] : "phi" + std::to_string(l + 1);
    lam[name] = res.lambda[l];
    if (boot) se[name] = std::isfinite(boot->se[l]) ? json(boot->se[l]) : json(nullptr);
  }
  doc["lambda"] = lam;
  doc["se"] = boot ? se : json(nullptr);
  json diag;
  diag["method"] = to_string(method);
  diag["status"] = to_string(res.status);
  if (!res.message.empty()) diag["message"] = res.message;
  diag["iterations"] = res.iterations;
  if (method == Estimator::Mpec) diag["outer_iterations"] = res.outer_iterations;
  else diag["tau_used"] = res.tau_used;
  diag["feasibility"] = res.feasibility;
  diag["stationarity"] = res.stationarity;
  diag["moment_residual"] = res.moment_sup;
  diag["constraint_violation"] = res.constraint_violation;
  diag["log_likelihood"] = res.log_likelihood;
  if (boot) {
    diag["bootstrap_replicates"] = static_cast<int>(boot->draws.size()) + boot->failures;
    diag["bootstrap_failures"] = boot->failures;
  }
  doc["diagnostics"] = diag;
  return doc;
}

std::string estimation_table(const SurplusBasis& basis, const EstimationResult& res, const BootstrapResult* boot) {
  std::ostringstream os;
  os << std::left << std::setw(24) << "parameter" << std::right << std::setw(14) << "estimate" << std::setw(14) << "std. error"
     << "\n";
  for (int l = 0; l < basis.size(); ++l) {
    const std::string name = l < static_cast<int>(basis.names.size()) ? basis.names[l] : "phi" + std::to_string(l + 1);
    os << std::left << std::setw(24) << name << std::right << std::setw(14) << std::setprecision(6) << res.lambda[l];
    if (boot && std::isfinite(boot->se[l])) os << std::setw(14) << boot->se[l];
    else os << std::setw(14) << "-";
    os << "\n";
  }
  os << "status " << to_string(res.status) << ", " << res.iterations << " iterations, constraint violation "
     << res.constraint_violation << ", log-likelihood " << std::setprecision(10) << res.log_likelihood << "\n";
  if (boot) os << "bootstrap: " << boot->draws.size() << " converged replicates, " << boot->failures << " failures\n";
  return os.str();
}

}  // namespace dynmatch
