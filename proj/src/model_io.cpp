#include "dynmatch/model_io.hpp"

#include <fstream>
#include <random>
#include <sstream>

namespace dynmatch {

namespace {

[[noreturn]] void bad(const std::string& msg) { throw Error(ErrorCode::Config, msg); }

int index_of(const std::vector<std::string>& labels, const std::string& l) {
  if (l == "0") return 0;
  for (size_t i = 0; i < labels.size(); ++i)
    if (labels[i] == l) return static_cast<int>(i) + 1;
  return -1;
}

std::vector<std::string> labels(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array()) bad(std::string("missing array '") + key + "'");
  std::vector<std::string> out;
  for (const auto& v : doc[key]) {
    if (v.is_string()) out.push_back(v.get<std::string>());
    else if (v.is_number_integer()) out.push_back(std::to_string(v.get<long long>()));
    else bad(std::string("labels in '") + key + "' must be strings");
  }
  return out;
}

std::vector<std::vector<double>> nested(const json& doc, const char* key) {
  if (!doc.contains(key) || !doc[key].is_array()) bad(std::string("missing matrix '") + key + "'");
  std::vector<std::vector<double>> rows;
  for (const auto& r : doc[key]) {
    if (!r.is_array()) bad(std::string("matrix '") + key + "' must be a nested array");
    rows.push_back(r.get<std::vector<double>>());
  }
  return rows;
}

void read_kernel(const json& doc, const char* key, const ModelSpec& spec, Kernel& k) {
  if (!doc.contains(key) || !doc[key].is_object()) bad(std::string("missing kernel map '") + key + "'");
  for (const auto& [cell, probs] : doc[key].items()) {
    auto comma = cell.find(',');
    if (comma == std::string::npos) bad(std::string(key) + ": origin key '" + cell + "' is not of the form x,y");
    int r = index_of(spec.types.workers, cell.substr(0, comma));
    int c = index_of(spec.types.firms, cell.substr(comma + 1));
    if (r < 0 || c < 0 || (r == 0 && c == 0)) bad(std::string(key) + ": unknown origin cell '" + cell + "'");
    auto v = probs.get<std::vector<double>>();
    if (static_cast<int>(v.size()) != k.dest()) bad(std::string(key) + ": column '" + cell + "' has the wrong length");
    for (int d = 0; d < k.dest(); ++d) k(d, r, c) = v[d];
  }
}

std::string cell_key(const ModelSpec& spec, int r, int c) {
  return (r == 0 ? std::string("0") : spec.types.workers[r - 1]) + "," +
         (c == 0 ? std::string("0") : spec.types.firms[c - 1]);
}

}  // namespace

ModelSpec empty_spec(std::vector<std::string> workers, std::vector<std::string> firms) {
  ModelSpec spec;
  spec.types = {std::move(workers), std::move(firms)};
  const int R = spec.grid_rows(), C = spec.grid_cols();
  spec.alpha = Mat::Zero(R, C);
  spec.gamma = Mat::Zero(R, C);
  spec.P = Kernel(spec.nx(), R, C);
  spec.Q = Kernel(spec.ny(), R, C);
  return spec;
}

ModelSpec model_from_json(const json& doc) {
  ModelSpec spec = empty_spec(labels(doc, "worker_types"), labels(doc, "firm_types"));
  const int nx = spec.nx(), ny = spec.ny();
  if (nx == 0 || ny == 0) bad("type lists must be non-empty");

  auto a = nested(doc, "alpha");
  if (static_cast<int>(a.size()) != nx) bad("alpha must have one row per worker type");
  for (int x = 0; x < nx; ++x) {
    const auto& row = a[x];
    if (static_cast<int>(row.size()) == ny) {
      for (int y = 0; y < ny; ++y) spec.alpha(x + 1, y + 1) = row[y];
    } else if (static_cast<int>(row.size()) == ny + 1) {
      for (int y = 0; y <= ny; ++y) spec.alpha(x + 1, y) = row[y];
    } else {
      bad("alpha row has the wrong length");
    }
  }
  auto g = nested(doc, "gamma");
  int off = 0;
  if (static_cast<int>(g.size()) == nx + 1) off = 0;
  else if (static_cast<int>(g.size()) == nx) off = 1;
  else bad("gamma must have one row per worker type (optionally a leading unmatched row)");
  for (size_t i = 0; i < g.size(); ++i) {
    if (static_cast<int>(g[i].size()) != ny) bad("gamma row has the wrong length");
    for (int y = 0; y < ny; ++y) spec.gamma(static_cast<int>(i) + off, y + 1) = g[i][y];
  }

  if (doc.contains("allow_unmatched")) spec.allow_unmatched = doc["allow_unmatched"].get<bool>();
  read_kernel(doc, "P", spec, spec.P);
  read_kernel(doc, "Q", spec, spec.Q);

  if (!doc.contains("beta")) bad("missing 'beta'");
  spec.beta = doc["beta"].get<double>();
  spec.M = doc.value("M", 1.0);
  spec.N = doc.value("N", 1.0);
  if (doc.contains("flows")) {
    const auto& f = doc["flows"];
    auto w = f.value("workers", std::vector<double>{});
    auto v = f.value("firms", std::vector<double>{});
    if (static_cast<int>(w.size()) != nx || static_cast<int>(v.size()) != ny)
      bad("flows.workers and flows.firms need one entry per type");
    spec.inflow_m = Eigen::Map<Vec>(w.data(), nx);
    spec.inflow_n = Eigen::Map<Vec>(v.data(), ny);
  }
  if (doc.contains("firm_masses")) {
    auto v = doc["firm_masses"].get<std::vector<double>>();
    if (static_cast<int>(v.size()) != ny) bad("firm_masses needs one entry per firm type");
    spec.fixed_n = Eigen::Map<Vec>(v.data(), ny);
  }
  if (doc.contains("shock")) {
    const auto& s = doc["shock"];
    auto mode = s.value("mode", std::string("logit"));
    if (mode == "logit") spec.shock.mode = ShockMode::Logit;
    else if (mode == "none") spec.shock.mode = ShockMode::None;
    else bad("shock.mode must be 'logit' or 'none'");
    spec.shock.scale = s.value("scale", 1.0);
  }
  return spec;
}

json model_to_json(const ModelSpec& spec) {
  const int nx = spec.nx(), ny = spec.ny();
  json doc;
  doc["worker_types"] = spec.types.workers;
  doc["firm_types"] = spec.types.firms;
  json alpha = json::array(), gamma = json::array();
  for (int x = 1; x <= nx; ++x) {
    std::vector<double> ra, rg;
    for (int y = 1; y <= ny; ++y) {
      ra.push_back(spec.alpha(x, y));
      rg.push_back(spec.gamma(x, y));
    }
    alpha.push_back(ra);
    gamma.push_back(rg);
  }
  doc["alpha"] = alpha;
  doc["gamma"] = gamma;
  json P = json::object(), Q = json::object();
  for (int r = 0; r <= nx; ++r)
    for (int c = 0; c <= ny; ++c) {
      if (r == 0 && c == 0) continue;
      bool unmatched = r == 0 || c == 0;
      if (unmatched && !spec.allow_unmatched) continue;
      if (r > 0) {
        std::vector<double> v(nx);
        for (int d = 0; d < nx; ++d) v[d] = spec.P(d, r, c);
        P[cell_key(spec, r, c)] = v;
      }
      if (c > 0) {
        std::vector<double> v(ny);
        for (int d = 0; d < ny; ++d) v[d] = spec.Q(d, r, c);
        Q[cell_key(spec, r, c)] = v;
      }
    }
  doc["P"] = P;
  doc["Q"] = Q;
  doc["beta"] = spec.beta;
  doc["M"] = spec.M;
  doc["N"] = spec.N;
  doc["shock"] = {{"mode", spec.sharp() ? "none" : "logit"}, {"scale", spec.shock.scale}};
  doc["allow_unmatched"] = spec.allow_unmatched;
  if (spec.fixed_n.size())
    doc["firm_masses"] = std::vector<double>(spec.fixed_n.data(), spec.fixed_n.data() + spec.fixed_n.size());
  if (spec.has_flows()) {
    doc["flows"] = {{"workers", std::vector<double>(spec.inflow_m.data(), spec.inflow_m.data() + spec.inflow_m.size())},
                    {"firms", std::vector<double>(spec.inflow_n.data(), spec.inflow_n.data() + spec.inflow_n.size())}};
  }
  return doc;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) bad("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    bad(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) bad("cannot write " + path);
  out << text;
}

ModelSpec load_model(const std::string& path) {
  try {
    return model_from_json(read_json_file(path));
  } catch (const json::exception& e) {
    bad(path + ": " + e.what());
  }
}

void save_model(const ModelSpec& spec, const std::string& path) { write_text_file(path, model_to_json(spec).dump(2) + "\n"); }

ModelSpec two_type_example(ShockMode mode, double scale) {
  ModelSpec spec = empty_spec({"l", "h"}, {"l", "h"});
  const double a[2][2] = {{1, 2}, {2, 4}};
  for (int x = 0; x < 2; ++x)
    for (int y = 0; y < 2; ++y) {
      spec.alpha(x + 1, y + 1) = a[x][y];
      spec.gamma(x + 1, y + 1) = a[x][y];
    }
  // probability of landing on the low type, keyed by (own, partner); partner 0 = alone
  const double low[3][3] = {{0, 0, 0}, {.9, .8, .3}, {.1, .6, .2}};
  for (int own = 1; own <= 2; ++own)
    for (int partner = 0; partner <= 2; ++partner) {
      spec.P(0, own, partner) = low[own][partner];
      spec.P(1, own, partner) = 1.0 - low[own][partner];
      spec.Q(0, partner, own) = low[own][partner];
      spec.Q(1, partner, own) = 1.0 - low[own][partner];
    }
  spec.beta = 0.95;
  spec.shock = {mode, scale};
  return spec;
}

ModelSpec random_spec(int nx, int ny, std::uint64_t seed, double beta, double scale) {
  std::vector<std::string> w, f;
  for (int i = 0; i < nx; ++i) w.push_back("x" + std::to_string(i + 1));
  for (int j = 0; j < ny; ++j) f.push_back("y" + std::to_string(j + 1));
  ModelSpec spec = empty_spec(w, f);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> phi(0.0, 4.0), u(0.0, 1.0);
  for (int x = 1; x <= nx; ++x)
    for (int y = 1; y <= ny; ++y) {
      double s = phi(rng);
      spec.alpha(x, y) = 0.5 * s;
      spec.gamma(x, y) = 0.5 * s;
    }
  auto fill = [&](Kernel& k, int r, int c) {
    double tot = 0.0;
    for (int d = 0; d < k.dest(); ++d) tot += (k(d, r, c) = u(rng) + 1e-3);
    for (int d = 0; d < k.dest(); ++d) k(d, r, c) /= tot;
  };
  for (int r = 0; r <= nx; ++r)
    for (int c = 0; c <= ny; ++c) {
      if (r == 0 && c == 0) continue;
      if (r > 0) fill(spec.P, r, c);
      if (c > 0) fill(spec.Q, r, c);
    }
  spec.beta = beta;
  spec.shock = {ShockMode::Logit, scale};
  return spec;
}

}  // namespace dynmatch
