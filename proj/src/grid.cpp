#include "dynmatch/grid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynmatch {

long long composition_count(int d, int r) {
  // C(d-1+r, d-1)
  long long c = 1;
  for (int i = 1; i <= d - 1; ++i) c = c * (r + i) / i;
  return c;
}

double project_to_simplex(Vec& v, double total) {
  Vec before = v;
  v = v.cwiseMax(0.0);
  const double s = v.sum();
  if (s > 0.0) v *= total / s;
  else v.setConstant(total / static_cast<double>(v.size()));
  return (v - before).cwiseAbs().maxCoeff();
}

SimplexLattice::SimplexLattice(int d, int r, double total) : d_(d), r_(r), total_(total) {
  if (d < 1) throw Error(ErrorCode::Config, "lattice dimension must be positive");
  if (r < 1) throw Error(ErrorCode::Config, "grid resolution must be at least 1");
  double cells = std::pow(static_cast<double>(r + 1), d - 1);
  if (cells > 5e7) throw Error(ErrorCode::Config, "grid too large for the dense node table");
  lookup_.assign(static_cast<size_t>(cells), -1);

  std::vector<int> cur(d, 0);
  // enumerate compositions in lexicographic order
  auto rec = [&](auto&& self, int pos, int left) -> void {
    if (pos == d - 1) {
      cur[pos] = left;
      std::vector<int> cum(d - 1);
      int acc = 0;
      for (int j = 0; j < d - 1; ++j) cum[j] = (acc += cur[j]);
      lookup_[index_of_cumulative(cum)] = static_cast<int>(points_.size());
      points_.push_back(cur);
      return;
    }
    for (int k = left; k >= 0; --k) {
      cur[pos] = k;
      self(self, pos + 1, left - k);
    }
  };
  rec(rec, 0, r);
}

int SimplexLattice::index_of_cumulative(const std::vector<int>& c) const {
  int idx = 0, mul = 1;
  for (int j = 0; j < d_ - 1; ++j) {
    idx += c[j] * mul;
    mul *= r_ + 1;
  }
  return idx;
}

Vec SimplexLattice::masses(int i) const {
  Vec m(d_);
  for (int k = 0; k < d_; ++k) m[k] = total_ * points_[i][k] / r_;
  return m;
}

SimplexLattice::Stencil SimplexLattice::locate(const Vec& masses) const {
  Stencil st;
  if (d_ == 1) {
    st.node = {0};
    st.weight = {1.0};
    st.path_node = {0};
    return st;
  }
  const int k = d_ - 1;
  std::vector<double> z(k);
  double acc = 0.0;
  const double scale = coordinate_scale();
  for (int j = 0; j < k; ++j) {
    acc += std::max(masses[j], 0.0);
    double v = std::clamp(acc * scale, 0.0, static_cast<double>(r_));
    z[j] = j ? std::max(v, z[j - 1]) : v;
  }
  std::vector<int> base(k);
  std::vector<double> frac(k);
  for (int j = 0; j < k; ++j) {
    base[j] = std::min(static_cast<int>(std::floor(z[j])), r_ - 1);
    frac[j] = z[j] - base[j];
  }
  std::vector<int> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (frac[a] != frac[b]) return frac[a] > frac[b];
    return a > b;
  });
  std::vector<int> v = base;
  st.path_node.push_back(lookup_[index_of_cumulative(v)]);
  st.weight.push_back(1.0 - frac[order[0]]);
  for (int s = 0; s < k; ++s) {
    v[order[s]] += 1;
    st.path_node.push_back(lookup_[index_of_cumulative(v)]);
    st.axis.push_back(order[s]);
    st.weight.push_back(s + 1 < k ? frac[order[s]] - frac[order[s + 1]] : frac[order[s]]);
  }
  st.node = st.path_node;
  return st;
}

SimplexGrid::SimplexGrid(const ModelSpec& spec, int resolution)
    : workers_(spec.nx(), resolution, spec.M), firms_(spec.ny(), resolution, spec.N) {}

AggregateState SimplexGrid::node(int g) const {
  const int F = firms_.size();
  return {workers_.masses(g / F), firms_.masses(g % F)};
}

double SimplexGrid::interpolate(const Vec& values, const AggregateState& point, Vec* grad_m, Vec* grad_n) const {
  const int F = firms_.size();
  const auto sw = workers_.locate(point.m);
  const auto sf = firms_.locate(point.n);
  double val = 0.0;
  for (size_t i = 0; i < sw.node.size(); ++i)
    for (size_t j = 0; j < sf.node.size(); ++j) val += sw.weight[i] * sf.weight[j] * values[sw.node[i] * F + sf.node[j]];
  if (!grad_m && !grad_n) return val;

  // derivative along each stepped cumulative axis, then chained to masses
  auto side_grad = [&](const SimplexLattice& lat, const SimplexLattice::Stencil& own, const SimplexLattice::Stencil& other,
                       bool worker_side) {
    Vec dz = Vec::Zero(std::max(lat.dim() - 1, 0));
    for (size_t s = 0; s < own.axis.size(); ++s) {
      double diff = 0.0;
      for (size_t j = 0; j < other.node.size(); ++j) {
        const int hi = own.path_node[s + 1], lo = own.path_node[s];
        const double a = worker_side ? values[hi * F + other.node[j]] : values[other.node[j] * F + hi];
        const double b = worker_side ? values[lo * F + other.node[j]] : values[other.node[j] * F + lo];
        diff += other.weight[j] * (a - b);
      }
      dz[own.axis[s]] = diff;
    }
    Vec g = Vec::Zero(lat.dim());
    double acc = 0.0;
    for (int j = lat.dim() - 2; j >= 0; --j) {
      acc += dz[j];
      g[j] = acc * lat.coordinate_scale();
    }
    return g;
  };
  if (grad_m) *grad_m = side_grad(workers_, sw, sf, true);
  if (grad_n) *grad_n = side_grad(firms_, sf, sw, false);
  return val;
}

}  // namespace dynmatch
