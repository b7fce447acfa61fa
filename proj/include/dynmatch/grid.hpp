#pragma once

#include "dynmatch/model.hpp"

#include <string>
#include <vector>

namespace dynmatch {

// Lattice of compositions of a total mass over d types at resolution r, with a
// Freudenthal triangulation in cumulative coordinates for interpolation.
class SimplexLattice {
 public:
  SimplexLattice() = default;
  SimplexLattice(int d, int r, double total);

  int dim() const { return d_; }
  int resolution() const { return r_; }
  double total() const { return total_; }
  int size() const { return static_cast<int>(points_.size()); }
  // Integer composition of node i (sums to r).
  const std::vector<int>& composition(int i) const { return points_[i]; }
  Vec masses(int i) const;

  struct Stencil {
    std::vector<int> node;       // lattice nodes with positive weight
    std::vector<double> weight;  // barycentric weights
    // Walk of the containing simplex: vertex k is reached from vertex k-1 by
    // stepping cumulative coordinate axis[k-1]. Vertex 0 is the floor corner.
    std::vector<int> path_node;
    std::vector<int> axis;
  };
  // Barycentric stencil of a mass vector, projected onto the simplex first.
  Stencil locate(const Vec& masses) const;
  // Derivative of the cumulative coordinate j with respect to mass k is
  // r/total for k <= j.
  double coordinate_scale() const { return r_ / total_; }

 private:
  int index_of_cumulative(const std::vector<int>& c) const;

  int d_ = 0;
  int r_ = 0;
  double total_ = 1.0;
  std::vector<std::vector<int>> points_;
  std::vector<int> lookup_;  // dense over [0..r]^(d-1) cumulative coordinates
};

// Product lattice over worker and firm masses. Node g = iw * firm_size + if.
class SimplexGrid {
 public:
  SimplexGrid() = default;
  SimplexGrid(const ModelSpec& spec, int resolution);

  int size() const { return workers_.size() * firms_.size(); }
  int resolution() const { return workers_.resolution(); }
  AggregateState node(int g) const;
  const SimplexLattice& workers() const { return workers_; }
  const SimplexLattice& firms() const { return firms_; }

  // Interpolated value; if grad_m / grad_n are given they receive the
  // derivative of the interpolant with respect to each mass (zero for the last
  // type on each side, whose mass is implied).
  double interpolate(const Vec& values, const AggregateState& point, Vec* grad_m = nullptr, Vec* grad_n = nullptr) const;

 private:
  SimplexLattice workers_;
  SimplexLattice firms_;
};

// Exact count of lattice nodes: C(d-1+r, d-1) per side.
long long composition_count(int d, int r);

// Project a mass vector onto {v >= 0, sum v = total}. Returns the sup-norm
// distance moved.
double project_to_simplex(Vec& v, double total);

}  // namespace dynmatch
