#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "safetynet/network.hpp"

namespace safetynet {

/// Localized bump over the coordinates in `index_set`.
struct BarSpec {
  std::vector<std::size_t> index_set;
  Vector centers;  // one per index
  Vector widths;   // one per index, all > 0

  void validate() const;
};

/// Basic bar: (1/eps) [relu(d + eps) - 2 relu(d) + relu(d - eps)], d = x_i - s.
/// Peak 1 at x_i = s, zero outside |x_i - s| < eps.
double phi(std::span<const double> x, std::size_t i, double s, double eps);

/// relu(sum_{i in I} phi(x; i, s_i, eps_i) - #I + 1).
double bar(std::span<const double> x, const BarSpec& spec);

/// Two-ReLU-layer network on `input_width` inputs whose single output
/// (logit 0) equals bar(x, spec): 3 units per index, then one unit.
Network build_bar_network(const BarSpec& spec, std::size_t input_width);

/// Network whose output is sum_k weights[k] * bar(x, specs[k]).
Network build_bar_sum_network(std::span<const BarSpec> specs, std::span<const double> weights,
                              std::size_t input_width);

/// Regular lattice over [lo, hi] per axis, `points` samples per axis.
struct Grid {
  std::size_t dims = 1;  // 1 or 2
  double lo = 0.0;
  double hi = 1.0;
  std::size_t points = 2000;

  double coord(std::size_t k) const;
};

using ScalarField = std::function<double(std::span<const double>)>;

/// Connected components of {x on grid : f(x) >= t}; chain adjacency in 1-D,
/// 4-adjacency in 2-D.
std::size_t count_components(const ScalarField& f, double t, const Grid& grid);

/// Sampled values of f over a 2-D grid, row-major with y as the row.
std::vector<double> sample_grid(const ScalarField& f, const Grid& grid);

}  // namespace safetynet
