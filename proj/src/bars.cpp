#include "safetynet/bars.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "safetynet/error.hpp"

namespace safetynet {

namespace {
double relu(double v) { return v > 0.0 ? v : 0.0; }
}  // namespace

void BarSpec::validate() const {
  if (index_set.empty()) fail(ErrorKind::Config, "bar index set is empty");
  if (centers.size() != index_set.size() || widths.size() != index_set.size())
    fail(ErrorKind::Config, "bar centers/widths must match the index set");
  if (std::set<std::size_t>(index_set.begin(), index_set.end()).size() != index_set.size())
    fail(ErrorKind::Config, "bar indices must be distinct");
  for (double w : widths)
    if (!(w > 0.0)) fail(ErrorKind::Config, "bar widths must be positive");
}

double phi(std::span<const double> x, std::size_t i, double s, double eps) {
  if (!(eps > 0.0)) fail(ErrorKind::Config, "phi width must be positive");
  if (i >= x.size()) fail(ErrorKind::Shape, "phi index out of range");
  const double d = x[i] - s;
  return (relu(d + eps) - 2.0 * relu(d) + relu(d - eps)) / eps;
}

double bar(std::span<const double> x, const BarSpec& spec) {
  spec.validate();
  double sum = 0.0;
  for (std::size_t k = 0; k < spec.index_set.size(); ++k)
    sum += phi(x, spec.index_set[k], spec.centers[k], spec.widths[k]);
  return relu(sum - static_cast<double>(spec.index_set.size()) + 1.0);
}

Network build_bar_sum_network(std::span<const BarSpec> specs, std::span<const double> weights,
                              std::size_t input_width) {
  if (specs.empty() || specs.size() != weights.size()) fail(ErrorKind::Config, "one weight per bar is required");
  std::size_t hidden1 = 0;
  for (const auto& s : specs) {
    s.validate();
    for (std::size_t i : s.index_set)
      if (i >= input_width) fail(ErrorKind::Config, "bar index exceeds input width");
    hidden1 += 3 * s.index_set.size();
  }

  Layer first{Matrix(hidden1, input_width), Vector(hidden1)};
  Layer second{Matrix(specs.size(), hidden1), Vector(specs.size())};
  Layer out{Matrix(1, specs.size()), Vector(1, 0.0)};
  std::size_t unit = 0;
  for (std::size_t b = 0; b < specs.size(); ++b) {
    const BarSpec& s = specs[b];
    for (std::size_t k = 0; k < s.index_set.size(); ++k) {
      const double c = s.centers[k];
      const double e = s.widths[k];
      const double offsets[3] = {-c + e, -c, -c - e};
      const double mix[3] = {1.0 / e, -2.0 / e, 1.0 / e};
      for (int r = 0; r < 3; ++r, ++unit) {
        first.weight(unit, s.index_set[k]) = 1.0;
        first.bias[unit] = offsets[r];
        second.weight(b, unit) = mix[r];
      }
    }
    second.bias[b] = 1.0 - static_cast<double>(s.index_set.size());
    out.weight(0, b) = weights[b];
  }
  return Network({std::move(first), std::move(second), std::move(out)});
}

Network build_bar_network(const BarSpec& spec, std::size_t input_width) {
  const double one = 1.0;
  return build_bar_sum_network(std::span(&spec, 1), std::span(&one, 1), input_width);
}

double Grid::coord(std::size_t k) const {
  return lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(points - 1);
}

namespace {

void check_grid(const Grid& g) {
  if (g.dims != 1 && g.dims != 2) fail(ErrorKind::Config, "grid must be 1-D or 2-D");
  if (g.points < 1000) fail(ErrorKind::Config, "grid resolution must be at least 1000 points per axis");
  if (!(g.hi > g.lo)) fail(ErrorKind::Config, "grid range is empty");
}

std::size_t find_root(std::vector<std::size_t>& parent, std::size_t a) {
  while (parent[a] != a) {
    parent[a] = parent[parent[a]];
    a = parent[a];
  }
  return a;
}

}  // namespace

std::vector<double> sample_grid(const ScalarField& f, const Grid& grid) {
  check_grid(grid);
  std::vector<double> values;
  if (grid.dims == 1) {
    values.reserve(grid.points);
    for (std::size_t i = 0; i < grid.points; ++i) {
      const double x[1] = {grid.coord(i)};
      values.push_back(f(x));
    }
    return values;
  }
  values.reserve(grid.points * grid.points);
  for (std::size_t r = 0; r < grid.points; ++r)
    for (std::size_t c = 0; c < grid.points; ++c) {
      const double x[2] = {grid.coord(c), grid.coord(r)};
      values.push_back(f(x));
    }
  return values;
}

std::size_t count_components(const ScalarField& f, double t, const Grid& grid) {
  if (!(t > 0.0)) fail(ErrorKind::Config, "component threshold must be positive");
  const std::vector<double> v = sample_grid(f, grid);
  const std::size_t n = grid.points;

  if (grid.dims == 1) {
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i)
      if (v[i] >= t && (i == 0 || v[i - 1] < t)) ++count;
    return count;
  }

  std::vector<std::size_t> parent(v.size());
  std::iota(parent.begin(), parent.end(), std::size_t{0});
  const auto unite = [&](std::size_t a, std::size_t b) { parent[find_root(parent, a)] = find_root(parent, b); };
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const std::size_t k = r * n + c;
      if (v[k] < t) continue;
      if (c + 1 < n && v[k + 1] >= t) unite(k, k + 1);
      if (r + 1 < n && v[k + n] >= t) unite(k, k + n);
    }
  std::size_t count = 0;
  for (std::size_t k = 0; k < v.size(); ++k)
    if (v[k] >= t && find_root(parent, k) == k) ++count;
  return count;
}

}  // namespace safetynet
