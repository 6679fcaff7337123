#include "safetynet/codes.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "safetynet/error.hpp"

namespace safetynet {

std::string_view to_string(CodeMode m) { return m == CodeMode::Binary ? "binary" : "quaternary"; }

CodeMode parse_code_mode(std::string_view name) {
  if (name == "binary") return CodeMode::Binary;
  if (name == "quaternary") return CodeMode::Quaternary;
  fail(ErrorKind::Config, "unknown code mode '" + std::string(name) + "'");
}

void Thresholds::validate() const {
  if (levels.empty()) fail(ErrorKind::Config, "thresholds are empty");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (!(levels[i] > 0.0) || !std::isfinite(levels[i])) fail(ErrorKind::Config, "thresholds must be positive");
    if (i > 0 && !(levels[i] > levels[i - 1]))
      fail(ErrorKind::Degenerate, "thresholds are not strictly increasing");
  }
}

double empirical_quantile(std::vector<double> values, double q) {
  if (values.empty()) fail(ErrorKind::Domain, "quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[hi] - values[lo]);
}

Thresholds thresholds_from_activations(std::span<const double> activations, std::size_t layer_index,
                                       CodeMode mode) {
  std::vector<double> positive;
  for (double a : activations)
    if (a > 0.0) positive.push_back(a);
  if (positive.empty())
    fail(ErrorKind::Degenerate, "hidden layer " + std::to_string(layer_index) + " never activates on the data");

  Thresholds th;
  th.layer_index = layer_index;
  const std::vector<double> qs = mode == CodeMode::Binary ? std::vector<double>{0.5} : std::vector{0.25, 0.5, 0.75};
  for (double q : qs) {
    const double t = empirical_quantile(positive, q);
    th.levels.push_back(t > 0.0 ? t : 1e-6);
  }
  th.validate();
  return th;
}

Thresholds fit_thresholds(const Network& net, const Dataset& data, std::size_t layer_index, CodeMode mode) {
  if (data.empty()) fail(ErrorKind::Config, "cannot fit thresholds on an empty dataset");
  if (layer_index >= net.num_hidden())
    fail(ErrorKind::Config, "layer " + std::to_string(layer_index) + " is not a hidden ReLU layer");
  std::vector<double> pooled;
  for (const auto& x : data.features) {
    const auto rec = forward(net, x);
    pooled.insert(pooled.end(), rec.hidden[layer_index].begin(), rec.hidden[layer_index].end());
  }
  return thresholds_from_activations(pooled, layer_index, mode);
}

Code quantize_values(std::span<const double> activations, const Thresholds& th) {
  Code c;
  c.levels.reserve(activations.size());
  for (double a : activations) {
    int level = 0;
    for (double t : th.levels) level += a >= t ? 1 : 0;
    c.levels.push_back(level);
  }
  return c;
}

Code quantize(const ActivationRecord& record, const Thresholds& th) {
  if (th.layer_index >= record.hidden.size())
    fail(ErrorKind::Shape, "activation record does not cover layer " + std::to_string(th.layer_index));
  return quantize_values(record.hidden[th.layer_index], th);
}

double code_distance_sq(const Code& a, const Code& b) {
  if (a.width() != b.width()) fail(ErrorKind::Shape, "code widths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.width(); ++i) {
    const double d = a.levels[i] - b.levels[i];
    s += d * d;
  }
  return s;
}

void write_codes_csv(std::ostream& out, std::span<const Code> codes) {
  for (const auto& c : codes) {
    for (std::size_t i = 0; i < c.levels.size(); ++i) out << (i ? "," : "") << c.levels[i];
    out << '\n';
  }
}

std::vector<Code> read_codes_csv(std::istream& in) {
  std::vector<Code> codes;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    Code c;
    while (std::getline(row, cell, ',')) {
      try {
        std::size_t used = 0;
        c.levels.push_back(std::stoi(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail(ErrorKind::Format, "code cell '" + cell + "' is not an integer");
      }
    }
    if (!codes.empty() && c.width() != codes.front().width()) fail(ErrorKind::Format, "ragged code rows");
    codes.push_back(std::move(c));
  }
  return codes;
}

}  // namespace safetynet
