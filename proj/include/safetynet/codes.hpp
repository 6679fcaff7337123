#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "safetynet/dataset.hpp"
#include "safetynet/network.hpp"

namespace safetynet {

enum class CodeMode { Binary, Quaternary };

std::string_view to_string(CodeMode m);
CodeMode parse_code_mode(std::string_view name);

struct Thresholds {
  std::size_t layer_index = 0;  // hidden stage whose post-ReLU output is coded
  std::vector<double> levels;   // strictly increasing, positive

  std::size_t num_levels() const { return levels.size(); }
  void validate() const;
  friend bool operator==(const Thresholds&, const Thresholds&) = default;
};

/// Quantized activation pattern; each entry is in [0, number of thresholds].
struct Code {
  std::vector<int> levels;

  std::size_t width() const { return levels.size(); }
  friend bool operator==(const Code&, const Code&) = default;
  friend auto operator<=>(const Code&, const Code&) = default;
};

/// Linear-interpolated empirical quantile (q in [0,1]) of unsorted values.
double empirical_quantile(std::vector<double> values, double q);

/// Thresholds from quantiles of the positive activations of one hidden stage
/// pooled over `data`: the median for binary, quartiles for quaternary.
Thresholds fit_thresholds(const Network& net, const Dataset& data, std::size_t layer_index, CodeMode mode);

/// Same rule applied to an already pooled activation sample.
Thresholds thresholds_from_activations(std::span<const double> activations, std::size_t layer_index, CodeMode mode);

/// Level of unit j = number of thresholds <= activation j.
Code quantize(const ActivationRecord& record, const Thresholds& th);
Code quantize_values(std::span<const double> activations, const Thresholds& th);

double code_distance_sq(const Code& a, const Code& b);

void write_codes_csv(std::ostream& out, std::span<const Code> codes);
std::vector<Code> read_codes_csv(std::istream& in);

}  // namespace safetynet
