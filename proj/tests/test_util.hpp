#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "safetynet/error.hpp"
#include "safetynet/network.hpp"

// Asserts that `expr` throws safetynet::Error of the given kind.
#define CHECK_FAILS_WITH(expr, expected_kind)                               \
  do {                                                                      \
    bool thrown_ = false;                                                   \
    try {                                                                   \
      (void)(expr);                                                         \
    } catch (const safetynet::Error& e_) {                                  \
      thrown_ = true;                                                       \
      CHECK_MESSAGE(e_.kind() == (expected_kind), safetynet::to_string(e_.kind()), ": ", e_.what()); \
    }                                                                       \
    CHECK_MESSAGE(thrown_, "expected an exception from " #expr);            \
  } while (0)

namespace testutil {

inline safetynet::Vector random_point(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  safetynet::Vector x(n);
  for (double& v : x) v = u(rng);
  return x;
}

// One-stage network: logits = W x + b.
inline safetynet::Network linear_net(std::vector<std::vector<double>> w, std::vector<double> b) {
  safetynet::Layer l{safetynet::Matrix(w.size(), w.front().size()), b};
  for (std::size_t r = 0; r < w.size(); ++r)
    for (std::size_t c = 0; c < w[r].size(); ++c) l.weight(r, c) = w[r][c];
  return safetynet::Network({l});
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("safetynet_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testutil
