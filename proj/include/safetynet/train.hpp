#pragma once

#include <cstdint>
#include <filesystem>

#include "safetynet/dataset.hpp"
#include "safetynet/network.hpp"

namespace safetynet {

struct TrainConfig {
  double learning_rate = 0.1;
  // Multiplicative shrink applied to every parameter each step:
  // p <- (1 - weight_decay) * p - learning_rate * grad.
  double weight_decay = 0.0;
  std::size_t epochs = 50;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Minibatch SGD on softmax cross-entropy. Deterministic given cfg.seed.
Network train(Network net, const Dataset& data, const TrainConfig& cfg);

double mean_cross_entropy(const Network& net, const Dataset& data);
double accuracy(const Network& net, const Dataset& data);

/// Binary checkpoint: "SNET", u32 version, u32 stage count, u32 widths,
/// then per stage the row-major weight followed by the bias, all f64 LE.
inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<unsigned char> checkpoint_bytes(const Network& net);
Network checkpoint_parse(std::span<const unsigned char> bytes);
void checkpoint_save(const Network& net, const std::filesystem::path& path);
Network checkpoint_load(const std::filesystem::path& path);

}  // namespace safetynet
