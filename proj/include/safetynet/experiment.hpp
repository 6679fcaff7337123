#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "safetynet/attacks.hpp"
#include "safetynet/detector.hpp"
#include "safetynet/train.hpp"
#include "safetynet/type2.hpp"

namespace safetynet {

/// "method[:key=value,...]" with keys eps, alpha, iters, overshoot, topk.
/// alpha defaults to eps/10.
AttackSpec parse_attack_spec(const std::string& text);
std::vector<AttackSpec> parse_attack_list(const std::string& text);  // ';'-separated

struct DataSpec {
  std::string source = "blobs";  // blobs | csv | idx
  std::size_t classes = 4;
  std::size_t per_class = 200;
  double spread = 0.08;
  std::optional<std::uint64_t> seed;
  std::filesystem::path path;    // csv
  std::filesystem::path images;  // idx
  std::filesystem::path labels;  // idx
  double train_frac = 0.6, val_frac = 0.2, test_frac = 0.2;
  std::optional<std::uint64_t> split_seed;
  std::size_t max_test = 0;  // 0 = all
};

struct ModelSpec {
  std::vector<std::size_t> dims{2, 32, 16, 4};
  std::optional<std::uint64_t> init_seed;
  TrainConfig train;
  std::optional<std::uint64_t> train_seed;
};

struct Type2Spec {
  bool enabled = false;
  Type2Style style = Type2Style::DeepFool;
  AttackBudget budget;
  SmoothingParams smoothing;
};

struct TransferSpec {
  bool enabled = false;
  std::optional<std::uint64_t> substitute_seed;
  std::vector<std::size_t> substitute_dims;
  AttackSpec attack;
};

struct ExperimentConfig {
  DataSpec data;
  ModelSpec model;
  std::vector<AttackSpec> train_attacks;
  std::vector<AttackSpec> test_attacks;
  DetectorSpec detector;
  Type2Spec type2;
  TransferSpec transfer;
  std::filesystem::path output_dir = "report";
  std::map<std::string, std::string> raw;  // every key as written, "section.key"

  /// Throws Config when a seed is missing or a referenced file is absent.
  void validate() const;
};

/// INI-style file: [data], [model], [attack], [detector], [type2],
/// [transfer], [output]. SAFETYNET_OUTPUT_DIR overrides output.dir.
ExperimentConfig load_config(const std::filesystem::path& path);
ExperimentConfig parse_config(const std::string& text);

/// train -> attack-generate -> fit-detector -> evaluate -> report.
/// Returns 0 or the exit code of the failing stage's error.
int run_config(const ExperimentConfig& cfg, std::ostream& log);

}  // namespace safetynet
