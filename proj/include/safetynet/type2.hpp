#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "safetynet/attacks.hpp"
#include "safetynet/dataset.hpp"
#include "safetynet/detector.hpp"

namespace safetynet {

struct SmoothingParams {
  double lambda = 20.0;        // logistic sharpness standing in for hard thresholds
  double sigma_scale = 10.0;   // surrogate kernel width = sigma_scale * detector sigma
  double step_size = 0.01;
  std::size_t max_iters = 50;
  double detect_weight = 1.0;

  void validate() const;
};

/// How the misclassification part of a Type II step is taken.
enum class Type2Style { Iterative, DeepFool };

/// Soft level per unit: sum over thresholds t of logistic(lambda * (a - t)).
Vector smooth_code(const ActivationRecord& record, const Thresholds& th, double lambda);
Vector smooth_code_values(std::span<const double> activations, const Thresholds& th, double lambda);

double logistic(double z);

/// Surrogate natural-ness score per detector: the RBF decision evaluated at
/// the smoothed code with the widened kernel.
std::vector<double> surrogate_scores(const SafetyNetPipeline& p, const ActivationRecord& rec,
                                     const SmoothingParams& sp);

struct Type2Result {
  AttackOutcome outcome;
  Verdict verdict;                // real pipeline on outcome.x_adv
  std::size_t iterates = 0;       // iterates inspected, including the start
  std::size_t surrogate_evaded_real_rejected = 0;
  double surrogate_gap() const {
    return iterates ? static_cast<double>(surrogate_evaded_real_rejected) / static_cast<double>(iterates) : 0.0;
  }
  /// Mislabelled relative to the true label and accepted by the real pipeline.
  bool evaded() const { return outcome.label_adv != outcome.label_orig && !verdict.rejected; }
};

/// Gradient search on CE(x, y) + detect_weight * sum(surrogate scores).
/// Success is decided on the real pipeline only. With detect_weight == 0 the
/// search stops at the first label flip, as a Type I attack would.
Type2Result type2_attack(const SafetyNetPipeline& pipeline, std::span<const double> x, std::size_t y,
                         const AttackBudget& budget, const SmoothingParams& sp,
                         Type2Style style = Type2Style::Iterative);

struct TransferRecord {
  std::size_t index = 0;
  std::size_t true_label = 0;
  bool success_on_substitute = false;
  bool misclassified_on_target = false;
  bool rejected_on_target = false;
};

/// Craft on `substitute`, replay on `target`. The target's internals are
/// only touched through safetynet_classify.
std::vector<TransferRecord> transfer_attack(const Network& substitute, const SafetyNetPipeline& target,
                                            const Dataset& data, const AttackSpec& spec);

}  // namespace safetynet
