#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>

#include "safetynet/network.hpp"

namespace safetynet {

enum class Norm { Linf, L2 };

struct AttackBudget {
  double epsilon = 0.1;
  Norm norm = Norm::Linf;
  double alpha = 0.01;
  std::size_t max_iters = 50;
  double overshoot = 0.02;  // DeepFool only
  std::size_t top_k = 1;    // DeepFool-k only

  /// Defaults with alpha = epsilon / 10.
  static AttackBudget with_epsilon(double eps, Norm norm = Norm::Linf);
  void validate() const;
};

struct AttackOutcome {
  Vector x_orig;
  Vector x_adv;
  std::size_t label_orig = 0;
  std::size_t label_adv = 0;
  double linf_norm = 0.0;
  double l2_norm = 0.0;
  std::size_t iterations_used = 0;
  bool success = false;
};

enum class AttackMethod { FastSign, IterLinf, IterL2, DeepFool, DeepFoolTopK };

std::string_view to_string(AttackMethod m);
AttackMethod parse_attack_method(std::string_view name);

/// A method paired with its budget; the unit passed around by the harness.
struct AttackSpec {
  AttackMethod method = AttackMethod::FastSign;
  AttackBudget budget;
};

double linf_distance(std::span<const double> a, std::span<const double> b);
double l2_distance(std::span<const double> a, std::span<const double> b);

/// Clamp every coordinate into [0,1].
void clip_box(Vector& x);

/// Project x into the epsilon ball around center in the given norm.
void project_ball(Vector& x, std::span<const double> center, double epsilon, Norm norm);

/// One signed-gradient step of size epsilon on the cross-entropy of label y.
AttackOutcome fast_sign(const Network& net, std::span<const double> x, std::size_t y, const AttackBudget& budget);

/// Repeated steps of size alpha (sign step for Linf, normalized gradient for
/// L2), each followed by projection into the epsilon ball and the box.
/// Stops as soon as the label differs from y.
AttackOutcome iterative_attack(const Network& net, std::span<const double> x, std::size_t y,
                               const AttackBudget& budget);

/// L2 DeepFool against the network's own prediction at x. The accumulated
/// perturbation is scaled by (1 + overshoot) before every label check.
AttackOutcome deepfool(const Network& net, std::span<const double> x, const AttackBudget& budget);

/// DeepFool variant that succeeds only once the original label leaves the
/// top_k classes.
AttackOutcome deepfool_topk(const Network& net, std::span<const double> x, const AttackBudget& budget);

/// Minimal linearized step that carries `label` past the nearest boundary
/// among the classes currently ranked below it. Empty when no class offers a
/// finite step.
Vector deepfool_step(const Network& net, const ActivationRecord& rec, std::size_t label);

/// Dispatch by method; `y` is the true label (ignored by DeepFool variants).
AttackOutcome run_attack(const Network& net, std::span<const double> x, std::size_t y, const AttackSpec& spec);

/// Zero-based rank of `label` by probability, ties toward the lower index.
std::size_t rank_of(std::span<const double> probs, std::size_t label);

}  // namespace safetynet
