#include "safetynet/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "safetynet/error.hpp"

namespace safetynet {

AttackBudget AttackBudget::with_epsilon(double eps, Norm norm) {
  AttackBudget b;
  b.epsilon = eps;
  b.norm = norm;
  b.alpha = eps / 10.0;
  return b;
}

void AttackBudget::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail(ErrorKind::Config, "epsilon must be finite and >= 0");
  if (!(alpha >= 0.0) || alpha > epsilon) fail(ErrorKind::Config, "alpha must lie in [0, epsilon]");
  if (max_iters == 0) fail(ErrorKind::Config, "max_iters must be at least 1");
  if (!(overshoot >= 0.0)) fail(ErrorKind::Config, "overshoot must be nonnegative");
  if (top_k == 0) fail(ErrorKind::Config, "top_k must be at least 1");
}

std::string_view to_string(AttackMethod m) {
  switch (m) {
    case AttackMethod::FastSign: return "fastsign";
    case AttackMethod::IterLinf: return "iter-linf";
    case AttackMethod::IterL2: return "iter-l2";
    case AttackMethod::DeepFool: return "deepfool";
    case AttackMethod::DeepFoolTopK: return "deepfool-k";
  }
  return "?";
}

AttackMethod parse_attack_method(std::string_view name) {
  for (auto m : {AttackMethod::FastSign, AttackMethod::IterLinf, AttackMethod::IterL2, AttackMethod::DeepFool,
                 AttackMethod::DeepFoolTopK})
    if (to_string(m) == name) return m;
  fail(ErrorKind::Config, "unknown attack method '" + std::string(name) + "'");
}

double linf_distance(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

void clip_box(Vector& x) {
  for (double& v : x) v = std::clamp(v, 0.0, 1.0);
}

void project_ball(Vector& x, std::span<const double> center, double epsilon, Norm norm) {
  if (norm == Norm::Linf) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], center[i] - epsilon, center[i] + epsilon);
    return;
  }
  const double d = l2_distance(x, center);
  if (d <= epsilon) return;
  const double scale = epsilon / d;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = center[i] + (x[i] - center[i]) * scale;
}

std::size_t rank_of(std::span<const double> probs, std::size_t label) {
  std::size_t rank = 0;
  for (std::size_t j = 0; j < probs.size(); ++j)
    if (probs[j] > probs[label] || (probs[j] == probs[label] && j < label)) ++rank;
  return rank;
}

namespace {

double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_input(const Network& net, std::span<const double> x, std::size_t y) {
  if (x.size() != net.input_width()) fail(ErrorKind::Shape, "attack input width mismatch");
  if (y >= net.num_classes()) fail(ErrorKind::Domain, "attack label out of range");
}

AttackOutcome finish(const Network& net, std::span<const double> x0, Vector x_adv, std::size_t label_orig,
                     std::size_t iters) {
  AttackOutcome out;
  out.x_orig.assign(x0.begin(), x0.end());
  out.label_orig = label_orig;
  out.label_adv = predict(net, x_adv);
  out.linf_norm = linf_distance(x_adv, x0);
  out.l2_norm = l2_distance(x_adv, x0);
  out.iterations_used = iters;
  out.success = out.label_adv != label_orig;
  out.x_adv = std::move(x_adv);
  return out;
}

}  // namespace

Vector deepfool_step(const Network& net, const ActivationRecord& rec, std::size_t label) {
  const std::size_t K = net.num_classes();
  Vector e(K, 0.0);
  e[label] = 1.0;
  const Vector g0 = input_vjp(net, rec, e);
  double best = std::numeric_limits<double>::infinity();
  Vector best_w;
  double best_f = 0.0;
  const std::size_t label_rank = rank_of(rec.probs, label);
  for (std::size_t k = 0; k < K; ++k) {
    if (k == label || rank_of(rec.probs, k) < label_rank) continue;
    std::fill(e.begin(), e.end(), 0.0);
    e[k] = 1.0;
    Vector w = input_vjp(net, rec, e);
    double norm_sq = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= g0[i];
      norm_sq += w[i] * w[i];
    }
    if (norm_sq == 0.0) continue;
    const double f = rec.logits[k] - rec.logits[label];
    const double dist = std::abs(f) / std::sqrt(norm_sq);
    if (dist < best) {
      best = dist;
      best_f = f;
      best_w = std::move(w);
    }
  }
  if (best_w.empty()) return best_w;
  double norm_sq = 0.0;
  for (double v : best_w) norm_sq += v * v;
  const double coef = std::abs(best_f) / norm_sq;
  for (double& v : best_w) v *= coef;
  return best_w;
}

namespace {

AttackOutcome deepfool_impl(const Network& net, std::span<const double> x0, const AttackBudget& budget,
                            std::size_t top_k) {
  budget.validate();
  const std::size_t K = net.num_classes();
  if (K < 2) fail(ErrorKind::Domain, "DeepFool needs at least two classes");
  if (top_k >= K) fail(ErrorKind::Config, "top_k must be smaller than the number of classes");
  if (x0.size() != net.input_width()) fail(ErrorKind::Shape, "attack input width mismatch");

  const std::size_t label0 = argmax(forward(net, x0).probs);
  const double scale = 1.0 + budget.overshoot;
  Vector r_tot(x0.size(), 0.0);
  Vector x(x0.begin(), x0.end());
  std::size_t iters = 0;

  while (iters < budget.max_iters) {
    const ActivationRecord rec = forward(net, x);
    if (rank_of(rec.probs, label0) >= top_k) break;

    const Vector step = deepfool_step(net, rec, label0);
    if (step.empty()) break;  // no boundary is reachable by a linear step
    for (std::size_t i = 0; i < x.size(); ++i) {
      r_tot[i] += step[i];
      x[i] = x0[i] + scale * r_tot[i];
    }
    clip_box(x);
    ++iters;
    for (double v : x)
      if (!std::isfinite(v)) fail(ErrorKind::Numeric, "DeepFool produced a non-finite iterate");
  }

  AttackOutcome out = finish(net, x0, std::move(x), label0, iters);
  out.success = rank_of(forward(net, out.x_adv).probs, label0) >= top_k;
  return out;
}

}  // namespace

AttackOutcome fast_sign(const Network& net, std::span<const double> x, std::size_t y, const AttackBudget& budget) {
  budget.validate();
  if (budget.norm != Norm::Linf) fail(ErrorKind::Config, "fast_sign is an Linf attack");
  check_input(net, x, y);
  const Vector g = input_gradient(net, x, LossSpec::cross_entropy(y));
  Vector adv(x.begin(), x.end());
  for (std::size_t i = 0; i < adv.size(); ++i) adv[i] += budget.epsilon * sign_of(g[i]);
  clip_box(adv);
  return finish(net, x, std::move(adv), y, 1);
}

AttackOutcome iterative_attack(const Network& net, std::span<const double> x, std::size_t y,
                               const AttackBudget& budget) {
  budget.validate();
  check_input(net, x, y);
  Vector cur(x.begin(), x.end());
  std::size_t iters = 0;
  while (iters < budget.max_iters) {
    const Vector g = input_gradient(net, cur, LossSpec::cross_entropy(y));
    if (budget.norm == Norm::Linf) {
      for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += budget.alpha * sign_of(g[i]);
    } else {
      double n = 0.0;
      for (double v : g) n += v * v;
      n = std::sqrt(n);
      if (n > 0.0)
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += budget.alpha * g[i] / n;
    }
    project_ball(cur, x, budget.epsilon, budget.norm);
    clip_box(cur);
    ++iters;
    if (predict(net, cur) != y) break;
  }
  return finish(net, x, std::move(cur), y, iters);
}

AttackOutcome deepfool(const Network& net, std::span<const double> x, const AttackBudget& budget) {
  return deepfool_impl(net, x, budget, 1);
}

AttackOutcome deepfool_topk(const Network& net, std::span<const double> x, const AttackBudget& budget) {
  return deepfool_impl(net, x, budget, budget.top_k);
}

AttackOutcome run_attack(const Network& net, std::span<const double> x, std::size_t y, const AttackSpec& spec) {
  switch (spec.method) {
    case AttackMethod::FastSign: return fast_sign(net, x, y, spec.budget);
    case AttackMethod::IterLinf: {
      AttackBudget b = spec.budget;
      b.norm = Norm::Linf;
      return iterative_attack(net, x, y, b);
    }
    case AttackMethod::IterL2: {
      AttackBudget b = spec.budget;
      b.norm = Norm::L2;
      return iterative_attack(net, x, y, b);
    }
    case AttackMethod::DeepFool: return deepfool(net, x, spec.budget);
    case AttackMethod::DeepFoolTopK: return deepfool_topk(net, x, spec.budget);
  }
  fail(ErrorKind::Config, "unhandled attack method");
}

}  // namespace safetynet
