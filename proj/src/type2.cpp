#include "safetynet/type2.hpp"

#include <algorithm>
#include <cmath>

#include "safetynet/error.hpp"

namespace safetynet {

void SmoothingParams::validate() const {
  if (!(lambda > 0.0)) fail(ErrorKind::Config, "lambda must be positive");
  if (!(sigma_scale >= 1.0)) fail(ErrorKind::Config, "surrogate sigma must not be narrower than the detector's");
  if (!(step_size > 0.0)) fail(ErrorKind::Config, "step_size must be positive");
  if (max_iters == 0) fail(ErrorKind::Config, "max_iters must be positive");
  if (!(detect_weight >= 0.0)) fail(ErrorKind::Config, "detect_weight must be nonnegative");
}

double logistic(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

Vector smooth_code_values(std::span<const double> activations, const Thresholds& th, double lambda) {
  if (!(lambda > 0.0)) fail(ErrorKind::Config, "lambda must be positive");
  Vector soft(activations.size(), 0.0);
  for (std::size_t j = 0; j < activations.size(); ++j)
    for (double t : th.levels) soft[j] += logistic(lambda * (activations[j] - t));
  return soft;
}

Vector smooth_code(const ActivationRecord& record, const Thresholds& th, double lambda) {
  if (th.layer_index >= record.hidden.size())
    fail(ErrorKind::Shape, "activation record does not cover layer " + std::to_string(th.layer_index));
  return smooth_code_values(record.hidden[th.layer_index], th, lambda);
}

std::vector<double> surrogate_scores(const SafetyNetPipeline& p, const ActivationRecord& rec,
                                     const SmoothingParams& sp) {
  std::vector<double> s;
  for (const auto& d : p.detectors)
    s.push_back(svm_decide_real(d.svm, smooth_code(rec, d.thresholds, sp.lambda), sp.sigma_scale * d.svm.sigma));
  return s;
}

namespace {

// Input gradient of ce_weight * CE(y) + detect_weight * sum of surrogate scores.
Vector objective_gradient(const SafetyNetPipeline& p, const ActivationRecord& rec, std::size_t y, double ce_weight,
                          const SmoothingParams& sp) {
  const Network& net = p.classifier;
  Vector dlogits(net.num_classes(), 0.0);
  if (ce_weight != 0.0) {
    for (std::size_t k = 0; k < dlogits.size(); ++k) dlogits[k] = ce_weight * rec.probs[k];
    dlogits[y] -= ce_weight;
  }
  std::vector<Vector> dhidden(net.num_hidden());
  if (sp.detect_weight > 0.0) {
    for (const auto& d : p.detectors) {
      const auto& act = rec.hidden[d.thresholds.layer_index];
      const Vector soft = smooth_code_values(act, d.thresholds, sp.lambda);
      const Vector df = svm_decide_gradient(d.svm, soft, sp.sigma_scale * d.svm.sigma);
      Vector& dh = dhidden[d.thresholds.layer_index];
      if (dh.empty()) dh.assign(act.size(), 0.0);
      for (std::size_t j = 0; j < act.size(); ++j) {
        double dsoft = 0.0;
        for (double t : d.thresholds.levels) {
          const double s = logistic(sp.lambda * (act[j] - t));
          dsoft += sp.lambda * s * (1.0 - s);
        }
        dh[j] += sp.detect_weight * df[j] * dsoft;
      }
    }
  }
  return input_vjp(net, rec, dlogits, dhidden);
}

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

}  // namespace

Type2Result type2_attack(const SafetyNetPipeline& pipeline, std::span<const double> x, std::size_t y,
                         const AttackBudget& budget, const SmoothingParams& sp, Type2Style style) {
  budget.validate();
  sp.validate();
  const Network& net = pipeline.classifier;
  if (pipeline.detectors.empty()) fail(ErrorKind::Config, "Type II attack needs at least one detector");
  if (x.size() != net.input_width()) fail(ErrorKind::Shape, "attack input width mismatch");
  if (y >= net.num_classes()) fail(ErrorKind::Domain, "attack label out of range");

  const bool type1_stop = sp.detect_weight == 0.0;
  Type2Result res;
  Vector cur(x.begin(), x.end());

  // Returns true once the stopping rule is met.
  const auto inspect = [&](const Vector& point) {
    const ActivationRecord rec = forward(net, point);
    Verdict v = safetynet_classify(pipeline, point);
    const auto sur = surrogate_scores(pipeline, rec, sp);
    ++res.iterates;
    if (!detectors_flag(sur, pipeline.combinator) && v.reject_reason == RejectReason::Detector)
      ++res.surrogate_evaded_real_rejected;
    const bool mislabelled = v.label != y;
    res.verdict = std::move(v);
    return type1_stop ? mislabelled : (mislabelled && !res.verdict.rejected);
  };

  std::size_t iters = 0;
  bool done = inspect(cur);
  while (!done && iters < sp.max_iters) {
    const ActivationRecord rec = forward(net, cur);
    if (style == Type2Style::Iterative) {
      const Vector g = objective_gradient(pipeline, rec, y, 1.0, sp);
      if (budget.norm == Norm::Linf) {
        for (std::size_t i = 0; i < cur.size(); ++i)
          cur[i] += sp.step_size * (g[i] > 0 ? 1.0 : (g[i] < 0 ? -1.0 : 0.0));
      } else if (const double n = norm2(g); n > 0.0) {
        for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += sp.step_size * g[i] / n;
      }
      project_ball(cur, x, budget.epsilon, budget.norm);
    } else {
      if (argmax(rec.probs) == y) {
        const Vector r = deepfool_step(net, rec, y);
        for (std::size_t i = 0; i < r.size(); ++i) cur[i] += (1.0 + budget.overshoot) * r[i];
      }
      if (sp.detect_weight > 0.0) {
        const ActivationRecord moved = forward(net, cur);
        const Vector g = objective_gradient(pipeline, moved, y, 0.0, sp);
        if (const double n = norm2(g); n > 0.0)
          for (std::size_t i = 0; i < cur.size(); ++i) cur[i] += sp.step_size * g[i] / n;
      }
    }
    clip_box(cur);
    for (double v : cur)
      if (!std::isfinite(v)) fail(ErrorKind::Numeric, "Type II search produced a non-finite iterate");
    ++iters;
    done = inspect(cur);
  }

  AttackOutcome& out = res.outcome;
  out.x_orig.assign(x.begin(), x.end());
  out.label_orig = y;
  out.label_adv = res.verdict.label;
  out.linf_norm = linf_distance(cur, x);
  out.l2_norm = l2_distance(cur, x);
  out.iterations_used = iters;
  out.success = res.evaded();
  out.x_adv = std::move(cur);
  return res;
}

std::vector<TransferRecord> transfer_attack(const Network& substitute, const SafetyNetPipeline& target,
                                            const Dataset& data, const AttackSpec& spec) {
  const Network& tnet = target.classifier;
  if (substitute.num_classes() != tnet.num_classes())
    fail(ErrorKind::Config, "substitute and target disagree on the number of classes");
  if (substitute.input_width() != tnet.input_width())
    fail(ErrorKind::Config, "substitute and target disagree on the input width");
  if (data.empty()) fail(ErrorKind::Config, "transfer attack needs data");

  // A substitute for the same task must agree with the target above chance;
  // a class-permuted substitute falls far below it.
  std::size_t agree = 0;
  for (const auto& x : data.features) agree += predict(substitute, x) == predict(tnet, x);
  const double chance = 1.0 / static_cast<double>(tnet.num_classes());
  if (static_cast<double>(agree) / static_cast<double>(data.size()) <= chance)
    fail(ErrorKind::Config, "substitute does not solve the target's task (class indexing mismatch?)");

  std::vector<TransferRecord> rows;
  rows.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const AttackOutcome o = run_attack(substitute, data.features[i], data.labels[i], spec);
    const Verdict v = safetynet_classify(target, o.x_adv);
    rows.push_back({i, data.labels[i], o.success, v.label != data.labels[i], v.rejected});
  }
  return rows;
}

}  // namespace safetynet
