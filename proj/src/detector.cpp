#include "safetynet/detector.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>

#include "safetynet/error.hpp"

namespace safetynet {

void RbfSvmDetector::validate() const {
  if (!(sigma > 0.0)) fail(ErrorKind::Config, "detector sigma must be positive");
  if (!(C > 0.0)) fail(ErrorKind::Config, "detector C must be positive");
  if (support_codes.size() != dual_coeffs.size()) fail(ErrorKind::Consistency, "support/dual count mismatch");
  for (const auto& c : support_codes)
    if (c.width() != width()) fail(ErrorKind::Consistency, "support codes have mixed widths");
}

double rbf_kernel(const Code& a, const Code& b, double sigma) {
  return std::exp(-code_distance_sq(a, b) / (2.0 * sigma * sigma));
}

RbfSvmDetector fit_rbf_svm(std::span<const Code> positives, std::span<const Code> negatives, double sigma, double C,
                           const SmoOptions& options, SvmFitReport* report) {
  if (positives.empty() || negatives.empty()) fail(ErrorKind::Config, "SVM needs both natural and adversarial codes");
  if (!(sigma > 0.0) || !(C > 0.0)) fail(ErrorKind::Config, "sigma and C must be positive");

  std::vector<const Code*> x;
  std::vector<int> y;
  for (const auto& c : positives) x.push_back(&c), y.push_back(+1);
  for (const auto& c : negatives) x.push_back(&c), y.push_back(-1);
  const std::size_t n = x.size();
  const std::size_t width = x.front()->width();
  for (const Code* c : x)
    if (c->width() != width) fail(ErrorKind::Shape, "training codes have mixed widths");

  // Q_ij = y_i y_j K_ij, stored densely; the detector's training sets are small.
  std::vector<double> Q(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j) {
      const double q = y[i] * y[j] * rbf_kernel(*x[i], *x[j], sigma);
      Q[i * n + j] = Q[j * n + i] = q;
    }

  constexpr double tau = 1e-12;
  std::vector<double> alpha(n, 0.0);
  std::vector<double> G(n, -1.0);
  const auto upper = [&](std::size_t t) { return alpha[t] >= C; };
  const auto lower = [&](std::size_t t) { return alpha[t] <= 0.0; };

  const std::size_t max_iter = std::max<std::size_t>(options.max_passes * n, 10000);
  std::size_t iter = 0;
  double gap = std::numeric_limits<double>::infinity();
  bool converged = false;
  for (; iter < max_iter; ++iter) {
    double gmax = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t i_sel = -1;
    for (std::size_t t = 0; t < n; ++t) {
      if (y[t] == +1) {
        if (!upper(t) && -G[t] >= gmax) gmax = -G[t], i_sel = static_cast<std::ptrdiff_t>(t);
      } else {
        if (!lower(t) && G[t] >= gmax) gmax = G[t], i_sel = static_cast<std::ptrdiff_t>(t);
      }
    }
    double gmax2 = -std::numeric_limits<double>::infinity();
    std::ptrdiff_t j_sel = -1;
    double best_obj = std::numeric_limits<double>::infinity();
    if (i_sel >= 0) {
      const auto i = static_cast<std::size_t>(i_sel);
      const double* Qi = &Q[i * n];
      for (std::size_t t = 0; t < n; ++t) {
        if (y[t] == +1) {
          if (lower(t)) continue;
          const double grad_diff = gmax + G[t];
          gmax2 = std::max(gmax2, G[t]);
          if (grad_diff > 0) {
            const double quad = Q[i * n + i] + Q[t * n + t] - 2.0 * y[i] * Qi[t];
            const double obj = -(grad_diff * grad_diff) / (quad > 0 ? quad : tau);
            if (obj <= best_obj) best_obj = obj, j_sel = static_cast<std::ptrdiff_t>(t);
          }
        } else {
          if (upper(t)) continue;
          const double grad_diff = gmax - G[t];
          gmax2 = std::max(gmax2, -G[t]);
          if (grad_diff > 0) {
            const double quad = Q[i * n + i] + Q[t * n + t] + 2.0 * y[i] * Qi[t];
            const double obj = -(grad_diff * grad_diff) / (quad > 0 ? quad : tau);
            if (obj <= best_obj) best_obj = obj, j_sel = static_cast<std::ptrdiff_t>(t);
          }
        }
      }
    }
    gap = gmax + gmax2;
    if (i_sel < 0 || j_sel < 0 || gap < options.tolerance) {
      converged = true;
      if (i_sel < 0 || j_sel < 0) gap = std::max(0.0, std::isfinite(gap) ? gap : 0.0);
      break;
    }

    const auto i = static_cast<std::size_t>(i_sel);
    const auto j = static_cast<std::size_t>(j_sel);
    const double* Qi = &Q[i * n];
    const double* Qj = &Q[j * n];
    const double old_i = alpha[i];
    const double old_j = alpha[j];
    if (y[i] != y[j]) {
      double quad = Q[i * n + i] + Q[j * n + j] + 2.0 * Qi[j];
      if (quad <= 0) quad = tau;
      const double delta = (-G[i] - G[j]) / quad;
      const double diff = alpha[i] - alpha[j];
      alpha[i] += delta;
      alpha[j] += delta;
      if (diff > 0) {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = diff;
      } else {
        if (alpha[i] < 0) alpha[i] = 0, alpha[j] = -diff;
      }
      if (diff > 0) {
        if (alpha[i] > C) alpha[i] = C, alpha[j] = C - diff;
      } else {
        if (alpha[j] > C) alpha[j] = C, alpha[i] = C + diff;
      }
    } else {
      double quad = Q[i * n + i] + Q[j * n + j] - 2.0 * Qi[j];
      if (quad <= 0) quad = tau;
      const double delta = (G[i] - G[j]) / quad;
      const double sum = alpha[i] + alpha[j];
      alpha[i] -= delta;
      alpha[j] += delta;
      if (sum > C) {
        if (alpha[i] > C) alpha[i] = C, alpha[j] = sum - C;
      } else {
        if (alpha[j] < 0) alpha[j] = 0, alpha[i] = sum;
      }
      if (sum > C) {
        if (alpha[j] > C) alpha[j] = C, alpha[i] = sum - C;
      } else {
        if (alpha[i] < 0) alpha[i] = 0, alpha[j] = sum;
      }
    }
    const double di = alpha[i] - old_i;
    const double dj = alpha[j] - old_j;
    for (std::size_t t = 0; t < n; ++t) G[t] += Qi[t] * di + Qj[t] * dj;
  }

  // Offset: average y*G over free vectors, else the midpoint of the feasible range.
  double ub = std::numeric_limits<double>::infinity();
  double lb = -std::numeric_limits<double>::infinity();
  double sum_free = 0.0;
  std::size_t nr_free = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const double yG = y[t] * G[t];
    if (upper(t)) {
      if (y[t] == -1) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else if (lower(t)) {
      if (y[t] == +1) ub = std::min(ub, yG);
      else lb = std::max(lb, yG);
    } else {
      ++nr_free;
      sum_free += yG;
    }
  }
  double rho = nr_free > 0 ? sum_free / static_cast<double>(nr_free) : (ub + lb) / 2.0;
  if (!std::isfinite(rho)) rho = 0.0;

  RbfSvmDetector det;
  det.sigma = sigma;
  det.C = C;
  det.bias = -rho;
  for (std::size_t t = 0; t < n; ++t) {
    if (alpha[t] > 0.0) {
      det.support_codes.push_back(*x[t]);
      det.dual_coeffs.push_back(alpha[t] * y[t]);
    }
  }

  if (report) {
    report->alphas = alpha;
    report->labels = y;
    report->kkt_gap = gap;
    report->iterations = iter;
    report->converged = converged;
    std::vector<Code> p(positives.begin(), positives.end());
    std::vector<Code> q(negatives.begin(), negatives.end());
    std::sort(p.begin(), p.end());
    p.erase(std::unique(p.begin(), p.end()), p.end());
    std::sort(q.begin(), q.end());
    q.erase(std::unique(q.begin(), q.end()), q.end());
    report->degenerate = p == q;
  }
  return det;
}

double svm_decide(const RbfSvmDetector& det, const Code& c) {
  if (!det.support_codes.empty() && c.width() != det.width())
    fail(ErrorKind::Shape, "code width " + std::to_string(c.width()) + " != detector width " +
                               std::to_string(det.width()));
  double f = det.bias;
  for (std::size_t i = 0; i < det.support_codes.size(); ++i)
    f += det.dual_coeffs[i] * rbf_kernel(c, det.support_codes[i], det.sigma);
  return f;
}

double svm_decide_real(const RbfSvmDetector& det, std::span<const double> c, double sigma) {
  if (!det.support_codes.empty() && c.size() != det.width()) fail(ErrorKind::Shape, "code width mismatch");
  double f = det.bias;
  for (std::size_t i = 0; i < det.support_codes.size(); ++i) {
    double d2 = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) {
      const double d = c[j] - det.support_codes[i].levels[j];
      d2 += d * d;
    }
    f += det.dual_coeffs[i] * std::exp(-d2 / (2.0 * sigma * sigma));
  }
  return f;
}

Vector svm_decide_gradient(const RbfSvmDetector& det, std::span<const double> c) {
  return svm_decide_gradient(det, c, det.sigma);
}

Vector svm_decide_gradient(const RbfSvmDetector& det, std::span<const double> c, double sigma) {
  if (!det.support_codes.empty() && c.size() != det.width()) fail(ErrorKind::Shape, "code width mismatch");
  Vector g(c.size(), 0.0);
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < det.support_codes.size(); ++i) {
    const auto& sv = det.support_codes[i].levels;
    double d2 = 0.0;
    for (std::size_t j = 0; j < c.size(); ++j) d2 += (c[j] - sv[j]) * (c[j] - sv[j]);
    const double w = det.dual_coeffs[i] * std::exp(-d2 / (2.0 * s2)) / s2;
    for (std::size_t j = 0; j < c.size(); ++j) g[j] -= w * (c[j] - sv[j]);
  }
  return g;
}

double dual_objective(const RbfSvmDetector& det) {
  double linear = 0.0;
  double quad = 0.0;
  const std::size_t n = det.support_codes.size();
  for (std::size_t i = 0; i < n; ++i) {
    linear += std::abs(det.dual_coeffs[i]);
    for (std::size_t j = 0; j < n; ++j)
      quad += det.dual_coeffs[i] * det.dual_coeffs[j] *
              rbf_kernel(det.support_codes[i], det.support_codes[j], det.sigma);
  }
  return linear - 0.5 * quad;
}

double median_pairwise_distance(std::span<const Code> codes, std::size_t max_codes) {
  const std::size_t n = std::min(codes.size(), max_codes);
  std::vector<double> d;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double dsq = code_distance_sq(codes[i], codes[j]);
      if (dsq > 0.0) d.push_back(std::sqrt(dsq));
    }
  if (d.empty()) return 1.0;
  return empirical_quantile(std::move(d), 0.5);
}

double SigmaRule::resolve(std::span<const Code> positives) const {
  if (!(value > 0.0)) fail(ErrorKind::Config, "sigma rule value must be positive");
  return kind == Kind::Fixed ? value : value * median_pairwise_distance(positives);
}

double confidence_ratio(std::span<const double> probs) {
  if (probs.size() < 2) fail(ErrorKind::Domain, "confidence ratio needs at least two classes");
  double first = -1.0;
  double second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  if (!(first > 0.0)) fail(ErrorKind::Domain, "probabilities must have a positive maximum");
  return second / first;
}

std::string_view to_string(Combinator c) { return c == Combinator::Any ? "any" : "all"; }

Combinator parse_combinator(std::string_view name) {
  if (name == "any") return Combinator::Any;
  if (name == "all") return Combinator::All;
  fail(ErrorKind::Config, "unknown combinator '" + std::string(name) + "'");
}

std::string_view to_string(RejectReason r) {
  switch (r) {
    case RejectReason::None: return "none";
    case RejectReason::Detector: return "detector";
    case RejectReason::Confidence: return "confidence";
  }
  return "?";
}

void SafetyNetPipeline::validate() const {
  for (const auto& d : detectors) {
    if (d.thresholds.layer_index >= classifier.num_hidden())
      fail(ErrorKind::Config, "detector layer " + std::to_string(d.thresholds.layer_index) + " does not exist");
    if (d.svm.width() != 0 && d.svm.width() != classifier.layer_dims()[d.thresholds.layer_index + 1])
      fail(ErrorKind::Config, "detector width does not match its layer");
    d.thresholds.validate();
    d.svm.validate();
  }
  if (rejection_ratio && !(*rejection_ratio > 0.0 && *rejection_ratio <= 1.0))
    fail(ErrorKind::Config, "rejection ratio must lie in (0,1]");
}

bool detectors_flag(std::span<const double> scores, Combinator combinator) {
  if (scores.empty()) return false;
  if (combinator == Combinator::Any) return std::any_of(scores.begin(), scores.end(), [](double s) { return s < 0; });
  return std::all_of(scores.begin(), scores.end(), [](double s) { return s < 0; });
}

double combined_score(std::span<const double> scores, Combinator combinator) {
  if (scores.empty()) return std::numeric_limits<double>::infinity();
  return combinator == Combinator::Any ? *std::min_element(scores.begin(), scores.end())
                                       : *std::max_element(scores.begin(), scores.end());
}

Verdict safetynet_classify(const SafetyNetPipeline& p, std::span<const double> x) {
  const ActivationRecord rec = forward(p.classifier, x);
  Verdict v;
  v.label = argmax(rec.probs);
  v.confidence_ratio = rec.probs.size() >= 2 ? confidence_ratio(rec.probs) : 0.0;
  for (const auto& d : p.detectors) v.detector_scores.push_back(svm_decide(d.svm, quantize(rec, d.thresholds)));
  if (detectors_flag(v.detector_scores, p.combinator)) {
    v.rejected = true;
    v.reject_reason = RejectReason::Detector;
  } else if (p.rejection_ratio && v.confidence_ratio > *p.rejection_ratio) {
    v.rejected = true;
    v.reject_reason = RejectReason::Confidence;
  }
  v.probs = rec.probs;
  return v;
}

SafetyNetPipeline build_detector_pipeline_from(const Network& net, const Dataset& train_data,
                                               std::span<const Vector> adversarials, const DetectorSpec& spec) {
  if (spec.layers.empty()) fail(ErrorKind::Config, "detector spec names no layers");
  if (adversarials.empty()) fail(ErrorKind::InsufficientNegatives, "no successful adversarial examples to train on");

  std::vector<ActivationRecord> natural_recs;
  std::vector<ActivationRecord> adv_recs;
  for (const auto& x : train_data.features) natural_recs.push_back(forward(net, x));
  for (const auto& x : adversarials) adv_recs.push_back(forward(net, x));

  SafetyNetPipeline p;
  p.classifier = net;
  p.combinator = spec.combinator;
  p.rejection_ratio = spec.rejection_ratio;
  for (std::size_t layer : spec.layers) {
    if (layer >= net.num_hidden()) fail(ErrorKind::Config, "layer " + std::to_string(layer) + " is not hidden");
    std::vector<double> pooled;
    for (const auto& r : natural_recs) pooled.insert(pooled.end(), r.hidden[layer].begin(), r.hidden[layer].end());
    Thresholds th = thresholds_from_activations(pooled, layer, spec.mode);

    std::vector<Code> pos, neg;
    for (const auto& r : natural_recs) pos.push_back(quantize(r, th));
    for (const auto& r : adv_recs) neg.push_back(quantize(r, th));
    const double sigma = spec.sigma_rule.resolve(pos);
    RbfSvmDetector svm = fit_rbf_svm(pos, neg, sigma, spec.C, spec.smo);
    svm.layer_index = layer;
    p.detectors.push_back({std::move(th), std::move(svm)});
  }
  p.validate();
  return p;
}

SafetyNetPipeline build_detector_pipeline(const Network& net, const Dataset& train_data,
                                          std::span<const AttackSpec> attack_specs, const DetectorSpec& spec) {
  if (attack_specs.empty()) fail(ErrorKind::Config, "detector training needs at least one attack");
  std::vector<Vector> adversarials;
  for (const auto& a : attack_specs)
    for (std::size_t i = 0; i < train_data.size(); ++i) {
      AttackOutcome o = run_attack(net, train_data.features[i], train_data.labels[i], a);
      if (o.success) adversarials.push_back(std::move(o.x_adv));
    }
  return build_detector_pipeline_from(net, train_data, adversarials, spec);
}

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_number(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) fail(ErrorKind::Format, "bad number '" + s + "'");
  return v;
}

std::string expect_key(std::istream& in, const std::string& key) {
  std::string line;
  if (!std::getline(in, line)) fail(ErrorKind::Corruption, "detector file truncated before '" + key + "'");
  if (line.rfind(key + " ", 0) != 0) fail(ErrorKind::Format, "expected '" + key + "', got '" + line + "'");
  return line.substr(key.size() + 1);
}

}  // namespace

void write_detector(std::ostream& out, const DetectorStage& stage) {
  const auto& d = stage.svm;
  out << "detector 1\n";
  out << "layer " << stage.thresholds.layer_index << "\n";
  out << "thresholds";
  for (double t : stage.thresholds.levels) out << ' ' << fmt_double(t);
  out << "\n";
  out << "sigma " << fmt_double(d.sigma) << "\n";
  out << "C " << fmt_double(d.C) << "\n";
  out << "bias " << fmt_double(d.bias) << "\n";
  out << "width " << d.width() << "\n";
  out << "support " << d.support_codes.size() << "\n";
  for (std::size_t i = 0; i < d.support_codes.size(); ++i) {
    out << fmt_double(d.dual_coeffs[i]);
    for (int l : d.support_codes[i].levels) out << ',' << l;
    out << '\n';
  }
}

DetectorStage read_detector(std::istream& in) {
  if (expect_key(in, "detector") != "1") fail(ErrorKind::Format, "unsupported detector version");
  DetectorStage st;
  st.thresholds.layer_index = static_cast<std::size_t>(parse_number(expect_key(in, "layer")));
  st.svm.layer_index = st.thresholds.layer_index;
  {
    std::istringstream ts(expect_key(in, "thresholds"));
    std::string tok;
    while (ts >> tok) st.thresholds.levels.push_back(parse_number(tok));
  }
  st.svm.sigma = parse_number(expect_key(in, "sigma"));
  st.svm.C = parse_number(expect_key(in, "C"));
  st.svm.bias = parse_number(expect_key(in, "bias"));
  const auto width = static_cast<std::size_t>(parse_number(expect_key(in, "width")));
  const auto count = static_cast<std::size_t>(parse_number(expect_key(in, "support")));
  for (std::size_t i = 0; i < count; ++i) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorKind::Corruption, "detector support block truncated");
    std::istringstream row(line);
    std::string cell;
    std::getline(row, cell, ',');
    st.svm.dual_coeffs.push_back(parse_number(cell));
    Code c;
    while (std::getline(row, cell, ',')) c.levels.push_back(static_cast<int>(parse_number(cell)));
    if (c.width() != width) fail(ErrorKind::Format, "support code width mismatch");
    st.svm.support_codes.push_back(std::move(c));
  }
  st.thresholds.validate();
  st.svm.validate();
  return st;
}

void save_pipeline(const SafetyNetPipeline& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  out << "safetynet-pipeline 1\n";
  out << "combinator " << to_string(p.combinator) << "\n";
  out << "rejection_ratio " << (p.rejection_ratio ? fmt_double(*p.rejection_ratio) : std::string("none")) << "\n";
  out << "detectors " << p.detectors.size() << "\n";
  for (const auto& d : p.detectors) write_detector(out, d);
  if (!out) fail(ErrorKind::Io, "write failed: " + path.string());
}

SafetyNetPipeline load_pipeline(const std::filesystem::path& path, Network classifier) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  if (expect_key(in, "safetynet-pipeline") != "1") fail(ErrorKind::Format, "unsupported pipeline version");
  SafetyNetPipeline p;
  p.classifier = std::move(classifier);
  p.combinator = parse_combinator(expect_key(in, "combinator"));
  const std::string ratio = expect_key(in, "rejection_ratio");
  if (ratio != "none") p.rejection_ratio = parse_number(ratio);
  const auto count = static_cast<std::size_t>(parse_number(expect_key(in, "detectors")));
  for (std::size_t i = 0; i < count; ++i) p.detectors.push_back(read_detector(in));
  p.validate();
  return p;
}

}  // namespace safetynet
