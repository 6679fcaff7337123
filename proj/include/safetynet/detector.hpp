#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "safetynet/attacks.hpp"
#include "safetynet/codes.hpp"
#include "safetynet/dataset.hpp"
#include "safetynet/network.hpp"

namespace safetynet {

/// RBF-SVM over codes. Positive decision = natural, negative = adversarial:
///   f(c) = sum_i coef_i * exp(-|c - c_i|^2 / (2 sigma^2)) + bias
/// with coef_i = alpha_i * y_i.
struct RbfSvmDetector {
  std::vector<Code> support_codes;
  std::vector<double> dual_coeffs;
  double bias = 0.0;
  double sigma = 1.0;
  double C = 1.0;
  std::size_t layer_index = 0;

  std::size_t width() const { return support_codes.empty() ? 0 : support_codes.front().width(); }
  void validate() const;
};

struct SmoOptions {
  double tolerance = 1e-3;
  std::size_t max_passes = 1000;  // iteration cap = max_passes * number of codes
};

struct SvmFitReport {
  std::vector<double> alphas;  // one per training code, positives first
  std::vector<int> labels;
  double kkt_gap = 0.0;        // max KKT violation m(alpha) - M(alpha) at exit
  std::size_t iterations = 0;
  bool converged = false;
  bool degenerate = false;     // positive and negative code sets coincide
};

/// Soft-margin dual solved by SMO with second-order working-set selection.
RbfSvmDetector fit_rbf_svm(std::span<const Code> positives, std::span<const Code> negatives, double sigma,
                           double C, const SmoOptions& options = {}, SvmFitReport* report = nullptr);

double rbf_kernel(const Code& a, const Code& b, double sigma);

double svm_decide(const RbfSvmDetector& det, const Code& c);

/// df/dc treating the code as a real vector.
Vector svm_decide_gradient(const RbfSvmDetector& det, std::span<const double> c);
/// Same with the kernel width overridden.
Vector svm_decide_gradient(const RbfSvmDetector& det, std::span<const double> c, double sigma);
double svm_decide_real(const RbfSvmDetector& det, std::span<const double> c, double sigma);

/// sum alpha - 1/2 sum_ij coef_i coef_j K_ij over the stored support set.
double dual_objective(const RbfSvmDetector& det);

/// Median Euclidean distance over pairs of distinct codes (1.0 if none).
double median_pairwise_distance(std::span<const Code> codes, std::size_t max_codes = 1500);

struct SigmaRule {
  enum class Kind { MedianScale, Fixed };
  Kind kind = Kind::MedianScale;
  double value = 0.1;

  double resolve(std::span<const Code> positives) const;
};

/// Second-highest probability over the highest.
double confidence_ratio(std::span<const double> probs);

enum class Combinator { Any, All };
std::string_view to_string(Combinator c);
Combinator parse_combinator(std::string_view name);

struct DetectorStage {
  Thresholds thresholds;
  RbfSvmDetector svm;
};

struct SafetyNetPipeline {
  Network classifier;
  std::vector<DetectorStage> detectors;
  Combinator combinator = Combinator::Any;
  std::optional<double> rejection_ratio;

  void validate() const;
};

enum class RejectReason { None, Detector, Confidence };
std::string_view to_string(RejectReason r);

struct Verdict {
  std::size_t label = 0;
  bool rejected = false;
  RejectReason reject_reason = RejectReason::None;
  std::vector<double> detector_scores;
  double confidence_ratio = 0.0;
  std::vector<double> probs;
};

/// Whether the detector scores vote "adversarial" under the combinator.
bool detectors_flag(std::span<const double> scores, Combinator combinator);

/// Scalar natural-ness score consistent with detectors_flag: min of the
/// scores for ANY, max for ALL. Empty scores give +infinity.
double combined_score(std::span<const double> scores, Combinator combinator);

Verdict safetynet_classify(const SafetyNetPipeline& p, std::span<const double> x);

struct DetectorSpec {
  std::vector<std::size_t> layers;
  CodeMode mode = CodeMode::Binary;
  SigmaRule sigma_rule;
  double C = 1.0;
  Combinator combinator = Combinator::Any;
  std::optional<double> rejection_ratio;
  SmoOptions smo;
};

/// Negatives are the successful adversarials of every attack spec on
/// `train_data`; positives are the natural examples.
SafetyNetPipeline build_detector_pipeline(const Network& net, const Dataset& train_data,
                                          std::span<const AttackSpec> attack_specs, const DetectorSpec& spec);

/// Same as above from pre-generated adversarial inputs.
SafetyNetPipeline build_detector_pipeline_from(const Network& net, const Dataset& train_data,
                                               std::span<const Vector> adversarials, const DetectorSpec& spec);

void write_detector(std::ostream& out, const DetectorStage& stage);
DetectorStage read_detector(std::istream& in);

/// Pipeline file: combinator, rejection ratio and detector blocks. The
/// classifier lives in its own checkpoint.
void save_pipeline(const SafetyNetPipeline& p, const std::filesystem::path& path);
SafetyNetPipeline load_pipeline(const std::filesystem::path& path, Network classifier);

}  // namespace safetynet
